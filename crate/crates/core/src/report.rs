//! End-to-end audit: ingest a CSV, fit both models, compare their rankings
//! with the data-level effect sizes and write the artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alignment::{build_alignment_report, Accuracies, AlignmentReport, Method, Ranking, SplitAccuracy};
use crate::data::{self, CsvOptions, FeatureSchema};
use crate::effect_size::smd;
use crate::error::{AuditError, Result, StageExt};
use crate::fixtures;
use crate::mlp::{fit_mlp, MlpConfig, MlpModel};
use crate::shap::{aggregate_importance, explain_rows, sample_background, AttributionMatrix, ShapConfig};
use crate::tree::{accuracy, fit_tree, tree_importances, TreeConfig, TreeModel};

pub const RANKINGS_CSV: &str = "rankings.csv";
pub const ALIGNMENT_JSON: &str = "alignment.json";
pub const SMD_VS_TREE_SVG: &str = "smd_vs_tree.svg";
pub const SMD_VS_SHAP_SVG: &str = "smd_vs_shap.svg";
pub const RUN_META_JSON: &str = "run_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelector {
    Tree,
    Mlp,
    #[default]
    Both,
}

impl ModelSelector {
    pub fn tree(self) -> bool {
        matches!(self, Self::Tree | Self::Both)
    }

    pub fn mlp(self) -> bool {
        matches!(self, Self::Mlp | Self::Both)
    }
}

impl FromStr for ModelSelector {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Self::Tree),
            "mlp" => Ok(Self::Mlp),
            "both" => Ok(Self::Both),
            _ => Err(AuditError::Config(format!("unknown model selector `{s}` (tree|mlp|both)"))),
        }
    }
}

/// Which rows the effect sizes are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmdScope {
    #[default]
    Full,
    Train,
}

impl FromStr for SmdScope {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "train" => Ok(Self::Train),
            _ => Err(AuditError::Config(format!("unknown SMD scope `{s}` (full|train)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    pub data: PathBuf,
    pub target: String,
    /// `None` uses the bundled list when the header matches a known
    /// benchmark, otherwise every non-target column.
    pub features: Option<Vec<String>>,
    pub missing_tokens: Vec<String>,
    pub test_fraction: f64,
    pub seed: u64,
    pub model: ModelSelector,
    pub smd_scope: SmdScope,
    pub out_dir: Option<PathBuf>,
    pub tree: TreeConfig,
    pub mlp: MlpConfig,
    pub shap: ShapConfig,
}

impl AuditConfig {
    pub fn new(data: impl Into<PathBuf>, target: impl Into<String>) -> Self {
        Self {
            data: data.into(),
            target: target.into(),
            features: None,
            missing_tokens: CsvOptions::default().missing_tokens,
            test_fraction: 0.2,
            seed: 42,
            model: ModelSelector::Both,
            smd_scope: SmdScope::Full,
            out_dir: None,
            tree: TreeConfig::default(),
            mlp: MlpConfig::default(),
            shap: ShapConfig::default(),
        }
    }

    /// Sets the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.tree.seed = seed;
        self.mlp.seed = seed;
        self.shap.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(AuditError::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.target.is_empty() {
            return Err(AuditError::Config("target column name is empty".into()));
        }
        if !self.data.is_file() {
            return Err(AuditError::Config(format!("data file {} not found", self.data.display())));
        }
        if let Some(f) = &self.features {
            if f.is_empty() {
                return Err(AuditError::Config("feature list is empty".into()));
            }
            if f.contains(&self.target) {
                return Err(AuditError::Config(format!("target `{}` listed as a feature", self.target)));
            }
        }
        self.tree.validate()?;
        self.mlp.validate()?;
        Ok(())
    }

    fn dataset_name(&self) -> String {
        self.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.data.display().to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
struct ConfigEcho<'a> {
    data: String,
    target: &'a str,
    features: &'a [String],
    missing_tokens: &'a [String],
    test_fraction: f64,
    seed: u64,
    model: ModelSelector,
    smd_scope: SmdScope,
    tree: &'a TreeConfig,
    mlp: &'a MlpConfig,
    shap: Option<&'a ShapConfig>,
}

pub struct AuditOutcome {
    pub report: AlignmentReport,
    /// Self-description of the run, including wall-clock data.
    pub meta: serde_json::Value,
    pub tree: Option<TreeModel>,
    pub mlp: Option<MlpModel>,
    pub attributions: Option<AttributionMatrix>,
    pub written: Vec<PathBuf>,
}

struct Timer(Vec<(&'static str, f64)>, Instant);

impl Timer {
    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.0.push((stage, (now - self.1).as_secs_f64()));
        self.1 = now;
    }
}

fn read_header(bytes: &[u8]) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    Ok(rdr.headers()?.iter().map(String::from).collect())
}

pub fn run_audit(cfg: &AuditConfig) -> Result<AuditOutcome> {
    cfg.validate().stage("config")?;
    let mut timer = Timer(Vec::new(), Instant::now());

    let bytes = fs::read(&cfg.data)
        .map_err(|source| AuditError::Io {
            path: cfg.data.clone(),
            source,
        })
        .stage("ingest")?;
    let features = match &cfg.features {
        Some(f) => Some(f.clone()),
        None => fixtures::default_features(&read_header(&bytes).stage("ingest")?, &cfg.target),
    };
    let opts = CsvOptions {
        missing_tokens: cfg.missing_tokens.clone(),
        features,
    };
    let raw = data::read_csv(&bytes[..], &cfg.target, &opts).stage("ingest")?;
    let missing: Vec<(String, usize)> = raw
        .column_names
        .iter()
        .zip(&raw.columns)
        .map(|(n, c)| (n.clone(), c.missing_count()))
        .collect();
    timer.lap("ingest");

    let schema = FeatureSchema::infer(&raw, &cfg.target).stage("impute")?;
    let table = data::impute(&raw, &schema).stage("impute")?;
    timer.lap("impute");

    let encoded = data::encode(&table, &schema).stage("encode")?;
    let full = &encoded.data;
    let names = full.feature_names.clone();
    timer.lap("encode");

    let (train_idx, test_idx) = data::split_indices(full.n_rows(), cfg.test_fraction, cfg.seed).stage("split")?;
    let train = full.select_rows(&train_idx);
    let test = full.select_rows(&test_idx);
    timer.lap("split");

    let (train_std, test_std, scaling) = data::standardize(&train, &test).stage("standardize")?;
    timer.lap("standardize");

    let effect = match cfg.smd_scope {
        SmdScope::Full => smd(full),
        SmdScope::Train => smd(&train),
    }
    .stage("smd")?;
    timer.lap("smd");

    let mut accuracies = Accuracies::default();
    let tree = if cfg.model.tree() {
        let model = fit_tree(&train, &cfg.tree).stage("tree")?;
        let (pred_train, _) = model.predict(train.x.view()).stage("tree")?;
        let (pred_test, _) = model.predict(test.x.view()).stage("tree")?;
        accuracies.tree = Some(SplitAccuracy {
            train: accuracy(&pred_train, &train.y),
            test: accuracy(&pred_test, &test.y),
        });
        timer.lap("tree");
        Some(model)
    } else {
        None
    };

    let mlp = if cfg.model.mlp() {
        let mut model = fit_mlp(&train_std, &cfg.mlp).stage("mlp")?;
        model.scaling = Some(scaling.clone());
        let pred_train = model.predict(train_std.x.view()).stage("mlp")?;
        let pred_test = model.predict(test_std.x.view()).stage("mlp")?;
        accuracies.mlp = Some(SplitAccuracy {
            train: accuracy(&pred_train, &train_std.y),
            test: accuracy(&pred_test, &test_std.y),
        });
        timer.lap("mlp");
        Some(model)
    } else {
        None
    };

    let mut background_rows = Vec::new();
    let attributions = match &mlp {
        Some(model) => {
            let (bg, idx) = sample_background(train_std.x.view(), cfg.shap.background_size, cfg.shap.seed);
            background_rows = idx.iter().map(|&i| train_idx[i]).collect();
            let attr = explain_rows(model, &names, test_std.x.view(), bg.view(), &cfg.shap).stage("shap")?;
            timer.lap("shap");
            Some(attr)
        }
        None => None,
    };

    let tree_imp = tree.as_ref().map(tree_importances);
    let shap_imp = attributions.as_ref().map(aggregate_importance).transpose().stage("shap")?;

    let echo = ConfigEcho {
        data: cfg.data.display().to_string(),
        target: &cfg.target,
        features: &names,
        missing_tokens: &cfg.missing_tokens,
        test_fraction: cfg.test_fraction,
        seed: cfg.seed,
        model: cfg.model,
        smd_scope: cfg.smd_scope,
        tree: &cfg.tree,
        mlp: &cfg.mlp,
        shap: cfg.model.mlp().then_some(&cfg.shap),
    };
    let config_value = serde_json::to_value(&echo).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    let report = build_alignment_report(
        &cfg.dataset_name(),
        &effect,
        tree_imp.as_ref(),
        shap_imp.as_ref(),
        accuracies,
        config_value,
    )
    .stage("alignment")?;
    timer.lap("alignment");

    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "timestamp_unix": timestamp,
        "timings_seconds": timer.0.iter().map(|(s, t)| json!({ "stage": s, "seconds": t })).collect::<Vec<_>>(),
        "decisions": decisions(cfg),
        "data": {
            "rows": full.n_rows(),
            "train_rows": train.n_rows(),
            "test_rows": test.n_rows(),
            "test_row_indices": test_idx,
            "positives": full.positives(),
            "target": encoded.target,
            "missing_before_imputation": missing.iter().map(|(n, c)| json!({ "column": n, "missing": c })).collect::<Vec<_>>(),
            "schema": schema,
            "encoding": encoded.columns,
            "warnings": encoded.warnings,
            "scaling": scaling,
        },
        "tree": tree.as_ref().map(|t| json!({
            "depth": t.depth(),
            "leaves": t.leaf_count(),
            "nodes": t.nodes.len(),
        })),
        "mlp": mlp.as_ref().map(|m| json!({
            "epochs_run": m.history.loss.len(),
            "best_epoch": m.history.best_epoch,
            "stopped_early": m.history.stopped_early,
            "final_loss": m.history.loss.last(),
            "loss": m.history.loss,
            "validation_accuracy": m.history.validation_accuracy,
        })),
        "shap": attributions.as_ref().map(|a| json!({
            "target": "predicted probability of the positive class",
            "explained_rows": a.instance_ids.len(),
            "background_rows": background_rows,
            "base_value": a.base_value,
            "enumerated": a.enumerated,
            "max_abs_residual": a.max_abs_residual,
            "no_signal": shap_imp.as_ref().map(|s| s.no_signal),
        })),
    });

    let mut outcome = AuditOutcome {
        report,
        meta,
        tree,
        mlp,
        attributions,
        written: Vec::new(),
    };
    if let Some(dir) = &cfg.out_dir {
        outcome.written = write_outputs(&outcome.report, &outcome.meta, dir).stage("emit")?;
    }
    Ok(outcome)
}

fn decisions(cfg: &AuditConfig) -> serde_json::Value {
    json!({
        "imputation": "numeric columns: median of observed values; categorical columns: most frequent level, ties to first appearance",
        "categorical_encoding": "levels sorted lexicographically; two levels become one 0/1 column equal to 1 for the first level; three or more become one indicator per level",
        "target_encoding": "lexicographically greater level is the positive class",
        "split": "seeded shuffle, last round(n * test_fraction) rows form the test set",
        "scaling": "z-score with population std fitted on the training split; constant features map to 0",
        "smd_scope": cfg.smd_scope,
        "smd_inputs": "encoded, unscaled features",
        "smd_variance": "sample variance within each outcome group, pooled",
        "tree_inputs": "encoded, unscaled features",
        "tree_importance": "size-weighted entropy gain summed per feature, normalized to sum 1",
        "mlp_inputs": "standardized features",
        "mlp_early_stopping": "validation accuracy on a held-out fraction of the training split; best weights restored",
        "shap_model": "neural network",
        "shap_target": "predicted probability of the positive class",
        "shap_rows": "test split",
        "shap_background": "rows drawn without replacement from the standardized training split",
        "shap_aggregation": "mean absolute attribution per feature, normalized to sum 1",
        "rank_ties": "average ranks",
        "undefined_rho": "reported as null when either ranking is constant",
    })
}

/// Writes every artifact the report supports into `dir`.
pub fn write_outputs(report: &AlignmentReport, meta: &serde_json::Value, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| AuditError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let path = dir.join(RANKINGS_CSV);
    emit_csv(report, &path)?;
    written.push(path);

    let path = dir.join(ALIGNMENT_JSON);
    emit_json(report, &path)?;
    written.push(path);

    let smd_rank = report.ranking(Method::Smd).expect("SMD ranking always present");
    for (method, file) in [(Method::Tree, SMD_VS_TREE_SVG), (Method::Shap, SMD_VS_SHAP_SVG)] {
        if let (Some(r), Some(rho)) = (report.ranking(method), report.rho(method)) {
            let path = dir.join(file);
            emit_scatter(&smd_rank, &r, rho, &path)?;
            written.push(path);
        }
    }

    let path = dir.join(RUN_META_JSON);
    write_file(&path, &to_pretty(meta)?)?;
    written.push(path);
    Ok(written)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| AuditError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn to_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Serializes the report. Contains no wall-clock data, so identical runs
/// give identical bytes.
pub fn report_json(report: &AlignmentReport) -> Result<String> {
    to_pretty(report)
}

pub fn emit_json(report: &AlignmentReport, path: &Path) -> Result<()> {
    write_file(path, &report_json(report)?)
}

pub const CSV_COLUMNS: [&str; 8] = [
    "feature",
    "smd",
    "abs_smd",
    "smd_rank",
    "tree_importance",
    "tree_rank",
    "shap_importance",
    "shap_rank",
];

pub fn report_csv(report: &AlignmentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &report.rankings {
        w.write_record([
            r.feature.clone(),
            r.smd.to_string(),
            r.smd.abs().to_string(),
            r.smd_rank.to_string(),
            opt(r.tree_importance),
            opt(r.tree_rank),
            opt(r.shap_importance),
            opt(r.shap_rank),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_csv(report: &AlignmentReport, path: &Path) -> Result<()> {
    write_file(path, &report_csv(report)?)
}

pub fn emit_scatter(a: &Ranking, b: &Ranking, rho: Option<f64>, path: &Path) -> Result<()> {
    write_file(path, &scatter_svg(a, b, rho)?)
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const SIZE: f64 = 520.0;
const MARGIN: f64 = 70.0;

/// Rank-vs-rank scatter: one labeled point per feature at
/// `(rank under a, rank under b)`, rank 1 at the bottom left, with the
/// identity diagonal.
pub fn scatter_svg(a: &Ranking, b: &Ranking, rho: Option<f64>) -> Result<String> {
    if a.feature_names != b.feature_names {
        return Err(AuditError::InvalidInput(format!(
            "{} and {} rankings cover different features",
            a.method, b.method
        )));
    }
    let p = a.ranks.len();
    let max_rank = p.max(2) as f64;
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |r: f64| MARGIN + (r - 1.0) / (max_rank - 1.0) * plot;
    let sy = |r: f64| SIZE - MARGIN - (r - 1.0) / (max_rank - 1.0) * plot;

    let title = match rho {
        Some(r) => format!("{} vs {} (Spearman \u{3c1} = {r:.3})", a.method, b.method),
        None => format!("{} vs {} (Spearman \u{3c1} undefined)", a.method, b.method),
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        SIZE / 2.0,
        xml_escape(&title)
    );
    let (lo, hi) = (sx(1.0), sx(max_rank));
    let (ylo, yhi) = (sy(1.0), sy(max_rank));
    let _ = writeln!(
        s,
        r##"<rect class="frame" x="{lo}" y="{yhi}" width="{plot}" height="{plot}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line class="diagonal" x1="{lo}" y1="{ylo}" x2="{hi}" y2="{yhi}" stroke="#d62728" stroke-dasharray="6 4"/>"##
    );
    for k in 1..=p {
        let r = k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{k}</text>"#,
            sx(r),
            ylo + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{k}</text>"#,
            lo - 8.0,
            sy(r) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle" font-size="13">{} rank</text>"#,
        SIZE / 2.0,
        SIZE - 25.0,
        xml_escape(&a.method.to_string())
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="20" y="{0}" text-anchor="middle" font-size="13" transform="rotate(-90 20 {0})">{1} rank</text>"#,
        SIZE / 2.0,
        xml_escape(&b.method.to_string())
    );
    for (j, name) in a.feature_names.iter().enumerate() {
        let (x, y) = (sx(a.ranks[j]), sy(b.ranks[j]));
        let name = xml_escape(name);
        let _ = writeln!(
            s,
            r##"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="5" fill="#1f77b4" data-feature="{name}" data-rank-a="{}" data-rank-b="{}"/>"##,
            a.ranks[j], b.ranks[j]
        );
        let _ = writeln!(
            s,
            r#"<text class="label" x="{:.2}" y="{:.2}" font-size="11">{name}</text>"#,
            x + 7.0,
            y - 7.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(method: Method, scores: &[f64]) -> Ranking {
        let names = (0..scores.len()).map(|i| format!("f{i}")).collect();
        Ranking::new(method, names, scores.to_vec()).unwrap()
    }

    fn points(svg: &str) -> Vec<(f64, f64)> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("point"))
            .map(|n| {
                (
                    n.attribute("cx").unwrap().parse().unwrap(),
                    n.attribute("cy").unwrap().parse().unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn identical_rankings_sit_on_diagonal() {
        let a = ranking(Method::Smd, &[0.5, 0.3, 0.9, 0.1]);
        let b = ranking(Method::Shap, &[0.5, 0.3, 0.9, 0.1]);
        let svg = scatter_svg(&a, &b, Some(1.0)).unwrap();
        for (x, y) in points(&svg) {
            // diagonal runs bottom-left to top-right: x + y is constant
            assert!((x + y - SIZE).abs() < 1e-9);
        }
        assert!(svg.contains("\u{3c1} = 1.000"));
    }

    #[test]
    fn reversed_rankings_sit_on_anti_diagonal() {
        let a = ranking(Method::Smd, &[4.0, 3.0, 2.0, 1.0]);
        let b = ranking(Method::Tree, &[1.0, 2.0, 3.0, 4.0]);
        let svg = scatter_svg(&a, &b, Some(-1.0)).unwrap();
        for (x, y) in points(&svg) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_are_escaped() {
        let a = Ranking::new(Method::Smd, vec!["a<b".into(), "c&d".into()], vec![1.0, 2.0]).unwrap();
        let svg = scatter_svg(&a, &a.clone(), None).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert!(doc.descendants().any(|n| n.text() == Some("a<b")));
        assert!(svg.contains("undefined"));
    }

    #[test]
    fn mismatched_features_rejected() {
        let a = ranking(Method::Smd, &[1.0, 2.0]);
        let mut b = ranking(Method::Tree, &[1.0, 2.0]);
        b.feature_names[0] = "other".into();
        assert!(scatter_svg(&a, &b, None).is_err());
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("tree".parse::<ModelSelector>().unwrap(), ModelSelector::Tree);
        assert_eq!("both".parse::<ModelSelector>().unwrap(), ModelSelector::Both);
        assert_eq!("forest".parse::<ModelSelector>().unwrap_err().exit_code(), 2);
        assert_eq!("train".parse::<SmdScope>().unwrap(), SmdScope::Train);
    }
}
