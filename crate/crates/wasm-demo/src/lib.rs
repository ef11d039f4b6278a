//! wasm-bindgen bindings behind `www/index.html`.
//!
//! Each export takes plain strings and numbers and returns a JSON string, so
//! the page needs no glue beyond `JSON.parse`. The `*_json` functions hold
//! the logic and are plain Rust, testable natively.

use align_audit::alignment::{build_alignment_report, spearman_rho, Accuracies, Agreement, Method, Ranking, SplitAccuracy};
use align_audit::data::{self, CsvOptions, Dataset, FeatureSchema};
use align_audit::effect_size::smd;
use align_audit::fixtures::default_features;
use align_audit::report::scatter_svg;
use align_audit::tree::{accuracy, fit_tree, tree_importances, TreeConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn encode_csv(csv: &str, target: &str) -> Result<Dataset, String> {
    let header: Vec<String> = csv
        .lines()
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let opts = CsvOptions {
        features: default_features(&header, target),
        ..CsvOptions::default()
    };
    let raw = data::read_csv(csv.as_bytes(), target, &opts).map_err(|e| e.to_string())?;
    let schema = FeatureSchema::infer(&raw, target).map_err(|e| e.to_string())?;
    let table = data::impute(&raw, &schema).map_err(|e| e.to_string())?;
    Ok(data::encode(&table, &schema).map_err(|e| e.to_string())?.data)
}

/// Effect-size table, strongest separator first.
pub fn smd_table_json(csv: &str, target: &str) -> Result<String, String> {
    let data = encode_csv(csv, target)?;
    let table = smd(&data).map_err(|e| e.to_string())?;
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "feature": r.feature,
                "delta": finite_or_text(r.delta),
                "abs_delta": finite_or_text(r.abs_delta),
                "rank": r.rank,
                "mean_positive": r.stats.mean1,
                "mean_negative": r.stats.mean0,
                "pooled_std": r.pooled_std,
            })
        })
        .collect();
    Ok(json!({ "rows": data.n_rows(), "positives": data.positives(), "table": rows }).to_string())
}

fn finite_or_text(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

/// Fits a tree on a seeded 80/20 split and compares its importances with
/// the effect sizes.
pub fn tree_alignment_json(
    csv: &str,
    target: &str,
    max_depth: usize,
    min_samples_leaf: usize,
    seed: u64,
) -> Result<String, String> {
    let data = encode_csv(csv, target)?;
    let (train, test) = data::split(&data, 0.2, seed).map_err(|e| e.to_string())?;
    let cfg = TreeConfig {
        max_depth,
        min_samples_leaf,
        min_samples_split: (2 * min_samples_leaf).max(2),
        seed,
    };
    let tree = fit_tree(&train, &cfg).map_err(|e| e.to_string())?;
    let (pred_train, _) = tree.predict(train.x.view()).map_err(|e| e.to_string())?;
    let (pred_test, _) = tree.predict(test.x.view()).map_err(|e| e.to_string())?;
    let acc = SplitAccuracy {
        train: accuracy(&pred_train, &train.y),
        test: accuracy(&pred_test, &test.y),
    };
    let effect = smd(&data).map_err(|e| e.to_string())?;
    let report = build_alignment_report(
        "upload",
        &effect,
        Some(&tree_importances(&tree)),
        None,
        Accuracies {
            tree: Some(acc),
            mlp: None,
        },
        json!({ "max_depth": max_depth, "min_samples_leaf": min_samples_leaf, "seed": seed }),
    )
    .map_err(|e| e.to_string())?;
    let a = report.ranking(Method::Smd).ok_or("missing SMD ranking")?;
    let b = report.ranking(Method::Tree).ok_or("missing tree ranking")?;
    let rho = report.rho.smd_tree.flatten();
    let svg = scatter_svg(&a, &b, rho).map_err(|e| e.to_string())?;
    Ok(json!({
        "rho": rho,
        "agreement": Agreement::classify(rho),
        "accuracy": acc,
        "depth": tree.depth(),
        "leaves": tree.leaf_count(),
        "rankings": report.rankings,
        "svg": svg,
    })
    .to_string())
}

fn parse_scores(text: &str) -> Result<(Vec<String>, Vec<f64>), String> {
    let mut names = Vec::new();
    let mut scores = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (name, score) = line
            .rsplit_once([',', ':', '\t'])
            .ok_or_else(|| format!("expected `name,score`, got `{line}`"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| format!("`{}` is not a number", score.trim()))?;
        names.push(name.trim().to_string());
        scores.push(score);
    }
    Ok((names, scores))
}

/// Spearman agreement and scatter for two hand-entered `name,score` lists
/// over the same features (in any order).
pub fn rank_scatter_json(scores_a: &str, scores_b: &str) -> Result<String, String> {
    let (names, a) = parse_scores(scores_a)?;
    let (names_b, b_raw) = parse_scores(scores_b)?;
    if names.len() != names_b.len() {
        return Err(format!("lists have {} and {} features", names.len(), names_b.len()));
    }
    let b = names
        .iter()
        .map(|n| {
            names_b
                .iter()
                .position(|m| m == n)
                .map(|i| b_raw[i])
                .ok_or_else(|| format!("feature `{n}` missing from the second list"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ra = Ranking::new(Method::Smd, names.clone(), a).map_err(|e| e.to_string())?;
    let rb = Ranking::new(Method::Shap, names, b).map_err(|e| e.to_string())?;
    let rho = spearman_rho(&ra.ranks, &rb.ranks).map_err(|e| e.to_string())?;
    let svg = scatter_svg(&ra, &rb, rho).map_err(|e| e.to_string())?;
    Ok(json!({
        "rho": rho,
        "agreement": Agreement::classify(rho),
        "ranks_a": ra.ranks,
        "ranks_b": rb.ranks,
        "svg": svg,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn smd_table(csv: &str, target: &str) -> Result<String, JsValue> {
    smd_table_json(csv, target).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn tree_alignment(csv: &str, target: &str, max_depth: u32, min_samples_leaf: u32, seed: u32) -> Result<String, JsValue> {
    tree_alignment_json(csv, target, max_depth as usize, min_samples_leaf as usize, u64::from(seed))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rank_scatter(scores_a: &str, scores_b: &str) -> Result<String, JsValue> {
    rank_scatter_json(scores_a, scores_b).map_err(|e| JsValue::from_str(&e))
}
