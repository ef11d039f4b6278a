//! Tabular ingestion and preprocessing.
//!
//! The pipeline is `load_csv -> FeatureSchema::infer -> impute -> encode -> split -> standardize`.
//! Every step is a pure function of its inputs.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// A raw CSV column. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            Column::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .map(|i| &self.columns[i])
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Cell values (after trimming) treated as missing.
    pub missing_tokens: Vec<String>,
    /// Columns to ingest besides the target, in output order. `None` takes
    /// every non-target column.
    pub features: Option<Vec<String>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing_tokens: vec![String::new(), "NA".to_string()],
            features: None,
        }
    }
}

/// Reads a CSV file. The target column is always kept as categorical and is
/// placed last.
pub fn load_csv(path: impl AsRef<Path>, target: &str, opts: &CsvOptions) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, target, opts)
}

pub fn read_csv<R: Read>(reader: R, target: &str, opts: &CsvOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(AuditError::DuplicateColumn(name.clone()));
        }
    }
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| AuditError::MissingTarget(target.to_string()))?;

    let mut selected: Vec<usize> = match &opts.features {
        Some(features) => {
            let mut idx = Vec::with_capacity(features.len());
            let mut dedup = HashSet::new();
            for f in features {
                if f == target {
                    return Err(AuditError::Config(format!(
                        "target `{target}` cannot also be a feature"
                    )));
                }
                if !dedup.insert(f.as_str()) {
                    return Err(AuditError::DuplicateColumn(f.clone()));
                }
                let i = header
                    .iter()
                    .position(|h| h == f)
                    .ok_or_else(|| AuditError::MissingFeature(f.clone()))?;
                idx.push(i);
            }
            idx
        }
        None => (0..header.len()).filter(|&i| i != target_idx).collect(),
    };
    selected.push(target_idx);

    let missing: HashSet<&str> = opts.missing_tokens.iter().map(String::as_str).collect();
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); selected.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(AuditError::RaggedRow {
                // 1-based, counting the header line
                row: row + 2,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (out, &src) in cells.iter_mut().zip(&selected) {
            let cell = &record[src];
            out.push((!missing.contains(cell)).then(|| cell.to_string()));
        }
    }
    let row_count = cells[0].len();
    if row_count == 0 {
        return Err(AuditError::NoRows);
    }

    let last = cells.len() - 1;
    let columns = cells
        .into_iter()
        .enumerate()
        .map(|(k, col)| if k == last { Column::Categorical(col) } else { classify(col) })
        .collect();

    Ok(RawTable {
        column_names: selected.iter().map(|&i| header[i].clone()).collect(),
        columns,
        row_count,
    })
}

/// Numeric iff every present cell parses as a finite real number.
fn classify(cells: Vec<Option<String>>) -> Column {
    let parsed: Option<Vec<Option<f64>>> = cells
        .iter()
        .map(|c| match c {
            None => Some(None),
            Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
        })
        .collect();
    match parsed {
        Some(values) if values.iter().any(Option::is_some) => Column::Numeric(values),
        _ => Column::Categorical(cells),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Levels in first-appearance order.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub target: String,
    pub columns: Vec<(String, ColumnKind)>,
}

impl FeatureSchema {
    pub fn infer(table: &RawTable, target: &str) -> Result<Self> {
        let mut columns = Vec::with_capacity(table.columns.len());
        for (name, col) in table.column_names.iter().zip(&table.columns) {
            let kind = match col {
                Column::Numeric(_) => ColumnKind::Numeric,
                Column::Categorical(cells) => ColumnKind::Categorical {
                    levels: first_appearance_levels(cells),
                },
            };
            columns.push((name.clone(), kind));
        }
        let schema = Self {
            target: target.to_string(),
            columns,
        };
        match schema.kind(target) {
            Some(ColumnKind::Categorical { levels }) if levels.len() == 2 => Ok(schema),
            Some(ColumnKind::Categorical { levels }) => Err(AuditError::TargetLevels {
                column: target.to_string(),
                found: levels.len(),
            }),
            Some(ColumnKind::Numeric) => Err(AuditError::InvalidInput(format!(
                "target `{target}` must be categorical"
            ))),
            None => Err(AuditError::MissingTarget(target.to_string())),
        }
    }

    pub fn kind(&self, name: &str) -> Option<&ColumnKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    fn check_matches(&self, table: &RawTable) -> Result<()> {
        if self.columns.len() != table.columns.len()
            || self
                .columns
                .iter()
                .zip(&table.column_names)
                .any(|((a, _), b)| a != b)
        {
            return Err(AuditError::InvalidInput(
                "schema does not describe this table".into(),
            ));
        }
        Ok(())
    }
}

fn first_appearance_levels(cells: &[Option<String>]) -> Vec<String> {
    let mut seen = HashSet::new();
    cells
        .iter()
        .flatten()
        .filter(|s| seen.insert(s.as_str()))
        .cloned()
        .collect()
}

/// Median of the present values; the mean of the two middle values for even counts.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// Most frequent level; ties go to the level that appears first.
pub fn mode(cells: &[Option<String>]) -> Option<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in cells.iter().flatten() {
        *counts.entry(c.as_str()).or_default() += 1;
    }
    let mut best: Option<(String, usize)> = None;
    for level in first_appearance_levels(cells) {
        let n = counts[level.as_str()];
        if best.as_ref().is_none_or(|&(_, b)| n > b) {
            best = Some((level, n));
        }
    }
    best.map(|(s, _)| s)
}

/// Fills numeric gaps with the column median and categorical gaps with the mode.
pub fn impute(table: &RawTable, schema: &FeatureSchema) -> Result<RawTable> {
    schema.check_matches(table)?;
    let mut out = table.clone();
    for (name, col) in out.column_names.iter().zip(out.columns.iter_mut()) {
        if col.missing_count() == 0 {
            continue;
        }
        match col {
            Column::Numeric(cells) => {
                let fill = median(cells.iter().flatten().copied())
                    .ok_or_else(|| AuditError::AllMissing(name.clone()))?;
                for c in cells.iter_mut().filter(|c| c.is_none()) {
                    *c = Some(fill);
                }
            }
            Column::Categorical(cells) => {
                let fill = mode(cells).ok_or_else(|| AuditError::AllMissing(name.clone()))?;
                for c in cells.iter_mut().filter(|c| c.is_none()) {
                    *c = Some(fill.clone());
                }
            }
        }
    }
    Ok(out)
}

/// Numeric design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub feature_names: Vec<String>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, feature_names: Vec<String>, y: Vec<u8>) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(AuditError::InvalidInput(format!(
                "dataset must have rows and features, got {n}x{p}"
            )));
        }
        if feature_names.len() != p {
            return Err(AuditError::Dimension {
                expected: p,
                found: feature_names.len(),
            });
        }
        if y.len() != n {
            return Err(AuditError::Dimension {
                expected: n,
                found: y.len(),
            });
        }
        if y.iter().any(|&v| v > 1) {
            return Err(AuditError::InvalidInput("labels must be 0 or 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::InvalidInput("feature matrix has non-finite values".into()));
        }
        Ok(Self { x, feature_names, y })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }
}

/// How one raw column became one or more numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric { column: String },
    /// Single 0/1 column; `one` is the level mapped to 1.
    Binary { column: String, one: String, zero: String },
    OneHot { column: String, levels: Vec<String> },
    Constant { column: String, level: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoding {
    pub column: String,
    pub negative: String,
    pub positive: String,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub data: Dataset,
    pub target: TargetEncoding,
    pub columns: Vec<ColumnEncoding>,
    pub warnings: Vec<String>,
}

/// Turns an imputed table into a numeric dataset.
///
/// Levels are ordered lexicographically for encoding. A binary categorical
/// becomes one column equal to 1 for its lexicographically first level; a
/// categorical with k >= 3 levels becomes k indicators `<col>=<level>`. The
/// target maps its lexicographically greater level to 1.
pub fn encode(table: &RawTable, schema: &FeatureSchema) -> Result<Encoded> {
    schema.check_matches(table)?;
    let n = table.row_count;
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut encodings = Vec::new();
    let mut warnings = Vec::new();
    let mut target = None;

    for (name, col) in table.column_names.iter().zip(&table.columns) {
        if col.missing_count() > 0 {
            return Err(AuditError::UnimputedMissing(name.clone()));
        }
        if name == &schema.target {
            let Column::Categorical(cells) = col else {
                return Err(AuditError::InvalidInput(format!(
                    "target `{name}` must be categorical"
                )));
            };
            let levels = sorted_levels(cells);
            if levels.len() != 2 {
                return Err(AuditError::TargetLevels {
                    column: name.clone(),
                    found: levels.len(),
                });
            }
            let y = cells
                .iter()
                .map(|c| u8::from(c.as_deref() == Some(levels[1].as_str())))
                .collect::<Vec<_>>();
            target = Some((
                y,
                TargetEncoding {
                    column: name.clone(),
                    negative: levels[0].clone(),
                    positive: levels[1].clone(),
                },
            ));
            continue;
        }
        match col {
            Column::Numeric(cells) => {
                names.push(name.clone());
                cols.push(cells.iter().map(|c| c.unwrap()).collect());
                encodings.push(ColumnEncoding::Numeric {
                    column: name.clone(),
                });
            }
            Column::Categorical(cells) => {
                let levels = sorted_levels(cells);
                match levels.len() {
                    1 => {
                        warnings.push(format!("column `{name}` has a single level; emitted as constant"));
                        names.push(name.clone());
                        cols.push(vec![0.0; n]);
                        encodings.push(ColumnEncoding::Constant {
                            column: name.clone(),
                            level: levels[0].clone(),
                        });
                    }
                    2 => {
                        names.push(name.clone());
                        cols.push(
                            cells
                                .iter()
                                .map(|c| f64::from(u8::from(c.as_deref() == Some(levels[0].as_str()))))
                                .collect(),
                        );
                        encodings.push(ColumnEncoding::Binary {
                            column: name.clone(),
                            one: levels[0].clone(),
                            zero: levels[1].clone(),
                        });
                    }
                    _ => {
                        for level in &levels {
                            names.push(format!("{name}={level}"));
                            cols.push(
                                cells
                                    .iter()
                                    .map(|c| f64::from(u8::from(c.as_deref() == Some(level.as_str()))))
                                    .collect(),
                            );
                        }
                        encodings.push(ColumnEncoding::OneHot {
                            column: name.clone(),
                            levels,
                        });
                    }
                }
            }
        }
    }

    let (y, target) = target.ok_or_else(|| AuditError::MissingTarget(schema.target.clone()))?;
    let p = cols.len();
    let mut x = Array2::zeros((n, p));
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    Ok(Encoded {
        data: Dataset::new(x, names, y)?,
        target,
        columns: encodings,
        warnings,
    })
}

fn sorted_levels(cells: &[Option<String>]) -> Vec<String> {
    let mut levels = first_appearance_levels(cells);
    levels.sort();
    levels
}

/// Seeded permutation of `0..n`; the last `round(n * test_fraction)` indices
/// (half rounds up) are the test rows.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(AuditError::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction + 0.5).floor() as usize;
    if n_test == 0 || n_test >= n {
        return Err(AuditError::InvalidInput(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n - n_test);
    Ok((order, test))
}

pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.n_rows(), test_fraction, seed)?;
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

/// Train-set z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalingParams {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        let constant = std.iter().map(|&s| s == 0.0).collect();
        Self { mean, std, constant }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
            }
        }
        out
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        out
    }
}

pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, ScalingParams)> {
    if train.n_features() != test.n_features() {
        return Err(AuditError::Dimension {
            expected: train.n_features(),
            found: test.n_features(),
        });
    }
    let params = ScalingParams::fit(&train.x);
    let scaled = |d: &Dataset| Dataset {
        x: params.transform(&d.x),
        feature_names: d.feature_names.clone(),
        y: d.y.clone(),
    };
    Ok((scaled(train), scaled(test), params))
}
