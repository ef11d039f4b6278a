//! Model-agnostic KernelSHAP.
//!
//! A coalition `S` is scored by `v(S)`, the mean model output over background
//! rows with the features outside `S` replaced by background values. The
//! attributions solve the Shapley-kernel weighted least-squares fit of
//! `v(S) ~ base + sum_{j in S} phi_j` with `base = v({})` and
//! `base + sum(phi) = v(all)` enforced exactly by eliminating the last
//! unknown. With every coalition enumerated the solution equals the classical
//! Shapley values, which [`exact_shapley`] computes independently.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::ImportanceVector;
use crate::error::{AuditError, Result};
use crate::mlp::MlpModel;

/// Largest feature count for which coalitions are masks in a `u64`.
const MAX_FEATURES: usize = 63;

/// A model that scores row-major batches. Must be callable from several
/// threads at once.
pub trait BatchModel: Sync {
    fn n_features(&self) -> usize;
    fn predict_batch(&self, rows: &[f64], n: usize) -> Result<Vec<f64>>;
}

/// Explains the predicted probability of class 1.
impl BatchModel for MlpModel {
    fn n_features(&self) -> usize {
        self.network.n_inputs()
    }

    fn predict_batch(&self, rows: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.network.forward(rows, n))
    }
}

/// Wraps a per-row closure.
pub struct FnModel<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> BatchModel for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_batch(&self, rows: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(rows.chunks(self.n_features).take(n).map(&self.f).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    /// Rows drawn (without replacement) from the training split.
    pub background_size: usize,
    /// Enumerate every coalition up to this many features; sample above it.
    pub max_exact_features: usize,
    /// Coalition draws per instance when sampling.
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            background_size: 100,
            max_exact_features: 12,
            sample_budget: 2048,
            seed: 42,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.background_size == 0 {
            return Err(AuditError::Config("background size must be >= 1".into()));
        }
        if p > self.max_exact_features && self.sample_budget < p + 2 {
            return Err(AuditError::Config(format!(
                "sample budget {} must be at least p + 2 = {}",
                self.sample_budget,
                p + 2
            )));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(p - 1) / (C(p, s) * s * (p - s))` for `1 <= s <= p - 1`.
pub fn shapley_kernel_weight(p: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= p {
        return Err(AuditError::InvalidInput(format!(
            "kernel weight undefined for coalition size {s} of {p}"
        )));
    }
    Ok((p - 1) as f64 / (binomial(p, s) * s as f64 * (p - s) as f64))
}

fn check_inputs(model: &dyn BatchModel, x: &[f64], background: &ArrayView2<f64>) -> Result<usize> {
    let p = model.n_features();
    if x.len() != p {
        return Err(AuditError::Dimension {
            expected: p,
            found: x.len(),
        });
    }
    if background.ncols() != p {
        return Err(AuditError::Dimension {
            expected: p,
            found: background.ncols(),
        });
    }
    if background.nrows() == 0 {
        return Err(AuditError::InvalidInput("background is empty".into()));
    }
    if p == 0 || p > MAX_FEATURES {
        return Err(AuditError::InvalidInput(format!(
            "feature count {p} outside 1..={MAX_FEATURES}"
        )));
    }
    Ok(p)
}

fn coalition_value(model: &dyn BatchModel, x: &[f64], mask: u64, background: &ArrayView2<f64>) -> Result<f64> {
    let (m, p) = background.dim();
    let mut rows = Vec::with_capacity(m * p);
    for b in background.rows() {
        rows.extend(b.iter().enumerate().map(|(j, &bj)| if mask >> j & 1 == 1 { x[j] } else { bj }));
    }
    let out = model.predict_batch(&rows, m)?;
    if out.len() != m {
        return Err(AuditError::Dimension {
            expected: m,
            found: out.len(),
        });
    }
    Ok(out.iter().sum::<f64>() / m as f64)
}

/// `v(S)`: mean model output over background rows, keeping `x` on the
/// features in `coalition`.
pub fn masked_prediction(
    model: &dyn BatchModel,
    x: &[f64],
    coalition: &[usize],
    background: ArrayView2<f64>,
) -> Result<f64> {
    let p = check_inputs(model, x, &background)?;
    let mut mask = 0u64;
    for &j in coalition {
        if j >= p {
            return Err(AuditError::Dimension {
                expected: p,
                found: j,
            });
        }
        mask |= 1 << j;
    }
    coalition_value(model, x, mask, &background)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub phi: Vec<f64>,
    pub base_value: f64,
    /// Model output at the explained row.
    pub output: f64,
    /// `base + sum(phi) - output`.
    pub residual: f64,
    pub coalitions: usize,
    pub enumerated: bool,
}

fn enumerate_coalitions(p: usize) -> Vec<(u64, f64)> {
    let full = (1u64 << p) - 1;
    (1..full)
        .map(|mask| (mask, shapley_kernel_weight(p, mask.count_ones() as usize).unwrap()))
        .collect()
}

/// Draws sizes with probability proportional to `(p - 1) / (s (p - s))`,
/// then a uniform subset of that size. Duplicates are merged and weighted by
/// multiplicity.
fn sample_coalitions(p: usize, budget: usize, rng: &mut impl Rng) -> Vec<(u64, f64)> {
    let size_weights: Vec<f64> = (1..p).map(|s| 1.0 / (s * (p - s)) as f64).collect();
    let total: f64 = size_weights.iter().sum();
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for _ in 0..budget {
        let mut u = rng.random::<f64>() * total;
        let mut s = p - 1;
        for (k, w) in size_weights.iter().enumerate() {
            if u < *w {
                s = k + 1;
                break;
            }
            u -= w;
        }
        let mask = sample(rng, p, s).iter().fold(0u64, |m, j| m | 1 << j);
        *counts.entry(mask).or_default() += 1.0;
    }
    counts.into_iter().collect()
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

pub fn explain_instance(
    model: &dyn BatchModel,
    x: &[f64],
    background: ArrayView2<f64>,
    cfg: &ShapConfig,
) -> Result<Explanation> {
    let p = check_inputs(model, x, &background)?;
    cfg.validate(p)?;
    let full = (1u64 << p) - 1;
    let base = coalition_value(model, x, 0, &background)?;
    let output = coalition_value(model, x, full, &background)?;
    let total = output - base;

    if p == 1 {
        return Ok(Explanation {
            phi: vec![total],
            base_value: base,
            output,
            residual: 0.0,
            coalitions: 0,
            enumerated: true,
        });
    }

    let enumerated = p <= cfg.max_exact_features;
    let coalitions = if enumerated {
        enumerate_coalitions(p)
    } else {
        sample_coalitions(p, cfg.sample_budget, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    };
    let unknowns = p - 1;
    if coalitions.len() < unknowns {
        return Err(AuditError::Singular {
            distinct: coalitions.len(),
            unknowns,
        });
    }

    // phi_last = total - sum(phi_j), so each row regresses
    // v(S) - base - z_last * total on (z_j - z_last).
    let last = p - 1;
    let mut ata = vec![vec![0.0; unknowns]; unknowns];
    let mut atb = vec![0.0; unknowns];
    let mut a = vec![0.0; unknowns];
    for &(mask, w) in &coalitions {
        let v = coalition_value(model, x, mask, &background)?;
        let z_last = (mask >> last & 1) as f64;
        let target = v - base - z_last * total;
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = (mask >> j & 1) as f64 - z_last;
        }
        for i in 0..unknowns {
            if a[i] == 0.0 {
                continue;
            }
            atb[i] += w * a[i] * target;
            for k in 0..unknowns {
                ata[i][k] += w * a[i] * a[k];
            }
        }
    }
    let mut phi = solve(ata, atb).ok_or(AuditError::Singular {
        distinct: coalitions.len(),
        unknowns,
    })?;
    phi.push(total - phi.iter().sum::<f64>());
    let residual = base + phi.iter().sum::<f64>() - output;
    Ok(Explanation {
        phi,
        base_value: base,
        output,
        residual,
        coalitions: coalitions.len(),
        enumerated,
    })
}

/// Classical Shapley values by summing marginal contributions over every
/// subset, weighted `|S|! (p - |S| - 1)! / p!`.
pub fn exact_shapley(model: &dyn BatchModel, x: &[f64], background: ArrayView2<f64>) -> Result<Vec<f64>> {
    let p = check_inputs(model, x, &background)?;
    if p > 12 {
        return Err(AuditError::InvalidInput(format!(
            "exact Shapley values limited to 12 features, got {p}"
        )));
    }
    let values = (0..1u64 << p)
        .map(|mask| coalition_value(model, x, mask, &background))
        .collect::<Result<Vec<_>>>()?;
    let fact: Vec<f64> = (0..=p).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1u64 << j;
        for mask in (0..1u64 << p).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[p - s - 1] / fact[p];
            *phi_j += w * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }
    Ok(phi)
}

/// Per-instance attributions for a set of explained rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub feature_names: Vec<String>,
    /// `instances x features`
    pub phi: Array2<f64>,
    pub base_value: f64,
    pub instance_ids: Vec<usize>,
    pub max_abs_residual: f64,
    pub enumerated: bool,
}

/// Explains every row of `rows`. Instance `i` samples coalitions (when it
/// samples at all) with seed `cfg.seed + i`.
pub fn explain_rows(
    model: &dyn BatchModel,
    feature_names: &[String],
    rows: ArrayView2<f64>,
    background: ArrayView2<f64>,
    cfg: &ShapConfig,
) -> Result<AttributionMatrix> {
    let p = model.n_features();
    if feature_names.len() != p {
        return Err(AuditError::Dimension {
            expected: p,
            found: feature_names.len(),
        });
    }
    let explain = |i: usize| {
        let x: Vec<f64> = rows.row(i).to_vec();
        let cfg = ShapConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        explain_instance(model, &x, background, &cfg)
    };

    #[cfg(feature = "parallel")]
    let explanations: Vec<Explanation> = {
        use rayon::prelude::*;
        (0..rows.nrows()).into_par_iter().map(explain).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let explanations: Vec<Explanation> = (0..rows.nrows()).map(explain).collect::<Result<_>>()?;

    let mut phi = Array2::zeros((rows.nrows(), p));
    for (i, e) in explanations.iter().enumerate() {
        for (j, v) in e.phi.iter().enumerate() {
            phi[[i, j]] = *v;
        }
    }
    let base_value = match explanations.first() {
        Some(e) => e.base_value,
        None => coalition_value(model, &vec![0.0; p], 0, &background)?,
    };
    Ok(AttributionMatrix {
        feature_names: feature_names.to_vec(),
        phi,
        base_value,
        instance_ids: (0..rows.nrows()).collect(),
        max_abs_residual: explanations.iter().map(|e| e.residual.abs()).fold(0.0, f64::max),
        enumerated: explanations.iter().all(|e| e.enumerated),
    })
}

/// Seeded draw of `size` distinct rows (all rows, in order, if fewer exist).
pub fn sample_background(x: ArrayView2<f64>, size: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let n = x.nrows();
    let mut idx: Vec<usize> = if size >= n {
        (0..n).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), n, size).into_vec()
    };
    idx.sort_unstable();
    (x.select(ndarray::Axis(0), &idx), idx)
}

/// Mean `|phi|` per feature, normalized to sum 1. All-zero attributions give
/// a uniform vector flagged `no_signal`.
pub fn aggregate_importance(attr: &AttributionMatrix) -> Result<ImportanceVector> {
    let (n, p) = attr.phi.dim();
    if n == 0 || p == 0 {
        return Err(AuditError::InvalidInput("no attributions to aggregate".into()));
    }
    let mut values: Vec<f64> = attr
        .phi
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n as f64)
        .collect();
    let total: f64 = values.iter().sum();
    let no_signal = total == 0.0;
    if no_signal {
        values.fill(1.0 / p as f64);
    } else {
        values.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ImportanceVector {
        feature_names: attr.feature_names.clone(),
        values,
        no_signal,
    })
}
