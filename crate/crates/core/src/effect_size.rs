//! Standardized mean differences between the two outcome groups.
//!
//! For feature `j`, with `D1` the rows labelled 1 and `D0` the rest:
//!
//! ```text
//! s_p = sqrt(((n1 - 1) s1^2 + (n0 - 1) s0^2) / (n1 + n0 - 2))
//! delta = (mean1 - mean0) / s_p
//! ```
//!
//! Features are ranked by descending `|delta|`.

use serde::{Deserialize, Serialize};

use crate::alignment::to_ranks;
use crate::data::Dataset;
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub feature: usize,
    pub n1: usize,
    pub n0: usize,
    pub mean1: f64,
    pub mean0: f64,
    /// Sample variances (divisor n - 1); zero for a group of one.
    pub var1: f64,
    pub var0: f64,
    /// Set when a group holds a single row, so its variance is undefined.
    pub degenerate: bool,
}

fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

pub fn group_stats(data: &Dataset, feature: usize) -> Result<GroupStats> {
    if feature >= data.n_features() {
        return Err(AuditError::Dimension {
            expected: data.n_features(),
            found: feature,
        });
    }
    let col = data.x.column(feature);
    let (mut g1, mut g0) = (Vec::new(), Vec::new());
    for (&v, &label) in col.iter().zip(&data.y) {
        if label == 1 { g1.push(v) } else { g0.push(v) }
    }
    if g1.is_empty() {
        return Err(AuditError::EmptyGroup("no rows with label 1"));
    }
    if g0.is_empty() {
        return Err(AuditError::EmptyGroup("no rows with label 0"));
    }
    let (mean1, var1) = mean_and_sample_var(&g1);
    let (mean0, var0) = mean_and_sample_var(&g0);
    Ok(GroupStats {
        feature,
        n1: g1.len(),
        n0: g0.len(),
        mean1,
        mean0,
        var1,
        var0,
        degenerate: g1.len() == 1 || g0.len() == 1,
    })
}

pub fn pooled_std(stats: &GroupStats) -> Result<f64> {
    let n = stats.n1 + stats.n0;
    if n < 3 {
        return Err(AuditError::InvalidInput(format!(
            "pooled std needs at least 3 rows, got {n}"
        )));
    }
    let num = (stats.n1 as f64 - 1.0) * stats.var1 + (stats.n0 as f64 - 1.0) * stats.var0;
    Ok((num / (n as f64 - 2.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub feature: String,
    pub stats: GroupStats,
    pub pooled_std: f64,
    /// Signed effect. Infinite when the pooled std is zero but the means differ.
    #[serde(with = "crate::serde_float")]
    pub delta: f64,
    #[serde(with = "crate::serde_float")]
    pub abs_delta: f64,
    /// 1 = largest `|delta|`; ties share the average rank.
    pub rank: f64,
    /// Constant within each group but different across groups.
    pub degenerate_separator: bool,
}

/// Rows sorted by descending `|delta|` (stable on feature index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeTable {
    pub rows: Vec<EffectSize>,
}

impl EffectSizeTable {
    /// `|delta|` in the dataset's original feature order.
    pub fn abs_deltas_by_feature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for r in &self.rows {
            out[r.stats.feature] = r.abs_delta;
        }
        out
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = vec![String::new(); self.rows.len()];
        for r in &self.rows {
            out[r.stats.feature] = r.feature.clone();
        }
        out
    }

    pub fn get(&self, feature: &str) -> Option<&EffectSize> {
        self.rows.iter().find(|r| r.feature == feature)
    }
}

pub fn smd(data: &Dataset) -> Result<EffectSizeTable> {
    let mut rows = Vec::with_capacity(data.n_features());
    for j in 0..data.n_features() {
        let stats = group_stats(data, j)?;
        let sp = pooled_std(&stats)?;
        let diff = stats.mean1 - stats.mean0;
        let (delta, degenerate_separator) = if sp > 0.0 {
            (diff / sp, false)
        } else if diff == 0.0 {
            (0.0, false)
        } else {
            (f64::INFINITY.copysign(diff), true)
        };
        rows.push(EffectSize {
            feature: data.feature_names[j].clone(),
            stats,
            pooled_std: sp,
            delta,
            abs_delta: delta.abs(),
            rank: 0.0,
            degenerate_separator,
        });
    }
    let ranks = to_ranks(&rows.iter().map(|r| r.abs_delta).collect::<Vec<_>>())?;
    for (r, rank) in rows.iter_mut().zip(ranks) {
        r.rank = rank;
    }
    rows.sort_by(|a, b| b.abs_delta.total_cmp(&a.abs_delta));
    Ok(EffectSizeTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn one_feature(x: &[f64], y: &[u8]) -> Dataset {
        let x = Array2::from_shape_vec((x.len(), 1), x.to_vec()).unwrap();
        Dataset::new(x, vec!["f".into()], y.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let d = one_feature(&[2.0, 4.0, 6.0, 1.0, 3.0], &[1, 1, 1, 0, 0]);
        let s = group_stats(&d, 0).unwrap();
        assert_eq!((s.n1, s.n0), (3, 2));
        assert!((s.mean1 - 4.0).abs() < 1e-15 && (s.mean0 - 2.0).abs() < 1e-15);
        assert!((s.var1 - 4.0).abs() < 1e-15 && (s.var0 - 2.0).abs() < 1e-15);
        let sp = pooled_std(&s).unwrap();
        assert!((sp - (10.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((sp - 1.8257).abs() < 1e-4);
        let t = smd(&d).unwrap();
        assert!((t.rows[0].delta - 1.0954).abs() < 1e-4);
    }

    #[test]
    fn constant_feature() {
        let d = one_feature(&[5.0; 4], &[1, 0, 1, 0]);
        let s = group_stats(&d, 0).unwrap();
        assert_eq!((s.mean1, s.mean0, s.var1, s.var0), (5.0, 5.0, 0.0, 0.0));
        assert_eq!(pooled_std(&s).unwrap(), 0.0);
        assert_eq!(smd(&d).unwrap().rows[0].delta, 0.0);
    }

    #[test]
    fn label_swap_swaps_groups() {
        let a = one_feature(&[2.0, 4.0, 6.0, 1.0, 3.0], &[1, 1, 1, 0, 0]);
        let b = one_feature(&[2.0, 4.0, 6.0, 1.0, 3.0], &[0, 0, 0, 1, 1]);
        let (sa, sb) = (group_stats(&a, 0).unwrap(), group_stats(&b, 0).unwrap());
        assert_eq!((sa.mean1, sa.var1), (sb.mean0, sb.var0));
        assert_eq!((sa.mean0, sa.var0), (sb.mean1, sb.var1));
    }

    #[test]
    fn equal_pooled_variance() {
        let s = GroupStats {
            feature: 0,
            n1: 10,
            n0: 10,
            mean1: 0.0,
            mean0: 0.0,
            var1: 2.5,
            var0: 2.5,
            degenerate: false,
        };
        assert!((pooled_std(&s).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn equal_means_give_zero() {
        let d = one_feature(&[0.0, 2.0, -1.0, 3.0], &[1, 1, 0, 0]);
        assert_eq!(smd(&d).unwrap().rows[0].delta, 0.0);
    }

    #[test]
    fn perfect_separator_ranks_first() {
        let x = Array2::from_shape_vec(
            (4, 2),
            vec![1.0, 0.3, 1.0, 0.9, 0.0, 0.1, 0.0, 0.2],
        )
        .unwrap();
        let d = Dataset::new(x, vec!["noisy".into(), "sep".into()], vec![1, 1, 0, 0]).unwrap();
        let t = smd(&d).unwrap();
        // column 0 is constant inside each group
        assert_eq!(t.rows[0].feature, "noisy");
        assert!(t.rows[0].abs_delta.is_infinite());
        assert!(t.rows[0].degenerate_separator);
        assert_eq!(t.rows[0].rank, 1.0);
    }

    #[test]
    fn empty_group_and_tiny_inputs() {
        let d = one_feature(&[1.0, 2.0, 3.0], &[1, 1, 1]);
        assert!(matches!(smd(&d), Err(AuditError::EmptyGroup(_))));
        let d = one_feature(&[1.0, 2.0], &[1, 0]);
        assert!(smd(&d).is_err());
        let s = group_stats(&one_feature(&[1.0, 2.0, 3.0], &[1, 0, 0]), 0).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.var1, 0.0);
    }
}
