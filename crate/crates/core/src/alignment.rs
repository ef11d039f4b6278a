//! Tie-aware ranking and Spearman agreement between feature rankings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::effect_size::EffectSizeTable;
use crate::error::{AuditError, Result};

/// Per-feature nonnegative importance, normalized to sum 1 unless every entry is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    /// The source carried no signal (e.g. every attribution was zero).
    #[serde(default)]
    pub no_signal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smd,
    Tree,
    Shap,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Smd => "SMD",
            Method::Tree => "Decision Tree",
            Method::Shap => "SHAP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub method: Method,
    pub feature_names: Vec<String>,
    pub scores: Vec<f64>,
    pub ranks: Vec<f64>,
}

impl Ranking {
    pub fn new(method: Method, feature_names: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if feature_names.len() != scores.len() {
            return Err(AuditError::Dimension {
                expected: feature_names.len(),
                found: scores.len(),
            });
        }
        let ranks = to_ranks(&scores)?;
        Ok(Self {
            method,
            feature_names,
            scores,
            ranks,
        })
    }
}

/// Ranks in descending score order, 1-based. Tied scores share the mean of
/// the positions they span; `+inf` sorts before every finite score.
pub fn to_ranks(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(AuditError::InvalidInput("cannot rank an empty vector".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(AuditError::InvalidInput("cannot rank NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(AuditError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(AuditError::InvalidInput(
            "rank correlation needs at least 2 entries".into(),
        ));
    }
    Ok(())
}

/// Pearson correlation of two rank vectors. `Ok(None)` when either side is
/// constant, where the coefficient is undefined.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)))
}

/// `1 - 6 sum(d^2) / (n (n^2 - 1))`. Only equal to [`spearman_rho`] when
/// neither vector has ties.
pub fn spearman_closed_form(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Strong,
    Moderate,
    Weak,
    Undefined,
}

impl Agreement {
    /// Strong above 0.7, moderate above 0.4, weak otherwise.
    pub fn classify(rho: Option<f64>) -> Self {
        match rho {
            None => Agreement::Undefined,
            Some(r) if r > 0.7 => Agreement::Strong,
            Some(r) if r > 0.4 => Agreement::Moderate,
            Some(_) => Agreement::Weak,
        }
    }
}

/// Pairwise coefficients. An outer `None` means the model was not run and
/// the key is omitted; `Some(None)` is an undefined coefficient (`null`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RhoPair {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::serde_float::double_option")]
    pub smd_tree: Option<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::serde_float::double_option")]
    pub smd_shap: Option<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smd_tree: Option<Agreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smd_shap: Option<Agreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub feature: String,
    #[serde(with = "crate::serde_float")]
    pub smd: f64,
    pub smd_rank: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_importance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shap_importance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shap_rank: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<SplitAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<SplitAccuracy>,
}

/// One row per feature in the encoded dataset's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub dataset: String,
    pub rho: RhoPair,
    pub agreement: AgreementPair,
    pub rankings: Vec<RankRow>,
    pub accuracies: Accuracies,
    pub config: serde_json::Value,
}

impl AlignmentReport {
    pub fn ranking(&self, method: Method) -> Option<Ranking> {
        let names = self.rankings.iter().map(|r| r.feature.clone()).collect();
        let (scores, ranks): (Vec<f64>, Vec<f64>) = match method {
            Method::Smd => self.rankings.iter().map(|r| (r.smd.abs(), r.smd_rank)).unzip(),
            Method::Tree => self
                .rankings
                .iter()
                .map(|r| Some((r.tree_importance?, r.tree_rank?)))
                .collect::<Option<Vec<_>>>()?
                .into_iter()
                .unzip(),
            Method::Shap => self
                .rankings
                .iter()
                .map(|r| Some((r.shap_importance?, r.shap_rank?)))
                .collect::<Option<Vec<_>>>()?
                .into_iter()
                .unzip(),
        };
        Some(Ranking {
            method,
            feature_names: names,
            scores,
            ranks,
        })
    }

    pub fn rho(&self, method: Method) -> Option<Option<f64>> {
        match method {
            Method::Smd => Some(Some(1.0)),
            Method::Tree => self.rho.smd_tree,
            Method::Shap => self.rho.smd_shap,
        }
    }
}

fn model_ranking(
    method: Method,
    names: &[String],
    imp: Option<&ImportanceVector>,
) -> Result<Option<Ranking>> {
    let Some(imp) = imp else { return Ok(None) };
    if imp.feature_names != names {
        return Err(AuditError::InvalidInput(format!(
            "{method} importances cover a different feature set than SMD"
        )));
    }
    Ranking::new(method, imp.feature_names.clone(), imp.values.clone()).map(Some)
}

pub fn build_alignment_report(
    dataset: &str,
    smd: &EffectSizeTable,
    tree: Option<&ImportanceVector>,
    shap: Option<&ImportanceVector>,
    accuracies: Accuracies,
    config: serde_json::Value,
) -> Result<AlignmentReport> {
    let names = smd.feature_names();
    let smd_rank = Ranking::new(Method::Smd, names.clone(), smd.abs_deltas_by_feature())?;
    let tree_rank = model_ranking(Method::Tree, &names, tree)?;
    let shap_rank = model_ranking(Method::Shap, &names, shap)?;

    let rho_with = |r: &Option<Ranking>| -> Result<Option<Option<f64>>> {
        r.as_ref()
            .map(|r| spearman_rho(&smd_rank.ranks, &r.ranks))
            .transpose()
    };
    let rho = RhoPair {
        smd_tree: rho_with(&tree_rank)?,
        smd_shap: rho_with(&shap_rank)?,
    };
    let agreement = AgreementPair {
        smd_tree: rho.smd_tree.map(Agreement::classify),
        smd_shap: rho.smd_shap.map(Agreement::classify),
    };

    let mut signed = vec![0.0; names.len()];
    for r in &smd.rows {
        signed[r.stats.feature] = r.delta;
    }
    let rankings = names
        .iter()
        .enumerate()
        .map(|(j, name)| RankRow {
            feature: name.clone(),
            smd: signed[j],
            smd_rank: smd_rank.ranks[j],
            tree_importance: tree_rank.as_ref().map(|r| r.scores[j]),
            tree_rank: tree_rank.as_ref().map(|r| r.ranks[j]),
            shap_importance: shap_rank.as_ref().map(|r| r.scores[j]),
            shap_rank: shap_rank.as_ref().map(|r| r.ranks[j]),
        })
        .collect();

    Ok(AlignmentReport {
        dataset: dataset.to_string(),
        rho,
        agreement,
        rankings,
        accuracies,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(to_ranks(&[0.9, 0.5, 0.1]).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(to_ranks(&[3.0, 1.0, 3.0]).unwrap(), [1.5, 3.0, 1.5]);
        assert_eq!(to_ranks(&[7.0; 4]).unwrap(), [2.5; 4]);
        assert_eq!(
            to_ranks(&[1.0, f64::INFINITY, 2.0, f64::INFINITY]).unwrap(),
            [4.0, 1.5, 3.0, 1.5]
        );
        assert!(to_ranks(&[]).is_err());
        assert!(to_ranks(&[f64::NAN]).is_err());
    }

    #[test]
    fn rho_examples() {
        let id = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman_rho(&id, &id).unwrap(), Some(1.0));
        assert_eq!(spearman_rho(&id, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let r = spearman_rho(&id, &[2.0, 1.0, 3.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!((spearman_closed_form(&id, &[2.0, 1.0, 3.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(spearman_rho(&id, &[2.5; 4]).unwrap(), None);
        assert!(spearman_rho(&id, &[1.0]).is_err());
    }

    #[test]
    fn classify_thresholds() {
        assert_eq!(Agreement::classify(Some(0.952)), Agreement::Strong);
        assert_eq!(Agreement::classify(Some(0.7)), Agreement::Moderate);
        assert_eq!(Agreement::classify(Some(0.607)), Agreement::Moderate);
        assert_eq!(Agreement::classify(Some(0.1)), Agreement::Weak);
        assert_eq!(Agreement::classify(None), Agreement::Undefined);
    }

    fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(0i32..6, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(0i32..6, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn ranks_sum_to_triangular(s in prop::collection::vec(-5i32..5, 1..20)) {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let n = s.len() as f64;
            let total: f64 = to_ranks(&s).unwrap().iter().sum();
            prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }

        #[test]
        fn rho_symmetric_bounded_and_monotone_invariant((a, b) in scores()) {
            let (ra, rb) = (to_ranks(&a).unwrap(), to_ranks(&b).unwrap());
            let r1 = spearman_rho(&ra, &rb).unwrap();
            let r2 = spearman_rho(&rb, &ra).unwrap();
            prop_assert_eq!(r1, r2);
            if let Some(r) = r1 {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
            let a_exp: Vec<f64> = a.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(to_ranks(&a_exp).unwrap(), ra.clone());

            // joint permutation (reverse) leaves rho unchanged
            let (mut pa, mut pb) = (ra.clone(), rb.clone());
            pa.reverse();
            pb.reverse();
            let r3 = spearman_rho(&pa, &pb).unwrap();
            match (r1, r3) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
