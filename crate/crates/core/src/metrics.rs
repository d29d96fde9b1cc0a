//! Coverage and efficiency metrics plus the set-size diagnostics.
//!
//! * UCR: fraction of classes whose empirical coverage is below `1 - alpha`.
//! * APSS: set size averaged within each class, then across classes.
//! * UCG: total shortfall `sum_c max(0, 1 - alpha - coverage_c)`.
//! * Rank frequency: distribution of label ranks among admitted labels.
//! * Condition number: for each class `y`, how often rank-calibrated
//!   calibration admits `y` relative to class-wise calibration.
//! * The sufficient condition `B - D >= p/(1-p) * (alpha - eps)` for the
//!   condition number to be at most one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationModel, Method};
use crate::data::{check_paired, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::prediction::PredictionSet;
use crate::scores::{score_all, RowScorer, ScoreKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub n_test: usize,
    /// `None` when the class has no test examples.
    pub coverage: Option<f64>,
    pub mean_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFrequency {
    /// `freq[k-1]` is the share of admitted (example, label) pairs whose
    /// label has rank `k`.
    pub freq: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Set when no label was admitted anywhere; `freq` is then all zero.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEntry {
    pub class: usize,
    pub numerator: u64,
    pub denominator: u64,
    /// `None` when the denominator is zero.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCheck {
    pub class: usize,
    pub b: Option<f64>,
    pub d: Option<f64>,
    pub p_y: f64,
    pub rhs: Option<f64>,
    /// `None` when no example of another class is available.
    pub satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alpha: f64,
    #[serde(rename = "K")]
    pub n_classes: usize,
    pub n_test: usize,
    pub ucr: f64,
    pub apss: f64,
    pub ucg: f64,
    pub marginal_coverage: f64,
    pub mean_size: f64,
    pub excluded_classes: Vec<usize>,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_freq: Option<RankFrequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<SigmaEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thm2: Option<Vec<EfficiencyCheck>>,
}

impl MetricsReport {
    pub fn coverages(&self) -> Vec<Option<f64>> {
        self.per_class.iter().map(|c| c.coverage).collect()
    }
}

fn check_sets(sets: &[PredictionSet], n: usize, k: usize) -> Result<()> {
    if sets.len() != n {
        return Err(Error::input(format!(
            "{} prediction sets but {n} examples",
            sets.len()
        )));
    }
    for (i, s) in sets.iter().enumerate() {
        if let Some(&y) = s.members.iter().find(|&&y| y >= k) {
            return Err(Error::validation(format!(
                "prediction set {i} contains class {y}, but K = {k}"
            )));
        }
    }
    Ok(())
}

/// Per-class coverage and set size, and the UCR / APSS / UCG summaries.
///
/// Classes absent from `labels` are excluded from every class average.
pub fn evaluate(
    sets: &[PredictionSet],
    labels: &LabelVector,
    alpha: f64,
    n_classes: usize,
) -> Result<MetricsReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if labels.n_classes() != n_classes {
        return Err(Error::input(format!(
            "labels were validated for {} classes, expected {n_classes}",
            labels.n_classes()
        )));
    }
    check_sets(sets, labels.len(), n_classes)?;
    if labels.is_empty() {
        return Err(Error::input("cannot evaluate an empty test set"));
    }

    let mut n = vec![0usize; n_classes];
    let mut covered = vec![0usize; n_classes];
    let mut size_sum = vec![0usize; n_classes];
    for (set, &y) in sets.iter().zip(labels.as_slice()) {
        n[y] += 1;
        covered[y] += usize::from(set.contains(y));
        size_sum[y] += set.len();
    }

    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| ClassMetrics {
            class: c,
            n_test: n[c],
            coverage: (n[c] > 0).then(|| covered[c] as f64 / n[c] as f64),
            mean_size: (n[c] > 0).then(|| size_sum[c] as f64 / n[c] as f64),
        })
        .collect();
    let excluded: Vec<usize> = (0..n_classes).filter(|&c| n[c] == 0).collect();
    if !excluded.is_empty() {
        log::warn!("classes {excluded:?} have no test examples and are excluded from UCR/APSS/UCG");
    }
    let present = (n_classes - excluded.len()) as f64;
    let target = 1.0 - alpha;

    let mut under = 0usize;
    let mut ucg = 0.0;
    let mut apss = 0.0;
    for c in per_class.iter().filter(|c| c.n_test > 0) {
        let cov = c.coverage.unwrap_or_default();
        if cov < target {
            under += 1;
        }
        ucg += (target - cov).max(0.0);
        apss += c.mean_size.unwrap_or_default();
    }

    let total = labels.len() as f64;
    Ok(MetricsReport {
        alpha,
        n_classes,
        n_test: labels.len(),
        ucr: under as f64 / present,
        apss: apss / present,
        ucg,
        marginal_coverage: covered.iter().sum::<usize>() as f64 / total,
        mean_size: size_sum.iter().sum::<usize>() as f64 / total,
        excluded_classes: excluded,
        per_class,
        rank_freq: None,
        sigma: None,
        thm2: None,
    })
}

/// Distribution of label ranks over every admitted (example, label) pair.
pub fn rank_frequency(
    sets: &[PredictionSet],
    probs: &ProbabilityMatrix,
    n_classes: usize,
) -> Result<RankFrequency> {
    if probs.n_classes() != n_classes {
        return Err(Error::input(format!(
            "probability matrix has {} classes, expected {n_classes}",
            probs.n_classes()
        )));
    }
    check_sets(sets, probs.n_rows(), n_classes)?;
    let counts = sets
        .par_iter()
        .zip(probs.values().par_chunks(n_classes))
        .map(|(set, row)| {
            let scorer = RowScorer::new(row);
            let mut local = vec![0u64; n_classes];
            for &y in &set.members {
                local[scorer.rank(y) - 1] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n_classes],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let total: u64 = counts.iter().sum();
    let freq = if total == 0 {
        vec![0.0; n_classes]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(RankFrequency {
        freq,
        counts,
        total,
        empty: total == 0,
    })
}

fn check_pair(rc3p: &CalibrationModel, ccp: &CalibrationModel) -> Result<()> {
    if rc3p.method != Method::Rc3p || ccp.method != Method::Ccp {
        return Err(Error::config(format!(
            "expected an RC3P and a CCP model, got {:?} and {:?}",
            rc3p.method, ccp.method
        )));
    }
    if rc3p.score != ccp.score || rc3p.alpha != ccp.alpha || rc3p.g != ccp.g {
        return Err(Error::config(
            "models must share score configuration, alpha and g",
        ));
    }
    if rc3p.n_classes != ccp.n_classes {
        return Err(Error::config(format!(
            "models disagree on K: {} vs {}",
            rc3p.n_classes, ccp.n_classes
        )));
    }
    Ok(())
}

/// Per-row label ranks and candidate scores, using the calibration-side
/// tie-break stream.
struct Evaluated {
    scores: Vec<f64>,
    ranks: Vec<usize>,
}

fn evaluate_rows(model: &CalibrationModel, probs: &ProbabilityMatrix) -> Result<Evaluated> {
    let scores = score_all(probs, &model.score)?.values().to_vec();
    let ranks = probs
        .values()
        .par_chunks(probs.n_classes())
        .flat_map_iter(|row| {
            let scorer = RowScorer::new(row);
            (0..row.len()).map(move |y| scorer.rank(y))
        })
        .collect();
    Ok(Evaluated { scores, ranks })
}

/// Empirical condition number per class, pooled over all supplied examples:
/// `#{V(x,y) <= q_rc3p(y), rank(x,y) <= k_hat(y)} / #{V(x,y) <= q_ccp(y)}`.
pub fn sigma_condition(
    rc3p: &CalibrationModel,
    ccp: &CalibrationModel,
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
) -> Result<Vec<SigmaEntry>> {
    check_pair(rc3p, ccp)?;
    check_paired(probs, labels)?;
    let k = rc3p.n_classes;
    if probs.n_classes() != k {
        return Err(Error::input(format!(
            "models have K = {k} but the probability matrix has K = {}",
            probs.n_classes()
        )));
    }
    let ev = evaluate_rows(rc3p, probs)?;
    let n = probs.n_rows();
    Ok((0..k)
        .into_par_iter()
        .map(|y| {
            let (q_r, k_hat) = (rc3p.class(y).q_hat, rc3p.class(y).k_hat);
            let q_c = ccp.class(y).q_hat;
            let mut num = 0u64;
            let mut den = 0u64;
            for i in 0..n {
                let v = ev.scores[i * k + y];
                num += u64::from(v <= q_r && ev.ranks[i * k + y] <= k_hat);
                den += u64::from(v <= q_c);
            }
            SigmaEntry {
                class: y,
                numerator: num,
                denominator: den,
                sigma: (den > 0).then(|| num as f64 / den as f64),
            }
        })
        .collect())
}

/// `floor((r + 1) / 2)`.
pub fn mid_rank(r: usize) -> usize {
    r.div_ceil(2)
}

/// Plug-in evaluation of the sufficient condition for `sigma_y <= 1`.
///
/// With `r = rank(x, y)` and `rbar = floor((r + 1) / 2)`, over examples whose
/// label is not `y`:
/// `B = P[f(x)_(rbar) (+ lambda for RAPS) <= q_ccp(y)]` and
/// `D = P[r <= k_hat(y)]`. The check passes when
/// `B - D >= p_y / (1 - p_y) * (alpha_eff - eps_y^{k_hat})`.
pub fn theorem2_check(
    rc3p: &CalibrationModel,
    ccp: &CalibrationModel,
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
) -> Result<Vec<EfficiencyCheck>> {
    check_pair(rc3p, ccp)?;
    check_paired(probs, labels)?;
    let shift = match rc3p.score.kind {
        ScoreKind::Aps => 0.0,
        ScoreKind::Raps => rc3p.score.lambda,
        ScoreKind::Hps => {
            return Err(Error::Unsupported(
                "the efficiency condition is only defined for APS and RAPS scores".into(),
            ))
        }
    };
    let k = rc3p.n_classes;
    if probs.n_classes() != k {
        return Err(Error::input(format!(
            "models have K = {k} but the probability matrix has K = {}",
            probs.n_classes()
        )));
    }
    let n = probs.n_rows();
    let class_counts = {
        let mut c = vec![0usize; k];
        labels.as_slice().iter().for_each(|&y| c[y] += 1);
        c
    };
    let scorers: Vec<RowScorer<'_>> = probs.rows().map(RowScorer::new).collect();

    Ok((0..k)
        .into_par_iter()
        .map(|y| {
            let p_y = if n == 0 {
                0.0
            } else {
                class_counts[y] as f64 / n as f64
            };
            let others = n - class_counts[y];
            if others == 0 {
                return EfficiencyCheck {
                    class: y,
                    b: None,
                    d: None,
                    p_y,
                    rhs: None,
                    satisfied: None,
                };
            }
            let q_c = ccp.class(y).q_hat;
            let k_hat = rc3p.class(y).k_hat;
            let mut b = 0u64;
            let mut d = 0u64;
            for (scorer, &label) in scorers.iter().zip(labels.as_slice()) {
                if label == y {
                    continue;
                }
                let r = scorer.rank(y);
                b += u64::from(scorer.order_stat(mid_rank(r)) + shift <= q_c);
                d += u64::from(r <= k_hat);
            }
            let b = b as f64 / others as f64;
            let d = d as f64 / others as f64;
            let rhs = p_y / (1.0 - p_y) * (rc3p.alpha_eff(y) - rc3p.class(y).eps_at_khat);
            EfficiencyCheck {
                class: y,
                b: Some(b),
                d: Some(d),
                p_y,
                rhs: Some(rhs),
                satisfied: Some(b - d >= rhs),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_ccp, calibrate_rc3p, RankOption, RankOverrides};
    use crate::scores::ScoreConfig;

    fn sets_of(members: &[&[usize]]) -> Vec<PredictionSet> {
        members
            .iter()
            .enumerate()
            .map(|(i, m)| PredictionSet::new(i, m.to_vec()))
            .collect()
    }

    #[test]
    fn full_sets_cover_everything() {
        let labels = LabelVector::new(vec![0, 1, 2, 1], 3).unwrap();
        let sets = sets_of(&[&[0usize, 1, 2][..]; 4]);
        let r = evaluate(&sets, &labels, 0.1, 3).unwrap();
        assert_eq!((r.ucr, r.ucg, r.apss), (0.0, 0.0, 3.0));
        assert!(r.per_class.iter().all(|c| c.coverage == Some(1.0)));
    }

    #[test]
    fn absent_classes_are_excluded() {
        let labels = LabelVector::new(vec![0, 0, 2], 4).unwrap();
        let sets = sets_of(&[&[0], &[1], &[2, 3]]);
        let r = evaluate(&sets, &labels, 0.1, 4).unwrap();
        assert_eq!(r.excluded_classes, vec![1, 3]);
        assert_eq!(r.per_class[0].coverage, Some(0.5));
        assert_eq!(r.per_class[1].coverage, None);
        assert_eq!(r.ucr, 0.5);
        assert_eq!(r.apss, (1.0 + 2.0) / 2.0);
    }

    #[test]
    fn evaluate_rejects_misaligned_input() {
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        assert!(evaluate(&sets_of(&[&[0]]), &labels, 0.1, 2).is_err());
        assert!(evaluate(&sets_of(&[&[0], &[5]]), &labels, 0.1, 2).is_err());
        assert!(evaluate(&sets_of(&[&[0], &[1]]), &labels, 0.1, 3).is_err());
    }

    #[test]
    fn rank_frequency_hand_count() {
        let probs =
            ProbabilityMatrix::from_rows(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]])
                .unwrap();
        // ranks: row0 {0:1, 2:3}; row1 {0:3, 1:1, 2:2}; row2 {0:2}
        let sets = sets_of(&[&[0, 2], &[0, 1, 2], &[0]]);
        let rf = rank_frequency(&sets, &probs, 3).unwrap();
        assert_eq!(rf.counts, vec![2, 2, 2]);
        assert_eq!(rf.total, 6);
        assert!(!rf.empty);

        let rf = rank_frequency(&sets_of(&[&[], &[], &[]]), &probs, 3).unwrap();
        assert!(rf.empty);
        assert_eq!(rf.freq, vec![0.0; 3]);
    }

    #[test]
    fn mid_rank_values() {
        assert_eq!(mid_rank(1), 1);
        assert_eq!(mid_rank(2), 1);
        assert_eq!(mid_rank(3), 2);
        assert_eq!(mid_rank(4), 2);
    }

    fn fixture() -> (ProbabilityMatrix, LabelVector) {
        let rows = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.45, 0.25],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.8, 0.1],
            vec![0.4, 0.35, 0.25],
            vec![0.1, 0.2, 0.7],
            vec![0.3, 0.2, 0.5],
            vec![0.25, 0.4, 0.35],
        ];
        let probs = ProbabilityMatrix::from_rows(&rows).unwrap();
        let labels = LabelVector::new(vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3).unwrap();
        (probs, labels)
    }

    #[test]
    fn sigma_is_one_when_rank_filter_is_vacuous() {
        let (probs, labels) = fixture();
        let cfg = ScoreConfig::aps(4);
        let ccp = calibrate_ccp(&probs, &labels, &cfg, 0.3, 0.0).unwrap();
        let overrides = RankOverrides {
            k_hat: Some(vec![3; 3]),
            alpha_hat: None,
        };
        let rc3p = calibrate_rc3p(&probs, &labels, &cfg, 0.3, 0.0, RankOption::I, &overrides).unwrap();
        for s in sigma_condition(&rc3p, &ccp, &probs, &labels).unwrap() {
            assert_eq!(s.numerator, s.denominator);
            if s.denominator > 0 {
                assert_eq!(s.sigma, Some(1.0));
            }
        }
    }

    #[test]
    fn sigma_and_check_reject_mismatched_models() {
        let (probs, labels) = fixture();
        let ccp = calibrate_ccp(&probs, &labels, &ScoreConfig::aps(4), 0.3, 0.0).unwrap();
        let rc3p = calibrate_rc3p(
            &probs,
            &labels,
            &ScoreConfig::aps(5),
            0.3,
            0.0,
            RankOption::II,
            &RankOverrides::default(),
        )
        .unwrap();
        assert!(matches!(
            sigma_condition(&rc3p, &ccp, &probs, &labels),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sigma_condition(&ccp, &ccp, &probs, &labels),
            Err(Error::Config(_))
        ));

        let hps = ScoreConfig::hps();
        let ccp = calibrate_ccp(&probs, &labels, &hps, 0.3, 0.0).unwrap();
        let rc3p = calibrate_rc3p(
            &probs,
            &labels,
            &hps,
            0.3,
            0.0,
            RankOption::II,
            &RankOverrides::default(),
        )
        .unwrap();
        assert!(matches!(
            theorem2_check(&rc3p, &ccp, &probs, &labels),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn check_undefined_without_other_classes() {
        let probs = ProbabilityMatrix::from_rows(&[vec![0.7, 0.3], vec![0.6, 0.4]]).unwrap();
        let labels = LabelVector::new(vec![0, 0], 2).unwrap();
        let cfg = ScoreConfig::aps(1);
        let ccp = calibrate_ccp(&probs, &labels, &cfg, 0.4, 0.0).unwrap();
        let rc3p = calibrate_rc3p(
            &probs,
            &labels,
            &cfg,
            0.4,
            0.0,
            RankOption::II,
            &RankOverrides::default(),
        )
        .unwrap();
        let checks = theorem2_check(&rc3p, &ccp, &probs, &labels).unwrap();
        assert_eq!(checks[0].satisfied, None);
        assert_eq!(checks[1].p_y, 0.0);
        assert!(checks[1].satisfied.is_some());
    }
}
