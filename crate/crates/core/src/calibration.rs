//! Split-conformal calibration: the order-statistic quantile, the marginal
//! calibrator, class-wise calibration (one quantile per class), and
//! rank-calibrated class-wise calibration, which pairs each class threshold
//! with a label-rank cutoff chosen from the class-wise top-k errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    check_paired, estimate_topk_errors, partition_by_class, ClassPartition, LabelVector, ProbabilityMatrix,
    TopKErrorTable,
};
use crate::error::{Error, Result};
use crate::scores::{score_true_labels, ScoreConfig};

/// Upper clamp on any coverage level handed to the quantile.
pub const MAX_LEVEL: f64 = 1.0 - 1e-12;

/// `level * (n + 1)` values within this distance of an integer are snapped to
/// it before taking the ceiling, so decimal levels like 0.9 index as written.
const INDEX_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Marginal,
    Ccp,
    Rc3p,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "marginal" => Ok(Method::Marginal),
            "ccp" => Ok(Method::Ccp),
            "rc3p" => Ok(Method::Rc3p),
            other => Err(Error::config(format!("unknown method '{other}'"))),
        }
    }
}

/// How the rank cutoff and nominal level are chosen per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankOption {
    /// Any point of the feasible range, supplied through [`RankOverrides`].
    I,
    /// Smallest feasible rank, full remaining miscoverage budget.
    #[default]
    II,
}

/// Caller-chosen per-class rank cutoffs and nominal levels (Option I).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankOverrides {
    pub k_hat: Option<Vec<usize>>,
    pub alpha_hat: Option<Vec<f64>>,
}

impl RankOverrides {
    pub fn is_empty(&self) -> bool {
        self.k_hat.is_none() && self.alpha_hat.is_none()
    }
}

/// Rank cutoff and nominal miscoverage for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankConfig {
    pub k_hat: usize,
    pub alpha_hat: f64,
    pub eps_at_khat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub y: usize,
    #[serde(with = "threshold")]
    pub q_hat: f64,
    pub k_hat: usize,
    pub alpha_hat: f64,
    pub n_y: usize,
    pub eps_at_khat: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRecord {
    #[serde(with = "threshold")]
    pub q_hat: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub method: Method,
    pub alpha: f64,
    pub g: f64,
    pub score: ScoreConfig,
    #[serde(rename = "K")]
    pub n_classes: usize,
    pub classes: Vec<ClassRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<MarginalRecord>,
}

impl CalibrationModel {
    pub fn class(&self, y: usize) -> &ClassRecord {
        &self.classes[y]
    }

    /// Effective miscoverage for class `y` after the `g / sqrt(n_y)`
    /// inflation. Degenerate classes report the raw `alpha`.
    pub fn alpha_eff(&self, y: usize) -> f64 {
        match self.classes[y].n_y {
            0 => self.alpha,
            n_y => effective_alpha(self.alpha, self.g, n_y),
        }
    }

    /// Structural checks on a model loaded from outside.
    pub fn validate(&self) -> Result<()> {
        validate_alpha_g(self.alpha, self.g)?;
        self.score.validate(self.n_classes)?;
        if self.n_classes < 2 {
            return Err(Error::validation("model must have at least 2 classes"));
        }
        if self.classes.len() != self.n_classes {
            return Err(Error::validation(format!(
                "model declares K = {} but has {} class records",
                self.n_classes,
                self.classes.len()
            )));
        }
        for (y, rec) in self.classes.iter().enumerate() {
            if rec.y != y {
                return Err(Error::validation(format!(
                    "class record {y} is labelled {}",
                    rec.y
                )));
            }
            if rec.k_hat < 1 || rec.k_hat > self.n_classes {
                return Err(Error::validation(format!(
                    "class {y}: k_hat {} outside [1, {}]",
                    rec.k_hat, self.n_classes
                )));
            }
            if rec.q_hat.is_nan() || rec.q_hat == f64::NEG_INFINITY {
                return Err(Error::validation(format!("class {y}: invalid threshold")));
            }
            if !(0.0..=1.0).contains(&rec.alpha_hat) || !(0.0..=1.0).contains(&rec.eps_at_khat) {
                return Err(Error::validation(format!(
                    "class {y}: alpha_hat and eps_at_khat must lie in [0, 1]"
                )));
            }
            if rec.degenerate && (rec.q_hat != f64::INFINITY || rec.k_hat != self.n_classes) {
                return Err(Error::validation(format!(
                    "class {y}: degenerate classes must have q_hat = inf and k_hat = K"
                )));
            }
        }
        match (self.method, &self.marginal) {
            (Method::Marginal, None) => {
                Err(Error::validation("marginal model is missing its marginal record"))
            }
            (Method::Ccp | Method::Rc3p, Some(_)) => Err(Error::validation(
                "class-wise model must not carry a marginal record",
            )),
            _ => Ok(()),
        }
    }

    /// Checks the rank-calibration feasibility conditions on every
    /// non-degenerate class: `eps < alpha_eff` and
    /// `0 <= alpha_hat <= alpha_eff - eps`.
    pub fn check_feasibility(&self) -> Result<()> {
        for rec in self.classes.iter().filter(|r| !r.degenerate) {
            let alpha_eff = self.alpha_eff(rec.y);
            check_feasible(rec.y, rec.eps_at_khat, rec.alpha_hat, alpha_eff)?;
        }
        Ok(())
    }
}

fn check_feasible(y: usize, eps: f64, alpha_hat: f64, alpha_eff: f64) -> Result<()> {
    if eps.is_nan() || eps >= alpha_eff {
        return Err(Error::config(format!(
            "class {y}: top-k error {eps} is not below the effective miscoverage {alpha_eff}"
        )));
    }
    if !(0.0..=alpha_eff - eps).contains(&alpha_hat) {
        return Err(Error::config(format!(
            "class {y}: nominal miscoverage {alpha_hat} outside [0, {}]",
            alpha_eff - eps
        )));
    }
    Ok(())
}

/// Serializes infinite thresholds as the string `"inf"`.
pub mod threshold {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

pub fn validate_alpha_g(alpha: f64, g: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::config(format!(
            "g must be finite and non-negative, got {g}"
        )));
    }
    Ok(())
}

/// 1-based index `m = ceil(level * (n + 1))` of the order statistic used as
/// the conformal threshold.
pub fn quantile_index(level: f64, n: usize) -> usize {
    let x = level * (n as f64 + 1.0);
    let nearest = x.round();
    let m = if (x - nearest).abs() <= INDEX_SNAP {
        nearest
    } else {
        x.ceil()
    };
    m.max(0.0) as usize
}

/// The `ceil(level * (n + 1))`-th smallest score, or `+inf` when that index
/// exceeds `n`.
pub fn conformal_quantile(scores: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "coverage level must lie in (0, 1), got {level}"
        )));
    }
    let n = scores.len();
    let m = quantile_index(level, n);
    if n == 0 || m > n {
        return Ok(f64::INFINITY);
    }
    let mut buf = scores.to_vec();
    let m = m.max(1);
    let (_, nth, _) = buf.select_nth_unstable_by(m - 1, f64::total_cmp);
    Ok(*nth)
}

/// Miscoverage after subtracting the `g / sqrt(n_y)` inflation, clamped to
/// stay positive.
pub fn effective_alpha(alpha: f64, g: f64, n_y: usize) -> f64 {
    let inflation = if g == 0.0 { 0.0 } else { g / (n_y as f64).sqrt() };
    (alpha - inflation).max(1.0 - MAX_LEVEL)
}

/// Inflated coverage level `min(1 - alpha + g / sqrt(n_y), 1 - 1e-12)`.
pub fn effective_level(alpha: f64, g: f64, n_y: usize) -> f64 {
    1.0 - effective_alpha(alpha, g, n_y)
}

struct Prepared {
    scores: Vec<f64>,
    partition: ClassPartition,
}

fn prepare(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
    alpha: f64,
    g: f64,
) -> Result<Prepared> {
    check_paired(probs, labels)?;
    validate_alpha_g(alpha, g)?;
    let scores = score_true_labels(probs, labels, cfg)?;
    let partition = partition_by_class(labels);
    let degenerate = partition.degenerate_classes();
    if !degenerate.is_empty() {
        log::warn!("classes {degenerate:?} have no calibration examples; their thresholds are set to +inf");
    }
    Ok(Prepared { scores, partition })
}

fn class_scores(prep: &Prepared, y: usize) -> Vec<f64> {
    prep.partition
        .indices(y)
        .iter()
        .map(|&i| prep.scores[i])
        .collect()
}

fn degenerate_record(y: usize, n_classes: usize, alpha: f64) -> ClassRecord {
    ClassRecord {
        y,
        q_hat: f64::INFINITY,
        k_hat: n_classes,
        alpha_hat: alpha,
        n_y: 0,
        eps_at_khat: 0.0,
        degenerate: true,
    }
}

/// One threshold over all calibration scores.
pub fn calibrate_marginal(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
    alpha: f64,
    g: f64,
) -> Result<CalibrationModel> {
    let prep = prepare(probs, labels, cfg, alpha, g)?;
    let n = prep.scores.len();
    let k = probs.n_classes();
    let alpha_eff = if n == 0 {
        alpha
    } else {
        effective_alpha(alpha, g, n)
    };
    let q_hat = conformal_quantile(&prep.scores, 1.0 - alpha_eff)?;
    if q_hat.is_infinite() {
        log::warn!("marginal threshold is +inf ({n} calibration examples at alpha {alpha})");
    }
    let classes = (0..k)
        .map(|y| ClassRecord {
            y,
            q_hat,
            k_hat: k,
            alpha_hat: alpha_eff,
            n_y: prep.partition.count(y),
            eps_at_khat: 0.0,
            degenerate: false,
        })
        .collect();
    Ok(CalibrationModel {
        method: Method::Marginal,
        alpha,
        g,
        score: *cfg,
        n_classes: k,
        classes,
        marginal: Some(MarginalRecord { q_hat, n }),
    })
}

/// One threshold per class, each from that class's calibration scores.
pub fn calibrate_ccp(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
    alpha: f64,
    g: f64,
) -> Result<CalibrationModel> {
    let prep = prepare(probs, labels, cfg, alpha, g)?;
    let k = probs.n_classes();
    let classes = (0..k)
        .into_par_iter()
        .map(|y| {
            let n_y = prep.partition.count(y);
            if n_y == 0 {
                return Ok(degenerate_record(y, k, alpha));
            }
            let alpha_eff = effective_alpha(alpha, g, n_y);
            Ok(ClassRecord {
                y,
                q_hat: conformal_quantile(&class_scores(&prep, y), 1.0 - alpha_eff)?,
                k_hat: k,
                alpha_hat: alpha_eff,
                n_y,
                eps_at_khat: 0.0,
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationModel {
        method: Method::Ccp,
        alpha,
        g,
        score: *cfg,
        n_classes: k,
        classes,
        marginal: None,
    })
}

/// Chooses `(k_hat, alpha_hat)` per class.
///
/// Option II takes `k_hat = min{k : eps_y^k < alpha_eff}` and
/// `alpha_hat = alpha_eff - eps_y^{k_hat}`. Option I validates caller
/// overrides against the feasible range; a missing `k_hat` override falls
/// back to Option II's rank, a missing `alpha_hat` to the largest feasible
/// level for the chosen rank. Degenerate classes get `(K, alpha_eff)`.
pub fn configure_rank(
    table: &TopKErrorTable,
    alpha_eff: &[f64],
    option: RankOption,
    overrides: &RankOverrides,
) -> Result<Vec<RankConfig>> {
    let k = table.n_classes();
    if alpha_eff.len() != k {
        return Err(Error::input(format!(
            "expected {k} effective miscoverage levels, got {}",
            alpha_eff.len()
        )));
    }
    if let Some(a) = alpha_eff.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::config(format!("effective miscoverage {a} outside (0, 1)")));
    }
    if option == RankOption::II && !overrides.is_empty() {
        return Err(Error::config("rank overrides are only accepted with option I"));
    }
    if let Some(ks) = &overrides.k_hat {
        if ks.len() != k {
            return Err(Error::config(format!(
                "expected {k} k_hat overrides, got {}",
                ks.len()
            )));
        }
        if let Some(y) = ks.iter().position(|&kh| kh < 1 || kh > k) {
            return Err(Error::config(format!(
                "class {y}: k_hat override {} outside [1, {k}]",
                ks[y]
            )));
        }
    }
    if let Some(al) = &overrides.alpha_hat {
        if al.len() != k {
            return Err(Error::config(format!(
                "expected {k} alpha_hat overrides, got {}",
                al.len()
            )));
        }
    }

    (0..k)
        .map(|y| {
            let a = alpha_eff[y];
            if table.is_degenerate(y) {
                return Ok(RankConfig {
                    k_hat: k,
                    alpha_hat: a,
                    eps_at_khat: 0.0,
                });
            }
            let eps = table.errors(y);
            let k_hat = match &overrides.k_hat {
                Some(ks) => ks[y],
                // eps_y^K = 0 < a, so the search always succeeds
                None => eps.iter().position(|&e| e < a).map_or(k, |j| j + 1),
            };
            let eps_at_khat = eps[k_hat - 1];
            let alpha_hat = match &overrides.alpha_hat {
                Some(al) => al[y],
                None => a - eps_at_khat,
            };
            check_feasible(y, eps_at_khat, alpha_hat, a)?;
            Ok(RankConfig {
                k_hat,
                alpha_hat,
                eps_at_khat,
            })
        })
        .collect()
}

/// Rank-calibrated class-wise calibration.
pub fn calibrate_rc3p(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
    alpha: f64,
    g: f64,
    option: RankOption,
    overrides: &RankOverrides,
) -> Result<CalibrationModel> {
    let prep = prepare(probs, labels, cfg, alpha, g)?;
    let k = probs.n_classes();
    let table = estimate_topk_errors(probs, labels)?;
    let alpha_eff: Vec<f64> = (0..k)
        .map(|y| match prep.partition.count(y) {
            0 => alpha,
            n_y => effective_alpha(alpha, g, n_y),
        })
        .collect();
    let ranks = configure_rank(&table, &alpha_eff, option, overrides)?;
    let classes = ranks
        .par_iter()
        .enumerate()
        .map(|(y, rc)| {
            let n_y = prep.partition.count(y);
            if n_y == 0 {
                return Ok(degenerate_record(y, k, alpha));
            }
            let level = (1.0 - rc.alpha_hat).min(MAX_LEVEL);
            Ok(ClassRecord {
                y,
                q_hat: conformal_quantile(&class_scores(&prep, y), level)?,
                k_hat: rc.k_hat,
                alpha_hat: rc.alpha_hat,
                n_y,
                eps_at_khat: rc.eps_at_khat,
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = CalibrationModel {
        method: Method::Rc3p,
        alpha,
        g,
        score: *cfg,
        n_classes: k,
        classes,
        marginal: None,
    };
    debug_assert!(model.check_feasibility().is_ok());
    Ok(model)
}

/// Dispatches on `method`; rank options only apply to RC3P.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    method: Method,
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
    alpha: f64,
    g: f64,
    option: RankOption,
    overrides: &RankOverrides,
) -> Result<CalibrationModel> {
    match method {
        Method::Marginal => calibrate_marginal(probs, labels, cfg, alpha, g),
        Method::Ccp => calibrate_ccp(probs, labels, cfg, alpha, g),
        Method::Rc3p => calibrate_rc3p(probs, labels, cfg, alpha, g, option, overrides),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tenths(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(conformal_quantile(&tenths(4), 0.9).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(&tenths(9), 0.9).unwrap(), 0.9);
        assert_eq!(conformal_quantile(&[0.5], 0.5).unwrap(), 0.5);
        assert_eq!(conformal_quantile(&[], 0.5).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(&[0.2, 0.4, 0.6, 0.8, 1.0], 0.5).unwrap(), 0.6);
    }

    #[test]
    fn quantile_rejects_bad_level() {
        for level in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(conformal_quantile(&[0.1], level), Err(Error::Config(_))));
        }
    }

    #[test]
    fn quantile_index_snaps_decimal_levels() {
        assert_eq!(quantile_index(0.9, 9), 9);
        assert_eq!(quantile_index(0.9, 4), 5);
        assert_eq!(quantile_index(0.7, 9), 7);
        assert_eq!(quantile_index(0.5, 5), 3);
    }

    #[test]
    fn effective_level_examples() {
        assert_eq!(effective_level(0.1, 0.0, 100), 0.9);
        assert_eq!(effective_level(0.1, 0.5, 25), MAX_LEVEL);
        assert!((effective_level(0.1, 1.0, 10_000) - 0.91).abs() < 1e-15);
        assert_eq!(effective_alpha(0.1, 0.0, 7), 0.1);
    }

    #[test]
    fn configure_rank_option_ii() {
        let table = TopKErrorTable::from_errors(
            vec![
                vec![0.6, 0.4, 0.2, 0.0, 0.0],
                vec![0.0; 5],
                vec![0.6, 0.5, 0.3, 0.2, 0.0],
                vec![0.0; 5],
                vec![0.0; 5],
            ],
            vec![5, 5, 5, 5, 0],
        )
        .unwrap();
        let a = [0.5, 0.5, 0.1, 0.5, 0.5];
        let rc = configure_rank(&table, &a, RankOption::II, &RankOverrides::default()).unwrap();
        assert_eq!(rc[0].k_hat, 2);
        assert_eq!(rc[0].alpha_hat, 0.5 - 0.4);
        assert!((rc[0].alpha_hat - 0.1).abs() < 1e-15);
        assert_eq!((rc[1].k_hat, rc[1].alpha_hat), (1, 0.5));
        // only the last rank is feasible: degenerates to class-wise CP
        assert_eq!((rc[2].k_hat, rc[2].alpha_hat), (5, 0.1));
        assert_eq!((rc[4].k_hat, rc[4].alpha_hat), (5, 0.5));
    }

    #[test]
    fn configure_rank_option_i_validates_overrides() {
        let table = TopKErrorTable::from_errors(
            vec![vec![0.6, 0.4, 0.0], vec![0.3, 0.0, 0.0], vec![0.0; 3]],
            vec![5, 5, 5],
        )
        .unwrap();
        let a = [0.5; 3];
        let ok = RankOverrides {
            k_hat: Some(vec![3, 2, 1]),
            alpha_hat: Some(vec![0.5, 0.2, 0.0]),
        };
        let rc = configure_rank(&table, &a, RankOption::I, &ok).unwrap();
        assert_eq!(rc.iter().map(|r| r.k_hat).collect::<Vec<_>>(), vec![3, 2, 1]);

        let infeasible_k = RankOverrides {
            k_hat: Some(vec![1, 2, 1]),
            alpha_hat: None,
        };
        let err = configure_rank(&table, &a, RankOption::I, &infeasible_k).unwrap_err();
        assert!(err.to_string().contains("class 0"), "{err}");

        let too_big = RankOverrides {
            k_hat: None,
            alpha_hat: Some(vec![0.05, 0.3, 0.5]),
        };
        let err = configure_rank(&table, &a, RankOption::I, &too_big).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");

        // no overrides: Option I falls back to Option II's point
        let fallback = configure_rank(&table, &a, RankOption::I, &RankOverrides::default()).unwrap();
        let ii = configure_rank(&table, &a, RankOption::II, &RankOverrides::default()).unwrap();
        assert_eq!(fallback, ii);

        assert!(configure_rank(&table, &a, RankOption::II, &ok).is_err());
    }

    fn two_class_fixture() -> (ProbabilityMatrix, LabelVector) {
        let rows = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.6, 0.4],
            vec![0.3, 0.7],
            vec![0.2, 0.8],
            vec![0.45, 0.55],
        ];
        let probs = ProbabilityMatrix::from_rows(&rows).unwrap();
        let labels = LabelVector::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        (probs, labels)
    }

    #[test]
    fn ccp_uses_class_scores() {
        let (probs, labels) = two_class_fixture();
        let cfg = ScoreConfig::hps();
        let m = calibrate_ccp(&probs, &labels, &cfg, 0.5, 0.0).unwrap();
        // class 0 HPS scores {0.1, 0.2, 0.4}: m = ceil(0.5 * 4) = 2
        assert_eq!(m.class(0).q_hat, 1.0 - 0.8);
        // class 1 HPS scores {0.3, 0.2, 0.45}
        assert_eq!(m.class(1).q_hat, 1.0 - 0.7);
        assert_eq!(m.class(0).k_hat, 2);
        m.validate().unwrap();
    }

    #[test]
    fn marginal_threshold_and_record() {
        let (probs, labels) = two_class_fixture();
        let m = calibrate_marginal(&probs, &labels, &ScoreConfig::hps(), 0.5, 0.0).unwrap();
        // all six scores, m = ceil(0.5 * 7) = 4 → sorted {.1,.2,.2,.3,.4,.45}
        assert_eq!(m.marginal.as_ref().unwrap().q_hat, 1.0 - 0.7);
        assert_eq!(m.marginal.as_ref().unwrap().n, 6);
        assert!(m.classes.iter().all(|c| c.q_hat == 1.0 - 0.7));
        m.validate().unwrap();

        let tiny = calibrate_marginal(&probs, &labels, &ScoreConfig::hps(), 0.01, 0.0).unwrap();
        assert_eq!(tiny.marginal.unwrap().q_hat, f64::INFINITY);
    }

    #[test]
    fn degenerate_class_gets_infinite_threshold() {
        let probs = ProbabilityMatrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.6, 0.3, 0.1]]).unwrap();
        let labels = LabelVector::new(vec![0, 0], 3).unwrap();
        for m in [
            calibrate_ccp(&probs, &labels, &ScoreConfig::aps(1), 0.4, 0.0).unwrap(),
            calibrate_rc3p(
                &probs,
                &labels,
                &ScoreConfig::aps(1),
                0.4,
                0.0,
                RankOption::II,
                &RankOverrides::default(),
            )
            .unwrap(),
        ] {
            for y in [1, 2] {
                assert!(m.class(y).degenerate);
                assert_eq!(m.class(y).q_hat, f64::INFINITY);
                assert_eq!(m.class(y).k_hat, 3);
            }
            m.validate().unwrap();
        }
    }

    #[test]
    fn rc3p_inflates_class_level() {
        // class 0: ranks [1,1,1,1,2] → eps^1 = 0.2 < 0.5, alpha_hat = 0.3
        let rows = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.7, 0.3],
            vec![0.6, 0.4],
            vec![0.4, 0.6],
            vec![0.1, 0.9],
        ];
        let probs = ProbabilityMatrix::from_rows(&rows).unwrap();
        let labels = LabelVector::new(vec![0, 0, 0, 0, 0, 1], 2).unwrap();
        let cfg = ScoreConfig::hps();
        let rc3p = calibrate_rc3p(
            &probs,
            &labels,
            &cfg,
            0.5,
            0.0,
            RankOption::II,
            &RankOverrides::default(),
        )
        .unwrap();
        let ccp = calibrate_ccp(&probs, &labels, &cfg, 0.5, 0.0).unwrap();
        assert_eq!(rc3p.class(0).k_hat, 1);
        assert!((rc3p.class(0).alpha_hat - 0.3).abs() < 1e-15);
        // scores {.1,.2,.3,.4,.6}; level .7 → m = ceil(4.2) = 5; CCP level .5 → m = 3
        assert_eq!(rc3p.class(0).q_hat, 1.0 - 0.4);
        assert_eq!(ccp.class(0).q_hat, 1.0 - 0.7);
        rc3p.check_feasibility().unwrap();
    }

    #[test]
    fn threshold_serde_handles_infinity() {
        let rec = MarginalRecord {
            q_hat: f64::INFINITY,
            n: 0,
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert_eq!(s, r#"{"q_hat":"inf","n":0}"#);
        let back: MarginalRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rec);
        assert!(serde_json::from_str::<MarginalRecord>(r#"{"q_hat":"nope","n":0}"#).is_err());
    }

    #[test]
    fn rejects_bad_alpha_and_g() {
        let (probs, labels) = two_class_fixture();
        let cfg = ScoreConfig::hps();
        assert!(calibrate_ccp(&probs, &labels, &cfg, 0.0, 0.0).is_err());
        assert!(calibrate_ccp(&probs, &labels, &cfg, 1.0, 0.0).is_err());
        assert!(calibrate_ccp(&probs, &labels, &cfg, 0.1, -1.0).is_err());
    }
}
