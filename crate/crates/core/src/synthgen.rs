//! Synthetic classifier outputs, class-imbalance profiles, and the
//! Monte-Carlo coverage harness.
//!
//! A synthetic example of class `y` gets standard-normal logits with the
//! true-class logit boosted by `temperature * class_sharpness[y]`; the softmax
//! of those logits is mixed with the uniform row by weight `noise`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, Method, RankOption, RankOverrides};
use crate::data::{LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::prediction::predict;
use crate::rng::{derive_seed, indexed_rng};
use crate::scores::ScoreConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    Exp,
    Poly,
    Maj,
}

impl std::str::FromStr for DecayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" => Ok(DecayKind::Exp),
            "poly" => Ok(DecayKind::Poly),
            "maj" => Ok(DecayKind::Maj),
            other => Err(Error::config(format!("unknown decay kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub kind: DecayKind,
    /// Smallest-to-largest class size ratio, in `(0, 1]`.
    pub rho: f64,
    pub n_train: usize,
    #[serde(rename = "K")]
    pub n_classes: usize,
}

/// Per-class training counts for an imbalance profile, with classes numbered
/// `c = 1..=K`:
///
/// * EXP: `n/K * rho^(c/K)`
/// * POLY: `n/K / sqrt(c / (10 rho) + 1)`
/// * MAJ: `n/K` for `c = 1`, `n/K * rho` otherwise
///
/// Each count is floored and clamped to at least 1.
pub fn decay_counts(spec: &DecaySpec) -> Result<Vec<usize>> {
    if !(spec.rho > 0.0 && spec.rho <= 1.0) {
        return Err(Error::config(format!("rho must lie in (0, 1], got {}", spec.rho)));
    }
    if spec.n_classes < 2 {
        return Err(Error::config("decay profiles need at least 2 classes"));
    }
    let k = spec.n_classes as f64;
    let base = spec.n_train as f64 / k;
    let counts: Vec<usize> = (1..=spec.n_classes)
        .map(|c| {
            let c = c as f64;
            let raw = match spec.kind {
                DecayKind::Exp => base * spec.rho.powf(c / k),
                DecayKind::Poly => base * (1.0 / (c / (10.0 * spec.rho) + 1.0).sqrt()),
                DecayKind::Maj if c == 1.0 => base,
                DecayKind::Maj => base * spec.rho,
            };
            (raw.floor() as usize).max(1)
        })
        .collect();
    if base * spec.rho < 1.0 && counts.iter().all(|&c| c == 1) {
        log::warn!("every class count of {spec:?} was clamped to 1");
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    #[serde(rename = "K")]
    pub n_classes: usize,
    pub class_priors: Vec<f64>,
    /// Boost applied to the true-class logit.
    pub temperature: f64,
    /// Mixing weight toward the uniform row.
    pub noise: f64,
    /// Per-class multiplier on `temperature`.
    pub class_sharpness: Vec<f64>,
    pub seed: u64,
}

impl SyntheticWorld {
    /// Uniform priors and equal sharpness for every class.
    pub fn balanced(n_classes: usize, temperature: f64, noise: f64, seed: u64) -> Self {
        Self {
            n_classes,
            class_priors: vec![1.0 / n_classes as f64; n_classes],
            temperature,
            noise,
            class_sharpness: vec![1.0; n_classes],
            seed,
        }
    }

    /// Priors follow the training counts and classes with fewer training
    /// examples get a less confident classifier: sharpness is
    /// `ln(1 + n_c) / ln(1 + max n)`.
    pub fn with_training_counts(mut self, counts: &[usize]) -> Result<Self> {
        if counts.len() != self.n_classes {
            return Err(Error::config(format!(
                "expected {} training counts, got {}",
                self.n_classes,
                counts.len()
            )));
        }
        let total: usize = counts.iter().sum();
        let max = counts.iter().copied().max().unwrap_or(1) as f64;
        self.class_priors = counts.iter().map(|&c| c as f64 / total as f64).collect();
        self.class_sharpness = counts
            .iter()
            .map(|&c| (1.0 + c as f64).ln() / (1.0 + max).ln())
            .collect();
        Ok(self)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes;
        if k < 2 {
            return Err(Error::config("a synthetic world needs at least 2 classes"));
        }
        if self.class_priors.len() != k || self.class_sharpness.len() != k {
            return Err(Error::config(
                "priors and sharpness must have one entry per class",
            ));
        }
        if self.class_priors.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.class_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config("class priors must form a probability vector"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!(
                "temperature must be finite and positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if self.class_sharpness.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("class sharpness must be finite and non-negative"));
        }
        Ok(())
    }

    /// Splits `total` examples across classes by prior (largest remainder).
    pub fn counts_for_total(&self, total: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.class_priors.iter().map(|p| p * total as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
        let short = total - counts.iter().sum::<usize>();
        for &y in order.iter().take(short) {
            counts[y] += 1;
        }
        counts
    }

    fn row(&self, y: usize, index: u64) -> Vec<f64> {
        let k = self.n_classes;
        let mut rng = indexed_rng(self.seed, &[index]);
        let mut z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        z[y] += self.temperature * self.class_sharpness[y];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = p.iter().sum();
        let floor = self.noise / k as f64;
        for v in &mut p {
            *v = (1.0 - self.noise) * (*v / sum) + floor;
        }
        p
    }
}

/// Draws `counts[y]` examples of each class `y`, in a seed-determined order.
pub fn sample_world(world: &SyntheticWorld, counts: &[usize]) -> Result<(ProbabilityMatrix, LabelVector)> {
    world.validate()?;
    let k = world.n_classes;
    if counts.len() != k {
        return Err(Error::config(format!(
            "expected {k} class counts, got {}",
            counts.len()
        )));
    }
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat_n(y, c))
        .collect();
    if labels.is_empty() {
        return Err(Error::config("cannot sample an empty dataset"));
    }
    labels.shuffle(&mut indexed_rng(world.seed, &[u64::MAX]));
    let values: Vec<f64> = labels
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, &y)| world.row(y, i as u64))
        .collect();
    let probs = ProbabilityMatrix::new(labels.len(), k, values)?;
    Ok((probs, LabelVector::new(labels, k)?))
}

/// One calibration/test draw of the Monte-Carlo harness.
#[derive(Debug, Clone)]
pub struct Replication {
    pub cal_probs: ProbabilityMatrix,
    pub cal_labels: LabelVector,
    pub test_probs: ProbabilityMatrix,
    pub test_labels: LabelVector,
    pub score: ScoreConfig,
}

/// Replication `r` of a world: independent calibration and test draws and a
/// fresh score seed, all derived from `r` alone.
pub fn draw_replication(
    world: &SyntheticWorld,
    counts_cal: &[usize],
    counts_test: &[usize],
    score: &ScoreConfig,
    r: u64,
) -> Result<Replication> {
    let (cal_probs, cal_labels) =
        sample_world(&world.with_seed(derive_seed(world.seed, &[r, 0])), counts_cal)?;
    let (test_probs, test_labels) =
        sample_world(&world.with_seed(derive_seed(world.seed, &[r, 1])), counts_test)?;
    let score = ScoreConfig {
        seed: derive_seed(score.seed, &[r]),
        ..*score
    };
    Ok(Replication {
        cal_probs,
        cal_labels,
        test_probs,
        test_labels,
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single replication).
    pub std: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                se: f64::NAN,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            se: std / (n as f64).sqrt(),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub method: Method,
    pub alpha: f64,
    pub g: f64,
    pub replications: usize,
    pub per_class_coverage: Vec<MeanStd>,
    pub apss: MeanStd,
    pub ucr: MeanStd,
    pub marginal_coverage: MeanStd,
}

/// Calibrates, predicts and evaluates `replications` independent draws and
/// aggregates per-class coverage and APSS. RC3P uses the default rank option.
#[allow(clippy::too_many_arguments)]
pub fn oracle_coverage(
    world: &SyntheticWorld,
    counts_cal: &[usize],
    counts_test: &[usize],
    method: Method,
    score: &ScoreConfig,
    alpha: f64,
    g: f64,
    replications: usize,
) -> Result<CoverageReport> {
    if replications == 0 {
        return Err(Error::config("at least one replication is required"));
    }
    world.validate()?;
    let k = world.n_classes;
    let runs = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let rep = draw_replication(world, counts_cal, counts_test, score, r)?;
            let model = calibrate(
                method,
                &rep.cal_probs,
                &rep.cal_labels,
                &rep.score,
                alpha,
                g,
                RankOption::II,
                &RankOverrides::default(),
            )?;
            let batch = predict(&model, &rep.test_probs)?;
            evaluate(&batch.sets, &rep.test_labels, alpha, k)
        })
        .collect::<Result<Vec<_>>>()?;

    let per_class_coverage = (0..k)
        .map(|y| {
            let xs: Vec<f64> = runs.iter().filter_map(|m| m.per_class[y].coverage).collect();
            MeanStd::from_samples(&xs)
        })
        .collect();
    let collect = |f: fn(&crate::metrics::MetricsReport) -> f64| {
        MeanStd::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
    };
    Ok(CoverageReport {
        method,
        alpha,
        g,
        replications,
        per_class_coverage,
        apss: collect(|m| m.apss),
        ucr: collect(|m| m.ucr),
        marginal_coverage: collect(|m| m.marginal_coverage),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::estimate_topk_errors;

    fn spec(kind: DecayKind, rho: f64) -> DecaySpec {
        DecaySpec {
            kind,
            rho,
            n_train: 100,
            n_classes: 10,
        }
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay_counts(&spec(DecayKind::Exp, 0.1)).unwrap()[9], 1);
        assert_eq!(
            decay_counts(&spec(DecayKind::Maj, 0.1)).unwrap(),
            vec![10, 1, 1, 1, 1, 1, 1, 1, 1, 1]
        );
        assert_eq!(decay_counts(&spec(DecayKind::Poly, 0.1)).unwrap()[9], 3);
        assert!(decay_counts(&spec(DecayKind::Exp, 0.0)).is_err());
        assert!(decay_counts(&spec(DecayKind::Exp, 1.5)).is_err());
    }

    #[test]
    fn decay_shapes() {
        for rho in [0.1, 0.5, 1.0] {
            for kind in [DecayKind::Exp, DecayKind::Poly] {
                let c = decay_counts(&DecaySpec {
                    kind,
                    rho,
                    n_train: 50_000,
                    n_classes: 10,
                })
                .unwrap();
                assert!(c.windows(2).all(|w| w[1] <= w[0]), "{kind:?} {c:?}");
            }
            let c = decay_counts(&DecaySpec {
                kind: DecayKind::Maj,
                rho,
                n_train: 50_000,
                n_classes: 10,
            })
            .unwrap();
            assert!(c[1..].iter().all(|&x| x == c[1]));
        }
    }

    #[test]
    fn full_noise_gives_uniform_rows() {
        let world = SyntheticWorld::balanced(4, 3.0, 1.0, 11);
        let (probs, labels) = sample_world(&world, &[3, 3, 3, 3]).unwrap();
        for row in probs.rows() {
            assert!(row.iter().all(|&v| v == 0.25));
        }
        let table = estimate_topk_errors(&probs, &labels).unwrap();
        for y in 0..4 {
            // every label ties with all others: rank K
            assert_eq!(table.error(y, 3), 1.0);
        }
    }

    #[test]
    fn sharp_world_is_nearly_perfect() {
        let world = SyntheticWorld::balanced(5, 40.0, 0.0, 3);
        let (probs, labels) = sample_world(&world, &[50; 5]).unwrap();
        let table = estimate_topk_errors(&probs, &labels).unwrap();
        for y in 0..5 {
            assert_eq!(table.error(y, 1), 0.0);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_label_counts_match() {
        let world = SyntheticWorld::balanced(3, 2.0, 0.1, 99);
        let a = sample_world(&world, &[4, 0, 6]).unwrap();
        let b = sample_world(&world, &[4, 0, 6]).unwrap();
        assert_eq!(a, b);
        let counts = crate::data::partition_by_class(&a.1).counts();
        assert_eq!(counts, vec![4, 0, 6]);
        let c = sample_world(&world.with_seed(100), &[4, 0, 6]).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn world_validation() {
        assert!(SyntheticWorld::balanced(3, 0.0, 0.1, 0).validate().is_err());
        assert!(SyntheticWorld::balanced(3, 1.0, 1.5, 0).validate().is_err());
        assert!(SyntheticWorld::balanced(1, 1.0, 0.1, 0).validate().is_err());
        assert!(SyntheticWorld::balanced(3, f64::INFINITY, 0.1, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn training_counts_shape_priors_and_sharpness() {
        let w = SyntheticWorld::balanced(3, 2.0, 0.0, 0)
            .with_training_counts(&[100, 10, 1])
            .unwrap();
        assert!((w.class_priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w.class_sharpness[0], 1.0);
        assert!(w.class_sharpness[2] < w.class_sharpness[1]);
        assert_eq!(w.counts_for_total(10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn single_example_per_class_is_vacuous() {
        let world = SyntheticWorld::balanced(4, 2.0, 0.1, 5);
        let r = oracle_coverage(
            &world,
            &[1; 4],
            &[50; 4],
            Method::Ccp,
            &ScoreConfig::aps(1),
            0.1,
            0.0,
            5,
        )
        .unwrap();
        assert_eq!(r.apss.mean, 4.0);
        assert!(r.per_class_coverage.iter().all(|c| c.mean == 1.0));
    }

    #[test]
    fn mean_std_basics() {
        let m = MeanStd::from_samples(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::from_samples(&[5.0]).std, 0.0);
    }
}
