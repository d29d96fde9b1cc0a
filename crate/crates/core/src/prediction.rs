//! Prediction-set construction from a calibrated model.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationModel, Method};
use crate::data::ProbabilityMatrix;
use crate::error::{Error, Result};
use crate::io::model_to_json;
use crate::rng::TEST_DOMAIN;
use crate::scores::RowScorer;

/// Labels admitted for one test example, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub index: usize,
    pub members: Vec<usize>,
}

impl PredictionSet {
    pub fn new(index: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { index, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.binary_search(&y).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionBatch {
    pub sets: Vec<PredictionSet>,
    /// SHA-256 of the model's canonical JSON.
    pub model_fingerprint: String,
    /// Seed of the test-time tie-break stream.
    pub seed: u64,
}

/// Hex SHA-256 of the model's canonical JSON encoding.
pub fn model_fingerprint(model: &CalibrationModel) -> Result<String> {
    let json = model_to_json(model)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Seed of the test-time tie-break stream for a model.
pub fn test_seed(model: &CalibrationModel) -> u64 {
    model.score.seed ^ TEST_DOMAIN
}

fn check_model(model: &CalibrationModel, probs: &ProbabilityMatrix, want: Method) -> Result<()> {
    if model.method != want {
        return Err(Error::input(format!(
            "expected a {want:?} model, got {:?}",
            model.method
        )));
    }
    if model.n_classes != probs.n_classes() {
        return Err(Error::input(format!(
            "model has K = {} classes but the probability matrix has K = {}",
            model.n_classes,
            probs.n_classes()
        )));
    }
    Ok(())
}

fn build(model: &CalibrationModel, probs: &ProbabilityMatrix, rank_filter: bool) -> Result<PredictionBatch> {
    let cfg = model.score;
    let seed = test_seed(model);
    let thresholds: Vec<(f64, usize)> = model.classes.iter().map(|c| (c.q_hat, c.k_hat)).collect();
    let sets = probs
        .values()
        .par_chunks(probs.n_classes())
        .enumerate()
        .map(|(i, row)| {
            let scorer = RowScorer::new(row);
            let u = cfg.tie_break(seed, i);
            let members = thresholds
                .iter()
                .enumerate()
                .filter(|&(y, &(q, k))| {
                    scorer.score(y, &cfg, u) <= q && (!rank_filter || scorer.rank(y) <= k)
                })
                .map(|(y, _)| y)
                .collect();
            PredictionSet { index: i, members }
        })
        .collect();
    Ok(PredictionBatch {
        sets,
        model_fingerprint: model_fingerprint(model)?,
        seed,
    })
}

/// `y` is admitted iff `V(x, y) <= q_hat`.
pub fn predict_marginal(model: &CalibrationModel, probs: &ProbabilityMatrix) -> Result<PredictionBatch> {
    check_model(model, probs, Method::Marginal)?;
    build(model, probs, false)
}

/// `y` is admitted iff `V(x, y) <= q_hat(y)`.
pub fn predict_ccp(model: &CalibrationModel, probs: &ProbabilityMatrix) -> Result<PredictionBatch> {
    check_model(model, probs, Method::Ccp)?;
    build(model, probs, false)
}

/// `y` is admitted iff `V(x, y) <= q_hat(y)` and `rank(x, y) <= k_hat(y)`.
pub fn predict_rc3p(model: &CalibrationModel, probs: &ProbabilityMatrix) -> Result<PredictionBatch> {
    check_model(model, probs, Method::Rc3p)?;
    build(model, probs, true)
}

pub fn predict(model: &CalibrationModel, probs: &ProbabilityMatrix) -> Result<PredictionBatch> {
    match model.method {
        Method::Marginal => predict_marginal(model, probs),
        Method::Ccp => predict_ccp(model, probs),
        Method::Rc3p => predict_rc3p(model, probs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{ClassRecord, MarginalRecord};
    use crate::scores::ScoreConfig;

    fn model(method: Method, q: &[f64], k: &[usize], cfg: ScoreConfig) -> CalibrationModel {
        let n_classes = q.len();
        CalibrationModel {
            method,
            alpha: 0.1,
            g: 0.0,
            score: cfg,
            n_classes,
            classes: (0..n_classes)
                .map(|y| ClassRecord {
                    y,
                    q_hat: q[y],
                    k_hat: k[y],
                    alpha_hat: 0.1,
                    n_y: 10,
                    eps_at_khat: 0.0,
                    degenerate: false,
                })
                .collect(),
            marginal: (method == Method::Marginal).then(|| MarginalRecord { q_hat: q[0], n: 10 }),
        }
    }

    #[test]
    fn marginal_hand_example() {
        let probs = ProbabilityMatrix::new(1, 2, vec![0.9, 0.1]).unwrap();
        let cfg = ScoreConfig::aps(0).deterministic();
        let m = model(Method::Marginal, &[0.95, 0.95], &[2, 2], cfg);
        let batch = predict_marginal(&m, &probs).unwrap();
        assert_eq!(batch.sets[0].members, vec![0]);

        let m = model(Method::Marginal, &[f64::INFINITY; 2], &[2, 2], cfg);
        assert_eq!(predict(&m, &probs).unwrap().sets[0].members, vec![0, 1]);

        let m = model(Method::Marginal, &[0.5, 0.5], &[2, 2], cfg);
        assert!(predict(&m, &probs).unwrap().sets[0].is_empty());
    }

    #[test]
    fn rank_one_filter_keeps_argmax_ties_only() {
        let probs = ProbabilityMatrix::from_rows(&[vec![0.4, 0.4, 0.2], vec![0.1, 0.7, 0.2]]).unwrap();
        let m = model(Method::Rc3p, &[f64::INFINITY; 3], &[1, 1, 1], ScoreConfig::aps(3));
        let batch = predict_rc3p(&m, &probs).unwrap();
        // tied maxima both have rank 2, so neither survives a rank-1 filter
        assert!(batch.sets[0].is_empty());
        assert_eq!(batch.sets[1].members, vec![1]);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let probs = ProbabilityMatrix::new(1, 2, vec![0.9, 0.1]).unwrap();
        let m = model(Method::Ccp, &[0.5; 3], &[3; 3], ScoreConfig::aps(0));
        let err = predict_ccp(&m, &probs).unwrap_err().to_string();
        assert!(err.contains("K = 3") && err.contains("K = 2"), "{err}");
        let m = model(Method::Ccp, &[0.5; 2], &[2; 2], ScoreConfig::aps(0));
        assert!(predict_rc3p(&m, &probs).is_err());
    }

    #[test]
    fn fingerprint_tracks_model() {
        let a = model(Method::Ccp, &[0.5; 2], &[2; 2], ScoreConfig::aps(0));
        let mut b = a.clone();
        b.classes[1].q_hat = 0.6;
        assert_eq!(model_fingerprint(&a).unwrap(), model_fingerprint(&a).unwrap());
        assert_ne!(model_fingerprint(&a).unwrap(), model_fingerprint(&b).unwrap());
        assert_eq!(model_fingerprint(&a).unwrap().len(), 64);
    }
}
