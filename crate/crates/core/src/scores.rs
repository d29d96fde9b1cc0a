//! Nonconformity scores for classification: APS, RAPS and HPS.
//!
//! Lower scores mean a label conforms better to the classifier output. APS
//! accumulates the probability mass of every class ranked strictly above the
//! candidate, plus a `u`-fraction of the candidate's own mass. RAPS adds a
//! penalty `lambda * max(0, rank - k_reg)`. HPS is `1 - f(x)_y`.
//!
//! Randomized scores draw one uniform `u` per example (shared by all candidate
//! labels of that example) from the stateless stream in [`crate::rng`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_paired, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::rng::indexed_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Raps,
    Hps,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(ScoreKind::Aps),
            "raps" => Ok(ScoreKind::Raps),
            "hps" => Ok(ScoreKind::Hps),
            other => Err(Error::config(format!("unknown score kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// RAPS penalty weight.
    pub lambda: f64,
    /// RAPS rank below which no penalty applies.
    #[serde(rename = "kreg")]
    pub k_reg: usize,
    /// When false the tie-breaking draw is fixed at `u = 1`.
    pub randomize: bool,
    pub seed: u64,
}

impl ScoreConfig {
    pub fn aps(seed: u64) -> Self {
        Self {
            kind: ScoreKind::Aps,
            lambda: 0.0,
            k_reg: 1,
            randomize: true,
            seed,
        }
    }

    pub fn raps(lambda: f64, k_reg: usize, seed: u64) -> Self {
        Self {
            kind: ScoreKind::Raps,
            lambda,
            k_reg,
            randomize: true,
            seed,
        }
    }

    pub fn hps() -> Self {
        Self {
            kind: ScoreKind::Hps,
            lambda: 0.0,
            k_reg: 1,
            randomize: false,
            seed: 0,
        }
    }

    pub fn deterministic(mut self) -> Self {
        self.randomize = false;
        self
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.kind == ScoreKind::Raps {
            if !(self.lambda.is_finite() && self.lambda >= 0.0) {
                return Err(Error::config(format!(
                    "RAPS lambda must be finite and non-negative, got {}",
                    self.lambda
                )));
            }
            if self.k_reg < 1 || self.k_reg > n_classes {
                return Err(Error::config(format!(
                    "RAPS k_reg must lie in [1, {n_classes}], got {}",
                    self.k_reg
                )));
            }
        }
        Ok(())
    }

    /// Largest score this configuration can produce for `n_classes` labels.
    pub fn max_score(&self, n_classes: usize) -> f64 {
        match self.kind {
            ScoreKind::Raps => 1.0 + self.lambda * n_classes.saturating_sub(self.k_reg) as f64,
            _ => 1.0,
        }
    }

    /// The tie-breaking draw for example `index` under `seed`.
    pub fn tie_break(&self, seed: u64, index: usize) -> f64 {
        if self.randomize && self.kind != ScoreKind::Hps {
            indexed_uniform(seed, index as u64)
        } else {
            1.0
        }
    }
}

/// Precomputed order statistics of one probability row.
///
/// Every score in the crate goes through this type so that single-pair and
/// whole-matrix scoring agree bit for bit.
#[derive(Debug, Clone)]
pub struct RowScorer<'a> {
    row: &'a [f64],
    /// Row values sorted in descending order.
    sorted: Vec<f64>,
    /// `prefix[j]` is the sum of the `j` largest values, accumulated in order.
    prefix: Vec<f64>,
}

impl<'a> RowScorer<'a> {
    pub fn new(row: &'a [f64]) -> Self {
        let mut sorted = row.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Self { row, sorted, prefix }
    }

    /// Label rank of `y`; ties count against the label.
    pub fn rank(&self, y: usize) -> usize {
        let target = self.row[y];
        self.sorted.partition_point(|&v| v >= target)
    }

    /// The `r`-th largest confidence (1-based).
    pub fn order_stat(&self, r: usize) -> f64 {
        self.sorted[r - 1]
    }

    pub fn aps(&self, y: usize, u: f64) -> f64 {
        let r = self.rank(y);
        (self.prefix[r - 1] + u * self.sorted[r - 1]).clamp(0.0, 1.0)
    }

    pub fn score(&self, y: usize, cfg: &ScoreConfig, u: f64) -> f64 {
        match cfg.kind {
            ScoreKind::Aps => self.aps(y, u),
            ScoreKind::Raps => {
                let r = self.rank(y);
                self.aps(y, u) + cfg.lambda * r.saturating_sub(cfg.k_reg) as f64
            }
            ScoreKind::Hps => 1.0 - self.row[y],
        }
    }
}

/// Score of candidate label `y` for a single row with tie-break draw `u`.
pub fn score_pair(row: &[f64], y: usize, cfg: &ScoreConfig, u: f64) -> Result<f64> {
    cfg.validate(row.len())?;
    if y >= row.len() {
        return Err(Error::input(format!(
            "class index {y} out of bounds for {} classes",
            row.len()
        )));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::input(format!("tie-break draw {u} outside [0, 1]")));
    }
    Ok(RowScorer::new(row).score(y, cfg, u))
}

/// Scores of every (example, candidate label) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.values[i * self.k + y]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Scores every candidate label of every row, drawing `u_i` from `cfg.seed`.
pub fn score_all(probs: &ProbabilityMatrix, cfg: &ScoreConfig) -> Result<ScoreMatrix> {
    score_all_seeded(probs, cfg, cfg.seed)
}

/// As [`score_all`] but with an explicit seed for the tie-break stream.
pub fn score_all_seeded(probs: &ProbabilityMatrix, cfg: &ScoreConfig, seed: u64) -> Result<ScoreMatrix> {
    let k = probs.n_classes();
    cfg.validate(k)?;
    let mut values = vec![0.0; probs.n_rows() * k];
    values
        .par_chunks_mut(k)
        .zip(probs.values().par_chunks(k))
        .enumerate()
        .for_each(|(i, (out, row))| {
            let scorer = RowScorer::new(row);
            let u = cfg.tie_break(seed, i);
            for (y, slot) in out.iter_mut().enumerate() {
                *slot = scorer.score(y, cfg, u);
            }
        });
    Ok(ScoreMatrix {
        n: probs.n_rows(),
        k,
        values,
    })
}

/// Calibration scores `V_i = V(X_i, Y_i)`.
pub fn score_true_labels(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cfg: &ScoreConfig,
) -> Result<Vec<f64>> {
    check_paired(probs, labels)?;
    cfg.validate(probs.n_classes())?;
    Ok(probs
        .values()
        .par_chunks(probs.n_classes())
        .zip(labels.as_slice().par_iter())
        .enumerate()
        .map(|(i, (row, &y))| RowScorer::new(row).score(y, cfg, cfg.tie_break(cfg.seed, i)))
        .collect())
}
