//! Domain types shared across the pipeline: classifier probability matrices,
//! label vectors, per-class partitions and class-wise top-k error tables.
//!
//! Class indices are 0-based everywhere. Label ranks are 1-based: the most
//! confident class has rank 1 and ties are counted pessimistically, so a label
//! tied with another for the top spot has rank 2.

use crate::error::{Error, Result};

/// Maximum deviation of a row sum from 1 that is repaired by renormalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Row sums closer to 1 than this are left untouched, which keeps ingestion
/// idempotent and file round-trips bit-exact.
const RENORMALIZE_THRESHOLD: f64 = 1e-12;

/// An `n × K` row-stochastic matrix of classifier confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Validates and (if needed) renormalizes a row-major buffer.
    ///
    /// Entries must lie in `[0, 1]`. Rows whose sum is within
    /// [`ROW_SUM_TOLERANCE`] of 1 are rescaled to sum to 1; rows further off
    /// are rejected with an error naming the row.
    pub fn new(n: usize, k: usize, mut values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("probability matrix must have at least one row"));
        }
        if k < 2 {
            return Err(Error::validation(format!(
                "probability matrix must have at least 2 classes, got {k}"
            )));
        }
        if values.len() != n * k {
            return Err(Error::input(format!(
                "expected {} values for a {n}x{k} matrix, got {}",
                n * k,
                values.len()
            )));
        }
        for (i, row) in values.chunks_mut(k).enumerate() {
            if let Some(j) = row.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation(format!(
                    "row {i}: entry {j} = {} is outside [0, 1]",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            let dev = (sum - 1.0).abs();
            if dev > ROW_SUM_TOLERANCE {
                return Err(Error::validation(format!(
                    "row {i}: entries sum to {sum}, not 1 (tolerance {ROW_SUM_TOLERANCE})"
                )));
            }
            if dev > RENORMALIZE_THRESHOLD {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        Ok(Self { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::input(format!(
                "row {i} has {} entries, expected {k}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks(self.k)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.k, values)
    }
}

/// Ground-truth labels paired with a [`ProbabilityMatrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(i) = labels.iter().position(|&y| y >= n_classes) {
            return Err(Error::validation(format!(
                "label {} at position {i} is out of range for {n_classes} classes",
                labels[i]
            )));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Checks that a matrix and a label vector describe the same examples.
pub fn check_paired(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<()> {
    if probs.n_rows() != labels.len() {
        return Err(Error::input(format!(
            "probability matrix has {} rows but there are {} labels",
            probs.n_rows(),
            labels.len()
        )));
    }
    if probs.n_classes() != labels.n_classes() {
        return Err(Error::input(format!(
            "probability matrix has {} classes but labels were validated for {}",
            probs.n_classes(),
            labels.n_classes()
        )));
    }
    Ok(())
}

/// Example indices grouped by their label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    indices: Vec<Vec<usize>>,
}

impl ClassPartition {
    pub fn indices(&self, y: usize) -> &[usize] {
        &self.indices[y]
    }

    pub fn count(&self, y: usize) -> usize {
        self.indices[y].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.indices.len()
    }

    pub fn is_degenerate(&self, y: usize) -> bool {
        self.indices[y].is_empty()
    }

    pub fn degenerate_classes(&self) -> Vec<usize> {
        (0..self.indices.len())
            .filter(|&y| self.is_degenerate(y))
            .collect()
    }
}

pub fn partition_by_class(labels: &LabelVector) -> ClassPartition {
    let mut indices = vec![Vec::new(); labels.n_classes()];
    for (i, &y) in labels.as_slice().iter().enumerate() {
        indices[y].push(i);
    }
    ClassPartition { indices }
}

/// Rank of class `y` within `row`: the number of entries at least as large as
/// `row[y]`, including `y` itself.
pub fn label_rank(row: &[f64], y: usize) -> Result<usize> {
    let target = *row
        .get(y)
        .ok_or_else(|| Error::input(format!("class index {y} out of bounds for {} classes", row.len())))?;
    Ok(row.iter().filter(|&&v| v >= target).count())
}

/// Plug-in estimates of the class-wise top-k error
/// `eps[y][k-1] = #{i in class y : rank_i > k} / n_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKErrorTable {
    errors: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl TopKErrorTable {
    /// Top-k error of class `y` at rank cutoff `k` (1-based). Degenerate
    /// classes report 0 for every `k`.
    pub fn error(&self, y: usize, k: usize) -> f64 {
        self.errors[y][k - 1]
    }

    /// The full sequence `eps_y^1, ..., eps_y^K`.
    pub fn errors(&self, y: usize) -> &[f64] {
        &self.errors[y]
    }

    pub fn count(&self, y: usize) -> usize {
        self.counts[y]
    }

    pub fn is_degenerate(&self, y: usize) -> bool {
        self.counts[y] == 0
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    /// Builds a table directly from error sequences; used to drive rank
    /// configuration with externally estimated errors.
    pub fn from_errors(errors: Vec<Vec<f64>>, counts: Vec<usize>) -> Result<Self> {
        let k = errors.len();
        if counts.len() != k {
            return Err(Error::input("error table and count vector differ in length"));
        }
        for (y, seq) in errors.iter().enumerate() {
            if seq.len() != k {
                return Err(Error::input(format!(
                    "class {y}: expected {k} top-k errors, got {}",
                    seq.len()
                )));
            }
            if seq.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::validation(format!(
                    "class {y}: top-k error outside [0, 1]"
                )));
            }
            if seq.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "class {y}: top-k errors must be non-increasing in k"
                )));
            }
            if seq[k - 1] != 0.0 {
                return Err(Error::validation(format!("class {y}: top-K error must be 0")));
            }
        }
        Ok(Self { errors, counts })
    }
}

pub fn estimate_topk_errors(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<TopKErrorTable> {
    check_paired(probs, labels)?;
    let k = probs.n_classes();
    // rank_hist[y][r-1] = number of class-y examples with rank r
    let mut rank_hist = vec![vec![0usize; k]; k];
    for (row, &y) in probs.rows().zip(labels.as_slice()) {
        let r = label_rank(row, y)?;
        rank_hist[y][r - 1] += 1;
    }
    let counts: Vec<usize> = rank_hist.iter().map(|h| h.iter().sum()).collect();
    let errors = rank_hist
        .iter()
        .zip(&counts)
        .map(|(hist, &n_y)| {
            if n_y == 0 {
                return vec![0.0; k];
            }
            let mut within = 0usize;
            hist.iter()
                .map(|&c| {
                    within += c;
                    (n_y - within) as f64 / n_y as f64
                })
                .collect()
        })
        .collect();
    Ok(TopKErrorTable { errors, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> ProbabilityMatrix {
        ProbabilityMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn label_rank_counts_ties_pessimistically() {
        assert_eq!(label_rank(&[0.5, 0.3, 0.2], 1).unwrap(), 2);
        assert_eq!(label_rank(&[0.5, 0.3, 0.2], 0).unwrap(), 1);
        assert_eq!(label_rank(&[0.4, 0.4, 0.2], 0).unwrap(), 2);
        assert!(matches!(label_rank(&[0.5, 0.5], 2), Err(Error::Input(_))));
    }

    #[test]
    fn topk_error_matches_hand_count() {
        // Class 0 gets ranks [1,1,2,3,5] in a 5-class problem.
        let rows: Vec<&[f64]> = vec![
            &[0.6, 0.1, 0.1, 0.1, 0.1],
            &[0.6, 0.1, 0.1, 0.1, 0.1],
            &[0.3, 0.4, 0.1, 0.1, 0.1],
            &[0.2, 0.4, 0.3, 0.05, 0.05],
            &[0.0, 0.4, 0.3, 0.2, 0.1],
        ];
        let probs = matrix(&rows);
        let labels = LabelVector::new(vec![0; 5], 5).unwrap();
        let table = estimate_topk_errors(&probs, &labels).unwrap();
        assert_eq!(table.error(0, 2), 0.4);
        assert_eq!(table.error(0, 1), 0.6);
        assert_eq!(table.error(0, 5), 0.0);
        assert_eq!(table.count(0), 5);
        assert!(table.is_degenerate(1));
    }

    #[test]
    fn perfect_classifier_has_zero_error() {
        let probs = matrix(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        let table = estimate_topk_errors(&probs, &labels).unwrap();
        for y in 0..2 {
            assert_eq!(table.errors(y), &[0.0, 0.0]);
        }
    }

    #[test]
    fn topk_rejects_length_mismatch() {
        let probs = matrix(&[&[0.9, 0.1]]);
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            estimate_topk_errors(&probs, &labels),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn partition_examples() {
        let p = partition_by_class(&LabelVector::new(vec![0, 1, 0], 2).unwrap());
        assert_eq!(p.indices(0), &[0, 2]);
        assert_eq!(p.indices(1), &[1]);
        assert_eq!(p.counts(), vec![2, 1]);

        let p = partition_by_class(&LabelVector::new(vec![], 3).unwrap());
        assert_eq!(p.counts(), vec![0, 0, 0]);
        assert_eq!(p.degenerate_classes(), vec![0, 1, 2]);

        let p = partition_by_class(&LabelVector::new(vec![2, 2, 2], 3).unwrap());
        assert_eq!(p.count(2), 3);
        assert_eq!(p.degenerate_classes(), vec![0, 1]);
    }

    #[test]
    fn matrix_validation() {
        assert!(ProbabilityMatrix::new(1, 3, vec![0.5, 0.3, 0.2]).is_ok());
        let err = ProbabilityMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.3]]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(ProbabilityMatrix::new(1, 2, vec![1.2, -0.2]).is_err());
        assert!(ProbabilityMatrix::new(1, 1, vec![1.0]).is_err());
        assert!(ProbabilityMatrix::new(0, 2, vec![]).is_err());
        assert!(ProbabilityMatrix::new(1, 2, vec![f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn near_normalized_rows_are_rescaled() {
        let m = ProbabilityMatrix::new(1, 2, vec![0.5 + 4e-7, 0.5]).unwrap();
        let s: f64 = m.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn labels_out_of_range_rejected() {
        assert!(LabelVector::new(vec![0, 3], 3).is_err());
        assert!(LabelVector::new(vec![], 3).unwrap().is_empty());
    }
}
