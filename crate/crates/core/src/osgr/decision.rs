//! KNN candidate labels, the adaptive rejection threshold and open-set
//! classification. Distances are `1 − cosine similarity`.

use std::collections::BTreeMap;

use crate::data::ClassId;
use crate::{Error, Result};

use super::bank::FeatureBank;

/// Majority class among the K nearest bank rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: ClassId,
    /// Fraction of the K neighbors voting for `label`.
    pub vote: f64,
    /// Bank rows among the K nearest that carry `label`.
    pub members: Vec<usize>,
    /// Summed distance from the query to `members`.
    pub score: f64,
}

/// Indices of the `k` most similar rows, ties broken by lower index.
pub fn nearest(bank: &FeatureBank, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = bank
        .similarities(query)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    sims
}

/// Candidate class of `query` from its `k` nearest rows (`exclude` leaves a
/// row out, e.g. the query's own entry). Vote ties go to the class whose
/// members are closer in total, then to the smaller label.
pub fn knn_candidate(query: &[f64], bank: &FeatureBank, k: usize, exclude: Option<usize>) -> Result<Candidate> {
    let available = bank.len() - usize::from(exclude.is_some_and(|e| e < bank.len()));
    if available == 0 {
        return Err(Error::invalid("empty feature bank"));
    }
    if k == 0 || k > bank.len() {
        return Err(Error::invalid(format!("K = {k} outside 1..={}", bank.len())));
    }
    if query.len() != bank.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![bank.dim()],
            found: vec![query.len()],
        });
    }
    let near = nearest(bank, query, k.min(available), exclude);
    let mut tally: BTreeMap<ClassId, (usize, f64, Vec<usize>)> = BTreeMap::new();
    for &(i, s) in &near {
        let e = tally.entry(bank.labels()[i]).or_insert((0, 0.0, Vec::new()));
        e.0 += 1;
        e.1 += 1.0 - s;
        e.2.push(i);
    }
    let (label, (count, score, members)) = tally
        .into_iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(&b.0)))
        .expect("at least one neighbor");
    Ok(Candidate {
        label,
        vote: count as f64 / near.len() as f64,
        members,
        score,
    })
}

/// Summed distance from a training sample to its same-class members among
/// its `k` nearest rows, its own row excluded. `None` when it has none.
pub fn same_class_spread(
    query: &[f64],
    label: ClassId,
    self_id: Option<usize>,
    bank: &FeatureBank,
    k: usize,
) -> Option<f64> {
    let near = nearest(bank, query, k, self_id);
    let mut any = false;
    let mut sum = 0.0;
    for (i, s) in near {
        if bank.labels()[i] == label {
            any = true;
            sum += 1.0 - s;
        }
    }
    any.then_some(sum)
}

/// `ξ` times the mean over batches of the largest per-sample spread.
/// Batches with no valid sample are skipped.
pub fn compute_threshold(batches: &[Vec<Option<f64>>], xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::invalid(format!("xi must be ≥ 0, got {xi}")));
    }
    let maxima: Vec<f64> = batches
        .iter()
        .filter_map(|b| b.iter().flatten().cloned().reduce(f64::max))
        .collect();
    if maxima.is_empty() {
        return Err(Error::invalid("no batch produced a threshold statistic"));
    }
    Ok(xi * maxima.iter().sum::<f64>() / maxima.len() as f64)
}

/// Outcome of classifying one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Accepted class, or `None` for UNKNOWN.
    pub label: Option<ClassId>,
    pub candidate: Candidate,
}

impl Decision {
    pub fn score(&self) -> f64 {
        self.candidate.score
    }
}

/// Accepts the candidate iff its score is strictly below `threshold`.
pub fn decide(candidate: Candidate, threshold: f64) -> Decision {
    let label = (candidate.score < threshold).then_some(candidate.label);
    Decision { label, candidate }
}
