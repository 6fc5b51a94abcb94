//! Ranking metrics (MAP, MRR, NDCG), accuracy and cross-seed aggregation.
//!
//! Candidates are ranked by a stable descending sort on score, so tied
//! candidates keep their input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and binary relevance for one question.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedResult {
    pub scores: Vec<f64>,
    pub relevance: Vec<u8>,
}

impl RankedResult {
    pub fn new(scores: Vec<f64>, relevance: Vec<u8>) -> Result<Self> {
        check_list(&scores, &relevance)?;
        Ok(Self { scores, relevance })
    }
}

fn check_list(scores: &[f64], relevance: &[u8]) -> Result<()> {
    if scores.len() != relevance.len() {
        return Err(Error::contract(format!(
            "{} scores but {} relevance labels",
            scores.len(),
            relevance.len()
        )));
    }
    if !relevance.iter().any(|&r| r > 0) {
        return Err(Error::contract("ranking metric needs at least one relevant item"));
    }
    Ok(())
}

/// Relevance labels in ranked order.
fn ranked(scores: &[f64], relevance: &[u8]) -> Vec<u8> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.into_iter().map(|i| relevance[i]).collect()
}

pub fn average_precision(scores: &[f64], relevance: &[u8]) -> Result<f64> {
    check_list(scores, relevance)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, rel) in ranked(scores, relevance).into_iter().enumerate() {
        if rel > 0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / hits as f64)
}

pub fn reciprocal_rank(scores: &[f64], relevance: &[u8]) -> Result<f64> {
    check_list(scores, relevance)?;
    let first = ranked(scores, relevance)
        .into_iter()
        .position(|r| r > 0)
        .expect("checked above");
    Ok(1.0 / (first + 1) as f64)
}

/// NDCG over the full list with binary gains and `log2(rank + 1)` discount.
pub fn ndcg(scores: &[f64], relevance: &[u8]) -> Result<f64> {
    check_list(scores, relevance)?;
    let dcg: f64 = ranked(scores, relevance)
        .into_iter()
        .enumerate()
        .filter(|&(_, r)| r > 0)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let n_rel = relevance.iter().filter(|&&r| r > 0).count();
    let ideal: f64 = (0..n_rel).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / ideal)
}

fn mean_over(results: &[RankedResult], f: fn(&[f64], &[u8]) -> Result<f64>) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::contract("no questions to evaluate"));
    }
    let mut sum = 0.0;
    for r in results {
        sum += f(&r.scores, &r.relevance)?;
    }
    Ok(sum / results.len() as f64)
}

pub fn map(results: &[RankedResult]) -> Result<f64> {
    mean_over(results, average_precision)
}

pub fn mrr(results: &[RankedResult]) -> Result<f64> {
    mean_over(results, reciprocal_rank)
}

pub fn mean_ndcg(results: &[RankedResult]) -> Result<f64> {
    mean_over(results, ndcg)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean and sample standard deviation of a metric over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    pub std: f64,
    pub samples: Vec<f64>,
}

pub fn aggregate_runs(samples: &[f64]) -> Result<RunAggregate> {
    if samples.is_empty() {
        return Err(Error::contract("aggregate of zero runs"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunAggregate {
        mean,
        std,
        samples: samples.to_vec(),
    })
}

/// `{metric_name: {mean, std, samples}}`.
pub type MetricReport = BTreeMap<String, RunAggregate>;

/// Ranking metrics for one evaluation pass.
pub fn ranking_metrics(results: &[RankedResult]) -> Result<BTreeMap<String, f64>> {
    Ok(BTreeMap::from([
        ("map".to_owned(), map(results)?),
        ("mrr".to_owned(), mrr(results)?),
        ("ndcg".to_owned(), mean_ndcg(results)?),
    ]))
}
