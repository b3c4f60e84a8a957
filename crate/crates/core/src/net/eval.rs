//! Confusion-matrix metrics for thresholded relevance predictions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeler::{Dataset, Sample};

use super::decide_relevance;
use super::model::predict_sample;
use super::params::ModelParams;

/// Anything that scores a single labeled sample.
pub trait SamplePredictor: Sync {
    fn predict_sample(&self, sample: &Sample) -> Result<f64>;
}

impl SamplePredictor for ModelParams {
    fn predict_sample(&self, sample: &Sample) -> Result<f64> {
        predict_sample(self, sample)
    }
}

/// Scores a fixed probability regardless of the input.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor(pub f64);

impl SamplePredictor for ConstantPredictor {
    fn predict_sample(&self, _sample: &Sample) -> Result<f64> {
        Ok(self.0)
    }
}

/// Returns the sample's own label: a perfect classifier.
#[derive(Clone, Copy, Debug)]
pub struct LabelPredictor;

impl SamplePredictor for LabelPredictor {
    fn predict_sample(&self, sample: &Sample) -> Result<f64> {
        Ok(f64::from(sample.label))
    }
}

/// Rates over thresholded decisions. A rate whose denominator is empty is
/// vacuous: 1 for the "true" rates, 0 for the false-irrelevant rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_relevant_rate: f64,
    pub true_irrelevant_rate: f64,
    pub false_irrelevant_rate: f64,
    pub total_accuracy: f64,
}

pub fn confusion(probs: &[f64], labels: &[u8], beta: f64) -> Result<EvalMetrics> {
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: labels.len(),
            got: probs.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (decide_relevance(p, beta), y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize, empty: f64| if b == 0 { empty } else { a as f64 / b as f64 };
    Ok(EvalMetrics {
        n: probs.len(),
        true_positive: tp,
        true_negative: tn,
        false_positive: fp,
        false_negative: fneg,
        true_relevant_rate: ratio(tp, tp + fneg, 1.0),
        true_irrelevant_rate: ratio(tn, tn + fp, 1.0),
        false_irrelevant_rate: ratio(fneg, tp + fneg, 0.0),
        total_accuracy: ratio(tp + tn, probs.len(), 1.0),
    })
}

/// Probabilities for every sample, in dataset order.
pub fn score<P: SamplePredictor + ?Sized>(predictor: &P, data: &Dataset, exec: Exec) -> Result<Vec<f64>> {
    exec.map(&data.samples, |s| predictor.predict_sample(s))
        .into_iter()
        .collect()
}

pub fn evaluate<P: SamplePredictor + ?Sized>(predictor: &P, data: &Dataset, beta: f64, exec: Exec) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = score(predictor, data, exec)?;
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    confusion(&probs, &labels, beta)
}

/// `steps` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn beta_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidArgument(format!("bad beta sweep {lo}:{hi}:{steps}")));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect())
}

/// Metrics at every threshold of a sweep, from one scoring pass.
pub fn beta_sweep(probs: &[f64], labels: &[u8], betas: &[f64]) -> Result<Vec<(f64, EvalMetrics)>> {
    betas
        .iter()
        .map(|&b| confusion(probs, labels, b).map(|m| (b, m)))
        .collect()
}
