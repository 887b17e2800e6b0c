//! Softmax sampling over proposal scores.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::planner::Proposal;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("no proposals to select from")]
    Empty,
}

/// Probability of each proposal under `exp(score / temperature)`.
/// A non-positive temperature puts all mass on the first highest score.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if temperature <= 0.0 {
        let first = scores.iter().position(|&s| s == max);
        return (0..scores.len()).map(|i| if Some(i) == first { 1.0 } else { 0.0 }).collect();
    }
    let w: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn select_index(proposals: &[Proposal], temperature: f64, seed: u64) -> Result<usize, SelectError> {
    if proposals.is_empty() {
        return Err(SelectError::Empty);
    }
    let scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    let probs = softmax(&scores, temperature);
    let dist = WeightedIndex::new(&probs).expect("softmax has positive mass");
    Ok(dist.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

pub fn select(proposals: &[Proposal], temperature: f64, seed: u64) -> Result<&Proposal, SelectError> {
    select_index(proposals, temperature, seed).map(|i| &proposals[i])
}
