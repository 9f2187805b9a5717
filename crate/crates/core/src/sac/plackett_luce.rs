//! Plackett–Luce distribution over ordered size-`S` subsets of candidates.
//!
//! Clients are drawn one at a time without replacement from the softmax of
//! the remaining logits, so the probability of an ordered selection is the
//! product of the sequential softmax probabilities.

use rand::Rng;

use crate::error::{Error, Result};

fn check(num_candidates: usize, size: usize) -> Result<()> {
    if size > num_candidates {
        return Err(Error::InsufficientCandidates {
            needed: size,
            available: num_candidates,
        });
    }
    Ok(())
}

/// Log-softmax denominator over the candidates still available.
fn log_sum_exp(logits: &[f64], available: &[bool]) -> f64 {
    let max = logits
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(&z, _)| (z - max).exp())
        .sum();
    max + sum.ln()
}

/// Samples an ordered subset of `size` candidate positions; returns the
/// order and its log-probability.
pub fn sample<R: Rng + ?Sized>(logits: &[f64], size: usize, rng: &mut R) -> Result<(Vec<usize>, f64)> {
    check(logits.len(), size)?;
    let mut available = vec![true; logits.len()];
    let mut order = Vec::with_capacity(size);
    let mut log_prob = 0.0;
    for _ in 0..size {
        let lse = log_sum_exp(logits, &available);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last_available = 0;
        for (i, (&z, &a)) in logits.iter().zip(&available).enumerate() {
            if !a {
                continue;
            }
            last_available = i;
            acc += (z - lse).exp();
            if u < acc {
                chosen = Some(i);
                break;
            }
        }
        // rounding can leave `acc` a hair below 1
        let c = chosen.unwrap_or(last_available);
        log_prob += logits[c] - lse;
        available[c] = false;
        order.push(c);
    }
    Ok((order, log_prob))
}

/// Top-`size` positions by logit, ties broken by lower position.
pub fn greedy(logits: &[f64], size: usize) -> Result<Vec<usize>> {
    check(logits.len(), size)?;
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(size);
    Ok(idx)
}

/// Log-probability of drawing exactly `order`.
pub fn log_prob(logits: &[f64], order: &[usize]) -> Result<f64> {
    check(logits.len(), order.len())?;
    let mut available = vec![true; logits.len()];
    let mut lp = 0.0;
    for &c in order {
        if c >= logits.len() || !available[c] {
            return Err(Error::InvalidParams(format!("invalid or repeated candidate {c}")));
        }
        lp += logits[c] - log_sum_exp(logits, &available);
        available[c] = false;
    }
    Ok(lp)
}

/// Gradient of [`log_prob`] with respect to the logits.
pub fn grad_log_prob(logits: &[f64], order: &[usize]) -> Result<Vec<f64>> {
    check(logits.len(), order.len())?;
    let mut available = vec![true; logits.len()];
    let mut grad = vec![0.0; logits.len()];
    for &c in order {
        if c >= logits.len() || !available[c] {
            return Err(Error::InvalidParams(format!("invalid or repeated candidate {c}")));
        }
        let lse = log_sum_exp(logits, &available);
        for (i, g) in grad.iter_mut().enumerate() {
            if available[i] {
                *g -= (logits[i] - lse).exp();
            }
        }
        grad[c] += 1.0;
        available[c] = false;
    }
    Ok(grad)
}

/// Binary selection mask over `num_candidates` positions.
pub fn selection_mask(num_candidates: usize, order: &[usize]) -> Vec<f64> {
    let mut mask = vec![0.0; num_candidates];
    for &c in order {
        mask[c] = 1.0;
    }
    mask
}
