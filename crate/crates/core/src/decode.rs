//! Mixture-to-particle decoding, cardinality correction and state extraction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{regularized_cholesky, GmParameterSet};
use crate::particle_phd::{systematic_indices, ResampledSet};
use crate::types::{TargetState, WeightedParticleSet};

/// Importance weights `w̃_j = W · D(x̃_j) / w_parent(j)` that let the
/// resampled particles represent the fused mixture `D`.
pub fn is_reweight(resampled: &ResampledSet, fused: &GmParameterSet, local_total: f64) -> Result<Vec<f64>> {
    if let Some(j) = resampled.parent_weights().iter().position(|w| !(*w > 0.0)) {
        return Err(Error::ContractViolation(format!(
            "resampled particle {j} has a zero parent weight"
        )));
    }
    if fused.is_empty() {
        return Ok(vec![0.0; resampled.len()]);
    }
    let density = fused.prepare()?;
    Ok((0..resampled.len())
        .map(|j| local_total * density.density(resampled.state(j)) / resampled.parent_weights()[j])
        .collect())
}

/// Draws `count` particles from the normalized mixture (components chosen
/// systematically) with uniform weights `W_f / count`.
pub fn ss_sample_count<R: Rng + ?Sized>(fused: &GmParameterSet, count: usize, rng: &mut R) -> Result<WeightedParticleSet> {
    let total = fused.total_weight();
    if !(total > 0.0) {
        return Err(Error::EmptyPosterior("fused mixture has no mass to sample".into()));
    }
    let dim = fused.components[0].dim();
    if count == 0 {
        return Ok(WeightedParticleSet::empty(dim));
    }
    let weights: Vec<f64> = fused.iter().map(|c| c.weight).collect();
    let picks = systematic_indices(&weights, count, rng);
    let mut factors = Vec::with_capacity(fused.len());
    for c in fused.iter() {
        factors.push(regularized_cholesky(&c.cov, &format!("sampling {:?}", c.tag))?.l());
    }
    let mut states = Vec::with_capacity(count * dim);
    let mut noise = vec![0.0; dim];
    for &i in &picks {
        let c = &fused.components[i];
        let l = &factors[i];
        for v in noise.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for r in 0..dim {
            let mut x = c.mean[r];
            for k in 0..=r {
                x += l[(r, k)] * noise[k];
            }
            states.push(x);
        }
    }
    WeightedParticleSet::from_parts(dim, states, vec![total / count as f64; count])
}

/// Standard sampling with `round(N_p · W_f)` particles.
pub fn ss_sample<R: Rng + ?Sized>(fused: &GmParameterSet, per_target: usize, rng: &mut R) -> Result<WeightedParticleSet> {
    let count = (per_target as f64 * fused.total_weight()).round().max(0.0) as usize;
    ss_sample_count(fused, count, rng)
}

/// Rescales `weights` in place so they sum to `target` and returns the factor.
/// Non-finite weights count as a degenerate result.
pub fn scale_cardinality(weights: &mut [f64], target: f64) -> Result<f64> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::DegenerateFusion(target));
    }
    let mut sum: f64 = weights.iter().sum();
    let mut prescale = 1.0;
    if sum > 0.0 && !(target / sum).is_finite() || sum.is_infinite() {
        // normalize by the largest weight first so neither the sum nor the
        // factor leaves the representable range
        let max = weights.iter().cloned().fold(0.0, f64::max);
        for w in weights.iter_mut() {
            *w /= max;
        }
        prescale = max;
        sum = weights.iter().sum();
    }
    if !(sum > 0.0) {
        if target > 0.0 {
            return Err(Error::DegenerateFusion(target));
        }
        return Ok(1.0);
    }
    let beta = target / sum;
    for w in weights.iter_mut() {
        *w *= beta;
    }
    Ok(beta / prescale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// `N̂ = round(W)`.
    pub cardinality: usize,
    /// Means of the heaviest components, heaviest first. Shorter than
    /// `cardinality` when the mixture has too few components.
    pub states: Vec<TargetState>,
}

impl Estimates {
    pub fn clamped(&self) -> bool {
        self.states.len() < self.cardinality
    }
}

/// Means of the `round(W)` heaviest components; ties go to the smaller tag.
pub fn estimate_states(fused: &GmParameterSet, cardinality: f64) -> Estimates {
    let n = cardinality.round().max(0.0) as usize;
    let mut order: Vec<usize> = (0..fused.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&fused.components[a], &fused.components[b]);
        cb.weight
            .total_cmp(&ca.weight)
            .then_with(|| ca.tag.cmp(&cb.tag))
            .then(a.cmp(&b))
    });
    Estimates {
        cardinality: n,
        states: order
            .into_iter()
            .take(n)
            .map(|i| fused.components[i].mean.clone())
            .collect(),
    }
}
