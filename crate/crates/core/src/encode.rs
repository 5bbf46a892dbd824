//! Particle-to-mixture encoding.
//!
//! Each significant column of the weight decomposition becomes one Gaussian
//! component whose weight is the column sum `Ω(z)` and whose mean and
//! covariance are the weighted moments of the particles under that column.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianComponent, GmParameterSet, OriginTag};
use crate::particle_phd::{PredictedParticleSet, WeightDecomposition};
use crate::types::{ExtendedMeasurement, POS_X, POS_Y};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Keep every column with `Ω(z) > T_Ω`.
    Threshold,
    /// Keep the `round(W)` columns with the largest `Ω(z)`.
    TopN,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeSettings {
    pub threshold: f64,
    pub mode: SelectionMode,
}

impl Default for EncodeSettings {
    fn default() -> Self {
        EncodeSettings {
            threshold: 0.3,
            mode: SelectionMode::Threshold,
        }
    }
}

/// Columns of `decomp` that enter the local mixture, in column order.
pub fn select_significant(decomp: &WeightDecomposition, settings: &EncodeSettings) -> Vec<ExtendedMeasurement> {
    let sums = decomp.column_sums();
    match settings.mode {
        SelectionMode::Threshold => sums
            .iter()
            .enumerate()
            .filter(|(_, &o)| o > settings.threshold)
            .map(|(c, _)| ExtendedMeasurement::from_column(c))
            .collect(),
        SelectionMode::TopN => {
            let n = decomp.total().round().max(0.0) as usize;
            let mut cols: Vec<usize> = (0..sums.len()).filter(|&c| sums[c] > 0.0).collect();
            cols.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
            cols.truncate(n);
            cols.sort_unstable();
            cols.into_iter().map(ExtendedMeasurement::from_column).collect()
        }
    }
}

/// Diagonal added to rank-deficient covariances: 1 m² on positions and
/// 0.01 (m/s)² elsewhere.
pub fn covariance_floor(dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |i, _| if i == POS_X || i == POS_Y { 1.0 } else { 0.01 })
}

fn is_rank_deficient(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    min <= 1e-12 * max.max(1.0)
}

/// Weighted moments of the particles under one decomposition column.
pub fn gaussian_from_column(
    particles: &PredictedParticleSet,
    decomp: &WeightDecomposition,
    col: usize,
    tag: OriginTag,
) -> Result<GaussianComponent> {
    let omega = decomp.column_sums()[col];
    if !(omega > 0.0) {
        return Err(Error::ContractViolation(format!(
            "cannot encode column {col} with zero weight"
        )));
    }
    let d = particles.dim();
    let mut mean = DVector::zeros(d);
    for (j, w) in decomp.column(col).enumerate() {
        if w > 0.0 {
            let x = particles.state(j);
            let a = w / omega;
            for i in 0..d {
                mean[i] += a * x[i];
            }
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (j, w) in decomp.column(col).enumerate() {
        if w > 0.0 {
            let x = particles.state(j);
            let a = w / omega;
            for i in 0..d {
                diff[i] = x[i] - mean[i];
            }
            for r in 0..d {
                for c in 0..=r {
                    cov[(r, c)] += a * diff[r] * diff[c];
                }
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            cov[(c, r)] = cov[(r, c)];
        }
    }
    if is_rank_deficient(&cov) {
        for (i, f) in covariance_floor(d).iter().enumerate() {
            cov[(i, i)] += f;
        }
    }
    Ok(GaussianComponent {
        weight: omega,
        mean,
        cov,
        tag,
    })
}

/// Encodes the significant columns as a mixture and returns it together with
/// the full (unpruned) weight sum `W`.
pub fn encode(
    decomp: &WeightDecomposition,
    particles: &PredictedParticleSet,
    settings: &EncodeSettings,
    sensor: usize,
    step: usize,
) -> Result<(GmParameterSet, f64)> {
    let mut gm = GmParameterSet::default();
    for z in select_significant(decomp, settings) {
        let column = z.column();
        let tag = OriginTag::Measurement { sensor, step, column };
        gm.push(gaussian_from_column(particles, decomp, column, tag)?);
    }
    Ok((gm, decomp.total()))
}
