//! Linear-Gaussian GM-PHD filter for sensors with position measurements.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::gaussian::{merge_greedy, GaussianComponent, GmParameterSet, OriginTag};
use crate::models::{detection_prob, BirthModel, MotionModel, SensorKind, SensorNode};
use crate::types::{Measurement, POS_X, POS_Y};

/// Mixture reduction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmReduction {
    pub prune_threshold: f64,
    pub merge_threshold: f64,
    pub max_components: usize,
}

impl Default for GmReduction {
    fn default() -> Self {
        GmReduction {
            prune_threshold: 1e-4,
            merge_threshold: 4.0,
            max_components: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmFilterState {
    pub mixture: GmParameterSet,
    pub reduction: GmReduction,
}

impl GmFilterState {
    pub fn new(reduction: GmReduction) -> Self {
        GmFilterState {
            mixture: GmParameterSet::default(),
            reduction,
        }
    }
}

/// Prediction: `μ → Fμ`, `Σ → FΣFᵀ + Q`, `Ω → p_S Ω`, then the birth
/// components are appended.
pub fn gm_predict(state: &GmFilterState, motion: &MotionModel, birth: &BirthModel, step: usize) -> GmFilterState {
    let f = &motion.transition;
    let q = motion.process_cov();
    let mut out: Vec<GaussianComponent> = state
        .mixture
        .iter()
        .map(|c| GaussianComponent {
            weight: motion.survival * c.weight,
            mean: f * &c.mean,
            cov: f * &c.cov * f.transpose() + &q,
            tag: c.tag,
        })
        .collect();
    out.extend(birth.components().iter().enumerate().map(|(index, b)| {
        GaussianComponent::new(b.weight, b.mean.clone(), b.cov.clone()).with_tag(OriginTag::Birth { step, index })
    }));
    GmFilterState {
        mixture: GmParameterSet::new(out),
        reduction: state.reduction,
    }
}

/// Update with Kalman-corrected detection terms, followed by [`reduce`].
pub fn gm_update(state: &GmFilterState, z: &[Measurement], sensor: &SensorNode, step: usize) -> Result<GmFilterState> {
    if sensor.kind != SensorKind::Linear {
        return Err(Error::ContractViolation(format!(
            "GM-PHD update needs a linear sensor, sensor {} is {:?}",
            sensor.id, sensor.kind
        )));
    }
    let kind = sensor.measurement_kind();
    if z.iter().any(|m| m.kind != kind) {
        return Err(Error::ContractViolation("measurement kind does not match the sensor".into()));
    }
    let r = Matrix2::new(sensor.noise_std[0].powi(2), 0.0, 0.0, sensor.noise_std[1].powi(2));

    struct Innovation {
        pd: f64,
        zhat: Vector2<f64>,
        s_inv: Matrix2<f64>,
        log_norm: f64,
        gain: DMatrix<f64>,
        cov: DMatrix<f64>,
    }

    let mut out = Vec::new();
    let mut innovations = Vec::with_capacity(state.mixture.len());
    for c in state.mixture.iter() {
        let pd = detection_prob(sensor, c.mean.as_slice());
        out.push(GaussianComponent {
            weight: (1.0 - pd) * c.weight,
            ..c.clone()
        });
        let d = c.dim();
        // H picks the two position coordinates, so HΣHᵀ and ΣHᵀ are slices of Σ
        let p = [POS_X, POS_Y];
        let hp = Matrix2::from_fn(|i, j| c.cov[(p[i], p[j])]);
        let s = hp + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::NumericDegeneracy("singular innovation covariance".into()))?;
        let pht = DMatrix::from_fn(d, 2, |i, j| c.cov[(i, p[j])]);
        let gain = &pht * DMatrix::from_fn(2, 2, |i, j| s_inv[(i, j)]);
        let mut cov = &c.cov - &gain * pht.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        innovations.push(Innovation {
            pd,
            zhat: Vector2::new(c.mean[POS_X], c.mean[POS_Y]),
            s_inv,
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * s.determinant().ln(),
            gain,
            cov,
        });
    }

    for (m, meas) in z.iter().enumerate() {
        let zv = Vector2::new(meas.values[0], meas.values[1]);
        let mut terms = Vec::with_capacity(state.mixture.len());
        let mut evidence = 0.0;
        for (c, inn) in state.mixture.iter().zip(&innovations) {
            let nu = zv - inn.zhat;
            let q = (inn.log_norm - 0.5 * (nu.transpose() * inn.s_inv * nu)[(0, 0)]).exp();
            let w = inn.pd * c.weight * q;
            evidence += w;
            terms.push((w, nu));
        }
        let denom = sensor.clutter_intensity + evidence;
        if !(denom > 0.0) {
            continue;
        }
        for (i, ((w, nu), (c, inn))) in terms.into_iter().zip(state.mixture.iter().zip(&innovations)).enumerate() {
            if w == 0.0 {
                continue;
            }
            let nu = DVector::from_column_slice(nu.as_slice());
            out.push(GaussianComponent {
                weight: w / denom,
                mean: &c.mean + &inn.gain * nu,
                cov: inn.cov.clone(),
                tag: OriginTag::Local {
                    sensor: sensor.id,
                    step,
                    index: (m + 1) * state.mixture.len() + i,
                },
            });
        }
    }
    let mixture = reduce(&GmParameterSet::new(out), &state.reduction, sensor.id, step)?;
    Ok(GmFilterState {
        mixture,
        reduction: state.reduction,
    })
}

/// Prune components below the weight threshold, merge, and keep at most
/// `max_components`, heaviest first.
pub fn reduce(gm: &GmParameterSet, reduction: &GmReduction, sensor: usize, step: usize) -> Result<GmParameterSet> {
    let kept: GmParameterSet = gm
        .iter()
        .filter(|c| c.weight >= reduction.prune_threshold)
        .cloned()
        .collect();
    let mut merged = merge_greedy(&kept, reduction.merge_threshold, |index| OriginTag::Merged {
        sensor,
        step,
        round: 0,
        index,
    })?;
    merged
        .components
        .sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.tag.cmp(&b.tag)));
    merged.components.truncate(reduction.max_components);
    Ok(merged)
}
