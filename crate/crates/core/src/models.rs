//! Target dynamics, birth intensity, and sensor observation models.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{evaluate_gaussian, GaussianComponent, PreparedGaussian};
use crate::types::{wrap_angle, Measurement, MeasurementKind, TargetState, POS_X, POS_Y};

/// Linear-Gaussian motion `x' = F x + G u`, `u ~ N(0, σ_u² I)`, with a
/// constant survival probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: DMatrix<f64>,
    pub noise_gain: DMatrix<f64>,
    pub noise_std: f64,
    pub survival: f64,
}

impl MotionModel {
    /// Nearly-constant-velocity model on `[x, vx, y, vy]`.
    pub fn constant_velocity(dt: f64, noise_std: f64, survival: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&survival) {
            return Err(Error::config("motion.survival_probability", "must lie in [0, 1]"));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::config("motion.process_noise_std", "must be nonnegative"));
        }
        #[rustfmt::skip]
        let transition = DMatrix::from_row_slice(4, 4, &[
            1.0, dt,  0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, dt,
            0.0, 0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let noise_gain = DMatrix::from_row_slice(4, 2, &[
            dt * dt / 2.0, 0.0,
            dt,            0.0,
            0.0,           dt * dt / 2.0,
            0.0,           dt,
        ]);
        Ok(MotionModel {
            transition,
            noise_gain,
            noise_std,
            survival,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    /// `σ_u² G Gᵀ`.
    pub fn process_cov(&self) -> DMatrix<f64> {
        &self.noise_gain * self.noise_gain.transpose() * (self.noise_std * self.noise_std)
    }

    /// Writes `F x + G u` into `out`.
    pub fn propagate_into<R: Rng + ?Sized>(&self, from: &[f64], out: &mut [f64], rng: &mut R) {
        let d = self.dim();
        let q = self.noise_gain.ncols();
        let mut u = [0.0f64; 8];
        if self.noise_std > 0.0 {
            for v in u.iter_mut().take(q) {
                *v = self.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.transition[(i, j)] * from[j];
            }
            for (j, uj) in u.iter().enumerate().take(q) {
                s += self.noise_gain[(i, j)] * uj;
            }
            out[i] = s;
        }
    }
}

/// Draws the successor of `x` under the motion model.
pub fn cv_transition<R: Rng + ?Sized>(x: &TargetState, model: &MotionModel, rng: &mut R) -> TargetState {
    let mut out = DVector::zeros(x.len());
    model.propagate_into(x.as_slice(), out.as_mut_slice(), rng);
    out
}

/// `f(x_to | x_from)`; the rank-deficient process covariance is regularized.
pub fn transition_density(x_to: &TargetState, x_from: &TargetState, model: &MotionModel) -> Result<f64> {
    if !(model.noise_std > 0.0) {
        return Err(Error::ContractViolation(
            "transition density needs a positive process noise".into(),
        ));
    }
    let mean = &model.transition * x_from;
    evaluate_gaussian(
        x_to.as_slice(),
        &GaussianComponent::new(1.0, mean, model.process_cov()),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthComponent {
    pub weight: f64,
    pub mean: TargetState,
    pub cov: DMatrix<f64>,
}

/// Poisson birth intensity `γ(x) = Σ_i w_i N(x; m_i, Q_i)`.
#[derive(Debug, Clone)]
pub struct BirthModel {
    components: Vec<BirthComponent>,
    factors: Vec<DMatrix<f64>>,
}

impl BirthModel {
    pub fn new(components: Vec<BirthComponent>) -> Result<Self> {
        let mut factors = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(Error::config(format!("birth.components[{i}].weight"), "must be nonnegative"));
            }
            if c.cov.nrows() != c.mean.len() || c.cov.ncols() != c.mean.len() {
                return Err(Error::config(
                    format!("birth.components[{i}].covariance"),
                    "dimension does not match the mean",
                ));
            }
            factors.push(sqrt_factor(&c.cov).ok_or_else(|| {
                Error::config(format!("birth.components[{i}].covariance"), "not positive semidefinite")
            })?);
        }
        Ok(BirthModel { components, factors })
    }

    pub fn components(&self) -> &[BirthComponent] {
        &self.components
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `γ(x)`.
    pub fn intensity(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for c in &self.components {
            if c.weight > 0.0 {
                s += c.weight * PreparedGaussian::new(&c.mean, &c.cov, "birth component")?.density(x);
            }
        }
        Ok(s)
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::ContractViolation("birth model has zero mass".into()));
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            if u < c.weight {
                pick = i;
                break;
            }
            u -= c.weight;
        }
        let c = &self.components[pick];
        let l = &self.factors[pick];
        let d = c.mean.len();
        let n: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut s = c.mean[i];
            for (j, nj) in n.iter().enumerate() {
                s += l[(i, j)] * nj;
            }
            out[i] = s;
        }
        Ok(())
    }
}

/// A square-root factor `L` with `L Lᵀ = Σ` for a PSD matrix; exact zero for a
/// zero matrix.
fn sqrt_factor(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Some(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
        return None;
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Draws one state from the normalized birth intensity.
pub fn sample_birth<R: Rng + ?Sized>(model: &BirthModel, rng: &mut R) -> Result<TargetState> {
    let d = model.components.first().map(|c| c.mean.len()).unwrap_or(0);
    let mut out = DVector::zeros(d);
    model.sample_into(rng, out.as_mut_slice())?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    Linear,
    RangeBearing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Particle,
    GaussianMixture,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldOfView {
    /// Axis-aligned box in world coordinates.
    Rectangle { x: [f64; 2], y: [f64; 2] },
    /// Range-bearing coverage `[0, max_range] × (-π, π]` around the sensor.
    Disc { max_range: f64 },
}

impl FieldOfView {
    /// Volume of the measurement space clutter is spread over (m² for a
    /// rectangle, m·rad for a disc in range-bearing coordinates).
    pub fn measurement_volume(&self) -> f64 {
        match *self {
            FieldOfView::Rectangle { x, y } => (x[1] - x[0]) * (y[1] - y[0]),
            FieldOfView::Disc { max_range } => max_range * 2.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionModel {
    /// Constant probability inside a rectangular region, zero outside.
    Constant { probability: f64 },
    /// `peak · N(μ_D; 0, s² I) / N(0; 0, s² I)` with `μ_D` the per-axis offset
    /// from the sensor.
    Gaussian { peak: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNode {
    pub id: usize,
    pub position: [f64; 2],
    pub kind: SensorKind,
    pub filter: FilterKind,
    /// Per-channel noise std: (m, m) for linear, (m, rad) for range-bearing.
    pub noise_std: [f64; 2],
    pub detection: DetectionModel,
    /// Expected clutter count per scan.
    pub clutter_rate: f64,
    /// Clutter density per unit measurement volume.
    pub clutter_intensity: f64,
    pub fov: FieldOfView,
}

impl SensorNode {
    pub fn linear(
        id: usize,
        position: [f64; 2],
        filter: FilterKind,
        noise_std: f64,
        detection_probability: f64,
        roi: ([f64; 2], [f64; 2]),
        clutter_rate: f64,
    ) -> Self {
        let fov = FieldOfView::Rectangle { x: roi.0, y: roi.1 };
        SensorNode {
            id,
            position,
            kind: SensorKind::Linear,
            filter,
            noise_std: [noise_std, noise_std],
            detection: DetectionModel::Constant {
                probability: detection_probability,
            },
            clutter_rate,
            clutter_intensity: clutter_rate / fov.measurement_volume(),
            fov,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn range_bearing(
        id: usize,
        position: [f64; 2],
        filter: FilterKind,
        range_std: f64,
        bearing_std: f64,
        detection_peak: f64,
        detection_scale: f64,
        max_range: f64,
        clutter_rate: f64,
    ) -> Self {
        let fov = FieldOfView::Disc { max_range };
        SensorNode {
            id,
            position,
            kind: SensorKind::RangeBearing,
            filter,
            noise_std: [range_std, bearing_std],
            detection: DetectionModel::Gaussian {
                peak: detection_peak,
                scale: detection_scale,
            },
            clutter_rate,
            clutter_intensity: clutter_rate / fov.measurement_volume(),
            fov,
        }
    }

    pub fn measurement_kind(&self) -> MeasurementKind {
        match self.kind {
            SensorKind::Linear => MeasurementKind::Cartesian,
            SensorKind::RangeBearing => MeasurementKind::RangeBearing,
        }
    }

    /// Checks the sensor's invariants.
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("sensors[{}].{k}", self.id);
        if !(self.clutter_rate >= 0.0) {
            return Err(Error::config(key("clutter_rate"), "must be nonnegative"));
        }
        if !(self.noise_std[0] > 0.0 && self.noise_std[1] > 0.0) {
            return Err(Error::config(key("noise_std"), "must be positive"));
        }
        let volume = self.fov.measurement_volume();
        if !(volume > 0.0) {
            return Err(Error::config(key("field_of_view"), "must have positive volume"));
        }
        let expected = self.clutter_rate / volume;
        if (self.clutter_intensity - expected).abs() > 1e-6 * expected.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::config(
                key("clutter_intensity"),
                format!("{} is inconsistent with rate / volume = {expected}", self.clutter_intensity),
            ));
        }
        match self.detection {
            DetectionModel::Constant { probability } if !(0.0..=1.0).contains(&probability) => {
                Err(Error::config(key("detection_probability"), "must lie in [0, 1]"))
            }
            DetectionModel::Gaussian { peak, scale } if !((0.0..=1.0).contains(&peak) && scale > 0.0) => {
                Err(Error::config(key("detection"), "peak must lie in [0, 1] and scale be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Probability that `sensor` detects a target at `x`.
pub fn detection_prob(sensor: &SensorNode, x: &[f64]) -> f64 {
    let (px, py) = (x[POS_X], x[POS_Y]);
    let p = match sensor.detection {
        DetectionModel::Constant { probability } => match sensor.fov {
            FieldOfView::Rectangle { x: rx, y: ry } => {
                if px >= rx[0] && px <= rx[1] && py >= ry[0] && py <= ry[1] {
                    probability
                } else {
                    0.0
                }
            }
            FieldOfView::Disc { max_range } => {
                let r = (px - sensor.position[0]).hypot(py - sensor.position[1]);
                if r <= max_range {
                    probability
                } else {
                    0.0
                }
            }
        },
        DetectionModel::Gaussian { peak, scale } => {
            let dx = px - sensor.position[0];
            let dy = py - sensor.position[1];
            peak * (-(dx * dx + dy * dy) / (2.0 * scale * scale)).exp()
        }
    };
    p.clamp(0.0, 1.0)
}

/// The noiseless measurement of state `x`.
pub fn predicted_measurement(sensor: &SensorNode, x: &[f64]) -> [f64; 2] {
    let (px, py) = (x[POS_X], x[POS_Y]);
    match sensor.kind {
        SensorKind::Linear => [px, py],
        SensorKind::RangeBearing => {
            let dx = px - sensor.position[0];
            let dy = py - sensor.position[1];
            [dx.hypot(dy), dx.atan2(dy)]
        }
    }
}

/// `g(z | x)` given the predicted measurement of `x`; the bearing residual is
/// wrapped into (-π, π].
pub(crate) fn likelihood_from_predicted(sensor: &SensorNode, z: &Measurement, zhat: &[f64; 2]) -> f64 {
    let [s1, s2] = sensor.noise_std;
    let r1 = z.values[0] - zhat[0];
    let r2 = match sensor.kind {
        SensorKind::Linear => z.values[1] - zhat[1],
        SensorKind::RangeBearing => wrap_angle(z.values[1] - zhat[1]),
    };
    let q = (r1 / s1).powi(2) + (r2 / s2).powi(2);
    (-0.5 * q).exp() / (2.0 * PI * s1 * s2)
}

/// `g(z | x)`.
pub fn likelihood(sensor: &SensorNode, z: &Measurement, x: &[f64]) -> Result<f64> {
    if z.kind != sensor.measurement_kind() {
        return Err(Error::ContractViolation(format!(
            "{:?} measurement given to a {:?} sensor",
            z.kind, sensor.kind
        )));
    }
    Ok(likelihood_from_predicted(sensor, z, &predicted_measurement(sensor, x)))
}

/// Simulates one scan: independent detections with noise plus Poisson clutter
/// spread uniformly over the sensor's measurement space.
pub fn generate_measurements<R: Rng + ?Sized>(
    sensor: &SensorNode,
    truth: &[TargetState],
    rng: &mut R,
) -> Vec<Measurement> {
    let mut out = Vec::new();
    for x in truth {
        if rng.random::<f64>() < detection_prob(sensor, x.as_slice()) {
            let zhat = predicted_measurement(sensor, x.as_slice());
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            let (a, b) = (zhat[0] + sensor.noise_std[0] * n1, zhat[1] + sensor.noise_std[1] * n2);
            out.push(match sensor.kind {
                SensorKind::Linear => Measurement::cartesian(a, b),
                SensorKind::RangeBearing => Measurement::range_bearing(a, b),
            });
        }
    }
    let count = if sensor.clutter_rate > 0.0 {
        Poisson::new(sensor.clutter_rate)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    for _ in 0..count {
        out.push(match sensor.fov {
            FieldOfView::Rectangle { x, y } => {
                Measurement::cartesian(rng.random_range(x[0]..=x[1]), rng.random_range(y[0]..=y[1]))
            }
            FieldOfView::Disc { max_range } => {
                let r = rng.random_range(0.0..=max_range);
                // (-π, π]
                let b = PI - rng.random::<f64>() * 2.0 * PI;
                Measurement::range_bearing(r, b)
            }
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTarget {
    /// First step (1-based) the target exists.
    pub birth: usize,
    /// Last step (1-based) the target exists.
    pub death: usize,
    pub initial: TargetState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthScript {
    pub steps: usize,
    pub dt: f64,
    pub targets: Vec<ScriptedTarget>,
}

impl TruthScript {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("simulation.steps", "must be at least 1"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(1 <= t.birth && t.birth <= t.death && t.death <= self.steps) {
                return Err(Error::config(
                    format!("truth.targets[{i}]"),
                    format!("need 1 <= birth <= death <= {}", self.steps),
                ));
            }
        }
        Ok(())
    }
}

/// Ground truth per step; element `k - 1` holds the states alive at step `k`.
pub fn simulate_truth<R: Rng + ?Sized>(
    script: &TruthScript,
    model: &MotionModel,
    rng: &mut R,
) -> Result<Vec<Vec<TargetState>>> {
    script.validate()?;
    let mut steps = vec![Vec::new(); script.steps];
    for t in &script.targets {
        let mut x = t.initial.clone();
        for k in t.birth..=t.death {
            if k > t.birth {
                x = cv_transition(&x, model, rng);
            }
            steps[k - 1].push(x.clone());
        }
    }
    Ok(steps)
}
