//! Local sequential Monte-Carlo PHD filter.
//!
//! The update keeps the full measurement-wise decomposition of every particle
//! weight, `w_j = Σ_{z ∈ {z0} ∪ Z} ω_j(z)`, because the mixture encoder needs
//! the individual columns and the column sums `Ω(z)`.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::models::{
    detection_prob, likelihood_from_predicted, predicted_measurement, BirthModel, MotionModel,
    SensorNode,
};
use crate::types::{Measurement, WeightedParticleSet};

/// Proposal for surviving particles, `q(x ; x_prev, Z)`.
pub trait SurvivalProposal: Send + Sync {
    fn sample(&self, from: &[f64], z: &[Measurement], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;
    fn density(&self, to: &[f64], from: &[f64], z: &[Measurement]) -> Result<f64>;
}

/// Proposal for newborn particles, `p(x ; Z)`.
pub trait BirthProposal: Send + Sync {
    fn sample(&self, z: &[Measurement], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;
    fn density(&self, x: &[f64], z: &[Measurement]) -> Result<f64>;
}

/// Proposal choice for [`predict`]. `None` selects the defaults: the
/// transition density for survivors and the normalized birth intensity for
/// newborns, for which the weight ratios reduce to `p_S w` and `mass / L`.
#[derive(Clone, Copy, Default)]
pub struct Proposals<'a> {
    pub survival: Option<&'a dyn SurvivalProposal>,
    pub birth: Option<&'a dyn BirthProposal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedParticleSet {
    dim: usize,
    states: Vec<f64>,
    weights: Vec<f64>,
    newborn_start: usize,
}

impl PredictedParticleSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Predicted weights `w_{k|k-1}`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the first newborn particle (`J_{k-1}`).
    pub fn newborn_start(&self) -> usize {
        self.newborn_start
    }
}

/// Prediction step: moves the previous particles through the survival
/// proposal and appends `newborn` particles drawn from the birth proposal.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    previous: &WeightedParticleSet,
    z: &[Measurement],
    motion: &MotionModel,
    birth: &BirthModel,
    newborn: usize,
    proposals: Proposals<'_>,
    rng: &mut dyn RngCore,
) -> Result<PredictedParticleSet> {
    if newborn == 0 && previous.is_empty() {
        return Err(Error::ContractViolation(
            "no previous particles and no newborn particles to represent births".into(),
        ));
    }
    let dim = motion.dim();
    if !previous.is_empty() && previous.dim() != dim {
        return Err(Error::ContractViolation("particle and motion-model dimensions differ".into()));
    }
    let total = previous.len() + newborn;
    let mut states = vec![0.0; total * dim];
    let mut weights = Vec::with_capacity(total);

    for (j, (from, w)) in previous.iter().enumerate() {
        let out = &mut states[j * dim..(j + 1) * dim];
        match proposals.survival {
            None => {
                motion.propagate_into(from, out, rng);
                weights.push(motion.survival * w);
            }
            Some(q) => {
                q.sample(from, z, rng, out)?;
                let to = nalgebra::DVector::from_column_slice(out);
                let prev = nalgebra::DVector::from_column_slice(from);
                let f = crate::models::transition_density(&to, &prev, motion)?;
                let qd = q.density(out, from, z)?;
                weights.push(if qd > 0.0 { motion.survival * f * w / qd } else { 0.0 });
            }
        }
    }

    let start = previous.len();
    if newborn > 0 {
        let mass = birth.total_mass();
        for j in start..total {
            let out = &mut states[j * dim..(j + 1) * dim];
            match proposals.birth {
                None => {
                    birth.sample_into(rng, out)?;
                    weights.push(mass / newborn as f64);
                }
                Some(p) => {
                    p.sample(z, rng, out)?;
                    let gamma = birth.intensity(out)?;
                    let pd = p.density(out, z)?;
                    weights.push(if pd > 0.0 { gamma / (newborn as f64 * pd) } else { 0.0 });
                }
            }
        }
    }
    Ok(PredictedParticleSet {
        dim,
        states,
        weights,
        newborn_start: start,
    })
}

/// Dense `J × (M+1)` decomposition of the updated weights. Column 0 belongs
/// to the missed-detection pseudo-measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDecomposition {
    rows: usize,
    cols: usize,
    omega: Vec<f64>,
    column_sums: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl WeightDecomposition {
    /// Builds a decomposition from a row-major component matrix.
    pub fn from_components(rows: usize, cols: usize, omega: Vec<f64>) -> Result<Self> {
        if omega.len() != rows * cols || cols == 0 {
            return Err(Error::ContractViolation("decomposition shape mismatch".into()));
        }
        if omega.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::ContractViolation("negative weight component".into()));
        }
        let mut column_sums = vec![0.0; cols];
        let mut row_sums = vec![0.0; rows];
        for (j, row) in omega.chunks_exact(cols).enumerate() {
            for (c, v) in row.iter().enumerate() {
                column_sums[c] += v;
            }
            row_sums[j] = row.iter().sum();
        }
        let total = row_sums.iter().sum();
        Ok(WeightDecomposition {
            rows,
            cols,
            omega,
            column_sums,
            row_sums,
            total,
        })
    }

    pub fn particles(&self) -> usize {
        self.rows
    }

    /// `M + 1`.
    pub fn columns(&self) -> usize {
        self.cols
    }

    /// `ω_j(z)` for column `col`.
    pub fn omega(&self, j: usize, col: usize) -> f64 {
        self.omega[j * self.cols + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        self.omega.iter().skip(col).step_by(self.cols).copied()
    }

    /// `Ω(z)` for every column.
    pub fn column_sums(&self) -> &[f64] {
        &self.column_sums
    }

    /// Updated particle weights `w_j`.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// `W = Σ_j w_j`.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Update step with the measurement-wise weight decomposition.
pub fn update(
    predicted: &PredictedParticleSet,
    z: &[Measurement],
    sensor: &SensorNode,
) -> Result<WeightDecomposition> {
    let kind = sensor.measurement_kind();
    if let Some(bad) = z.iter().find(|m| m.kind != kind) {
        return Err(Error::ContractViolation(format!(
            "{:?} measurement given to sensor {} ({:?})",
            bad.kind, sensor.id, sensor.kind
        )));
    }
    let rows = predicted.len();
    let cols = z.len() + 1;
    let mut omega = vec![0.0; rows * cols];
    let mut evidence = vec![0.0; cols];
    for j in 0..rows {
        let x = predicted.state(j);
        let w = predicted.weights[j];
        let pd = detection_prob(sensor, x);
        let row = &mut omega[j * cols..(j + 1) * cols];
        row[0] = (1.0 - pd) * w;
        if pd == 0.0 || w == 0.0 {
            continue;
        }
        let zhat = predicted_measurement(sensor, x);
        for (m, meas) in z.iter().enumerate() {
            let t = pd * likelihood_from_predicted(sensor, meas, &zhat) * w;
            row[m + 1] = t;
            evidence[m + 1] += t;
        }
    }
    // normalize detection columns by κ(z) + G(z)
    let kappa = sensor.clutter_intensity;
    let scale: Vec<f64> = evidence
        .iter()
        .map(|g| {
            let denom = kappa + g;
            if denom > 0.0 {
                1.0 / denom
            } else {
                0.0
            }
        })
        .collect();
    for row in omega.chunks_exact_mut(cols) {
        for c in 1..cols {
            row[c] *= scale[c];
        }
    }
    WeightDecomposition::from_components(rows, cols, omega)
}

/// How many particles a resampled set should hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleBudget {
    /// `N_p`, particles per expected target.
    pub per_target: usize,
    /// Particle count used when the cardinality is below `threshold`.
    pub floor: usize,
    pub threshold: f64,
}

impl ParticleBudget {
    /// `round(N_p W)` if `W ≥ threshold`, else the floor count.
    pub fn count(&self, total_weight: f64) -> usize {
        if total_weight >= self.threshold {
            (self.per_target as f64 * total_weight).round() as usize
        } else {
            self.floor
        }
    }
}

/// Uniformly weighted output of resampling. `parent_weights[j]` is the updated
/// weight of the particle that `j` was copied from.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSet {
    dim: usize,
    states: Vec<f64>,
    weight: f64,
    parents: Vec<usize>,
    parent_weights: Vec<f64>,
}

impl ResampledSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// The common weight `c = W / J̃`.
    pub fn uniform_weight(&self) -> f64 {
        self.weight
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn parent_weights(&self) -> &[f64] {
        &self.parent_weights
    }

    /// The set with uniform weights `c`.
    pub fn to_weighted(&self) -> WeightedParticleSet {
        self.with_weights(vec![self.weight; self.len()])
    }

    /// Pairs the resampled states with new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> WeightedParticleSet {
        WeightedParticleSet::from_parts(self.dim, self.states.clone(), weights)
            .expect("resampled states and weights are consistent")
    }
}

/// Systematic resampling indices for `count` draws with probabilities
/// proportional to `weights`. Zero-weight entries are never selected.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(count);
    if count == 0 || !(total > 0.0) {
        return out;
    }
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let step = total / count as f64;
    let mut pos = rng.random::<f64>() * step;
    let mut cum = 0.0;
    let mut j = 0;
    for _ in 0..count {
        while j <= last_positive && cum + weights[j] <= pos {
            cum += weights[j];
            j += 1;
        }
        out.push(j.min(last_positive));
        pos += step;
    }
    out
}

/// Resamples the updated particles to the budgeted count and records each
/// copy's parent weight.
pub fn resample_systematic(
    decomp: &WeightDecomposition,
    particles: &PredictedParticleSet,
    budget: &ParticleBudget,
    rng: &mut dyn RngCore,
) -> Result<ResampledSet> {
    let total = decomp.total();
    if !(total > 0.0) {
        return Err(Error::EmptyPosterior("updated particle weights sum to zero".into()));
    }
    if decomp.particles() != particles.len() {
        return Err(Error::ContractViolation("decomposition and particle counts differ".into()));
    }
    let count = budget.count(total);
    if count == 0 {
        return Err(Error::ContractViolation("particle budget yields zero particles".into()));
    }
    let weights = decomp.row_sums();
    let parents = systematic_indices(weights, count, rng);
    let dim = particles.dim();
    let mut states = Vec::with_capacity(count * dim);
    for &p in &parents {
        states.extend_from_slice(particles.state(p));
    }
    let parent_weights = parents.iter().map(|&p| weights[p]).collect();
    Ok(ResampledSet {
        dim,
        states,
        weight: total / count as f64,
        parents,
        parent_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BirthComponent, FilterKind, SensorNode};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn motion() -> MotionModel {
        MotionModel::constant_velocity(1.0, 5.0, 0.98).unwrap()
    }

    fn birth_at(mean: [f64; 4], mass: f64) -> BirthModel {
        BirthModel::new(vec![BirthComponent {
            weight: mass,
            mean: DVector::from_row_slice(&mean),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![400.0, 100.0, 400.0, 100.0])),
        }])
        .unwrap()
    }

    fn linear_sensor(pd: f64, clutter: f64) -> SensorNode {
        SensorNode::linear(
            0,
            [0.0, 0.0],
            FilterKind::Particle,
            20.0,
            pd,
            ([-1000.0, 1000.0], [-1000.0, 1000.0]),
            clutter,
        )
    }

    fn predicted(states: Vec<f64>, weights: Vec<f64>) -> PredictedParticleSet {
        PredictedParticleSet {
            dim: 4,
            newborn_start: weights.len(),
            states,
            weights,
        }
    }

    #[test]
    fn predicted_weights_under_default_proposals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prev = WeightedParticleSet::from_parts(4, vec![0.0; 8], vec![0.5, 0.25]).unwrap();
        let birth = birth_at([0.0; 4], 0.1);
        let p = predict(&prev, &[], &motion(), &birth, 20, Proposals::default(), &mut rng).unwrap();
        assert_eq!(p.len(), 22);
        assert_eq!(p.newborn_start(), 2);
        assert!((p.weights()[0] - 0.49).abs() < 1e-15);
        for w in &p.weights()[2..] {
            assert!((w - 0.005).abs() < 1e-15);
        }
        let p = predict(&prev, &[], &motion(), &birth, 0, Proposals::default(), &mut rng).unwrap();
        assert_eq!(p.len(), prev.len());
        let empty = WeightedParticleSet::empty(4);
        assert!(predict(&empty, &[], &motion(), &birth, 0, Proposals::default(), &mut rng).is_err());
    }

    /// A survival proposal that samples like the transition but reports a
    /// density twice as large, so the ratio f/q is exactly one half up to the
    /// shared regularization.
    struct HalfTransition(MotionModel);

    impl SurvivalProposal for HalfTransition {
        fn sample(&self, from: &[f64], _z: &[Measurement], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
            self.0.propagate_into(from, out, rng);
            Ok(())
        }
        fn density(&self, to: &[f64], from: &[f64], _z: &[Measurement]) -> Result<f64> {
            let f = crate::models::transition_density(
                &DVector::from_column_slice(to),
                &DVector::from_column_slice(from),
                &self.0,
            )?;
            Ok(2.0 * f)
        }
    }

    struct WideBirth;

    impl BirthProposal for WideBirth {
        fn sample(&self, _z: &[Measurement], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
            for v in out.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            Ok(())
        }
        fn density(&self, _x: &[f64], _z: &[Measurement]) -> Result<f64> {
            Ok(1.0 / 16.0)
        }
    }

    #[test]
    fn general_proposal_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = motion();
        let prev = WeightedParticleSet::from_parts(4, vec![1.0, 2.0, 3.0, 4.0], vec![0.5]).unwrap();
        let birth = birth_at([0.0; 4], 0.1);
        let q = HalfTransition(m.clone());
        let b = WideBirth;
        let proposals = Proposals {
            survival: Some(&q),
            birth: Some(&b),
        };
        let p = predict(&prev, &[], &m, &birth, 4, proposals, &mut rng).unwrap();
        assert!((p.weights()[0] - 0.98 * 0.5 * 0.5).abs() < 1e-12);
        for j in 1..5 {
            let gamma = birth.intensity(p.state(j)).unwrap();
            let want = gamma / (4.0 / 16.0);
            assert!((p.weights()[j] - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn single_particle_update_by_hand() {
        // g = 0.5 needs σ with 1/(2πσ²) = 0.5 at zero residual
        let mut s = linear_sensor(0.9, 10.0);
        let sigma = (1.0 / std::f64::consts::PI).sqrt();
        s.noise_std = [sigma, sigma];
        s.clutter_intensity = 0.1;
        let p = predicted(vec![1.0, 0.0, 2.0, 0.0], vec![1.0]);
        let d = update(&p, &[Measurement::cartesian(1.0, 2.0)], &s).unwrap();
        assert!((d.omega(0, 0) - 0.1).abs() < 1e-15);
        assert!((d.omega(0, 1) - 0.45 / 0.55).abs() < 1e-12);
        assert!((d.omega(0, 1) - 0.81818).abs() < 1e-5);
        assert!((d.total() - (0.1 + 0.45 / 0.55)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_detection_cases() {
        let p = predicted(vec![0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 5.0, 0.0], vec![0.3, 0.7]);
        let zs = [Measurement::cartesian(0.0, 0.0), Measurement::cartesian(500.0, 5.0)];
        let blind = linear_sensor(0.0, 10.0);
        let d = update(&p, &zs, &blind).unwrap();
        assert_eq!(&d.column_sums()[1..], &[0.0, 0.0]);
        assert!((d.total() - 1.0).abs() < 1e-15);

        let perfect = linear_sensor(1.0, 10.0);
        let d = update(&p, &[], &perfect).unwrap();
        assert_eq!(d.total(), 0.0);

        let mut silent = linear_sensor(1.0, 0.0);
        silent.clutter_intensity = 0.0;
        let far = [Measurement::cartesian(1e7, 1e7)];
        let d = update(&p, &far, &silent).unwrap();
        assert_eq!(d.column_sums()[1], 0.0);
    }

    #[test]
    fn resampling_two_equal_particles() {
        let p = predicted(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0], vec![0.5, 0.5]);
        let d = WeightDecomposition::from_components(2, 1, vec![0.5, 0.5]).unwrap();
        let budget = ParticleBudget {
            per_target: 200,
            floor: 100,
            threshold: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let r = resample_systematic(&d, &p, &budget, &mut rng).unwrap();
            assert_eq!(r.len(), 200);
            assert!((r.uniform_weight() - 0.005).abs() < 1e-15);
            let first = r.parents().iter().filter(|&&j| j == 0).count() as i64;
            assert!((first - 100).abs() <= 1);
            assert!(r.parent_weights().iter().all(|&w| w == 0.5));
        }
    }

    #[test]
    fn uniform_weights_give_uniform_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = systematic_indices(&[0.25; 4], 400, &mut rng);
        for j in 0..4 {
            assert_eq!(idx.iter().filter(|&&i| i == j).count(), 100);
        }
        let idx = systematic_indices(&[0.0, 1.0, 0.0], 7, &mut rng);
        assert!(idx.iter().all(|&i| i == 1));
    }

    #[test]
    fn budget_rule() {
        let b = ParticleBudget {
            per_target: 200,
            floor: 100,
            threshold: 0.5,
        };
        assert_eq!(b.count(0.49), 100);
        assert_eq!(b.count(0.5), 100);
        assert_eq!(b.count(2.4), 480);
        assert_eq!(b.count(6.0), 1200);
    }

    #[test]
    fn empty_posterior_is_signalled() {
        let p = predicted(vec![0.0; 4], vec![1.0]);
        let d = WeightDecomposition::from_components(1, 1, vec![0.0]).unwrap();
        let b = ParticleBudget {
            per_target: 200,
            floor: 100,
            threshold: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            resample_systematic(&d, &p, &b, &mut rng),
            Err(Error::EmptyPosterior(_))
        ));
    }

    #[test]
    fn single_target_mass_tracks_cardinality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = motion();
        let truth0 = [0.0, 10.0, 0.0, -5.0];
        let birth = birth_at(truth0, 0.1);
        let mut sensor = linear_sensor(1.0, 0.0);
        sensor.clutter_intensity = 0.0;
        let budget = ParticleBudget {
            per_target: 10_000,
            floor: 10_000,
            threshold: 0.5,
        };
        let mut x = DVector::from_row_slice(&truth0);
        let mut particles = WeightedParticleSet::empty(4);
        let mut w = 0.0;
        for _ in 0..10 {
            let zs = crate::models::generate_measurements(&sensor, std::slice::from_ref(&x), &mut rng);
            let p = predict(&particles, &zs, &m, &birth, 1000, Proposals::default(), &mut rng).unwrap();
            let d = update(&p, &zs, &sensor).unwrap();
            w = d.total();
            let r = resample_systematic(&d, &p, &budget, &mut rng).unwrap();
            particles = r.to_weighted();
            x = crate::models::cv_transition(&x, &m, &mut rng);
        }
        assert!((0.9..=1.1).contains(&w), "W = {w}");
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, f64, f64)> {
        (1usize..40, 0usize..8).prop_flat_map(|(j, m)| {
            (
                proptest::collection::vec(-300.0f64..300.0, j * 4),
                proptest::collection::vec(0.0f64..0.5, j),
                proptest::collection::vec((-300.0f64..300.0, -300.0f64..300.0), m),
                0.0f64..=1.0,
                0.0f64..30.0,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn decomposition_sums_are_consistent((states, weights, zs, pd, clutter) in arb_instance()) {
            let p = predicted(states, weights.clone());
            let sensor = linear_sensor(pd, clutter);
            let zs: Vec<Measurement> = zs.into_iter().map(|(a, b)| Measurement::cartesian(a, b)).collect();
            let d = update(&p, &zs, &sensor).unwrap();
            let tol = |v: f64| 1e-9 * v.abs().max(1e-300);
            for j in 0..d.particles() {
                let s: f64 = (0..d.columns()).map(|c| d.omega(j, c)).sum();
                prop_assert!((s - d.row_sums()[j]).abs() <= tol(s));
            }
            for c in 0..d.columns() {
                let s: f64 = d.column(c).sum();
                prop_assert!((s - d.column_sums()[c]).abs() <= tol(s));
                if c > 0 {
                    prop_assert!(d.column_sums()[c] >= 0.0 && d.column_sums()[c] <= 1.0 + 1e-12);
                }
            }
            let by_cols: f64 = d.column_sums().iter().sum();
            let by_rows: f64 = d.row_sums().iter().sum();
            prop_assert!((by_cols - d.total()).abs() <= tol(by_cols).max(1e-15));
            prop_assert!((by_rows - d.total()).abs() <= tol(by_rows).max(1e-15));
        }
    }
}
