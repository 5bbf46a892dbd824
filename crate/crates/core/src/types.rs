use nalgebra::DVector;

use crate::error::{Error, Result};

/// A single-target kinematic state. The reference scenario uses
/// `[x, vx, y, vy]` (meters, meters/second); other dimensions work as long
/// as positions stay at indices [`POS_X`] and [`POS_Y`].
pub type TargetState = DVector<f64>;

/// Index of the x position inside a state vector.
pub const POS_X: usize = 0;
/// Index of the y position inside a state vector.
pub const POS_Y: usize = 2;

/// The planar position of a state.
pub fn position(x: &[f64]) -> [f64; 2] {
    [x[POS_X], x[POS_Y]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    /// Noisy `(x, y)` position in meters.
    Cartesian,
    /// Range in meters and bearing in radians, measured clockwise from +y.
    RangeBearing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub values: [f64; 2],
}

impl Measurement {
    pub fn cartesian(x: f64, y: f64) -> Self {
        Measurement {
            kind: MeasurementKind::Cartesian,
            values: [x, y],
        }
    }

    /// Builds a range-bearing measurement, folding a negative range onto the
    /// opposite bearing and wrapping the bearing into (-pi, pi].
    pub fn range_bearing(range: f64, bearing: f64) -> Self {
        let (range, bearing) = if range < 0.0 {
            (-range, bearing + std::f64::consts::PI)
        } else {
            (range, bearing)
        };
        Measurement {
            kind: MeasurementKind::RangeBearing,
            values: [range, wrap_angle(bearing)],
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// One element of the extended measurement set `{z0} ∪ Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtendedMeasurement {
    /// The missed-detection pseudo-measurement z0.
    Missed,
    /// Index into the real measurement list.
    Real(usize),
}

impl ExtendedMeasurement {
    /// Column of this element in a weight decomposition (z0 is column 0).
    pub fn column(self) -> usize {
        match self {
            ExtendedMeasurement::Missed => 0,
            ExtendedMeasurement::Real(i) => i + 1,
        }
    }

    pub fn from_column(col: usize) -> Self {
        if col == 0 {
            ExtendedMeasurement::Missed
        } else {
            ExtendedMeasurement::Real(col - 1)
        }
    }
}

/// The real measurements of one scan plus the implicit pseudo-measurement z0.
#[derive(Debug, Clone, Copy)]
pub struct ExtendedMeasurementSet<'a> {
    pub real: &'a [Measurement],
}

impl<'a> ExtendedMeasurementSet<'a> {
    pub fn new(real: &'a [Measurement]) -> Self {
        ExtendedMeasurementSet { real }
    }

    /// `M + 1`; z0 is always present.
    pub fn len(&self) -> usize {
        self.real.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = ExtendedMeasurement> + '_ {
        std::iter::once(ExtendedMeasurement::Missed)
            .chain((0..self.real.len()).map(ExtendedMeasurement::Real))
    }
}

/// Particles with nonnegative weights. States are stored row-major in one
/// flat buffer of `len() * dim()` values; the cached weight sum estimates the
/// expected number of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedParticleSet {
    dim: usize,
    states: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl WeightedParticleSet {
    pub fn empty(dim: usize) -> Self {
        WeightedParticleSet {
            dim,
            states: Vec::new(),
            weights: Vec::new(),
            total: 0.0,
        }
    }

    pub fn from_parts(dim: usize, states: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.len() != weights.len() * dim {
            return Err(Error::ContractViolation(format!(
                "particle buffer of {} values does not hold {} states of dimension {}",
                states.len(),
                weights.len(),
                dim
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "particle weight {w} is not a finite nonnegative number"
            )));
        }
        let total = weights.iter().sum();
        Ok(WeightedParticleSet {
            dim,
            states,
            weights,
            total,
        })
    }

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

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cached `W = Σ_j w_j`.
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn push(&mut self, state: &[f64], weight: f64) {
        assert_eq!(state.len(), self.dim, "state dimension mismatch");
        assert!(weight >= 0.0, "negative particle weight");
        self.states.extend_from_slice(state);
        self.weights.push(weight);
        self.total += weight;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.states
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn negative_range_is_folded() {
        let z = Measurement::range_bearing(-5.0, 0.0);
        assert_eq!(z.values[0], 5.0);
        assert!((z.values[1] - PI).abs() < 1e-15);
    }

    #[test]
    fn extended_set_always_contains_missed_column() {
        let none: [Measurement; 0] = [];
        let ext = ExtendedMeasurementSet::new(&none);
        assert_eq!(ext.len(), 1);
        assert_eq!(ext.iter().collect::<Vec<_>>(), vec![ExtendedMeasurement::Missed]);
        for col in 0..4 {
            assert_eq!(ExtendedMeasurement::from_column(col).column(), col);
        }
    }

    #[test]
    fn particle_set_rejects_negative_weights() {
        assert!(WeightedParticleSet::from_parts(1, vec![0.0, 1.0], vec![0.5, -0.1]).is_err());
        assert!(WeightedParticleSet::from_parts(2, vec![0.0, 1.0, 2.0], vec![0.5]).is_err());
        let set = WeightedParticleSet::from_parts(1, vec![0.0, 1.0], vec![0.5, 0.25]).unwrap();
        assert_eq!(set.total_weight(), 0.75);
        assert_eq!(set.state(1), &[1.0]);
    }
}
