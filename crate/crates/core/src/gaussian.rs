//! Gaussian components, Gaussian-mixture parameter sets, and the numeric
//! primitives shared by every filter and fusion stage.
//!
//! All densities go through a Cholesky factor and are evaluated in the log
//! domain; a covariance that fails factorization gets one retry with a small
//! diagonal loading before the operation gives up.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Largest state dimension supported by the allocation-free density path.
pub const MAX_DIM: usize = 8;

/// Identifies where a mixture component came from. Flooding deduplicates on
/// these tags; ordering is used to break ties deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OriginTag {
    /// Built by the particle encoder from one extended measurement
    /// (`column` 0 is the missed-detection pseudo-measurement).
    Measurement {
        sensor: usize,
        step: usize,
        column: usize,
    },
    /// A component of a GM-PHD filter's mixture, numbered at broadcast time.
    Local {
        sensor: usize,
        step: usize,
        index: usize,
    },
    /// Output of a moment-matching merge.
    Merged {
        sensor: usize,
        step: usize,
        round: usize,
        index: usize,
    },
    /// A birth component appended by a GM-PHD prediction.
    Birth { step: usize, index: usize },
    Untagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub tag: OriginTag,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianComponent {
            weight,
            mean,
            cov,
            tag: OriginTag::Untagged,
        }
    }

    pub fn with_tag(mut self, tag: OriginTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A weighted Gaussian mixture given by its parameters `{(Ω, μ, Σ)}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GmParameterSet {
    pub components: Vec<GaussianComponent>,
}

impl GmParameterSet {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        GmParameterSet { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GaussianComponent> {
        self.components.iter()
    }

    pub fn push(&mut self, c: GaussianComponent) {
        self.components.push(c);
    }

    /// Multiplies every weight by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.components {
            c.weight *= factor;
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale(factor);
        self
    }

    /// Weighted mean of all component means (`Σ Ω μ / Σ Ω`), or `None` for a
    /// massless mixture.
    pub fn global_mean(&self) -> Option<DVector<f64>> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return None;
        }
        let mut acc = DVector::zeros(self.components[0].dim());
        for c in &self.components {
            acc.axpy(c.weight, &c.mean, 1.0);
        }
        Some(acc / total)
    }

    /// Prepares every component for repeated density evaluation.
    pub fn prepare(&self) -> Result<PreparedMixture> {
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                PreparedGaussian::new(&c.mean, &c.cov, &format!("component {i} ({:?})", c.tag))
                    .map(|g| (c.weight, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMixture { components })
    }
}

impl FromIterator<GaussianComponent> for GmParameterSet {
    fn from_iter<T: IntoIterator<Item = GaussianComponent>>(iter: T) -> Self {
        GmParameterSet {
            components: iter.into_iter().collect(),
        }
    }
}

/// Cholesky factorization with one regularized retry:
/// `Σ + εI`, `ε = 1e-9 · max(1, trace(Σ)/d)`.
pub fn regularized_cholesky(cov: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch);
    }
    let d = cov.nrows().max(1);
    let eps = 1e-9 * f64::max(1.0, cov.trace() / d as f64);
    let loaded = cov + DMatrix::identity(d, d) * eps;
    Cholesky::new(loaded).ok_or_else(|| Error::NumericDegeneracy(context.to_string()))
}

/// A Gaussian with its Cholesky factor and log normalizer cached, so that
/// density evaluation does not allocate.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major lower-triangular factor.
    lower: Vec<f64>,
    log_norm: f64,
}

impl PreparedGaussian {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>, context: &str) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim > MAX_DIM || cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::ContractViolation(format!(
                "{context}: mean of length {dim} with a {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let ch = regularized_cholesky(cov, context)?;
        let l = ch.l();
        let mut lower = vec![0.0; dim * dim];
        let mut log_det_half = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        if !log_det_half.is_finite() {
            return Err(Error::NumericDegeneracy(context.to_string()));
        }
        Ok(PreparedGaussian {
            dim,
            mean: mean.iter().copied().collect(),
            lower,
            log_norm: -0.5 * dim as f64 * (2.0 * PI).ln() - log_det_half,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(x-μ)ᵀ Σ⁻¹ (x-μ)` by forward substitution.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        let mut y = [0.0f64; MAX_DIM];
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= row[j] * y[j];
            }
            let v = s / row[i];
            y[i] = v;
            q += v * v;
        }
        q
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// A mixture whose components are all prepared for evaluation.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    components: Vec<(f64, PreparedGaussian)>,
}

impl PreparedMixture {
    pub fn density(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|(w, g)| if *w == 0.0 { 0.0 } else { w * g.density(x) })
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|(w, _)| w).sum()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// `N(x; μ, Σ)` of a component, ignoring its weight.
pub fn evaluate_gaussian(x: &[f64], gc: &GaussianComponent) -> Result<f64> {
    if x.len() != gc.dim() {
        return Err(Error::ContractViolation(format!(
            "point of dimension {} evaluated under a {}-dimensional Gaussian",
            x.len(),
            gc.dim()
        )));
    }
    let g = PreparedGaussian::new(&gc.mean, &gc.cov, &format!("{:?}", gc.tag))?;
    Ok(g.density(x))
}

/// `Σ_ℓ Ω_ℓ N(x; μ_ℓ, Σ_ℓ)`; zero for an empty mixture.
pub fn gm_density(x: &[f64], gm: &GmParameterSet) -> Result<f64> {
    gm.components
        .iter()
        .map(|c| evaluate_gaussian(x, c).map(|v| c.weight * v))
        .sum()
}

/// Squared Mahalanobis distance between two component means, measured in the
/// covariance of the heavier component (the first one on ties).
pub fn mahalanobis_sq(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ContractViolation("component dimensions differ".into()));
    }
    let reference = if b.weight > a.weight { b } else { a };
    let g = PreparedGaussian::new(&reference.mean, &reference.cov, &format!("{:?}", reference.tag))?;
    let other = if std::ptr::eq(reference, a) { b } else { a };
    Ok(g.mahalanobis_sq(other.mean.as_slice()))
}

/// Moment-matched merge of a group of components.
pub fn moment_match<'a, I>(group: I) -> (f64, DVector<f64>, DMatrix<f64>)
where
    I: IntoIterator<Item = &'a GaussianComponent> + Clone,
{
    let mut iter = group.clone().into_iter();
    let first = iter.next().expect("moment_match needs at least one component");
    let d = first.dim();
    let total: f64 = group.clone().into_iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return (total, first.mean.clone(), first.cov.clone());
    }
    let mut mean = DVector::zeros(d);
    for c in group.clone() {
        mean.axpy(c.weight / total, &c.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    for c in group {
        let diff = &c.mean - &mean;
        let w = c.weight / total;
        cov += (&c.cov + &diff * diff.transpose()) * w;
    }
    (total, mean, cov)
}

/// Greedy mixture merging: the heaviest remaining component becomes the pivot
/// and absorbs every remaining component whose mean is within `threshold`
/// Mahalanobis units of the pivot's mean, measured in the pivot's covariance
/// and in the candidate's own covariance. The two-sided gate keeps a broad
/// component from swallowing sharp ones and vice versa. Groups of two or more
/// get a tag from `fresh_tag`; singletons keep theirs. Output is ordered by
/// pivot.
pub fn merge_greedy(
    gm: &GmParameterSet,
    threshold: f64,
    mut fresh_tag: impl FnMut(usize) -> OriginTag,
) -> Result<GmParameterSet> {
    let gate = threshold * threshold;
    let mut order: Vec<usize> = (0..gm.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&gm.components[i], &gm.components[j]);
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.tag.cmp(&b.tag))
            .then_with(|| i.cmp(&j))
    });
    let mut used = vec![false; gm.len()];
    let mut out = Vec::new();
    for (pos, &p) in order.iter().enumerate() {
        if used[p] {
            continue;
        }
        used[p] = true;
        let pivot = &gm.components[p];
        let g = PreparedGaussian::new(&pivot.mean, &pivot.cov, &format!("merge pivot {:?}", pivot.tag))?;
        let mut group = vec![p];
        for &q in &order[pos + 1..] {
            if used[q] {
                continue;
            }
            let cand = &gm.components[q];
            if g.mahalanobis_sq(cand.mean.as_slice()) < gate {
                let own = PreparedGaussian::new(&cand.mean, &cand.cov, &format!("merge candidate {:?}", cand.tag))?;
                if own.mahalanobis_sq(pivot.mean.as_slice()) < gate {
                    used[q] = true;
                    group.push(q);
                }
            }
        }
        if group.len() == 1 {
            out.push(pivot.clone());
        } else {
            let (weight, mean, cov) = moment_match(group.iter().map(|&i| &gm.components[i]));
            out.push(GaussianComponent {
                weight,
                mean,
                cov,
                tag: fresh_tag(out.len()),
            });
        }
    }
    Ok(GmParameterSet::new(out))
}
