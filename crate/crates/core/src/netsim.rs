//! Synchronous network simulation of one filtering step, communication cost
//! accounting and the analytic pipelining model.
//!
//! A time step runs in three phases. Every sensor first runs its local filter
//! and produces a mixture plus a cardinality. Then `I` lockstep fusion rounds
//! exchange mixtures and cardinalities. Finally every sensor decodes the fused
//! result back into its local representation and extracts estimates.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::decode::{estimate_states, is_reweight, scale_cardinality, ss_sample_count, Estimates};
use crate::encode::{encode, EncodeSettings};
use crate::error::{Error, Result};
use crate::fusion::{
    consensus_iterate, flood_finalize, flood_iterate, metropolis_weights, ConsensusWeights, FloodState,
    FusionScheme,
};
use crate::gaussian::{GaussianComponent, GmParameterSet, OriginTag};
use crate::gm_phd::{gm_predict, gm_update, reduce, GmFilterState, GmReduction};
use crate::models::{BirthModel, FilterKind, MotionModel, SensorNode};
use crate::particle_phd::{predict, resample_systematic, update, ParticleBudget, Proposals, ResampledSet};
use crate::rng::SimRng;
use crate::topology::Topology;
use crate::types::{Measurement, WeightedParticleSet};

/// Reals needed to broadcast `n` components of dimension `d` plus one
/// cardinality value: `n (1 + d + d(d+1)/2) + 1`.
pub fn comm_cost(n: usize, d: usize) -> u64 {
    (n * (1 + d + d * (d + 1) / 2) + 1) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Reweight the local resampled particles.
    Is,
    /// Draw fresh particles from the fused mixture.
    Ss,
}

/// How (and whether) sensors cooperate within a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSettings {
    /// `None` runs every sensor on its own.
    pub scheme: Option<FusionScheme>,
    pub iterations: usize,
    pub decoder: DecoderKind,
    pub consensus_merge_threshold: f64,
}

impl FusionSettings {
    pub fn noncooperative() -> Self {
        FusionSettings {
            scheme: None,
            iterations: 0,
            decoder: DecoderKind::Is,
            consensus_merge_threshold: 2.0,
        }
    }

    fn active(&self) -> Option<FusionScheme> {
        self.scheme.filter(|_| self.iterations > 0)
    }
}

/// Filter parameters shared by all sensors.
#[derive(Debug, Clone)]
pub struct FilterSettings {
    pub motion: MotionModel,
    pub birth: BirthModel,
    /// Newborn particles per step, `L`.
    pub newborn: usize,
    pub budget: ParticleBudget,
    pub encode: EncodeSettings,
    pub gm_reduction: GmReduction,
}

/// What a sensor carries from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorFilter {
    Particle(WeightedParticleSet),
    GaussianMixture(GmFilterState),
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub sensors: Vec<SensorNode>,
    pub topology: Topology,
    pub alpha: ConsensusWeights,
    pub filters: Vec<SensorFilter>,
}

impl NetworkState {
    pub fn new(sensors: Vec<SensorNode>, topology: Topology, settings: &FilterSettings) -> Result<Self> {
        if sensors.len() != topology.len() {
            return Err(Error::config(
                "topology",
                format!("{} sensors but {} topology nodes", sensors.len(), topology.len()),
            ));
        }
        let alpha = metropolis_weights(&topology)?;
        let dim = settings.motion.dim();
        let filters = sensors
            .iter()
            .map(|s| match s.filter {
                FilterKind::Particle => SensorFilter::Particle(WeightedParticleSet::empty(dim)),
                FilterKind::GaussianMixture => SensorFilter::GaussianMixture(GmFilterState::new(settings.gm_reduction)),
            })
            .collect();
        Ok(NetworkState {
            sensors,
            topology,
            alpha,
            filters,
        })
    }
}

/// Why a sensor did not use its configured decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fallback {
    /// Reweighting gave zero total weight; sampled from the fused mixture instead.
    SampledFusedMixture,
    /// The fused mixture had no mass; kept the local particles.
    KeptLocalParticles,
}

/// Per-sensor record of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub local_cardinality: f64,
    pub fused_cardinality: f64,
    pub estimate_count: usize,
    pub local_components: usize,
    pub fused_components: usize,
    /// Reals broadcast by this sensor over all fusion rounds of the step.
    pub broadcast_reals: u64,
    /// Reals broadcast in each round.
    pub round_reals: Vec<u64>,
    pub fallback: Option<Fallback>,
    pub clamped_estimates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimates: Vec<Estimates>,
    pub logs: Vec<SensorLog>,
    /// Fused mixture of each sensor, before decoding.
    pub fused: Vec<GmParameterSet>,
}

/// Per-sensor random streams for one run.
pub struct SensorStreams {
    pub filter: Vec<SimRng>,
    pub decode: Vec<SimRng>,
}

enum Local {
    Particle {
        resampled: Option<ResampledSet>,
    },
    Gm {
        state: GmFilterState,
    },
}

struct LocalResult {
    gm: GmParameterSet,
    cardinality: f64,
    kind: Local,
}

fn local_particle_step(
    prev: &WeightedParticleSet,
    z: &[Measurement],
    sensor: &SensorNode,
    settings: &FilterSettings,
    step: usize,
    rng: &mut SimRng,
) -> Result<LocalResult> {
    let predicted = predict(prev, z, &settings.motion, &settings.birth, settings.newborn, Proposals::default(), rng)?;
    let decomp = update(&predicted, z, sensor)?;
    if !(decomp.total() > 0.0) {
        debug!("sensor {} step {step}: empty posterior", sensor.id);
        return Ok(LocalResult {
            gm: GmParameterSet::default(),
            cardinality: 0.0,
            kind: Local::Particle { resampled: None },
        });
    }
    let resampled = resample_systematic(&decomp, &predicted, &settings.budget, rng)?;
    let (gm, cardinality) = encode(&decomp, &predicted, &settings.encode, sensor.id, step)?;
    Ok(LocalResult {
        gm,
        cardinality,
        kind: Local::Particle {
            resampled: Some(resampled),
        },
    })
}

fn local_gm_step(
    prev: &GmFilterState,
    z: &[Measurement],
    sensor: &SensorNode,
    settings: &FilterSettings,
    step: usize,
) -> Result<LocalResult> {
    let predicted = gm_predict(prev, &settings.motion, &settings.birth, step);
    let updated = gm_update(&predicted, z, sensor, step)?;
    // fresh, network-unique tags for what gets broadcast
    let gm = relabel_local(&updated.mixture, sensor.id, step);
    Ok(LocalResult {
        cardinality: gm.total_weight(),
        gm,
        kind: Local::Gm { state: updated },
    })
}

/// Runs one full time step (local filtering, `I` fusion rounds, decoding and
/// estimation) for every sensor.
pub fn run_timestep(
    net: &mut NetworkState,
    step: usize,
    measurements: &[Vec<Measurement>],
    filter: &FilterSettings,
    fusion: &FusionSettings,
    streams: &mut SensorStreams,
) -> Result<StepOutput> {
    let n = net.sensors.len();
    if measurements.len() != n {
        return Err(Error::ContractViolation("one measurement list per sensor expected".into()));
    }
    let dim = filter.motion.dim();

    let mut locals = Vec::with_capacity(n);
    for s in 0..n {
        let sensor = &net.sensors[s];
        let z = &measurements[s];
        let r = match &net.filters[s] {
            SensorFilter::Particle(prev) => local_particle_step(prev, z, sensor, filter, step, &mut streams.filter[s]),
            SensorFilter::GaussianMixture(prev) => local_gm_step(prev, z, sensor, filter, step),
        };
        locals.push(r.map_err(|e| e.at_sensor(s, step))?);
    }

    let mut round_reals = vec![Vec::new(); n];
    let (fused, fused_w): (Vec<GmParameterSet>, Vec<f64>) = match fusion.active() {
        None => locals.iter().map(|l| (l.gm.clone(), l.cardinality)).unzip(),
        Some(FusionScheme::Flood) => {
            let mut states = locals
                .iter()
                .enumerate()
                .map(|(s, l)| FloodState::new(s, &l.gm, l.cardinality))
                .collect::<Result<Vec<_>>>()?;
            for _ in 0..fusion.iterations {
                let sent = flood_iterate(&mut states, &net.topology);
                for (s, b) in sent.iter().enumerate() {
                    round_reals[s].push(if b.sent { comm_cost(b.components, dim) } else { 0 });
                }
            }
            states.iter().map(|st| (flood_finalize(st), st.average_cardinality())).unzip()
        }
        Some(FusionScheme::Consensus) => {
            let mut sets: Vec<GmParameterSet> = locals.iter().map(|l| l.gm.clone()).collect();
            let mut w: Vec<f64> = locals.iter().map(|l| l.cardinality).collect();
            for round in 1..=fusion.iterations {
                let (next, sent) = consensus_iterate(
                    &sets,
                    &net.alpha,
                    &net.topology,
                    fusion.consensus_merge_threshold,
                    step,
                    round,
                )?;
                for (s, &c) in sent.iter().enumerate() {
                    round_reals[s].push(comm_cost(c, dim));
                }
                sets = next;
                w = net.alpha.apply(&w);
            }
            (sets, w)
        }
    };
    let cooperative = fusion.active().is_some();

    let mut estimates = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for (s, local) in locals.into_iter().enumerate() {
        let target = fused_w[s];
        let mixture = &fused[s];
        let mut fallback = None;
        let next = match local.kind {
            Local::Particle { resampled } => {
                let set = if !cooperative {
                    resampled.map(|r| r.to_weighted())
                } else {
                    decode_particles(
                        resampled.as_ref(),
                        mixture,
                        local.cardinality,
                        target,
                        fusion.decoder,
                        &filter.budget,
                        &mut streams.decode[s],
                        &mut fallback,
                    )
                    .map_err(|e| e.at_sensor(s, step))?
                };
                SensorFilter::Particle(set.unwrap_or_else(|| WeightedParticleSet::empty(dim)))
            }
            Local::Gm { state } => {
                if !cooperative {
                    SensorFilter::GaussianMixture(state)
                } else {
                    let total = mixture.total_weight();
                    let scaled = if total > 0.0 {
                        mixture.clone().scaled(target / total)
                    } else {
                        fallback = Some(Fallback::KeptLocalParticles);
                        let local_total = state.mixture.total_weight();
                        let f = if local_total > 0.0 { target / local_total } else { 0.0 };
                        state.mixture.clone().scaled(f)
                    };
                    let mixture = reduce(&scaled, &state.reduction, s, step).map_err(|e| e.at_sensor(s, step))?;
                    SensorFilter::GaussianMixture(GmFilterState {
                        mixture,
                        reduction: state.reduction,
                    })
                }
            }
        };
        net.filters[s] = next;
        let est = estimate_states(mixture, target);
        logs.push(SensorLog {
            local_cardinality: local.cardinality,
            fused_cardinality: target,
            estimate_count: est.states.len(),
            local_components: local.gm.len(),
            fused_components: mixture.len(),
            broadcast_reals: round_reals[s].iter().sum(),
            round_reals: std::mem::take(&mut round_reals[s]),
            fallback,
            clamped_estimates: est.clamped(),
        });
        estimates.push(est);
    }
    Ok(StepOutput { estimates, logs, fused })
}

/// Maps the fused result back to particles. `None` means an empty set.
#[allow(clippy::too_many_arguments)]
fn decode_particles(
    resampled: Option<&ResampledSet>,
    fused: &GmParameterSet,
    local_total: f64,
    target: f64,
    decoder: DecoderKind,
    budget: &ParticleBudget,
    rng: &mut SimRng,
    fallback: &mut Option<Fallback>,
) -> Result<Option<WeightedParticleSet>> {
    if !(target > 0.0) {
        return Ok(None);
    }
    let fused_mass = fused.total_weight();
    let sample = |rng: &mut SimRng| -> Result<WeightedParticleSet> {
        let set = ss_sample_count(fused, budget.count(target), rng)?;
        let mut w = set.weights().to_vec();
        scale_cardinality(&mut w, target)?;
        WeightedParticleSet::from_parts(set.dim(), set.states().to_vec(), w)
    };
    let keep_local = |r: &ResampledSet| -> Result<WeightedParticleSet> {
        let mut w = vec![r.uniform_weight(); r.len()];
        scale_cardinality(&mut w, target)?;
        Ok(r.with_weights(w))
    };
    match (decoder, resampled) {
        (DecoderKind::Is, Some(r)) => {
            let mut w = is_reweight(r, fused, local_total)?;
            match scale_cardinality(&mut w, target) {
                Ok(_) => Ok(Some(r.with_weights(w))),
                Err(Error::DegenerateFusion(_)) if fused_mass > 0.0 => {
                    *fallback = Some(Fallback::SampledFusedMixture);
                    sample(rng).map(Some)
                }
                Err(Error::DegenerateFusion(_)) => {
                    *fallback = Some(Fallback::KeptLocalParticles);
                    keep_local(r).map(Some)
                }
                Err(e) => Err(e),
            }
        }
        (DecoderKind::Ss, Some(r)) if !(fused_mass > 0.0) => {
            *fallback = Some(Fallback::KeptLocalParticles);
            keep_local(r).map(Some)
        }
        (DecoderKind::Ss, _) if fused_mass > 0.0 => sample(rng).map(Some),
        (DecoderKind::Is, None) if fused_mass > 0.0 => {
            *fallback = Some(Fallback::SampledFusedMixture);
            sample(rng).map(Some)
        }
        _ => Ok(None),
    }
}

/// Timing parameters of the pipelined schedule, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineTiming {
    /// Time between scans, `Δ`.
    pub delta: f64,
    /// Filtering time that cannot overlap with fusion.
    pub t_filt: f64,
    /// Interfacing time before and after the fusion rounds.
    pub t_inter: f64,
    /// Duration of one fusion round, `τ`.
    pub tau: f64,
}

impl Default for PipelineTiming {
    fn default() -> Self {
        PipelineTiming {
            delta: 1.0,
            t_filt: 0.1,
            t_inter: 0.1,
            tau: 0.05,
        }
    }
}

impl PipelineTiming {
    /// Derives `t_filt` (operations 3-4) and `t_inter` (operations 8-10 and
    /// 13-15) from a duration table.
    pub fn from_durations(durations: &OpDurations, delta: f64, tau: f64) -> Self {
        let d = |ops: &[usize]| ops.iter().map(|&o| durations.0[o - 1]).sum::<f64>();
        PipelineTiming {
            delta,
            t_filt: d(&[3, 4]),
            t_inter: d(&[8, 9, 10, 13, 14, 15]),
            tau,
        }
    }
}

/// `⌊(Δ − t_filt − t_inter) / τ⌋`, floored at zero.
pub fn max_iterations(t: &PipelineTiming) -> Result<usize> {
    if !(t.tau > 0.0) {
        return Err(Error::config("pipeline.tau", "must be positive"));
    }
    if [t.delta, t.t_filt, t.t_inter].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::config("pipeline", "durations must be nonnegative"));
    }
    let budget = t.delta - t.t_filt - t.t_inter;
    if budget <= 0.0 {
        return Ok(0);
    }
    // decimal timings such as 0.4 / 0.1 land a few ulps below the integer
    let q = budget / t.tau;
    let nearest = q.round();
    let rounds = if (q - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        q.floor()
    };
    Ok(rounds as usize)
}

/// Durations of the seventeen operations of one filtering step, indexed
/// from operation 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpDurations(pub [f64; 17]);

/// Predecessors of operation `op` (1-based) as `(same_step, op)` pairs;
/// `same_step == false` refers to the previous step.
fn dependencies(op: usize) -> &'static [(bool, usize)] {
    match op {
        1 => &[(false, 7)],
        2 => &[(true, 1)],
        3 => &[(true, 2), (false, 15)],
        4 => &[(true, 3)],
        5 => &[(true, 4)],
        6 => &[(true, 5)],
        7 => &[(true, 6)],
        8 => &[(true, 4)],
        9 => &[(true, 8)],
        10 => &[(true, 9)],
        11 => &[(true, 10)],
        12 => &[(true, 6)],
        13 => &[(true, 11), (true, 7)],
        14 => &[(true, 13)],
        15 => &[(true, 14), (true, 12)],
        16 => &[(true, 12)],
        17 => &[(true, 16), (true, 11)],
        _ => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledOp {
    /// 0-based step.
    pub step: usize,
    /// 1-based operation number.
    pub op: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub ops: Vec<ScheduledOp>,
    pub makespan: f64,
    /// Operations on a longest path, in execution order.
    pub critical_path: Vec<(usize, usize)>,
}

fn schedule_with(
    durations: &OpDurations,
    steps: usize,
    preds: impl Fn(usize, usize) -> Vec<(usize, usize)>,
) -> Result<Schedule> {
    if durations.0.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::config("pipeline.durations", "durations must be nonnegative"));
    }
    let mut ops = Vec::with_capacity(steps * 17);
    let mut end = vec![[0.0f64; 17]; steps];
    let mut via: Vec<[Option<(usize, usize)>; 17]> = vec![[None; 17]; steps];
    // operations are listed in an order that respects every dependency
    for k in 0..steps {
        for op in 1..=17 {
            let mut start = 0.0;
            for (pk, pop) in preds(k, op) {
                if end[pk][pop - 1] > start || via[k][op - 1].is_none() && end[pk][pop - 1] >= start {
                    start = end[pk][pop - 1];
                    via[k][op - 1] = Some((pk, pop));
                }
            }
            let e = start + durations.0[op - 1];
            end[k][op - 1] = e;
            ops.push(ScheduledOp { step: k, op, start, end: e });
        }
    }
    let (mut cur, makespan) = ops
        .iter()
        .map(|o| ((o.step, o.op), o.end))
        .fold((None, 0.0), |(best, m), (id, e)| if best.is_none() || e > m { (Some(id), e) } else { (best, m) });
    let mut critical_path = Vec::new();
    while let Some((k, op)) = cur {
        critical_path.push((k, op));
        cur = via[k][op - 1];
    }
    critical_path.reverse();
    Ok(Schedule {
        ops,
        makespan,
        critical_path,
    })
}

/// Longest-path schedule that overlaps filtering and fusion as far as the
/// data dependencies of the step allow.
pub fn pipeline_schedule(durations: &OpDurations, steps: usize) -> Result<Schedule> {
    schedule_with(durations, steps, |k, op| {
        dependencies(op)
            .iter()
            .filter_map(|&(same, p)| if same { Some((k, p)) } else { k.checked_sub(1).map(|pk| (pk, p)) })
            .collect()
    })
}

/// Every operation waits for the previous one; no overlap at all.
pub fn serial_schedule(durations: &OpDurations, steps: usize) -> Result<Schedule> {
    schedule_with(durations, steps, |k, op| {
        if op > 1 {
            vec![(k, op - 1)]
        } else if k > 0 {
            vec![(k - 1, 17)]
        } else {
            Vec::new()
        }
    })
}

/// Tags of a mixture must be unique before flooding; this relabels a mixture
/// as local components of `sensor`.
pub fn relabel_local(gm: &GmParameterSet, sensor: usize, step: usize) -> GmParameterSet {
    gm.iter()
        .enumerate()
        .map(|(index, c)| GaussianComponent {
            tag: OriginTag::Local { sensor, step, index },
            ..c.clone()
        })
        .collect()
}
