//! Network-wide arithmetic averaging of mixtures and cardinalities.
//!
//! Flooding spreads every sensor's components unchanged, so after enough
//! hops each sensor can form the exact average by dividing by the number of
//! contributing sensors. Average consensus instead mixes neighbor sets with
//! Metropolis weights and merges close components to keep the sets small.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{merge_greedy, GaussianComponent, GmParameterSet, OriginTag};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionScheme {
    Flood,
    Consensus,
}

/// Doubly stochastic fusion weights `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    alpha: DMatrix<f64>,
}

impl ConsensusWeights {
    pub fn len(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.nrows() == 0
    }

    pub fn get(&self, s: usize, r: usize) -> f64 {
        self.alpha[(s, r)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// One averaging step `α v`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|s| (0..self.len()).map(|r| self.alpha[(s, r)] * values[r]).sum())
            .collect()
    }
}

/// Metropolis weights `α_sr = 1 / (1 + max(|S_s|, |S_r|))` for neighbors and
/// the remainder on the diagonal.
pub fn metropolis_weights(topology: &Topology) -> Result<ConsensusWeights> {
    topology.require_connected()?;
    let n = topology.len();
    let mut alpha = DMatrix::zeros(n, n);
    for s in 0..n {
        let mut off = 0.0;
        for &r in topology.neighbors(s) {
            let a = 1.0 / (1.0 + topology.degree(s).max(topology.degree(r)) as f64);
            alpha[(s, r)] = a;
            off += a;
        }
        alpha[(s, s)] = 1.0 - off;
    }
    Ok(ConsensusWeights { alpha })
}

/// Something a flooding sensor can hold and forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FloodKey {
    /// The local cardinality of a sensor; also counts that sensor into the census.
    Cardinality(usize),
    Component(OriginTag),
}

/// Per-sensor flooding bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodState {
    sensor: usize,
    components: BTreeMap<OriginTag, GaussianComponent>,
    cardinalities: BTreeMap<usize, f64>,
    broadcast: BTreeSet<FloodKey>,
    /// Items each neighbor is known to hold, learned from its own broadcasts
    /// and from ours.
    neighbor_holds: BTreeMap<usize, BTreeSet<FloodKey>>,
}

impl FloodState {
    /// Starts from the local mixture and cardinality. Component tags must be
    /// unique network-wide.
    pub fn new(sensor: usize, local: &GmParameterSet, cardinality: f64) -> Result<Self> {
        let mut components = BTreeMap::new();
        for c in local.iter() {
            if components.insert(c.tag, c.clone()).is_some() {
                return Err(Error::ContractViolation(format!("duplicate origin tag {:?}", c.tag)));
            }
        }
        Ok(FloodState {
            sensor,
            components,
            cardinalities: BTreeMap::from([(sensor, cardinality)]),
            broadcast: BTreeSet::new(),
            neighbor_holds: BTreeMap::new(),
        })
    }

    pub fn sensor(&self) -> usize {
        self.sensor
    }

    /// Number of sensors whose information has arrived, including this one.
    pub fn census(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn has_broadcast(&self, key: &FloodKey) -> bool {
        self.broadcast.contains(key)
    }

    /// Held items in key order.
    pub fn keys(&self) -> impl Iterator<Item = FloodKey> + '_ {
        self.cardinalities
            .keys()
            .map(|&s| FloodKey::Cardinality(s))
            .chain(self.components.keys().map(|&t| FloodKey::Component(t)))
    }

    /// Mean of the cardinalities received so far.
    pub fn average_cardinality(&self) -> f64 {
        self.cardinalities.values().sum::<f64>() / self.census() as f64
    }
}

/// What one sensor sent in one flooding round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Broadcast {
    /// Number of mixture components in the message.
    pub components: usize,
    /// Whether the sensor transmitted at all.
    pub sent: bool,
}

#[derive(Debug, Clone)]
enum Item {
    Cardinality(usize, f64),
    Component(GaussianComponent),
}

/// One synchronous flooding round. Each sensor sends the items it has never
/// sent and that not every neighbor already holds, then merges what it hears
/// by origin tag.
pub fn flood_iterate(states: &mut [FloodState], topology: &Topology) -> Vec<Broadcast> {
    let n = states.len();
    assert_eq!(n, topology.len(), "one flood state per sensor");
    let mut outgoing: Vec<Vec<(FloodKey, Item)>> = Vec::with_capacity(n);
    for (s, st) in states.iter_mut().enumerate() {
        let empty = BTreeSet::new();
        let known_by_all = |key: &FloodKey| {
            topology
                .neighbors(s)
                .iter()
                .all(|r| st.neighbor_holds.get(r).unwrap_or(&empty).contains(key))
        };
        let mut msg = Vec::new();
        for key in st.keys().collect::<Vec<_>>() {
            if st.broadcast.contains(&key) || known_by_all(&key) {
                continue;
            }
            let item = match key {
                FloodKey::Cardinality(r) => Item::Cardinality(r, st.cardinalities[&r]),
                FloodKey::Component(t) => Item::Component(st.components[&t].clone()),
            };
            msg.push((key, item));
        }
        for (key, _) in &msg {
            st.broadcast.insert(*key);
            for &r in topology.neighbors(s) {
                st.neighbor_holds.entry(r).or_default().insert(*key);
            }
        }
        outgoing.push(msg);
    }
    for s in 0..n {
        for &r in topology.neighbors(s) {
            for (key, item) in &outgoing[r] {
                let st = &mut states[s];
                st.neighbor_holds.entry(r).or_default().insert(*key);
                match item {
                    Item::Cardinality(src, w) => {
                        st.cardinalities.entry(*src).or_insert(*w);
                    }
                    Item::Component(c) => {
                        st.components.entry(c.tag).or_insert_with(|| c.clone());
                    }
                }
            }
        }
    }
    outgoing
        .iter()
        .map(|msg| Broadcast {
            components: msg.iter().filter(|(k, _)| matches!(k, FloodKey::Component(_))).count(),
            sent: !msg.is_empty(),
        })
        .collect()
}

/// The held components, each scaled by `1 / census`, in tag order.
pub fn flood_finalize(state: &FloodState) -> GmParameterSet {
    let scale = 1.0 / state.census() as f64;
    state
        .components
        .values()
        .map(|c| GaussianComponent {
            weight: c.weight * scale,
            ..c.clone()
        })
        .collect()
}

/// One consensus round: every sensor forms the union of `α`-scaled copies of
/// its own and its neighbors' sets and merges components closer than
/// `merge_threshold`. Returns the new sets and the number of components each
/// sensor broadcast.
pub fn consensus_iterate(
    locals: &[GmParameterSet],
    alpha: &ConsensusWeights,
    topology: &Topology,
    merge_threshold: f64,
    step: usize,
    round: usize,
) -> Result<(Vec<GmParameterSet>, Vec<usize>)> {
    let sent: Vec<usize> = locals.iter().map(GmParameterSet::len).collect();
    let mut out = Vec::with_capacity(locals.len());
    for s in 0..locals.len() {
        let mut union = GmParameterSet::default();
        for r in std::iter::once(s).chain(topology.neighbors(s).iter().copied()) {
            let a = alpha.get(s, r);
            for c in locals[r].iter() {
                union.push(GaussianComponent {
                    weight: a * c.weight,
                    ..c.clone()
                });
            }
        }
        let merged = merge_greedy(&union, merge_threshold, |index| OriginTag::Merged {
            sensor: s,
            step,
            round,
            index,
        })?;
        out.push(merged);
    }
    Ok((out, sent))
}

/// Averages one scalar per sensor over `iterations` rounds: flooding gives
/// the mean over the sensors within `iterations` hops, consensus applies `α`
/// that many times.
pub fn scalar_average(
    values: &[f64],
    scheme: FusionScheme,
    topology: &Topology,
    alpha: &ConsensusWeights,
    iterations: usize,
) -> Vec<f64> {
    match scheme {
        FusionScheme::Flood => (0..values.len())
            .map(|s| {
                let reach: Vec<usize> = topology
                    .hop_distances(s)
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.is_some_and(|d| d <= iterations))
                    .map(|(r, _)| r)
                    .collect();
                reach.iter().map(|&r| values[r]).sum::<f64>() / reach.len() as f64
            })
            .collect(),
        FusionScheme::Consensus => {
            let mut v = values.to_vec();
            for _ in 0..iterations {
                v = alpha.apply(&v);
            }
            v
        }
    }
}
