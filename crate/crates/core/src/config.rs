//! Scenario files.
//!
//! A scenario is a TOML document; see `configs/reference.toml` for the full
//! schema. Unknown keys are rejected. [`parse_config`] validates everything
//! and [`ScenarioConfig::build`] turns the file into ready-to-run models.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encode::{EncodeSettings, SelectionMode};
use crate::error::{Error, Result};
use crate::gm_phd::GmReduction;
use crate::models::{BirthComponent, BirthModel, FilterKind, MotionModel, ScriptedTarget, SensorKind, SensorNode, TruthScript};
use crate::netsim::{FilterSettings, PipelineTiming};
use crate::particle_phd::ParticleBudget;
use crate::topology::Topology;

pub const REFERENCE: &str = include_str!("../configs/reference.toml");
pub const HETEROGENEOUS: &str = include_str!("../configs/heterogeneous.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub simulation: SimulationSection,
    pub roi: RoiSection,
    pub motion: MotionSection,
    pub birth: BirthSection,
    pub truth: TruthSection,
    pub sensor_models: SensorModelsSection,
    pub sensors: Vec<SensorEntry>,
    pub topology: TopologySection,
    pub particle_filter: ParticleFilterSection,
    pub gm_filter: GmFilterSection,
    pub fusion: FusionSection,
    pub ospa: OspaSection,
    pub pipeline: PipelineTiming,
    pub monte_carlo: MonteCarloSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub process_noise_std: f64,
    pub survival_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSection {
    pub components: Vec<BirthEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthEntry {
    pub weight: f64,
    pub mean: [f64; 4],
    pub covariance_diag: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    /// Seed of the trajectory noise; shared by every Monte-Carlo run.
    pub seed: u64,
    pub process_noise_std: f64,
    pub targets: Vec<TargetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub birth: usize,
    pub death: usize,
    pub initial: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModelsSection {
    pub linear: LinearModel,
    pub range_bearing: RangeBearingModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub filter: FilterKind,
    pub noise_std: f64,
    pub detection_probability: f64,
    pub clutter_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBearingModel {
    pub filter: FilterKind,
    pub range_std: f64,
    pub bearing_std: f64,
    pub detection_peak: f64,
    pub detection_scale: f64,
    pub max_range: f64,
    pub clutter_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorEntry {
    pub position: [f64; 2],
    pub kind: SensorKind,
    /// Overrides the filter kind of the sensor model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterKind>,
}

/// Either `grid = [rows, cols]` or an explicit `edges` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleFilterSection {
    pub particles_per_target: usize,
    pub newborn_particles: usize,
    pub floor_particles: usize,
    pub floor_below_cardinality: f64,
    pub significance_threshold: f64,
    pub selection: SelectionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmFilterSection {
    pub prune_threshold: f64,
    pub merge_threshold: f64,
    pub max_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    /// Default number of fusion rounds per step.
    pub iterations: usize,
    /// Mahalanobis gate for merging during consensus.
    pub consensus_merge_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OspaSection {
    pub cutoff: f64,
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub runs: usize,
    pub seed: u64,
}

/// A validated scenario with its models constructed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub sensors: Vec<SensorNode>,
    pub topology: Topology,
    pub filter: FilterSettings,
    pub truth_script: TruthScript,
    pub truth_motion: MotionModel,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be nonnegative, got {v}")))
    }
}

fn probability(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
    }
}

impl ScenarioConfig {
    /// Parses TOML text; validation happens in [`ScenarioConfig::build`].
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("scenario", e.to_string()))
    }

    pub fn reference() -> Self {
        Self::from_toml(REFERENCE).expect("shipped reference scenario parses")
    }

    pub fn heterogeneous() -> Self {
        Self::from_toml(HETEROGENEOUS).expect("shipped heterogeneous scenario parses")
    }

    pub fn topology(&self) -> Result<Topology> {
        let n = self.sensors.len();
        let t = match (&self.topology.grid, &self.topology.edges) {
            (Some([r, c]), None) => {
                if r * c != n {
                    return Err(Error::config(
                        "topology.grid",
                        format!("{r} x {c} grid does not match {n} sensors"),
                    ));
                }
                Topology::grid(*r, *c)
            }
            (None, Some(edges)) => {
                let edges: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                Topology::from_edges(n, &edges)?
            }
            _ => return Err(Error::config("topology", "give exactly one of `grid` or `edges`")),
        };
        t.require_connected()?;
        Ok(t)
    }

    pub fn build(&self) -> Result<Scenario> {
        let sim = &self.simulation;
        if sim.steps == 0 {
            return Err(Error::config("simulation.steps", "must be at least 1"));
        }
        positive("simulation.dt", sim.dt)?;
        let roi = &self.roi;
        if !(roi.x[0] < roi.x[1] && roi.y[0] < roi.y[1]) {
            return Err(Error::config("roi", "bounds must be increasing"));
        }
        let motion = MotionModel::constant_velocity(sim.dt, self.motion.process_noise_std, self.motion.survival_probability)?;
        let truth_motion = MotionModel::constant_velocity(sim.dt, self.truth.process_noise_std, 1.0)
            .map_err(|_| Error::config("truth.process_noise_std", "must be nonnegative"))?;

        if self.birth.components.is_empty() {
            return Err(Error::config("birth.components", "at least one component is required"));
        }
        let birth = BirthModel::new(
            self.birth
                .components
                .iter()
                .map(|b| BirthComponent {
                    weight: b.weight,
                    mean: DVector::from_row_slice(&b.mean),
                    cov: DMatrix::from_diagonal(&DVector::from_row_slice(&b.covariance_diag)),
                })
                .collect(),
        )?;
        if !(birth.total_mass() > 0.0) {
            return Err(Error::config("birth.components", "total birth weight must be positive"));
        }

        let truth_script = TruthScript {
            steps: sim.steps,
            dt: sim.dt,
            targets: self
                .truth
                .targets
                .iter()
                .map(|t| ScriptedTarget {
                    birth: t.birth,
                    death: t.death,
                    initial: DVector::from_row_slice(&t.initial),
                })
                .collect(),
        };
        truth_script.validate()?;

        let lin = &self.sensor_models.linear;
        positive("sensor_models.linear.noise_std", lin.noise_std)?;
        probability("sensor_models.linear.detection_probability", lin.detection_probability)?;
        nonnegative("sensor_models.linear.clutter_rate", lin.clutter_rate)?;
        let rb = &self.sensor_models.range_bearing;
        positive("sensor_models.range_bearing.range_std", rb.range_std)?;
        positive("sensor_models.range_bearing.bearing_std", rb.bearing_std)?;
        probability("sensor_models.range_bearing.detection_peak", rb.detection_peak)?;
        positive("sensor_models.range_bearing.detection_scale", rb.detection_scale)?;
        positive("sensor_models.range_bearing.max_range", rb.max_range)?;
        nonnegative("sensor_models.range_bearing.clutter_rate", rb.clutter_rate)?;

        if self.sensors.is_empty() {
            return Err(Error::config("sensors", "at least one sensor is required"));
        }
        let sensors: Vec<SensorNode> = self
            .sensors
            .iter()
            .enumerate()
            .map(|(id, s)| match s.kind {
                SensorKind::Linear => SensorNode::linear(
                    id,
                    s.position,
                    s.filter.unwrap_or(lin.filter),
                    lin.noise_std,
                    lin.detection_probability,
                    (roi.x, roi.y),
                    lin.clutter_rate,
                ),
                SensorKind::RangeBearing => SensorNode::range_bearing(
                    id,
                    s.position,
                    s.filter.unwrap_or(rb.filter),
                    rb.range_std,
                    rb.bearing_std,
                    rb.detection_peak,
                    rb.detection_scale,
                    rb.max_range,
                    rb.clutter_rate,
                ),
            })
            .collect();
        for s in &sensors {
            s.validate()?;
            if s.filter == FilterKind::GaussianMixture && s.kind != SensorKind::Linear {
                return Err(Error::config(
                    format!("sensors[{}].filter", s.id),
                    "the GM-PHD filter needs a linear sensor",
                ));
            }
        }
        let topology = self.topology()?;

        let pf = &self.particle_filter;
        if pf.particles_per_target == 0 {
            return Err(Error::config("particle_filter.particles_per_target", "must be at least 1"));
        }
        if pf.newborn_particles == 0 {
            return Err(Error::config("particle_filter.newborn_particles", "must be at least 1"));
        }
        nonnegative("particle_filter.floor_below_cardinality", pf.floor_below_cardinality)?;
        nonnegative("particle_filter.significance_threshold", pf.significance_threshold)?;
        let gm = &self.gm_filter;
        nonnegative("gm_filter.prune_threshold", gm.prune_threshold)?;
        nonnegative("gm_filter.merge_threshold", gm.merge_threshold)?;
        if gm.max_components == 0 {
            return Err(Error::config("gm_filter.max_components", "must be at least 1"));
        }
        nonnegative("fusion.consensus_merge_threshold", self.fusion.consensus_merge_threshold)?;
        positive("ospa.cutoff", self.ospa.cutoff)?;
        if !(self.ospa.order >= 1.0) {
            return Err(Error::config("ospa.order", "must be at least 1"));
        }
        crate::netsim::max_iterations(&self.pipeline)?;

        let filter = FilterSettings {
            motion,
            birth,
            newborn: pf.newborn_particles,
            budget: ParticleBudget {
                per_target: pf.particles_per_target,
                floor: pf.floor_particles,
                threshold: pf.floor_below_cardinality,
            },
            encode: EncodeSettings {
                threshold: pf.significance_threshold,
                mode: pf.selection,
            },
            gm_reduction: GmReduction {
                prune_threshold: gm.prune_threshold,
                merge_threshold: gm.merge_threshold,
                max_components: gm.max_components,
            },
        };
        Ok(Scenario {
            config: self.clone(),
            sensors,
            topology,
            filter,
            truth_script,
            truth_motion,
        })
    }
}

/// Reads and fully validates a scenario file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    cfg.build()?;
    Ok(cfg)
}
