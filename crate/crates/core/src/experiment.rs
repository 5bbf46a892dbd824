//! Monte-Carlo driver and CSV export.
//!
//! Every run index gets its own measurement realization, generated once and
//! shared by all variants of that run, so variant comparisons are paired.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use log::{debug, trace};
use rayon::prelude::*;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::fusion::FusionScheme;
use crate::metrics::{aggregate, average_comm_cost, ospa, OspaSummary};
use crate::models::{generate_measurements, simulate_truth};
use crate::netsim::{run_timestep, DecoderKind, FusionSettings, NetworkState, SensorStreams};
use crate::rng::{stream, Purpose, NETWORK};
use crate::types::{position, Measurement, TargetState};

/// A filter configuration compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    /// `None` is the noncooperative filter.
    pub scheme: Option<FusionScheme>,
    pub decoder: DecoderKind,
}

impl Variant {
    pub const NONCOOPERATIVE: Variant = Variant {
        scheme: None,
        decoder: DecoderKind::Is,
    };

    pub fn new(scheme: FusionScheme, decoder: DecoderKind) -> Self {
        Variant {
            scheme: Some(scheme),
            decoder,
        }
    }

    pub fn name(&self) -> String {
        match self.scheme {
            None => "noncoop".to_string(),
            Some(scheme) => {
                let f = match scheme {
                    FusionScheme::Flood => "F",
                    FusionScheme::Consensus => "C",
                };
                let d = match self.decoder {
                    DecoderKind::Is => "IS",
                    DecoderKind::Ss => "SS",
                };
                format!("AA-{f}-{d}")
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Truth and measurements of one Monte-Carlo run.
#[derive(Debug, Clone)]
pub struct RunData {
    /// `truth[k - 1]`: targets alive at step `k`.
    pub truth: Vec<Vec<TargetState>>,
    /// `measurements[k - 1][s]`: scan of sensor `s` at step `k`.
    pub measurements: Vec<Vec<Vec<Measurement>>>,
    /// Hash of every measurement value, for checking paired runs.
    pub digest: u64,
}

pub fn generate_run_data(scenario: &Scenario, seed: u64, run: usize) -> Result<RunData> {
    let truth_seed = scenario.config.truth.seed;
    let truth = simulate_truth(
        &scenario.truth_script,
        &scenario.truth_motion,
        &mut stream(truth_seed, 0, NETWORK, Purpose::Truth),
    )?;
    let mut rngs: Vec<_> = (0..scenario.sensors.len())
        .map(|s| stream(seed, run, s, Purpose::Measurements))
        .collect();
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    let measurements: Vec<Vec<Vec<Measurement>>> = truth
        .iter()
        .map(|targets| {
            scenario
                .sensors
                .iter()
                .zip(rngs.iter_mut())
                .map(|(sensor, rng)| generate_measurements(sensor, targets, rng))
                .collect()
        })
        .collect();
    for scan in measurements.iter().flatten() {
        scan.len().hash(&mut hasher);
        for z in scan {
            z.values[0].to_bits().hash(&mut hasher);
            z.values[1].to_bits().hash(&mut hasher);
        }
    }
    Ok(RunData {
        truth,
        measurements,
        digest: hasher.finish(),
    })
}

/// Per-run outcome of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// `errors[s][k - 1]`: OSPA of sensor `s` at step `k`.
    pub errors: Vec<Vec<f64>>,
    /// Reals broadcast by all sensors over all steps.
    pub broadcast_reals: u64,
    pub fallbacks: usize,
    pub clamped_estimates: usize,
    /// `round_reals[k - 1][s][i]`: reals sensor `s` broadcast in round `i + 1`.
    pub round_reals: Vec<Vec<Vec<u64>>>,
}

/// Runs one variant with `iterations` fusion rounds per step on `data`.
pub fn run_variant(
    scenario: &Scenario,
    data: &RunData,
    variant: Variant,
    iterations: usize,
    seed: u64,
    run: usize,
) -> Result<RunOutcome> {
    let ctx = |e: Error| Error::AtRun {
        run,
        variant: format!("{variant} I={iterations}"),
        source: Box::new(e),
    };
    let n = scenario.sensors.len();
    let mut net = NetworkState::new(scenario.sensors.clone(), scenario.topology.clone(), &scenario.filter).map_err(ctx)?;
    let fusion = FusionSettings {
        scheme: variant.scheme,
        iterations: if variant.scheme.is_some() { iterations } else { 0 },
        decoder: variant.decoder,
        consensus_merge_threshold: scenario.config.fusion.consensus_merge_threshold,
    };
    let mut streams = SensorStreams {
        filter: (0..n).map(|s| stream(seed, run, s, Purpose::Filter)).collect(),
        decode: (0..n).map(|s| stream(seed, run, s, Purpose::Decode)).collect(),
    };
    let (c, p) = (scenario.config.ospa.cutoff, scenario.config.ospa.order);
    let mut out = RunOutcome {
        errors: vec![Vec::with_capacity(data.truth.len()); n],
        broadcast_reals: 0,
        fallbacks: 0,
        clamped_estimates: 0,
        round_reals: Vec::with_capacity(data.truth.len()),
    };
    for (i, (truth, scans)) in data.truth.iter().zip(&data.measurements).enumerate() {
        let step = i + 1;
        let res = run_timestep(&mut net, step, scans, &scenario.filter, &fusion, &mut streams).map_err(ctx)?;
        let truth_pos: Vec<[f64; 2]> = truth.iter().map(|x| position(x.as_slice())).collect();
        let mut rounds = Vec::with_capacity(n);
        for (s, (est, log)) in res.estimates.iter().zip(res.logs).enumerate() {
            let est_pos: Vec<[f64; 2]> = est.states.iter().map(|x| position(x.as_slice())).collect();
            out.errors[s].push(ospa(&est_pos, &truth_pos, c, p));
            out.broadcast_reals += log.broadcast_reals;
            out.fallbacks += usize::from(log.fallback.is_some());
            out.clamped_estimates += usize::from(log.clamped_estimates);
            trace!(
                "run {run} {variant} step {step} sensor {s}: W={:.3} W_I={:.3} N={} gm={}/{} reals={} fallback={:?}",
                log.local_cardinality,
                log.fused_cardinality,
                log.estimate_count,
                log.local_components,
                log.fused_components,
                log.broadcast_reals,
                log.fallback
            );
            rounds.push(log.round_reals);
        }
        out.round_reals.push(rounds);
    }
    Ok(out)
}

/// What to run: every variant at every iteration count, `runs` times.
/// The noncooperative variant ignores `iterations` and runs once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub runs: usize,
    pub seed: u64,
    pub iterations: Vec<usize>,
    pub variants: Vec<Variant>,
}

impl ExperimentPlan {
    /// `(variant, I)` pairs in output order.
    pub fn jobs(&self) -> Vec<(Variant, usize)> {
        let mut jobs = Vec::new();
        for &v in &self.variants {
            if v.scheme.is_none() {
                jobs.push((v, 0));
            } else {
                jobs.extend(self.iterations.iter().map(|&i| (v, i)));
            }
        }
        jobs.dedup();
        jobs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub iterations: usize,
    pub summary: OspaSummary,
    /// Average reals broadcast per sensor and step.
    pub acc: f64,
    pub fallbacks: usize,
    pub clamped_estimates: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTables {
    pub results: Vec<VariantResult>,
    /// Measurement digest of each run.
    pub digests: Vec<u64>,
}

impl ResultTables {
    pub fn get(&self, variant: Variant, iterations: usize) -> Option<&VariantResult> {
        self.results
            .iter()
            .find(|r| r.variant == variant && r.iterations == iterations)
    }
}

/// Per-run outcomes of every job, indexed `[run][job]`.
pub fn run_paired(scenario: &Scenario, plan: &ExperimentPlan) -> Result<(Vec<Vec<RunOutcome>>, Vec<u64>)> {
    let jobs = plan.jobs();
    let per_run: Vec<(Vec<RunOutcome>, u64)> = (0..plan.runs)
        .into_par_iter()
        .map(|run| {
            let data = generate_run_data(scenario, plan.seed, run)?;
            let outcomes = jobs
                .iter()
                .map(|&(v, i)| run_variant(scenario, &data, v, i, plan.seed, run))
                .collect::<Result<Vec<_>>>()?;
            debug!("run {run} done");
            Ok((outcomes, data.digest))
        })
        .collect::<Result<_>>()?;
    Ok(per_run.into_iter().unzip())
}

pub fn run_experiment(scenario: &Scenario, plan: &ExperimentPlan) -> Result<ResultTables> {
    let jobs = plan.jobs();
    let (outcomes, digests) = run_paired(scenario, plan)?;
    let sensors = scenario.sensors.len();
    let steps = scenario.config.simulation.steps;
    let results = jobs
        .iter()
        .enumerate()
        .map(|(j, &(variant, iterations))| {
            let errors: Vec<Vec<Vec<f64>>> = outcomes.iter().map(|run| run[j].errors.clone()).collect();
            let reals: u64 = outcomes.iter().map(|run| run[j].broadcast_reals).sum();
            VariantResult {
                variant,
                iterations,
                summary: aggregate(&errors),
                acc: if plan.runs == 0 {
                    0.0
                } else {
                    average_comm_cost(reals, sensors, steps, plan.runs)
                },
                fallbacks: outcomes.iter().map(|run| run[j].fallbacks).sum(),
                clamped_estimates: outcomes.iter().map(|run| run[j].clamped_estimates).sum(),
            }
        })
        .collect();
    Ok(ResultTables { results, digests })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `nospa_<variant>_I<k>.csv` per result plus `tnospa.csv` and
/// `acc.csv`. Floats use the shortest decimal form that parses back to the
/// same value.
pub fn write_csv(tables: &ResultTables, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in &tables.results {
        let path = dir.join(format!("nospa_{}_I{}.csv", r.variant, r.iterations));
        let mut w = csv_writer(&path)?;
        w.write_record(["step", "mean", "stderr"]).map_err(csv_error)?;
        for (k, (m, se)) in r.summary.n_ospa.iter().zip(&r.summary.stderr).enumerate() {
            w.write_record([(k + 1).to_string(), m.to_string(), se.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        written.push(path);
    }
    let path = dir.join("tnospa.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["variant", "I", "value"]).map_err(csv_error)?;
    for r in &tables.results {
        w.write_record([r.variant.name(), r.iterations.to_string(), r.summary.tn_ospa.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    written.push(path);
    let path = dir.join("acc.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["variant", "I", "reals-per-sensor-step"]).map_err(csv_error)?;
    for r in &tables.results {
        w.write_record([r.variant.name(), r.iterations.to_string(), r.acc.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    fn small_scenario(steps: usize) -> Scenario {
        let mut cfg = ScenarioConfig::reference();
        cfg.simulation.steps = steps;
        for t in &mut cfg.truth.targets {
            t.birth = t.birth.min(steps);
            t.death = t.death.min(steps);
        }
        cfg.build().unwrap()
    }

    #[test]
    fn variant_names() {
        assert_eq!(Variant::NONCOOPERATIVE.name(), "noncoop");
        assert_eq!(Variant::new(FusionScheme::Flood, DecoderKind::Is).name(), "AA-F-IS");
        assert_eq!(Variant::new(FusionScheme::Consensus, DecoderKind::Ss).name(), "AA-C-SS");
    }

    #[test]
    fn jobs_expand_the_sweep() {
        let plan = ExperimentPlan {
            runs: 1,
            seed: 0,
            iterations: (1..=10).collect(),
            variants: vec![Variant::NONCOOPERATIVE, Variant::new(FusionScheme::Flood, DecoderKind::Is)],
        };
        let jobs = plan.jobs();
        assert_eq!(jobs.len(), 11);
        assert_eq!(jobs[0], (Variant::NONCOOPERATIVE, 0));
    }

    #[test]
    fn run_data_is_shared_and_reproducible() {
        let sc = small_scenario(5);
        let a = generate_run_data(&sc, 3, 0).unwrap();
        let b = generate_run_data(&sc, 3, 0).unwrap();
        let c = generate_run_data(&sc, 3, 1).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, c.digest);
        assert_eq!(a.truth, c.truth);
        assert_eq!(a.measurements.len(), 5);
        assert_eq!(a.measurements[0].len(), 16);
    }

    #[test]
    fn single_noncooperative_run_gives_one_trace() {
        let sc = small_scenario(6);
        let plan = ExperimentPlan {
            runs: 1,
            seed: 11,
            iterations: vec![5],
            variants: vec![Variant::NONCOOPERATIVE],
        };
        let t = run_experiment(&sc, &plan).unwrap();
        assert_eq!(t.results.len(), 1);
        let r = &t.results[0];
        assert_eq!(r.summary.n_ospa.len(), 6);
        assert_eq!(r.acc, 0.0);
        assert!(r.summary.n_ospa.iter().all(|v| (0.0..=1000.0).contains(v)));
    }

    #[test]
    fn csv_files_round_trip() {
        let summary = OspaSummary {
            n_ospa: vec![0.1, 1.0 / 3.0, 123.456_789_012_345_67],
            stderr: vec![0.0, 1e-17, 2.5],
            tn_ospa: std::f64::consts::PI,
        };
        let tables = ResultTables {
            results: vec![VariantResult {
                variant: Variant::new(FusionScheme::Consensus, DecoderKind::Ss),
                iterations: 5,
                summary: summary.clone(),
                acc: 61.0 / 7.0,
                fallbacks: 0,
                clamped_estimates: 0,
            }],
            digests: vec![0],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = write_csv(&tables, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let mut rd = csv::Reader::from_path(dir.path().join("nospa_AA-C-SS_I5.csv")).unwrap();
        assert_eq!(rd.headers().unwrap(), vec!["step", "mean", "stderr"]);
        for (k, rec) in rd.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(rec[0].parse::<usize>().unwrap(), k + 1);
            assert_eq!(rec[1].parse::<f64>().unwrap(), summary.n_ospa[k]);
            assert_eq!(rec[2].parse::<f64>().unwrap(), summary.stderr[k]);
        }
        let acc = std::fs::read_to_string(dir.path().join("acc.csv")).unwrap();
        let line = acc.lines().nth(1).unwrap();
        assert_eq!(line.split(',').nth(2).unwrap().parse::<f64>().unwrap(), 61.0 / 7.0);
    }

    #[test]
    fn empty_tables_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_csv(&ResultTables::default(), dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("tnospa.csv")).unwrap(), "variant,I,value\n");
        assert_eq!(
            std::fs::read_to_string(dir.path().join("acc.csv")).unwrap(),
            "variant,I,reals-per-sensor-step\n"
        );
    }
}
