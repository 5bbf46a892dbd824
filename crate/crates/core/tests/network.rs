use aaphd::config::{Scenario, ScenarioConfig, TopologySection};
use aaphd::experiment::{generate_run_data, run_experiment, run_variant, write_csv, ExperimentPlan, Variant};
use aaphd::fusion::FusionScheme;
use aaphd::netsim::{run_timestep, DecoderKind, FusionSettings, NetworkState, SensorStreams};
use aaphd::rng::{stream, Purpose};

fn short_config(steps: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference();
    cfg.simulation.steps = steps;
    cfg.truth.targets.retain(|t| t.birth <= steps);
    for t in &mut cfg.truth.targets {
        t.death = t.death.min(steps);
    }
    cfg
}

fn short(steps: usize) -> Scenario {
    short_config(steps).build().unwrap()
}

fn streams(seed: u64, n: usize) -> SensorStreams {
    SensorStreams {
        filter: (0..n).map(|s| stream(seed, 0, s, Purpose::Filter)).collect(),
        decode: (0..n).map(|s| stream(seed, 0, s, Purpose::Decode)).collect(),
    }
}

#[test]
fn zero_rounds_reproduce_the_noncooperative_filter() {
    let scenario = short(15);
    let data = generate_run_data(&scenario, 4, 0).unwrap();
    let alone = run_variant(&scenario, &data, Variant::NONCOOPERATIVE, 0, 4, 0).unwrap();
    for scheme in [FusionScheme::Flood, FusionScheme::Consensus] {
        for decoder in [DecoderKind::Is, DecoderKind::Ss] {
            let silent = run_variant(&scenario, &data, Variant::new(scheme, decoder), 0, 4, 0).unwrap();
            assert_eq!(silent.errors, alone.errors, "{scheme:?}/{decoder:?}");
            assert_eq!(silent.broadcast_reals, 0);
        }
    }
}

#[test]
fn single_sensor_fusion_is_the_identity() {
    let mut cfg = short_config(6);
    cfg.sensors.truncate(1);
    cfg.topology = TopologySection {
        grid: Some([1, 1]),
        edges: None,
    };
    let scenario = cfg.build().unwrap();
    let data = generate_run_data(&scenario, 2, 0).unwrap();
    let mut local = NetworkState::new(scenario.sensors.clone(), scenario.topology.clone(), &scenario.filter).unwrap();
    let mut fused = local.clone();
    let (mut a, mut b) = (streams(2, 1), streams(2, 1));
    let flood = FusionSettings {
        scheme: Some(FusionScheme::Flood),
        iterations: 3,
        decoder: DecoderKind::Is,
        consensus_merge_threshold: 2.0,
    };
    for (k, scans) in data.measurements.iter().enumerate() {
        // both networks start every step from the same local state
        fused.filters = local.filters.clone();
        b = SensorStreams {
            filter: a.filter.clone(),
            decode: b.decode,
        };
        let alone = run_timestep(&mut local, k + 1, scans, &scenario.filter, &FusionSettings::noncooperative(), &mut a).unwrap();
        let with = run_timestep(&mut fused, k + 1, scans, &scenario.filter, &flood, &mut b).unwrap();
        assert_eq!(with.fused, alone.fused, "step {}", k + 1);
        assert_eq!(with.estimates, alone.estimates, "step {}", k + 1);
        assert_eq!(with.logs[0].fused_cardinality, alone.logs[0].local_cardinality);
    }
}

#[test]
fn replays_are_bit_identical() {
    let scenario = short(10);
    let plan = ExperimentPlan {
        runs: 2,
        seed: 21,
        iterations: vec![1, 2],
        variants: vec![Variant::NONCOOPERATIVE, Variant::new(FusionScheme::Consensus, DecoderKind::Is)],
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut contents = Vec::new();
    for dir in &dirs {
        let tables = run_experiment(&scenario, &plan).unwrap();
        let mut files = write_csv(&tables, dir.path()).unwrap();
        files.sort();
        contents.push(
            files
                .iter()
                .map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    // one noncooperative table, two cooperative ones, tnospa and acc
    assert_eq!(contents[0].len(), 5);
    assert_eq!(contents[0], contents[1]);
}

#[test]
fn every_variant_sees_the_same_measurements() {
    let scenario = short(8);
    let run = |variants: Vec<Variant>| {
        run_experiment(
            &scenario,
            &ExperimentPlan {
                runs: 3,
                seed: 5,
                iterations: vec![1],
                variants,
            },
        )
        .unwrap()
        .digests
    };
    let a = run(vec![Variant::NONCOOPERATIVE]);
    let b = run(vec![Variant::new(FusionScheme::Flood, DecoderKind::Ss)]);
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert!(a[0] != a[1] && a[1] != a[2]);
    let direct: Vec<u64> = (0..3).map(|r| generate_run_data(&scenario, 5, r).unwrap().digest).collect();
    assert_eq!(a, direct);
}
