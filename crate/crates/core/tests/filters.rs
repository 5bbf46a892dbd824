use aaphd::decode::estimate_states;
use aaphd::encode::{encode, EncodeSettings};
use aaphd::gaussian::moment_match;
use aaphd::gm_phd::{gm_predict, gm_update, GmFilterState, GmReduction};
use aaphd::models::{cv_transition, generate_measurements, BirthComponent, BirthModel, FilterKind, MotionModel, SensorNode};
use aaphd::particle_phd::{predict, resample_systematic, update, ParticleBudget, Proposals};
use aaphd::WeightedParticleSet;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Particle and Gaussian-mixture PHD filters track one target without clutter
/// or missed detections and agree on cardinality and position.
///
/// The particle estimate carries Monte-Carlo error that ten rounds of
/// resampling inflate well past the i.i.d. `σ/√J`, so the per-seed bound is
/// `15σ/√J`; across seeds the normalized differences must show no bias.
#[test]
fn particle_and_gm_filters_agree_on_a_single_target() {
    let particles = 10_000;
    let steps = 10;
    let mut sensor = SensorNode::linear(
        0,
        [0.0, 0.0],
        FilterKind::Particle,
        20.0,
        1.0,
        ([-1000.0, 1000.0], [-1000.0, 1000.0]),
        0.0,
    );
    sensor.clutter_intensity = 0.0;
    let motion = MotionModel::constant_velocity(1.0, 5.0, 0.98).unwrap();
    let birth = BirthModel::new(vec![BirthComponent {
        weight: 0.05,
        mean: DVector::from_vec(vec![100.0, 10.0, -50.0, 5.0]),
        cov: DMatrix::from_diagonal(&DVector::from_vec(vec![400.0, 100.0, 400.0, 100.0])),
    }])
    .unwrap();
    let budget = ParticleBudget {
        per_target: particles,
        floor: particles,
        threshold: 0.5,
    };
    let reduction = GmReduction {
        prune_threshold: 1e-4,
        merge_threshold: 4.0,
        max_components: 100,
    };

    let mut normalized = Vec::new();
    for seed in 0..30u64 {
        let mut world = ChaCha8Rng::seed_from_u64(seed);
        let mut filter_rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut truth = DVector::from_vec(vec![110.0, 12.0, -40.0, 4.0]);
        let mut set = WeightedParticleSet::empty(4);
        let mut gm = GmFilterState::new(reduction);
        for k in 1..=steps {
            if k > 1 {
                truth = cv_transition(&truth, &motion, &mut world);
            }
            let z = generate_measurements(&sensor, std::slice::from_ref(&truth), &mut world);
            assert_eq!(z.len(), 1);

            let predicted = predict(&set, &z, &motion, &birth, particles, Proposals::default(), &mut filter_rng).unwrap();
            let decomp = update(&predicted, &z, &sensor).unwrap();
            let (local, w_particle) = encode(&decomp, &predicted, &EncodeSettings::default(), 0, k).unwrap();
            set = resample_systematic(&decomp, &predicted, &budget, &mut filter_rng)
                .unwrap()
                .to_weighted();

            gm = gm_update(&gm_predict(&gm, &motion, &birth, k), &z, &sensor, k).unwrap();
            let w_gm = gm.mixture.total_weight();
            assert!((w_gm - w_particle).abs() <= 0.05, "seed {seed} step {k}: W {w_gm} vs {w_particle}");

            if k == steps {
                // with p_D = 1 and no clutter every hypothesis sits in the
                // measurement column, which the particle encoder summarizes
                // by one moment-matched component
                let p_est = estimate_states(&local, w_particle);
                assert_eq!(p_est.states.len(), 1);
                let (_, mean, cov) = moment_match(gm.mixture.iter());
                for axis in [0, 2] {
                    let sd = cov[(axis, axis)].sqrt();
                    let diff = (p_est.states[0][axis] - mean[axis]).abs();
                    let z = (p_est.states[0][axis] - mean[axis]) / (sd / (particles as f64).sqrt());
                    assert!(z.abs() <= 15.0, "seed {seed} axis {axis}: difference {diff} with posterior sd {sd}");
                    normalized.push(z);
                }
            }
        }
    }
    let n = normalized.len() as f64;
    let mean = normalized.iter().sum::<f64>() / n;
    let sd = (normalized.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / n.sqrt(), "bias {mean} (sd {sd})");
}
