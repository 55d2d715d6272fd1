use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resvec_core::engine::{
    run, run_coupled, run_ensemble, sample_noise, NoiseSchedule, RecordOptions, RunOptions, SimConfig,
};
use resvec_core::geometry::{convex_hull, Point};
use resvec_core::presets;

fn short(mut cfg: SimConfig, iterations: usize) -> SimConfig {
    cfg.iterations = iterations;
    cfg
}

#[test]
fn noise_variance_matches_schedule() {
    let sched = NoiseSchedule::new(2.0, 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let draws = 100_000;
    let t = 3;
    let want = sched.std_at(t).powi(2);
    assert!((want - (2.0 * 0.75f64.powi(3)).powi(2)).abs() < 1e-15);
    let mut sums = [0.0; 3];
    for _ in 0..draws {
        let z = sample_noise(t, &sched, 3, &mut rng);
        for k in 0..3 {
            sums[k] += z[k] * z[k];
        }
    }
    for s in sums {
        let var = s / draws as f64;
        assert!((var - want).abs() < 0.03 * want, "{var} vs {want}");
    }
    let masked = NoiseSchedule::masked(2.0, 0.75, vec![1]);
    for _ in 0..100 {
        let z = sample_noise(0, &masked, 3, &mut rng);
        assert_eq!((z[0], z[2]), (0.0, 0.0));
    }
}

#[test]
fn noiseless_runs_stay_in_initial_hull() {
    for seed in 0..4 {
        let mut cfg = short(presets::planar(NoiseSchedule::new(0.0, 0.75)), 150);
        cfg.seed = seed;
        cfg.record = RecordOptions { trajectory: true, transmitted: false };
        let init = cfg.initial.materialize(2, 8).unwrap();
        let hull = convex_hull(init.rows(), 2).unwrap();
        let r = run(&cfg).unwrap();
        for states in r.trajectory.as_ref().unwrap() {
            for x in states.rows() {
                assert!(hull.contains(x, 1e-9).unwrap(), "{x:?} left the hull");
            }
        }
        assert!(r.final_states.max_pairwise_distance() < 1e-6);
    }
}

#[test]
fn noisy_centerpoints_stay_in_normal_hull() {
    let mut cfg = short(presets::planar(NoiseSchedule::new(2.0, 0.75)), 40);
    cfg.verify_resilience = true;
    run(&cfg).unwrap();
    let mut cfg = short(presets::spatial(NoiseSchedule::masked(3.0, 0.8, vec![0])), 20);
    cfg.verify_resilience = true;
    run(&cfg).unwrap();
}

#[test]
fn runs_are_deterministic() {
    let cfg = short(presets::spatial(NoiseSchedule::new(2.0, 0.75)), 30);
    assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let cfg = short(presets::planar(NoiseSchedule::new(2.0, 0.75)), 30);
    let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let a = pool(1).install(|| run_ensemble(&cfg, 6, None).unwrap());
    let b = pool(3).install(|| run_ensemble(&cfg, 6, None).unwrap());
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coupled_runs_transmit_identical_values(
        seed in 0u64..1000,
        raw in prop::collection::vec((-0.17..0.17f64, -0.17..0.17f64), 5),
    ) {
        let mut cfg = short(presets::privacy_pair(), 60);
        cfg.seed = seed;
        let shifts: Vec<Point> = raw.into_iter().map(|(x, y)| Point::xy(x, y)).collect();
        let (a, b, trace) = run_coupled(&cfg, &shifts, &RunOptions::default()).unwrap();
        let (ta, tb) = (a.transmitted.unwrap(), b.transmitted.unwrap());
        for (ra, rb) in ta.iter().zip(&tb) {
            for (x, y) in ra.rows().iter().zip(rb.rows()) {
                prop_assert!((*x - *y).as_slice().iter().all(|v| v.abs() <= 1e-9));
            }
        }
        // first offset is the full negated shift
        for (o, s) in trace[0].iter().zip(&shifts) {
            prop_assert!((*o + *s).norm() < 1e-15);
        }
    }
}
