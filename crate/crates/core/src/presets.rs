//! Reference scenarios: a planar network of ten agents, a spatial network of
//! twelve, and a six-agent complete graph used for privacy audits.

use crate::engine::{
    ByzantineStrategy, GammaPolicy, InitialStates, NoiseSchedule, RecordOptions, SimConfig,
};
use crate::geometry::CenterpointSearch;
use crate::network::TopologyPolicy;

/// Seed of the shared initial states.
pub const INITIAL_SEED: u64 = 20_240_601;
pub const RUN_SEED: u64 = 7;
pub const ITERATIONS: usize = 1_000;

/// `(lambda, upsilon)` of the planar runs with noise on every dimension.
pub const PLANAR_FULL_CASES: [(f64, f64); 3] = [(2.0, 0.75), (2.5, 0.75), (2.0, 0.65)];
/// `(lambda, upsilon)` of the planar runs with noise on the second dimension.
pub const PLANAR_SINGLE_CASES: [(f64, f64); 3] = [(2.0, 0.75), (2.5, 0.75), (2.5, 0.85)];
/// `(lambda, upsilon)` of the spatial runs with noise on the first dimension.
pub const SPATIAL_SINGLE_CASES: [(f64, f64); 3] = [(3.0, 0.80), (3.0, 0.85), (3.5, 0.85)];
pub const SPATIAL_FULL_CASE: (f64, f64) = (2.0, 0.75);

fn base(n: usize, faulty: Vec<usize>, dim: usize, noise: NoiseSchedule) -> SimConfig {
    SimConfig {
        n,
        faulty,
        dim,
        noise,
        gamma: GammaPolicy::fixed(0.8),
        iterations: ITERATIONS,
        topology: TopologyPolicy::Complete,
        window_len: 1,
        byzantine: ByzantineStrategy::box_random(vec![-0.7, 0.3], vec![-0.3, 0.7]),
        initial: InitialStates::UniformBox {
            lo: -1.0,
            hi: 1.0,
            seed: INITIAL_SEED,
        },
        seed: RUN_SEED,
        record: RecordOptions::default(),
        verify_resilience: false,
        search: CenterpointSearch::default(),
    }
}

/// Ten agents, two Byzantine, each normal agent hearing both Byzantine
/// agents and at least five normal ones.
pub fn planar(noise: NoiseSchedule) -> SimConfig {
    SimConfig {
        topology: TopologyPolicy::RandomIn {
            faulty_in: None,
            min_normal: Some(5),
        },
        ..base(10, vec![8, 9], 2, noise)
    }
}

/// Twelve agents, two Byzantine; each normal agent hears one randomly chosen
/// Byzantine agent and all other normal agents.
pub fn spatial(noise: NoiseSchedule) -> SimConfig {
    SimConfig {
        topology: TopologyPolicy::RandomIn {
            faulty_in: Some(1),
            min_normal: Some(9),
        },
        byzantine: ByzantineStrategy::box_random(vec![-0.7, 0.3, 0.3], vec![-0.3, 0.7, 0.7]),
        ..base(12, vec![10, 11], 3, noise)
    }
}

/// Five normal agents and one Byzantine agent on a complete graph, step
/// sizes uniform in `[0.4, 0.8]`.
pub fn privacy_pair() -> SimConfig {
    SimConfig {
        gamma: GammaPolicy::uniform(0.4, 0.8),
        byzantine: ByzantineStrategy::box_random(vec![-0.7, 0.4], vec![-0.4, 0.7]),
        ..base(6, vec![5], 2, NoiseSchedule::new(2.0, 0.75))
    }
}

/// Named scenarios, as shipped in the `configs` directory.
pub fn named() -> Vec<(&'static str, SimConfig)> {
    let mut out = vec![("2d_baseline", planar(NoiseSchedule::new(2.0, 0.75)))];
    let planar_names = ["2d_dim2_noise_case1", "2d_dim2_noise_case2", "2d_dim2_noise_case3"];
    for (name, (l, u)) in planar_names.into_iter().zip(PLANAR_SINGLE_CASES) {
        out.push((name, planar(NoiseSchedule::masked(l, u, vec![1]))));
    }
    out.push(("3d_baseline", spatial(NoiseSchedule::new(SPATIAL_FULL_CASE.0, SPATIAL_FULL_CASE.1))));
    let spatial_names = ["3d_dim1_noise_case1", "3d_dim1_noise_case2", "3d_dim1_noise_case3"];
    for (name, (l, u)) in spatial_names.into_iter().zip(SPATIAL_SINGLE_CASES) {
        out.push((name, spatial(NoiseSchedule::masked(l, u, vec![0]))));
    }
    out.push(("privacy_pair", privacy_pair()));
    out
}
