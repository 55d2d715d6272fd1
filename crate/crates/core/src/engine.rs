//! The consensus protocol: every normal agent broadcasts a noisy copy of its
//! state, computes a depth-certified centerpoint of what its in-neighbours
//! sent, and moves a fraction `gamma` of the way towards it.
//!
//! All randomness comes from [`crate::stream`] sub-streams keyed by the run
//! seed, so a run is a pure function of its [`SimConfig`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    convex_hull, coordinate_median, CenterpointSearch, GeometryError, Point, StateMatrix,
    DEFAULT_TOL,
};
use crate::network::{
    fault_condition_ok, generate_schedule, normal_agents, DiGraph, GraphSchedule, NetworkError,
    TopologyPolicy,
};
use crate::stream::{derive_seed, substream, Purpose, StableHasher};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("centerpoint of agent {agent} at t = {t}: {source}")]
    Centerpoint {
        agent: usize,
        t: usize,
        source: GeometryError,
        /// The received multiset, for diagnostics.
        cloud: Vec<Point>,
    },
    #[error("fault condition violated at t = {t}")]
    FaultCondition { t: usize },
    #[error(
        "agent {agent} at t = {t}: centerpoint is {distance:.3e} outside the hull of its normal in-neighbours' messages"
    )]
    ResilienceViolation {
        agent: usize,
        t: usize,
        distance: f64,
    },
    #[error("no adversary supplied for custom Byzantine strategy `{0}`")]
    MissingAdversary(String),
    #[error("schedule has {found} agents / {horizon} iterations, configuration needs {n} / {iterations}")]
    ScheduleMismatch {
        n: usize,
        found: usize,
        horizon: usize,
        iterations: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn config_err(field: &str, msg: impl Into<String>) -> EngineError {
    EngineError::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Gaussian noise with per-dimension standard deviation `lambda * upsilon^t`
/// on the masked dimensions (all dimensions when `mask` is absent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub lambda: f64,
    pub upsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
}

impl NoiseSchedule {
    pub fn new(lambda: f64, upsilon: f64) -> Self {
        Self {
            lambda,
            upsilon,
            mask: None,
        }
    }

    pub fn masked(lambda: f64, upsilon: f64, mask: Vec<usize>) -> Self {
        Self {
            lambda,
            upsilon,
            mask: Some(mask),
        }
    }

    pub fn std_at(&self, t: usize) -> f64 {
        self.lambda * self.upsilon.powi(t as i32)
    }

    /// Masked dimensions in ascending order.
    pub fn noisy_dims(&self, dim: usize) -> Vec<usize> {
        match &self.mask {
            None => (0..dim).collect(),
            Some(m) => {
                let mut m = m.clone();
                m.sort_unstable();
                m.dedup();
                m
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<(), EngineError> {
        // lambda = 0 is the noiseless limit used by safety tests
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config_err("noise.lambda", "must be finite and >= 0"));
        }
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return Err(config_err("noise.upsilon", "must lie in (0, 1)"));
        }
        if let Some(m) = &self.mask {
            if m.is_empty() {
                return Err(config_err("noise.mask", "must not be empty"));
            }
            if let Some(k) = m.iter().find(|&&k| k >= dim) {
                return Err(config_err(
                    "noise.mask",
                    format!("dimension {k} out of range for dim = {dim}"),
                ));
            }
        }
        Ok(())
    }
}

/// Zero outside the mask; independent `N(0, (lambda upsilon^t)^2)` inside.
pub fn sample_noise<R: Rng + ?Sized>(
    t: usize,
    sched: &NoiseSchedule,
    dim: usize,
    rng: &mut R,
) -> Point {
    let mut p = Point::zeros(dim);
    let sd = sched.std_at(t);
    for k in sched.noisy_dims(dim) {
        p[k] = sd * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

/// Step sizes, either fixed or drawn per agent and iteration from
/// `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPolicy {
    pub lower: f64,
    pub upper: f64,
    /// Fixed step size; uniform draws when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl GammaPolicy {
    pub fn fixed(gamma: f64) -> Self {
        Self {
            lower: gamma,
            upper: gamma,
            value: Some(gamma),
        }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            value: None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.value {
            Some(g) => g,
            None if self.lower == self.upper => self.lower,
            None => rng.gen_range(self.lower..=self.upper),
        }
    }

    fn validate(&self, upsilon: f64) -> Result<(), EngineError> {
        if !(self.lower > 0.0 && self.lower <= self.upper && self.upper < 1.0) {
            return Err(config_err("gamma", "need 0 < lower <= upper < 1"));
        }
        if let Some(g) = self.value {
            if !(self.lower..=self.upper).contains(&g) {
                return Err(config_err("gamma.value", "must lie in [lower, upper]"));
            }
        }
        if self.lower <= 1.0 - upsilon {
            return Err(config_err(
                "gamma.lower",
                format!(
                    "step-size lower bound {} must exceed 1 - upsilon = {}",
                    self.lower,
                    1.0 - upsilon
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ByzantineKind {
    /// Uniform per dimension in `[lo[k], hi[k]]`.
    BoxRandom { lo: Vec<f64>, hi: Vec<f64> },
    FixedPoint { point: Point },
    /// Resolved through an [`Adversary`] passed in [`RunOptions`].
    Custom { label: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByzantineStrategy {
    #[serde(flatten)]
    pub kind: ByzantineKind,
    /// Distinct message per recipient; one shared message when false.
    #[serde(default = "default_true")]
    pub per_recipient: bool,
}

fn default_true() -> bool {
    true
}

impl ByzantineStrategy {
    pub fn box_random(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self {
            kind: ByzantineKind::BoxRandom { lo, hi },
            per_recipient: true,
        }
    }

    pub fn fixed_point(point: Point) -> Self {
        Self {
            kind: ByzantineKind::FixedPoint { point },
            per_recipient: false,
        }
    }

    fn validate(&self, dim: usize) -> Result<(), EngineError> {
        match &self.kind {
            ByzantineKind::BoxRandom { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(config_err("byzantine", format!("box needs {dim} bounds")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
                    return Err(config_err("byzantine", "box intervals must be finite with lo < hi"));
                }
            }
            ByzantineKind::FixedPoint { point } => {
                if point.dim() != dim {
                    return Err(config_err("byzantine.point", format!("expected {dim} coordinates")));
                }
            }
            ByzantineKind::Custom { .. } => {}
        }
        Ok(())
    }
}

/// What a custom Byzantine agent may look at: the values normal agents
/// transmitted in the current iteration, indexed by normal-agent row.
pub struct AdversaryView<'a> {
    pub t: usize,
    pub sender: usize,
    /// `None` when one message goes to every recipient.
    pub recipient: Option<usize>,
    pub transmitted: &'a [Point],
    pub dim: usize,
}

pub trait Adversary: Send + Sync {
    fn message(&self, view: &AdversaryView<'_>, rng: &mut ChaCha8Rng) -> Point;
}

/// Messages from one faulty agent to its out-neighbours (ascending order).
/// Custom strategies cannot be drawn here and yield `None`.
pub fn byzantine_messages<R: Rng + ?Sized>(
    strategy: &ByzantineStrategy,
    recipients: &[usize],
    rng: &mut R,
) -> Option<Vec<(usize, Point)>> {
    let draw = |rng: &mut R| -> Option<Point> {
        match &strategy.kind {
            ByzantineKind::BoxRandom { lo, hi } => {
                let mut p = Point::zeros(lo.len());
                for k in 0..lo.len() {
                    p[k] = rng.gen_range(lo[k]..hi[k]);
                }
                Some(p)
            }
            ByzantineKind::FixedPoint { point } => Some(*point),
            ByzantineKind::Custom { .. } => None,
        }
    };
    if strategy.per_recipient {
        recipients.iter().map(|&r| draw(rng).map(|p| (r, p))).collect()
    } else {
        let p = draw(rng)?;
        Some(recipients.iter().map(|&r| (r, p)).collect())
    }
}

/// Initial states of the normal agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStates {
    /// One row per normal agent, in ascending agent order.
    Explicit { states: Vec<Point> },
    /// Uniform in `[lo, hi]^d`, drawn from its own seed so that every run of
    /// an ensemble starts from the same states.
    UniformBox { lo: f64, hi: f64, seed: u64 },
}

impl InitialStates {
    pub fn materialize(&self, dim: usize, normal_count: usize) -> Result<StateMatrix, EngineError> {
        match self {
            InitialStates::Explicit { states } => {
                if states.len() != normal_count {
                    return Err(config_err(
                        "initial.states",
                        format!("{} rows for {normal_count} normal agents", states.len()),
                    ));
                }
                StateMatrix::new(dim, states.clone())
                    .map_err(|e| config_err("initial.states", e.to_string()))
            }
            InitialStates::UniformBox { lo, hi, seed } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(config_err("initial", "need finite lo < hi"));
                }
                let mut rng = substream(*seed, Purpose::Initial, 0, 0);
                let rows = (0..normal_count)
                    .map(|_| {
                        let mut p = Point::zeros(dim);
                        for k in 0..dim {
                            p[k] = rng.gen_range(*lo..*hi);
                        }
                        p
                    })
                    .collect();
                Ok(StateMatrix::new(dim, rows)?)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordOptions {
    #[serde(default)]
    pub trajectory: bool,
    #[serde(default)]
    pub transmitted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub faulty: Vec<usize>,
    pub dim: usize,
    pub noise: NoiseSchedule,
    pub gamma: GammaPolicy,
    pub iterations: usize,
    pub topology: TopologyPolicy,
    #[serde(default = "default_window")]
    pub window_len: usize,
    pub byzantine: ByzantineStrategy,
    pub initial: InitialStates,
    pub seed: u64,
    #[serde(default)]
    pub record: RecordOptions,
    /// Check every centerpoint against the hull of the normal messages.
    #[serde(default)]
    pub verify_resilience: bool,
    #[serde(default)]
    pub search: CenterpointSearch,
}

fn default_window() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(config_err("dim", "must be 2 or 3"));
        }
        if let Some(&a) = self.faulty.iter().find(|&&a| a >= self.n) {
            return Err(config_err("faulty", format!("agent {a} out of range for n = {}", self.n)));
        }
        let mut f = self.faulty.clone();
        f.sort_unstable();
        f.dedup();
        if f.len() != self.faulty.len() {
            return Err(config_err("faulty", "duplicate agent ids"));
        }
        if self.n - f.len() < self.dim + 1 {
            return Err(config_err(
                "n",
                format!("need at least dim + 1 = {} normal agents", self.dim + 1),
            ));
        }
        if self.window_len == 0 {
            return Err(config_err("window_len", "must be >= 1"));
        }
        self.noise.validate(self.dim)?;
        self.gamma.validate(self.noise.upsilon)?;
        self.byzantine.validate(self.dim)?;
        self.initial.materialize(self.dim, self.n - f.len())?;
        Ok(())
    }

    pub fn normal_ids(&self) -> Vec<usize> {
        normal_agents(self.n, &self.faulty)
    }

    /// Stable digest of the configuration.
    pub fn digest(&self) -> u64 {
        let mut h = StableHasher::default();
        h.write_bytes(format!("{self:?}").as_bytes());
        h.finish()
    }

    pub fn generate_schedule(&self) -> Result<GraphSchedule, EngineError> {
        let mut rng = substream(self.seed, Purpose::Schedule, 0, 0);
        Ok(generate_schedule(
            &self.topology,
            self.n,
            &self.faulty,
            self.dim,
            self.iterations,
            self.window_len,
            &mut rng,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub schedule_digest: u64,
    /// Agent id of each state row.
    pub normal_ids: Vec<usize>,
    pub final_states: StateMatrix,
    /// States at `t = 0..=T`, when recorded.
    pub trajectory: Option<Vec<StateMatrix>>,
    /// Transmitted noisy states at `t = 0..T`, when recorded.
    pub transmitted: Option<Vec<StateMatrix>>,
    /// `gamma_trace[t][row]`.
    pub gamma_trace: Vec<Vec<f64>>,
    /// Steps that used the coordinate-median fallback on a degenerate cloud.
    pub fallback_steps: usize,
}

impl RunResult {
    /// Mean of the normal agents' final states.
    pub fn consensus_value(&self) -> Point {
        Point::centroid(self.final_states.rows()).expect("at least one normal agent")
    }
}

/// Everything produced by one iteration.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub next: StateMatrix,
    pub transmitted: Vec<Point>,
    pub noise: Vec<Point>,
    pub gammas: Vec<f64>,
    pub fallbacks: usize,
}

#[derive(Clone, Default)]
pub struct RunOptions {
    pub adversary: Option<Arc<dyn Adversary>>,
    /// Replay this schedule instead of generating one.
    pub schedule: Option<GraphSchedule>,
}

struct Protocol<'a> {
    cfg: &'a SimConfig,
    normal: Vec<usize>,
    row_of: Vec<Option<usize>>,
    faulty: Vec<usize>,
    adversary: Option<&'a dyn Adversary>,
}

impl<'a> Protocol<'a> {
    fn new(cfg: &'a SimConfig, adversary: Option<&'a dyn Adversary>) -> Result<Self, EngineError> {
        if let ByzantineKind::Custom { label } = &cfg.byzantine.kind {
            if adversary.is_none() && !cfg.faulty.is_empty() {
                return Err(EngineError::MissingAdversary(label.clone()));
            }
        }
        let normal = cfg.normal_ids();
        let mut row_of = vec![None; cfg.n];
        for (r, &i) in normal.iter().enumerate() {
            row_of[i] = Some(r);
        }
        let mut faulty = cfg.faulty.clone();
        faulty.sort_unstable();
        Ok(Self {
            cfg,
            normal,
            row_of,
            faulty,
            adversary,
        })
    }

    /// One iteration. `offsets[row]` is added to the drawn noise (coupled runs).
    fn step(
        &self,
        states: &StateMatrix,
        g: &DiGraph,
        t: usize,
        offsets: Option<&[Point]>,
    ) -> Result<StepOutput, EngineError> {
        let cfg = self.cfg;
        let dim = cfg.dim;
        if g.n() != cfg.n {
            return Err(EngineError::Network(NetworkError::SizeMismatch {
                expected: cfg.n,
                found: g.n(),
            }));
        }
        if !fault_condition_ok(g, &self.faulty, dim) {
            return Err(EngineError::FaultCondition { t });
        }

        let mut noise = Vec::with_capacity(self.normal.len());
        let mut transmitted = Vec::with_capacity(self.normal.len());
        for (r, &i) in self.normal.iter().enumerate() {
            let mut eta = if cfg.noise.lambda > 0.0 {
                let mut rng = substream(cfg.seed, Purpose::Noise, i as u64, t as u64);
                sample_noise(t, &cfg.noise, dim, &mut rng)
            } else {
                Point::zeros(dim)
            };
            if let Some(off) = offsets {
                eta = eta + off[r];
            }
            noise.push(eta);
            transmitted.push(states.rows()[r] + eta);
        }

        let byz = self.byzantine_round(g, t, &transmitted)?;

        let mut next = Vec::with_capacity(self.normal.len());
        let mut gammas = Vec::with_capacity(self.normal.len());
        let mut fallbacks = 0;
        let mut cloud = Vec::new();
        let mut normal_msgs = Vec::new();
        for (r, &i) in self.normal.iter().enumerate() {
            cloud.clear();
            normal_msgs.clear();
            for &j in g.in_neighbors(i) {
                match self.row_of[j] {
                    Some(rj) => {
                        cloud.push(transmitted[rj]);
                        normal_msgs.push(transmitted[rj]);
                    }
                    None => {
                        let fi = self.faulty.binary_search(&j).unwrap();
                        let m = byz[fi]
                            .iter()
                            .find(|(to, _)| *to == i)
                            .map(|(_, p)| *p)
                            .expect("message for every out-neighbour");
                        cloud.push(m);
                    }
                }
            }
            let x = states.rows()[r];
            let s = if cloud.is_empty() {
                x
            } else if distinct_count(&cloud, cfg.search.tol) < dim + 1 {
                log::warn!("agent {i} at t = {t}: degenerate neighbourhood, using coordinate median");
                fallbacks += 1;
                coordinate_median(&cloud)
            } else {
                let mut rng = substream(cfg.seed, Purpose::Centerpoint, i as u64, t as u64);
                cfg.search
                    .find(&cloud, dim, &mut rng)
                    .map_err(|source| EngineError::Centerpoint {
                        agent: i,
                        t,
                        source,
                        cloud: cloud.clone(),
                    })?
                    .0
            };
            if cfg.verify_resilience && !normal_msgs.is_empty() {
                let hull = convex_hull(&normal_msgs, dim)?;
                let distance = hull.distance_to(&s);
                if distance > DEFAULT_TOL {
                    return Err(EngineError::ResilienceViolation { agent: i, t, distance });
                }
            }
            let gamma = {
                let mut rng = substream(cfg.seed, Purpose::Gamma, i as u64, t as u64);
                cfg.gamma.draw(&mut rng)
            };
            gammas.push(gamma);
            next.push(s * gamma + x * (1.0 - gamma));
        }
        Ok(StepOutput {
            next: StateMatrix::new(dim, next)?,
            transmitted,
            noise,
            gammas,
            fallbacks,
        })
    }

    /// `out[k]` holds the messages of the k-th faulty agent (ascending id).
    fn byzantine_round(
        &self,
        g: &DiGraph,
        t: usize,
        transmitted: &[Point],
    ) -> Result<Vec<Vec<(usize, Point)>>, EngineError> {
        let cfg = self.cfg;
        let mut out = Vec::with_capacity(self.faulty.len());
        for &j in &self.faulty {
            let recipients: Vec<usize> = self
                .normal
                .iter()
                .copied()
                .filter(|&i| g.has_edge(j, i))
                .collect();
            let mut rng = substream(cfg.seed, Purpose::Byzantine, j as u64, t as u64);
            let msgs = match byzantine_messages(&cfg.byzantine, &recipients, &mut rng) {
                Some(m) => m,
                None => {
                    let ByzantineKind::Custom { label } = &cfg.byzantine.kind else {
                        unreachable!()
                    };
                    let adv = self
                        .adversary
                        .ok_or_else(|| EngineError::MissingAdversary(label.clone()))?;
                    let mut view = AdversaryView {
                        t,
                        sender: j,
                        recipient: None,
                        transmitted,
                        dim: cfg.dim,
                    };
                    if cfg.byzantine.per_recipient {
                        recipients
                            .iter()
                            .map(|&r| {
                                view.recipient = Some(r);
                                (r, adv.message(&view, &mut rng))
                            })
                            .collect()
                    } else {
                        let p = adv.message(&view, &mut rng);
                        recipients.iter().map(|&r| (r, p)).collect()
                    }
                }
            };
            out.push(msgs);
        }
        Ok(out)
    }
}

fn distinct_count(cloud: &[Point], tol: f64) -> usize {
    let mut reps: Vec<Point> = Vec::new();
    for p in cloud {
        if !reps.iter().any(|q| q.dist(p) <= tol) {
            reps.push(*p);
        }
    }
    reps.len()
}

/// One protocol iteration for the normal agents whose states are `states`
/// (rows in ascending agent order).
pub fn step(
    cfg: &SimConfig,
    states: &StateMatrix,
    g: &DiGraph,
    t: usize,
) -> Result<StepOutput, EngineError> {
    Protocol::new(cfg, None)?.step(states, g, t, None)
}

pub fn run(cfg: &SimConfig) -> Result<RunResult, EngineError> {
    run_with(cfg, &RunOptions::default())
}

pub fn run_with(cfg: &SimConfig, opts: &RunOptions) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    let schedule = resolve_schedule(cfg, opts)?;
    let initial = cfg.initial.materialize(cfg.dim, cfg.n - cfg.faulty.len())?;
    let proto = Protocol::new(cfg, opts.adversary.as_deref())?;
    Ok(drive(&proto, &schedule, initial, None, &cfg.record)?.0)
}

fn resolve_schedule(cfg: &SimConfig, opts: &RunOptions) -> Result<GraphSchedule, EngineError> {
    match &opts.schedule {
        Some(s) => {
            if s.n() != cfg.n || s.horizon() < cfg.iterations {
                return Err(EngineError::ScheduleMismatch {
                    n: cfg.n,
                    found: s.n(),
                    horizon: s.horizon(),
                    iterations: cfg.iterations,
                });
            }
            Ok(s.clone())
        }
        None => cfg.generate_schedule(),
    }
}

/// Runs the loop. With `shifts`, the run starts from the given states and
/// subtracts `prod_{s<t}(1 - gamma(s)) * shift` from each agent's noise, and
/// the per-iteration noise offsets are returned alongside.
fn drive(
    proto: &Protocol<'_>,
    schedule: &GraphSchedule,
    initial: StateMatrix,
    shifts: Option<&[Point]>,
    record: &RecordOptions,
) -> Result<(RunResult, Vec<Vec<Point>>), EngineError> {
    let cfg = proto.cfg;
    let rows = initial.len();
    let mut states = initial;
    let mut trajectory = record.trajectory.then(|| vec![states.clone()]);
    let mut transmitted = record.transmitted.then(Vec::new);
    let mut gamma_trace = Vec::with_capacity(cfg.iterations);
    let mut offset_trace = Vec::new();
    let mut decay = vec![1.0; rows];
    let mut fallback_steps = 0;
    for t in 0..cfg.iterations {
        let offsets: Option<Vec<Point>> =
            shifts.map(|d| d.iter().zip(&decay).map(|(s, c)| *s * -c).collect());
        let out = proto.step(&states, schedule.graph(t), t, offsets.as_deref())?;
        if let Some(o) = offsets {
            for (c, g) in decay.iter_mut().zip(&out.gammas) {
                *c *= 1.0 - g;
            }
            offset_trace.push(o);
        }
        fallback_steps += out.fallbacks;
        if let Some(tr) = transmitted.as_mut() {
            tr.push(StateMatrix::new(cfg.dim, out.transmitted)?);
        }
        gamma_trace.push(out.gammas);
        states = out.next;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(states.clone());
        }
    }
    Ok((
        RunResult {
            seed: cfg.seed,
            schedule_digest: schedule.digest(),
            normal_ids: proto.normal.clone(),
            final_states: states,
            trajectory,
            transmitted,
            gamma_trace,
            fallback_steps,
        },
        offset_trace,
    ))
}

/// A pair of runs sharing seed, schedule, step sizes and Byzantine draws: the
/// first from the configured initial states, the second from those states
/// plus `shifts[row]`, with its noise compensated so that both runs transmit
/// the same values. The third result holds the noise offset of every agent at
/// every iteration, `shift_trace[t][row]`.
pub fn run_coupled(
    cfg: &SimConfig,
    shifts: &[Point],
    opts: &RunOptions,
) -> Result<(RunResult, RunResult, Vec<Vec<Point>>), EngineError> {
    cfg.validate()?;
    let initial = cfg.initial.materialize(cfg.dim, cfg.n - cfg.faulty.len())?;
    if shifts.len() != initial.len() {
        return Err(config_err(
            "shifts",
            format!("{} shifts for {} normal agents", shifts.len(), initial.len()),
        ));
    }
    if let Some(s) = shifts.iter().find(|s| s.dim() != cfg.dim || !s.is_finite()) {
        return Err(config_err("shifts", format!("bad shift {s:?}")));
    }
    let schedule = resolve_schedule(cfg, opts)?;
    let proto = Protocol::new(cfg, opts.adversary.as_deref())?;
    let record = RecordOptions {
        transmitted: true,
        ..cfg.record.clone()
    };
    let (a, _) = drive(&proto, &schedule, initial.clone(), None, &record)?;
    let shifted = StateMatrix::new(
        cfg.dim,
        initial.rows().iter().zip(shifts).map(|(x, d)| *x + *d).collect(),
    )?;
    let (b, trace) = drive(&proto, &schedule, shifted, Some(shifts), &record)?;
    Ok((a, b, trace))
}

/// Seed of run `index` in an ensemble based on `base`.
pub fn ensemble_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, Purpose::Run, index as u64, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub index: usize,
    pub seed: u64,
    pub schedule_digest: u64,
    pub final_states: StateMatrix,
}

#[derive(Debug, Error)]
#[error("run {index} (seed {seed}) failed: {source}")]
pub struct EnsembleError {
    pub index: usize,
    pub seed: u64,
    #[source]
    pub source: EngineError,
}

/// `runs` independent runs with derived seeds, executed on the current rayon
/// pool. The result is ordered by run index and independent of scheduling.
pub fn run_ensemble(
    cfg: &SimConfig,
    runs: usize,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<EnsembleMember>, EnsembleError> {
    run_ensemble_with(cfg, runs, &RunOptions::default(), progress)
}

pub fn run_ensemble_with(
    cfg: &SimConfig,
    runs: usize,
    opts: &RunOptions,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<EnsembleMember>, EnsembleError> {
    let results: Vec<Result<EnsembleMember, EnsembleError>> = (0..runs)
        .into_par_iter()
        .map(|index| {
            let seed = ensemble_seed(cfg.seed, index);
            let mut c = cfg.clone();
            c.seed = seed;
            c.record = RecordOptions::default();
            let r = run_with(&c, opts).map_err(|source| EnsembleError { index, seed, source })?;
            if let Some(p) = progress {
                p.fetch_add(1, Ordering::Relaxed);
            }
            Ok(EnsembleMember {
                index,
                seed,
                schedule_digest: r.schedule_digest,
                final_states: r.final_states,
            })
        })
        .collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn base_cfg() -> SimConfig {
        SimConfig {
            n: 10,
            faulty: vec![8, 9],
            dim: 2,
            noise: NoiseSchedule::new(2.0, 0.75),
            gamma: GammaPolicy::fixed(0.8),
            iterations: 60,
            topology: TopologyPolicy::RandomIn {
                faulty_in: None,
                min_normal: None,
            },
            window_len: 1,
            byzantine: ByzantineStrategy::box_random(vec![-0.7, 0.3], vec![-0.3, 0.7]),
            initial: InitialStates::UniformBox {
                lo: -1.0,
                hi: 1.0,
                seed: 7,
            },
            seed: 42,
            record: RecordOptions::default(),
            verify_resilience: true,
            search: CenterpointSearch::default(),
        }
    }

    #[test]
    fn noise_std_and_mask() {
        let s = NoiseSchedule::new(2.0, 0.75);
        assert_eq!(s.std_at(0), 2.0);
        assert!((s.std_at(2) - 1.125).abs() < 1e-15);
        let m = NoiseSchedule::masked(2.0, 0.75, vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..20 {
            let p = sample_noise(t, &m, 2, &mut rng);
            assert_eq!(p[0], 0.0);
        }
    }

    #[test]
    fn byzantine_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ByzantineStrategy::box_random(vec![-0.7, 0.3], vec![-0.3, 0.7]);
        let m = byzantine_messages(&s, &[0, 2, 5], &mut rng).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|(_, p)| (-0.7..=-0.3).contains(&p[0]) && (0.3..=0.7).contains(&p[1])));
        assert_ne!(m[0].1, m[1].1);

        let shared = ByzantineStrategy {
            per_recipient: false,
            ..s
        };
        let m = byzantine_messages(&shared, &[0, 2, 5], &mut rng).unwrap();
        assert!(m.iter().all(|(_, p)| *p == m[0].1));

        let fixed = ByzantineStrategy::fixed_point(Point::xy(3.0, 3.0));
        let m = byzantine_messages(&fixed, &[1, 4], &mut rng).unwrap();
        assert!(m.iter().all(|(_, p)| *p == Point::xy(3.0, 3.0)));
    }

    #[test]
    fn validation_names_fields() {
        let mut c = base_cfg();
        c.gamma = GammaPolicy::fixed(0.2);
        match c.validate().unwrap_err() {
            EngineError::Config { field, .. } => assert_eq!(field, "gamma.lower"),
            e => panic!("{e}"),
        }
        let mut c = base_cfg();
        c.faulty = vec![10];
        assert!(c.validate().is_err());
        let mut c = base_cfg();
        c.noise.upsilon = 1.0;
        assert!(c.validate().is_err());
        assert!(base_cfg().validate().is_ok());
    }

    #[test]
    fn fixed_point_when_states_coincide() {
        let p = Point::xy(0.3, -0.2);
        let cfg = SimConfig {
            n: 3,
            faulty: vec![],
            noise: NoiseSchedule::new(0.0, 0.75),
            topology: TopologyPolicy::Complete,
            initial: InitialStates::Explicit { states: vec![p; 3] },
            iterations: 5,
            ..base_cfg()
        };
        let r = run(&cfg).unwrap();
        assert!(r.final_states.rows().iter().all(|q| *q == p));
    }

    #[test]
    fn noiseless_step_stays_in_hull() {
        let init = vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(0.2, 0.9)];
        let cfg = SimConfig {
            n: 3,
            faulty: vec![],
            noise: NoiseSchedule::new(0.0, 0.75),
            topology: TopologyPolicy::Complete,
            initial: InitialStates::Explicit {
                states: init.clone(),
            },
            ..base_cfg()
        };
        let states = StateMatrix::new(2, init.clone()).unwrap();
        let out = step(&cfg, &states, &DiGraph::complete(3), 0).unwrap();
        let hull = convex_hull(&init, 2).unwrap();
        for p in out.next.rows() {
            assert!(hull.contains(p, 1e-9).unwrap());
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let mut cfg = base_cfg();
        cfg.record.trajectory = true;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.as_ref().unwrap().len(), 61);
        assert_eq!(
            a.trajectory.as_ref().unwrap()[0],
            cfg.initial.materialize(2, 8).unwrap()
        );
        cfg.seed = 43;
        let c = run(&cfg).unwrap();
        assert_ne!(a.final_states, c.final_states);
    }

    #[test]
    fn coupled_zero_shift_is_identical() {
        let cfg = base_cfg();
        let (a, b, trace) =
            run_coupled(&cfg, &vec![Point::zeros(2); 8], &RunOptions::default()).unwrap();
        assert_eq!(a.final_states, b.final_states);
        assert_eq!(a.transmitted, b.transmitted);
        assert!(trace.iter().flatten().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn coupled_shift_keeps_transmissions() {
        let cfg = base_cfg();
        let shifts: Vec<Point> = (0..8)
            .map(|i| Point::xy(0.02 * i as f64, -0.01 * i as f64))
            .collect();
        let (a, b, trace) = run_coupled(&cfg, &shifts, &RunOptions::default()).unwrap();
        let (ya, yb) = (a.transmitted.unwrap(), b.transmitted.unwrap());
        for (ma, mb) in ya.iter().zip(&yb) {
            for (p, q) in ma.rows().iter().zip(mb.rows()) {
                assert!((*p - *q).norm() <= 1e-9);
            }
        }
        assert_eq!(trace.len(), 60);
        assert!((trace[0][3] + shifts[3]).norm() == 0.0);
        assert!((trace[1][3].norm() - 0.2 * shifts[3].norm()).abs() < 1e-15);
    }

    #[test]
    fn custom_strategy_needs_adversary() {
        struct Mirror;
        impl Adversary for Mirror {
            fn message(&self, view: &AdversaryView<'_>, _rng: &mut ChaCha8Rng) -> Point {
                -view.transmitted[0]
            }
        }
        let mut cfg = base_cfg();
        cfg.byzantine = ByzantineStrategy {
            kind: ByzantineKind::Custom {
                label: "mirror".into(),
            },
            per_recipient: true,
        };
        assert!(matches!(run(&cfg), Err(EngineError::MissingAdversary(_))));
        let opts = RunOptions {
            adversary: Some(Arc::new(Mirror)),
            schedule: None,
        };
        assert!(run_with(&cfg, &opts).is_ok());
    }

    #[test]
    fn ensemble_order_and_seeds() {
        let mut cfg = base_cfg();
        cfg.iterations = 20;
        let e = run_ensemble(&cfg, 4, None).unwrap();
        assert_eq!(e.len(), 4);
        for (k, m) in e.iter().enumerate() {
            assert_eq!(m.index, k);
            assert_eq!(m.seed, ensemble_seed(cfg.seed, k));
            let mut c = cfg.clone();
            c.seed = m.seed;
            assert_eq!(run(&c).unwrap().final_states, m.final_states);
        }
    }
}
