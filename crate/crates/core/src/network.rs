//! Time-varying directed communication graphs.
//!
//! Agents are numbered `0..n`. An edge `(j, i)` means agent `i` receives from
//! agent `j`, so `j` is an in-neighbour of `i`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::StableHasher;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("empty graph sequence")]
    EmptySequence,
    #[error("graph size mismatch: expected {expected} agents, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("agent {agent} out of range for n = {n}")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("self-loop at agent {0}")]
    SelfLoop(usize),
    #[error("invalid window boundaries: {0}")]
    InvalidWindows(String),
    #[error("topology policy infeasible in window starting at t = {window_start} after {attempts} attempts: {reason}")]
    InfeasiblePolicy {
        window_start: usize,
        attempts: usize,
        reason: String,
    },
    #[error("schedule text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Directed graph without self-loops, stored as sorted in-neighbour lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiGraph {
    in_adj: Vec<Vec<usize>>,
}

impl DiGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            in_adj: vec![Vec::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            in_adj: (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
        }
    }

    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        let mut sets = vec![BTreeSet::new(); n];
        for (from, to) in edges {
            for a in [from, to] {
                if a >= n {
                    return Err(NetworkError::AgentOutOfRange { agent: a, n });
                }
            }
            if from == to {
                return Err(NetworkError::SelfLoop(from));
            }
            sets[to].insert(from);
        }
        Ok(Self {
            in_adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Build directly from in-neighbour lists (sorted and deduplicated here).
    pub fn from_in_neighbors(mut in_adj: Vec<Vec<usize>>) -> Result<Self, NetworkError> {
        let n = in_adj.len();
        for (i, list) in in_adj.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&a) = list.iter().find(|&&a| a >= n) {
                return Err(NetworkError::AgentOutOfRange { agent: a, n });
            }
            if list.binary_search(&i).is_ok() {
                return Err(NetworkError::SelfLoop(i));
            }
        }
        Ok(Self { in_adj })
    }

    pub fn n(&self) -> usize {
        self.in_adj.len()
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_adj[i]
    }

    /// Edges as `(from, to)` pairs, ordered by `to` then `from`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.in_adj
            .iter()
            .enumerate()
            .flat_map(|(to, list)| list.iter().map(move |&from| (from, to)))
    }

    pub fn edge_count(&self) -> usize {
        self.in_adj.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.in_adj
            .get(to)
            .is_some_and(|l| l.binary_search(&from).is_ok())
    }
}

/// Edge union of graphs sharing the same agent count.
pub fn union_graph(graphs: &[DiGraph]) -> Result<DiGraph, NetworkError> {
    let first = graphs.first().ok_or(NetworkError::EmptySequence)?;
    let n = first.n();
    let mut sets = vec![BTreeSet::new(); n];
    for g in graphs {
        if g.n() != n {
            return Err(NetworkError::SizeMismatch {
                expected: n,
                found: g.n(),
            });
        }
        for (from, to) in g.edges() {
            sets[to].insert(from);
        }
    }
    Ok(DiGraph {
        in_adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

/// True iff some vertex is reachable from every other vertex in the union.
pub fn is_jointly_reachable(graphs: &[DiGraph]) -> Result<bool, NetworkError> {
    let u = union_graph(graphs)?;
    let all: Vec<usize> = (0..u.n()).collect();
    Ok(has_sink_among(&u, &all))
}

/// Joint reachability of the union restricted to the vertex subset `keep`.
pub fn is_jointly_reachable_among(
    graphs: &[DiGraph],
    keep: &[usize],
) -> Result<bool, NetworkError> {
    let u = union_graph(graphs)?;
    if let Some(&a) = keep.iter().find(|&&a| a >= u.n()) {
        return Err(NetworkError::AgentOutOfRange { agent: a, n: u.n() });
    }
    Ok(has_sink_among(&u, keep))
}

/// Reverse BFS from each candidate sink over in-edges inside `keep`.
fn has_sink_among(g: &DiGraph, keep: &[usize]) -> bool {
    if keep.len() <= 1 {
        return true;
    }
    let mut inside = vec![false; g.n()];
    for &k in keep {
        inside[k] = true;
    }
    let mut seen = vec![false; g.n()];
    let mut queue = VecDeque::new();
    for &v in keep {
        seen.iter_mut().for_each(|s| *s = false);
        seen[v] = true;
        queue.clear();
        queue.push_back(v);
        let mut count = 1;
        while let Some(x) = queue.pop_front() {
            for &j in g.in_neighbors(x) {
                if inside[j] && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        if count == keep.len() {
            return true;
        }
    }
    false
}

/// Fault-fraction condition: every normal agent has strictly fewer than
/// `|N_i| / (dim + 1)` faulty in-neighbours. An agent with no faulty
/// in-neighbour satisfies it regardless of its degree.
pub fn fault_condition_ok(g: &DiGraph, faulty: &[usize], dim: usize) -> bool {
    let is_faulty = membership(g.n(), faulty);
    (0..g.n()).filter(|&i| !is_faulty[i]).all(|i| {
        let nb = g.in_neighbors(i);
        let f = nb.iter().filter(|&&j| is_faulty[j]).count();
        f == 0 || f * (dim + 1) < nb.len()
    })
}

fn membership(n: usize, set: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &a in set {
        if a < n {
            m[a] = true;
        }
    }
    m
}

fn check_agents(n: usize, set: &[usize]) -> Result<(), NetworkError> {
    match set.iter().find(|&&a| a >= n) {
        Some(&a) => Err(NetworkError::AgentOutOfRange { agent: a, n }),
        None => Ok(()),
    }
}

/// A finite graph sequence partitioned into reachability windows
/// `[windows[j], windows[j+1])`, the last one running to the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSchedule {
    n: usize,
    graphs: Vec<DiGraph>,
    windows: Vec<usize>,
}

impl GraphSchedule {
    pub fn new(n: usize, graphs: Vec<DiGraph>, windows: Vec<usize>) -> Result<Self, NetworkError> {
        if let Some(g) = graphs.iter().find(|g| g.n() != n) {
            return Err(NetworkError::SizeMismatch {
                expected: n,
                found: g.n(),
            });
        }
        let horizon = graphs.len();
        if horizon > 0 {
            if windows.first() != Some(&0) {
                return Err(NetworkError::InvalidWindows("first window must start at 0".into()));
            }
            if windows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(NetworkError::InvalidWindows("boundaries must increase".into()));
            }
            if windows.last().is_some_and(|&w| w >= horizon) {
                return Err(NetworkError::InvalidWindows("boundary beyond horizon".into()));
            }
        } else if !windows.is_empty() {
            return Err(NetworkError::InvalidWindows("windows on an empty schedule".into()));
        }
        Ok(Self { n, graphs, windows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.graphs.len()
    }

    pub fn graphs(&self) -> &[DiGraph] {
        &self.graphs
    }

    pub fn graph(&self, t: usize) -> &DiGraph {
        &self.graphs[t]
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    /// Index ranges of the windows.
    pub fn window_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.windows.len());
        for (j, &start) in self.windows.iter().enumerate() {
            let end = self.windows.get(j + 1).copied().unwrap_or(self.horizon());
            out.push(start..end);
        }
        out
    }

    pub fn digest(&self) -> u64 {
        let mut h = StableHasher::default();
        h.write_u64(self.n as u64);
        for w in &self.windows {
            h.write_u64(*w as u64);
        }
        for (t, g) in self.graphs.iter().enumerate() {
            h.write_u64(t as u64);
            h.write_u64(g.edge_count() as u64);
            for (from, to) in g.edges() {
                h.write_u64(from as u64);
                h.write_u64(to as u64);
            }
        }
        h.finish()
    }

    /// Line-oriented text: header lines `n <count>` and `windows <b0> <b1> ...`,
    /// then one line per iteration `<t> <from>><to> ...`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n {}", self.n).unwrap();
        s.push_str("windows");
        for w in &self.windows {
            write!(s, " {w}").unwrap();
        }
        s.push('\n');
        for (t, g) in self.graphs.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for (from, to) in g.edges() {
                write!(s, " {from}>{to}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let err = |line: usize, msg: &str| NetworkError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut n = None;
        let mut windows = Vec::new();
        let mut graphs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap();
            match head {
                "n" => {
                    let v = tok.next().ok_or_else(|| err(ln, "missing agent count"))?;
                    n = Some(v.parse::<usize>().map_err(|_| err(ln, "bad agent count"))?);
                }
                "windows" => {
                    windows = tok
                        .map(|w| w.parse::<usize>().map_err(|_| err(ln, "bad window boundary")))
                        .collect::<Result<_, _>>()?;
                }
                _ => {
                    let n = n.ok_or_else(|| err(ln, "graph line before `n` header"))?;
                    let t: usize = head.parse().map_err(|_| err(ln, "bad iteration index"))?;
                    if t != graphs.len() {
                        return Err(err(ln, "iteration indices must be consecutive from 0"));
                    }
                    let mut edges = Vec::new();
                    for e in tok {
                        let (a, b) = e.split_once('>').ok_or_else(|| err(ln, "edge must be from>to"))?;
                        let a = a.parse::<usize>().map_err(|_| err(ln, "bad edge endpoint"))?;
                        let b = b.parse::<usize>().map_err(|_| err(ln, "bad edge endpoint"))?;
                        edges.push((a, b));
                    }
                    graphs.push(DiGraph::from_edges(n, edges).map_err(|e| err(ln, &e.to_string()))?);
                }
            }
        }
        let n = n.ok_or_else(|| err(0, "missing `n` header"))?;
        GraphSchedule::new(n, graphs, windows)
    }
}

/// Finite-horizon repeated reachability: every window's union, restricted to
/// the normal agents, is jointly reachable.
pub fn check_repeated_reachability(
    schedule: &GraphSchedule,
    faulty: &[usize],
) -> Result<bool, NetworkError> {
    check_agents(schedule.n(), faulty)?;
    let normal = normal_agents(schedule.n(), faulty);
    for r in schedule.window_ranges() {
        if !is_jointly_reachable_among(&schedule.graphs()[r], &normal)? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn normal_agents(n: usize, faulty: &[usize]) -> Vec<usize> {
    let is_faulty = membership(n, faulty);
    (0..n).filter(|&i| !is_faulty[i]).collect()
}

/// How normal agents' in-neighbourhoods are drawn at each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyPolicy {
    /// Every agent hears every other agent.
    Complete,
    /// Exactly `k` in-neighbours: every faulty agent plus `k - |faulty|`
    /// normal agents drawn uniformly.
    RandomKIn { k: usize },
    /// `faulty_in` faulty in-neighbours (all when absent) plus a uniformly
    /// sized, uniformly drawn set of normal in-neighbours with at least
    /// `min_normal` members (the smallest count satisfying the fault
    /// condition when absent).
    RandomIn {
        #[serde(default)]
        faulty_in: Option<usize>,
        #[serde(default)]
        min_normal: Option<usize>,
    },
}

/// Retry budget per window for [`generate_schedule`].
pub const DEFAULT_RETRIES: usize = 1_000;

/// Draw a schedule whose every graph satisfies the fault condition and whose
/// every window is jointly reachable among the normal agents.
pub fn generate_schedule<R: Rng + ?Sized>(
    policy: &TopologyPolicy,
    n: usize,
    faulty: &[usize],
    dim: usize,
    horizon: usize,
    window_len: usize,
    rng: &mut R,
) -> Result<GraphSchedule, NetworkError> {
    check_agents(n, faulty)?;
    if window_len == 0 {
        return Err(NetworkError::InvalidWindows("window length must be >= 1".into()));
    }
    let normal = normal_agents(n, faulty);
    let mut faulty_sorted = faulty.to_vec();
    faulty_sorted.sort_unstable();
    faulty_sorted.dedup();
    let mut graphs = Vec::with_capacity(horizon);
    let windows: Vec<usize> = (0..horizon).step_by(window_len).collect();
    for &start in &windows {
        let end = (start + window_len).min(horizon);
        let mut attempt = 0;
        loop {
            if attempt == DEFAULT_RETRIES {
                return Err(NetworkError::InfeasiblePolicy {
                    window_start: start,
                    attempts: attempt,
                    reason: format!(
                        "no draw satisfied the fault condition and joint reachability \
                         ({} faulty, dim {dim}, policy {policy:?})",
                        faulty_sorted.len()
                    ),
                });
            }
            attempt += 1;
            let window: Vec<DiGraph> = (start..end)
                .map(|_| draw_graph(policy, n, &faulty_sorted, &normal, dim, rng))
                .collect();
            if window.iter().all(|g| fault_condition_ok(g, &faulty_sorted, dim))
                && is_jointly_reachable_among(&window, &normal)?
            {
                graphs.extend(window);
                break;
            }
        }
    }
    GraphSchedule::new(n, graphs, windows)
}

fn draw_graph<R: Rng + ?Sized>(
    policy: &TopologyPolicy,
    n: usize,
    faulty: &[usize],
    normal: &[usize],
    dim: usize,
    rng: &mut R,
) -> DiGraph {
    if let TopologyPolicy::Complete = policy {
        return DiGraph::complete(n);
    }
    let mut in_adj = vec![Vec::new(); n];
    for &i in normal {
        let others: Vec<usize> = normal.iter().copied().filter(|&j| j != i).collect();
        let (faulty_pick, normal_count) = match *policy {
            TopologyPolicy::RandomKIn { k } => {
                (faulty.to_vec(), k.saturating_sub(faulty.len()).min(others.len()))
            }
            TopologyPolicy::RandomIn {
                faulty_in,
                min_normal,
            } => {
                let f = faulty_in.unwrap_or(faulty.len()).min(faulty.len());
                let pick: Vec<usize> = sample(rng, faulty.len(), f)
                    .into_iter()
                    .map(|x| faulty[x])
                    .collect();
                // need f (dim + 1) < m + f, i.e. m > f dim
                let lo = min_normal
                    .unwrap_or(if f == 0 { 1 } else { f * dim + 1 })
                    .min(others.len());
                let m = rng.gen_range(lo..=others.len());
                (pick, m)
            }
            TopologyPolicy::Complete => unreachable!(),
        };
        let list = &mut in_adj[i];
        list.extend(faulty_pick);
        list.extend(
            sample(rng, others.len(), normal_count)
                .into_iter()
                .map(|x| others[x]),
        );
    }
    DiGraph::from_in_neighbors(in_adj).expect("draws stay in range and avoid self-loops")
}
