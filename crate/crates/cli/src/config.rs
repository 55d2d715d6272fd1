//! Experiment configuration: a simulation plus the runs, analyses, privacy
//! audit and plots requested on top of it. Stored as TOML.

use std::path::{Path, PathBuf};

use resvec_core::analysis::{
    DEFAULT_COVERAGE_SLACK, DEFAULT_MEMBERSHIP_SLACK, DEFAULT_REL_TOL, DEFAULT_VARIANCE_SLACK,
};
use resvec_core::engine::SimConfig;
use resvec_core::geometry::Point;
use resvec_core::presets;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retain {
    #[default]
    Finals,
    Trajectories,
    Transmitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    /// Mahalanobis thresholds for coverage and tail checks.
    #[serde(default)]
    pub chis: Vec<f64>,
    #[serde(default)]
    pub chebyshev: bool,
    #[serde(default)]
    pub variance: bool,
    /// Hull-membership check: noisy dimensions and their margins.
    #[serde(default)]
    pub noisy_dims: Vec<usize>,
    #[serde(default)]
    pub margins: Vec<f64>,
    #[serde(default = "coverage_slack")]
    pub coverage_slack: f64,
    #[serde(default = "variance_slack")]
    pub variance_slack: f64,
    #[serde(default = "membership_slack")]
    pub membership_slack: f64,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
}

fn coverage_slack() -> f64 {
    DEFAULT_COVERAGE_SLACK
}
fn variance_slack() -> f64 {
    DEFAULT_VARIANCE_SLACK
}
fn membership_slack() -> f64 {
    DEFAULT_MEMBERSHIP_SLACK
}
fn rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

impl Default for AnalysisRequest {
    fn default() -> Self {
        Self {
            chis: Vec::new(),
            chebyshev: false,
            variance: false,
            noisy_dims: Vec::new(),
            margins: Vec::new(),
            coverage_slack: DEFAULT_COVERAGE_SLACK,
            variance_slack: DEFAULT_VARIANCE_SLACK,
            membership_slack: DEFAULT_MEMBERSHIP_SLACK,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl AnalysisRequest {
    pub fn is_empty(&self) -> bool {
        self.chis.is_empty() && !self.variance && self.margins.is_empty()
    }

    pub fn membership(&self) -> bool {
        !self.margins.is_empty()
    }
}

/// The second run of a privacy pair starts from the configured initial
/// states shifted by exactly one of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    /// One shift per normal agent.
    Explicit { shifts: Vec<Point> },
    /// The second run's initial states, one per normal agent.
    Paired { initial: Vec<Point> },
    /// Uniform in the ball of the given radius, drawn from `seed`.
    Ball { radius: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyRequest {
    pub alphas: Vec<f64>,
    pub shift: ShiftSpec,
    /// Iterations summed in the divergence; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Sensitivity and failure probability of the `(epsilon, delta)` table.
    #[serde(default = "unit")]
    pub ell: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_dp_rows")]
    pub dp_rows: usize,
}

fn unit() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_dp_rows() -> usize {
    10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Initial states and their hull.
    Initial,
    /// Ensemble finals over the initial hull and, when margins are set, the
    /// widened hull.
    Finals,
    /// Ensemble finals with concentric Mahalanobis ellipses.
    Mahalanobis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotRequest {
    #[serde(default)]
    pub kinds: Vec<PlotKind>,
    #[serde(default = "plot_chis")]
    pub chis: Vec<f64>,
}

fn plot_chis() -> Vec<f64> {
    vec![2.0, 3.0, 4.0, 5.0]
}

impl Default for PlotRequest {
    fn default() -> Self {
        Self {
            kinds: Vec::new(),
            chis: plot_chis(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub retain: Retain,
    pub sim: SimConfig,
    #[serde(default)]
    pub analysis: AnalysisRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyRequest>,
    #[serde(default)]
    pub plot: PlotRequest,
}

fn one() -> usize {
    1
}

fn finite_positive(field: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        Some(x) => Err(CliError::config(field, format!("{x} is not a finite positive number"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().to_string();
            CliError::config(if path == "." { "<root>".into() } else { path }, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs serialize to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CliError::config("runs", "must be >= 1"));
        }
        self.sim.validate()?;
        let dim = self.sim.dim;
        let a = &self.analysis;
        finite_positive("analysis.chis", &a.chis)?;
        for (field, v) in [
            ("analysis.coverage_slack", a.coverage_slack),
            ("analysis.variance_slack", a.variance_slack),
            ("analysis.membership_slack", a.membership_slack),
            ("analysis.rel_tol", a.rel_tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::config(field, "must be finite and non-negative"));
            }
        }
        if a.chebyshev && a.chis.is_empty() {
            return Err(CliError::config("analysis.chis", "the tail check needs thresholds"));
        }
        if a.noisy_dims.len() != a.margins.len() {
            return Err(CliError::config(
                "analysis.margins",
                format!("{} margins for {} noisy dimensions", a.margins.len(), a.noisy_dims.len()),
            ));
        }
        if let Some(r) = a.margins.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(CliError::config("analysis.margins", format!("margin {r} must be >= 0")));
        }
        if a.membership() {
            let mut want = a.noisy_dims.clone();
            want.sort_unstable();
            want.dedup();
            if want.len() != a.noisy_dims.len() {
                return Err(CliError::config("analysis.noisy_dims", "duplicate dimensions"));
            }
            if want.len() >= dim || want.iter().any(|&k| k >= dim) {
                return Err(CliError::config(
                    "analysis.noisy_dims",
                    format!("must be a proper subset of 0..{dim}"),
                ));
            }
            let noisy = self.sim.noise.noisy_dims(dim);
            if self.sim.noise.lambda > 0.0 && noisy != want {
                return Err(CliError::config(
                    "analysis.noisy_dims",
                    format!("membership needs noise confined to {want:?}, but the noise acts on {noisy:?}"),
                ));
            }
        }
        if let Some(p) = &self.privacy {
            self.validate_privacy(p)?;
        }
        finite_positive("plot.chis", &self.plot.chis)?;
        if dim == 3 && self.plot.kinds.contains(&PlotKind::Mahalanobis) {
            return Err(CliError::config("plot.kinds", "ellipse overlays need d = 2"));
        }
        Ok(())
    }

    fn validate_privacy(&self, p: &PrivacyRequest) -> Result<()> {
        let noise = &self.sim.noise;
        if noise.noisy_dims(self.sim.dim).len() != self.sim.dim {
            return Err(CliError::config("sim.noise.mask", "the privacy audit needs noise on every dimension"));
        }
        if p.alphas.is_empty() {
            return Err(CliError::config("privacy.alphas", "at least one order is needed"));
        }
        if let Some(a) = p.alphas.iter().find(|a| !(a.is_finite() && **a > 1.0)) {
            return Err(CliError::config("privacy.alphas", format!("order {a} must exceed 1")));
        }
        if !(p.ell.is_finite() && p.ell > 0.0) {
            return Err(CliError::config("privacy.ell", "must be finite and positive"));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(CliError::config("privacy.delta", "must lie in (0, 1)"));
        }
        if let Some(h) = p.horizon {
            if h == 0 || h > self.sim.iterations {
                return Err(CliError::config(
                    "privacy.horizon",
                    format!("must lie in 1..={}", self.sim.iterations),
                ));
            }
        }
        let normal = self.sim.n - self.sim.faulty.len();
        let dim = self.sim.dim;
        let rows = |field: &str, pts: &[Point]| {
            if pts.len() != normal {
                return Err(CliError::config(field, format!("{} rows for {normal} normal agents", pts.len())));
            }
            match pts.iter().find(|p| p.dim() != dim || !p.is_finite()) {
                Some(p) => Err(CliError::config(field, format!("{p:?} is not a finite {dim}-vector"))),
                None => Ok(()),
            }
        };
        match &p.shift {
            ShiftSpec::Explicit { shifts } => rows("privacy.shift.shifts", shifts),
            ShiftSpec::Paired { initial } => rows("privacy.shift.initial", initial),
            ShiftSpec::Ball { radius, .. } if !(radius.is_finite() && *radius >= 0.0) => {
                Err(CliError::config("privacy.shift.radius", "must be finite and non-negative"))
            }
            ShiftSpec::Ball { .. } => Ok(()),
        }
    }

    /// Output directory: the `--out` override, the config's `out`, or
    /// `out/<config stem>`.
    pub fn out_dir(&self, override_dir: Option<&Path>, config_path: &Path) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        if let Some(d) = &self.out {
            return d.clone();
        }
        let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Path::new("out").join(stem.unwrap_or_else(|| "run".into()))
    }
}

/// Experiment config for one of the named scenarios.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let (_, sim) = presets::named().into_iter().find(|(n, _)| *n == name)?;
    let dim = sim.dim;
    let noisy = sim.noise.mask.clone();
    let mut cfg = ExperimentConfig {
        runs: 1000,
        out: None,
        retain: Retain::Finals,
        sim,
        analysis: AnalysisRequest::default(),
        privacy: None,
        plot: PlotRequest::default(),
    };
    if name == "privacy_pair" {
        cfg.runs = 1;
        cfg.privacy = Some(PrivacyRequest {
            alphas: vec![1.5, 2.0, 4.0, 8.0],
            shift: ShiftSpec::Ball { radius: 0.25, seed: 1 },
            horizon: None,
            ell: 1.0,
            delta: 0.05,
            dp_rows: 10,
        });
        cfg.plot.kinds = vec![PlotKind::Initial];
        return Some(cfg);
    }
    cfg.analysis.variance = true;
    cfg.analysis.chebyshev = true;
    cfg.analysis.chis = if dim == 2 { vec![2.0, 3.0, 4.0, 5.0] } else { vec![3.0] };
    if let Some(mask) = noisy {
        cfg.analysis.margins = vec![0.3; mask.len()];
        cfg.analysis.noisy_dims = mask;
    }
    cfg.plot.kinds = if dim == 2 {
        vec![PlotKind::Initial, PlotKind::Finals, PlotKind::Mahalanobis]
    } else {
        vec![PlotKind::Initial, PlotKind::Finals]
    };
    Some(cfg)
}

pub const PRESET_HEADER: &str = "\
# Initial states are drawn uniformly from the [-1, 1] box with a fixed seed.
# Replace [sim.initial] with kind = \"explicit\" and a `states` list to pin
# other states.
";
