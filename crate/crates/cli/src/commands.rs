//! The `sim` subcommands. Each one writes its files under the output
//! directory and returns a plain-text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resvec_core::analysis::{
    chebyshev_tail, ensemble_stats, mahalanobis_coverage, membership_report, variance_bound_check,
    CoverageReport, Ensemble, MembershipReport, TailRow, VarianceReport,
};
use resvec_core::engine::{run, run_coupled, run_ensemble, RecordOptions, RunOptions};
use resvec_core::geometry::{build_hulls_bc, convex_hull, Point, StateMatrix, DEFAULT_TOL};
use resvec_core::privacy::{
    audit_divergence, cgp_rho, dp_epsilon, shift_distance, CgpParams, DpRow, PrivacyReport,
};
use resvec_core::presets;
use serde::Serialize;

use crate::config::{preset, ExperimentConfig, PlotKind, Retain, ShiftSpec, PRESET_HEADER};
use crate::plot::{hull_outline, mahalanobis_ellipses, outline, project, Figure, Layer};
use crate::records::{read_ensemble, read_records, trace_lines, MemberRecord, Record, RunRecord};
use crate::{CliError, Result};

/// Largest transmitted gap between coupled runs that is not a defect.
pub const TRANSMITTED_GAP_TOL: f64 = 1e-9;

pub const ENSEMBLE_FILE: &str = "ensemble.ndrec";
pub const RUN_FILE: &str = "run.ndrec";

/// Command-line overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub jobs: Option<usize>,
    /// Record file to read instead of the one in the output directory.
    pub input: Option<PathBuf>,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub input: Option<PathBuf>,
}

impl Context {
    pub fn load(config_path: &Path, ov: &Overrides) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(config_path)?;
        if let Some(seed) = ov.seed {
            cfg.sim.seed = seed;
        }
        if let Some(runs) = ov.runs {
            cfg.runs = runs;
        }
        cfg.validate()?;
        let out = cfg.out_dir(ov.out.as_deref(), config_path);
        Ok(Self {
            cfg,
            out,
            jobs: ov.jobs,
            input: ov.input.clone(),
        })
    }

    fn input_or(&self, name: &str) -> PathBuf {
        self.input.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(name, &text)
    }

    fn initials(&self) -> Result<StateMatrix> {
        let sim = &self.cfg.sim;
        Ok(sim.initial.materialize(sim.dim, sim.n - sim.faulty.len())?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Engine(format!("thread pool: {e}")))
    }
}

/// Text summary plus the failed checks, if any.
#[derive(Debug, Default)]
pub struct Outcome {
    pub text: String,
    pub failed: Vec<String>,
}

impl Outcome {
    pub fn into_result(self) -> (String, Option<CliError>) {
        let err = (!self.failed.is_empty()).then(|| CliError::Check(self.failed.join("; ")));
        (self.text, err)
    }
}

fn fmt_point(p: &Point) -> String {
    let parts: Vec<String> = p.as_slice().iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

pub fn cmd_run(ctx: &Context) -> Result<Outcome> {
    let mut sim = ctx.cfg.sim.clone();
    sim.record = RecordOptions {
        trajectory: ctx.cfg.retain == Retain::Trajectories,
        transmitted: ctx.cfg.retain == Retain::Transmitted,
    };
    let r = run(&sim)?;
    let rec = RunRecord::from_result(&r, ctx.cfg.sim.digest());
    let mut files = vec![ctx.write(RUN_FILE, &(rec.emit()? + "\n"))?];
    if let Some(traj) = &r.trajectory {
        files.push(ctx.write("traj.ndrec", &trace_lines(traj, &r.normal_ids)?)?);
    }
    if let Some(tx) = &r.transmitted {
        files.push(ctx.write("transmitted.ndrec", &trace_lines(tx, &r.normal_ids)?)?);
    }
    let mut text = String::new();
    writeln!(text, "run seed {}: {} normal agents in {}D", r.seed, r.final_states.len(), sim.dim).unwrap();
    writeln!(text, "consensus value {}", fmt_point(&r.consensus_value())).unwrap();
    writeln!(text, "final spread {:.3e}", r.final_states.max_pairwise_distance()).unwrap();
    writeln!(text, "degenerate-neighbourhood steps {}", r.fallback_steps).unwrap();
    for f in files {
        writeln!(text, "wrote {}", f.display()).unwrap();
    }
    Ok(Outcome { text, failed: vec![] })
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    runs: usize,
    dim: usize,
    config_digest: u64,
    mean: Point,
    /// Distance from the mean to the hull of the initial states.
    mean_hull_distance: f64,
    /// Share of per-run values inside that hull.
    inside_hull: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn ensemble_of(members: &[MemberRecord], digest: u64) -> Result<Ensemble> {
    let finals = members.iter().map(MemberRecord::consensus_value).collect::<Result<Vec<_>>>()?;
    Ok(Ensemble::new(members[0].d, finals, digest)?)
}

pub fn cmd_ensemble(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let runs = cfg.runs;
    let pool = ctx.pool()?;
    let counter = AtomicUsize::new(0);
    let done = AtomicBool::new(false);
    let members = std::thread::scope(|s| {
        s.spawn(|| {
            let start = Instant::now();
            let mut last = start;
            while !done.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(100));
                if last.elapsed() >= Duration::from_secs(5) {
                    last = Instant::now();
                    let k = counter.load(Ordering::Relaxed);
                    eprintln!("ensemble: {k}/{runs} runs after {:.0}s", start.elapsed().as_secs_f64());
                }
            }
        });
        let r = pool.install(|| run_ensemble(&cfg.sim, runs, Some(&counter)));
        done.store(true, Ordering::Relaxed);
        r
    })?;
    let digest = cfg.sim.digest();
    let records: Vec<MemberRecord> = members.iter().map(|m| MemberRecord::from_member(m, digest)).collect();
    let mut body = String::new();
    for r in &records {
        body.push_str(&r.emit()?);
        body.push('\n');
    }
    let file = ctx.write(ENSEMBLE_FILE, &body)?;

    let e = ensemble_of(&records, digest)?;
    let initials = ctx.initials()?;
    let hull = convex_hull(initials.rows(), e.dim).map_err(|e| CliError::Engine(e.to_string()))?;
    let mean = Point::centroid(&e.finals).expect("non-empty");
    let mut inside = 0usize;
    for p in &e.finals {
        if hull.contains(p, DEFAULT_TOL).map_err(|e| CliError::Engine(e.to_string()))? {
            inside += 1;
        }
    }
    let (covariance, note) = if runs >= 2 {
        let (_, cov) = ensemble_stats(&e)?;
        let rows = (0..e.dim).map(|a| (0..e.dim).map(|b| cov[(a, b)]).collect()).collect();
        (Some(rows), None)
    } else {
        (None, Some("one run: statistics beyond the mean need at least two".to_string()))
    };
    let summary = EnsembleSummary {
        runs,
        dim: e.dim,
        config_digest: digest,
        mean,
        mean_hull_distance: hull.distance_to(&mean),
        inside_hull: inside as f64 / runs as f64,
        covariance,
        note,
    };
    let sfile = ctx.write_json("summary.json", &summary)?;
    let mut text = String::new();
    writeln!(text, "{runs} runs in {}D", e.dim).unwrap();
    writeln!(text, "sample mean {}", fmt_point(&mean)).unwrap();
    writeln!(
        text,
        "mean distance to initial hull {:.3e}; runs inside initial hull {:.4}",
        summary.mean_hull_distance, summary.inside_hull
    )
    .unwrap();
    if let Some(n) = &summary.note {
        writeln!(text, "{n}").unwrap();
    }
    writeln!(text, "wrote {}\nwrote {}", file.display(), sfile.display()).unwrap();
    Ok(Outcome { text, failed: vec![] })
}

#[derive(Debug, Default, Serialize)]
struct AnalysisOutput {
    runs: usize,
    dim: usize,
    mean: Option<Point>,
    coverage: Option<CoverageReport>,
    chebyshev: Option<Vec<TailRow>>,
    variance: Option<VarianceReport>,
    membership: Option<MembershipReport>,
    membership_pass: Option<bool>,
    pass: bool,
}

fn load_ensemble(ctx: &Context) -> Result<Ensemble> {
    let path = ctx.input_or(ENSEMBLE_FILE);
    let members = read_ensemble(&path)?;
    let digest = ctx.cfg.sim.digest();
    if let Some(m) = members.iter().find(|m| m.config_digest != digest) {
        return Err(CliError::Input(format!(
            "{}: run {} was produced by a different configuration",
            path.display(),
            m.index
        )));
    }
    if members[0].d != ctx.cfg.sim.dim {
        return Err(CliError::Input(format!("{}: dimension mismatch", path.display())));
    }
    ensemble_of(&members, digest)
}

pub fn cmd_analyze(ctx: &Context) -> Result<Outcome> {
    let req = &ctx.cfg.analysis;
    if req.is_empty() {
        return Ok(Outcome {
            text: "no analyses requested; nothing to do\n".into(),
            failed: vec![],
        });
    }
    let e = load_ensemble(ctx)?;
    let noise = &ctx.cfg.sim.noise;
    let mut out = AnalysisOutput {
        runs: e.runs(),
        dim: e.dim,
        mean: Point::centroid(&e.finals),
        ..Default::default()
    };
    let mut failed = Vec::new();
    let mut text = String::new();
    writeln!(text, "{} runs in {}D", e.runs(), e.dim).unwrap();

    if !req.chis.is_empty() {
        let cov = mahalanobis_coverage(&e, &req.chis, req.coverage_slack, req.rel_tol)?;
        writeln!(text, "coverage (effective dimension {}):", cov.d_eff).unwrap();
        for r in &cov.rows {
            writeln!(
                text,
                "  chi {:>5.2}  empirical {:.4}  floor {:.4}  {}",
                r.chi,
                r.empirical,
                r.floor,
                if r.pass { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        if !cov.pass() {
            failed.push("coverage".into());
        }
        out.coverage = Some(cov);
    }
    if req.chebyshev {
        let rows = chebyshev_tail(&e, &req.chis, req.coverage_slack, req.rel_tol)?;
        writeln!(text, "tail:").unwrap();
        for r in &rows {
            writeln!(
                text,
                "  chi {:>5.2}  tail {:.4}  ceiling {:.4}  {}",
                r.chi,
                r.tail,
                r.ceiling,
                if r.pass { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        if rows.iter().any(|r| !r.pass) {
            failed.push("tail".into());
        }
        out.chebyshev = Some(rows);
    }
    if req.variance {
        let v = variance_bound_check(&e, noise.lambda, noise.upsilon, req.variance_slack)?;
        writeln!(text, "variance bound {:.5}:", v.bound).unwrap();
        for r in &v.rows {
            writeln!(text, "  dim {}  variance {:.5}  {}", r.dim, r.variance, if r.pass { "ok" } else { "FAIL" }).unwrap();
        }
        if !v.pass() {
            failed.push("variance".into());
        }
        out.variance = Some(v);
    }
    if req.membership() {
        let initials = ctx.initials()?;
        let m = membership_report(&initials, &req.noisy_dims, &req.margins, noise.lambda, noise.upsilon, &e)?;
        let pass = m.pass(req.membership_slack);
        writeln!(
            text,
            "membership: hausdorff {:.4} <= {:.4} {}; inside widened hull {:.4}; floor {:.4}{}",
            m.hausdorff_ac,
            m.geometric_bound,
            if m.geometric_pass { "ok" } else { "FAIL" },
            m.membership,
            m.floor,
            if m.floor <= 0.0 { " (vacuous)" } else { "" }
        )
        .unwrap();
        if !pass {
            failed.push("membership".into());
        }
        out.membership = Some(m);
        out.membership_pass = Some(pass);
    }
    out.pass = failed.is_empty();
    let f = ctx.write_json("report_analysis.json", &out)?;
    ctx.write("report_analysis.txt", &text)?;
    writeln!(text, "wrote {}", f.display()).unwrap();
    Ok(Outcome { text, failed })
}

fn shifts_for(ctx: &Context, spec: &ShiftSpec) -> Result<Vec<Point>> {
    let initials = ctx.initials()?;
    let dim = ctx.cfg.sim.dim;
    Ok(match spec {
        ShiftSpec::Explicit { shifts } => shifts.clone(),
        ShiftSpec::Paired { initial } => initial.iter().zip(initials.rows()).map(|(b, a)| *b - *a).collect(),
        ShiftSpec::Ball { radius, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..initials.len())
                .map(|_| loop {
                    let mut p = Point::zeros(dim);
                    for k in 0..dim {
                        p[k] = rng.gen_range(-1.0..=1.0);
                    }
                    if p.norm_sq() <= 1.0 {
                        break p * *radius;
                    }
                })
                .collect()
        }
    })
}

pub fn cmd_privacy(ctx: &Context) -> Result<Outcome> {
    let req = ctx
        .cfg
        .privacy
        .as_ref()
        .ok_or_else(|| CliError::config("privacy", "missing [privacy] section"))?;
    let sim = &ctx.cfg.sim;
    let params = CgpParams {
        n: sim.n,
        lambda: sim.noise.lambda,
        upsilon: sim.noise.upsilon,
        gamma_l: sim.gamma.lower,
    };
    let rho = cgp_rho(&params)?;
    let shifts = shifts_for(ctx, &req.shift)?;
    let (a, b, trace) = run_coupled(sim, &shifts, &RunOptions::default())?;
    let mut gap: f64 = 0.0;
    let (ta, tb) = (a.transmitted.expect("recorded"), b.transmitted.expect("recorded"));
    for (ra, rb) in ta.iter().zip(&tb) {
        for (x, y) in ra.rows().iter().zip(rb.rows()) {
            gap = gap.max((*x - *y).as_slice().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    let horizon = req.horizon.unwrap_or(trace.len());
    let audits = audit_divergence(&params, &req.alphas, &shifts, &trace, horizon)?;
    let dp_table = (0..req.dp_rows)
        .map(|h| {
            let epsilon = dp_epsilon(h, req.ell, req.delta, params.lambda, params.upsilon, params.gamma_l)?;
            Ok(DpRow { h, epsilon })
        })
        .collect::<Result<Vec<_>>>()?;
    let (dist, shift_sum_sq) = shift_distance(&shifts);
    let report = PrivacyReport {
        params,
        rho,
        dist,
        shift_sum_sq,
        audits,
        dp_table,
        transmitted_gap: gap,
    };
    let f = ctx.write_json("report_privacy.json", &report)?;
    let mut text = String::new();
    writeln!(text, "rho {:.6}; largest shift {:.6}; transmitted gap {:.3e}", rho, dist, gap).unwrap();
    for a in &report.audits {
        writeln!(
            text,
            "  alpha {:>5.2}  divergence {:.6}  bound {:.6}  {}",
            a.alpha,
            a.value,
            a.bound,
            if a.pass { "ok" } else { "FAIL" }
        )
        .unwrap();
    }
    for r in &report.dp_table {
        writeln!(text, "  h {:>3}  epsilon {:.6}", r.h, r.epsilon).unwrap();
    }
    ctx.write("report_privacy.txt", &text)?;
    writeln!(text, "wrote {}", f.display()).unwrap();
    if gap > TRANSMITTED_GAP_TOL {
        return Err(CliError::Defect(format!("coupled runs transmitted values {gap:.3e} apart")));
    }
    let failed = report
        .audits
        .iter()
        .filter(|a| !a.pass)
        .map(|a| format!("divergence at alpha {}", a.alpha))
        .collect();
    Ok(Outcome { text, failed })
}

/// Final points for plotting: per-run values of an ensemble file, or the
/// agents' final states of a run record.
fn plot_finals(ctx: &Context) -> Result<Vec<Point>> {
    let path = match &ctx.input {
        Some(p) => p.clone(),
        None if ctx.out.join(ENSEMBLE_FILE).exists() => ctx.out.join(ENSEMBLE_FILE),
        None => ctx.out.join(RUN_FILE),
    };
    let records = read_records(&path)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no records", path.display())));
    }
    let mut pts = Vec::new();
    for r in records {
        match r {
            Record::Member(m) => pts.push(m.consensus_value()?),
            Record::Run(r) => pts.extend(r.states()?.into_rows()),
            Record::Trace(_) => return Err(CliError::Input(format!("{}: trace files are not plotted", path.display()))),
        }
    }
    if pts.iter().any(|p| p.dim() != ctx.cfg.sim.dim) {
        return Err(CliError::Input(format!("{}: dimension mismatch", path.display())));
    }
    Ok(pts)
}

pub fn cmd_plot(ctx: &Context) -> Result<Outcome> {
    let req = &ctx.cfg.plot;
    if req.kinds.is_empty() {
        return Ok(Outcome {
            text: "no plots requested; nothing to do\n".into(),
            failed: vec![],
        });
    }
    let dim = ctx.cfg.sim.dim;
    let initials = ctx.initials()?;
    let needs_finals = req.kinds.iter().any(|k| *k != PlotKind::Initial);
    let finals = if needs_finals { plot_finals(ctx)? } else { Vec::new() };
    let pairs: Vec<(usize, usize)> = if dim == 2 { vec![(0, 1)] } else { vec![(0, 1), (0, 2), (1, 2)] };
    let mut files = Vec::new();
    for kind in &req.kinds {
        for &(a, b) in &pairs {
            let name = match (kind, dim) {
                (PlotKind::Initial, 2) => "initial".to_string(),
                (PlotKind::Finals, 2) => "finals".to_string(),
                (PlotKind::Mahalanobis, 2) => "mahalanobis".to_string(),
                (PlotKind::Mahalanobis, _) => {
                    return Err(CliError::config("plot.kinds", "ellipse overlays need d = 2"))
                }
                (PlotKind::Initial, _) => format!("initial_{a}{b}"),
                (PlotKind::Finals, _) => format!("finals_{a}{b}"),
            };
            let mut fig = Figure::new(name.replace('_', " "), &format!("dim {a}"), &format!("dim {b}"));
            let init2 = project(initials.rows(), a, b);
            let hull_a = hull_outline(&init2)?;
            match kind {
                PlotKind::Initial => {
                    fig.layers.push(Layer::Polygon { ring: hull_a, stroke: "#1f5fa8", fill: "#9ec5f0" });
                    fig.layers.push(Layer::Points { pts: init2, color: "#1f5fa8", radius: 3.5 });
                }
                PlotKind::Finals => {
                    let req_a = &ctx.cfg.analysis;
                    if dim == 2 && req_a.membership() {
                        let (_, c) = build_hulls_bc(&initials, &req_a.noisy_dims, &req_a.margins)
                            .map_err(|e| CliError::Input(e.to_string()))?;
                        fig.layers.push(Layer::Polygon { ring: outline(&c), stroke: "#b8860b", fill: "#f5d76e" });
                    }
                    fig.layers.push(Layer::Polygon { ring: hull_a, stroke: "#1f5fa8", fill: "#9ec5f0" });
                    fig.layers.push(Layer::Points { pts: project(&finals, a, b), color: "#303030", radius: 1.2 });
                    fig.layers.push(Layer::Points { pts: init2, color: "#1f5fa8", radius: 3.5 });
                }
                PlotKind::Mahalanobis => {
                    let e = Ensemble::new(2, finals.clone(), 0)?;
                    fig.layers.push(Layer::Points { pts: finals.clone(), color: "#303030", radius: 1.2 });
                    for (chi, ring) in mahalanobis_ellipses(&e, &req.chis)? {
                        let top = ring[ELLIPSE_LABEL];
                        fig.layers.push(Layer::Polygon { ring, stroke: "#c0392b", fill: "none" });
                        fig.layers.push(Layer::Label { at: top, text: format!("{chi}") });
                    }
                }
            }
            files.push(ctx.write(&format!("{name}.svg"), &fig.render()?)?);
            if dim == 2 {
                break;
            }
        }
    }
    let mut text = String::new();
    for f in files {
        writeln!(text, "wrote {}", f.display()).unwrap();
    }
    Ok(Outcome { text, failed: vec![] })
}

/// Vertex of an ellipse outline used to anchor its label.
const ELLIPSE_LABEL: usize = 30;

/// Writes one TOML config per named scenario.
pub fn cmd_presets(dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut text = String::new();
    for (name, _) in presets::named() {
        let cfg = preset(name).expect("named preset");
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(&path, format!("{PRESET_HEADER}\n{}", cfg.to_toml())).map_err(|e| CliError::io(&path, e))?;
        writeln!(text, "wrote {}", path.display()).unwrap();
    }
    Ok(Outcome { text, failed: vec![] })
}
