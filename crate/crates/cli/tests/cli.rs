use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use resvec_cli::config::{preset, ExperimentConfig, PlotKind, ShiftSpec};
use resvec_cli::records::{parse_records, MemberRecord, Record, RunRecord, TraceRecord};
use resvec_core::geometry::Point;
use resvec_core::presets;
use serde_json::Value;
use tempfile::TempDir;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn short(name: &str, iterations: usize, runs: usize) -> ExperimentConfig {
    let mut cfg = preset(name).unwrap();
    cfg.sim.iterations = iterations;
    cfg.runs = runs;
    cfg
}

/// Runs `sim <cmd> --config <cfg> --out <out>` plus extra arguments.
fn invoke(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sim(&args)
}

fn error_record(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("an error record on stderr");
    serde_json::from_str(line).unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn shipped_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for (name, sim_cfg) in presets::named() {
        let cfg = ExperimentConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
        assert_eq!(cfg, preset(name).unwrap(), "{name}");
        assert_eq!(cfg.sim, sim_cfg);
        seen += 1;
    }
    assert_eq!(seen, std::fs::read_dir(&dir).unwrap().count());
}

#[test]
fn run_is_deterministic_and_records_normal_agents() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "base", &short("2d_baseline", 40, 1));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&invoke("run", &cfg, &a, &["--seed", "1"]));
    ok(&invoke("run", &cfg, &b, &["--seed", "1"]));
    let ra = std::fs::read(a.join("run.ndrec")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("run.ndrec")).unwrap());
    let recs = parse_records(std::str::from_utf8(&ra).unwrap()).unwrap();
    let Record::Run(r) = &recs[0] else { panic!("not a run record") };
    assert_eq!((r.seed, r.d, r.normal_ids.len(), r.finals.len()), (1, 2, 8, 16));
}

#[test]
fn retained_trajectories_cover_every_step() {
    let tmp = TempDir::new().unwrap();
    let mut c = short("2d_baseline", 12, 1);
    c.retain = resvec_cli::config::Retain::Trajectories;
    let cfg = write_config(tmp.path(), "traj", &c);
    ok(&invoke("run", &cfg, tmp.path(), &[]));
    let text = std::fs::read_to_string(tmp.path().join("traj.ndrec")).unwrap();
    let recs = parse_records(&text).unwrap();
    assert_eq!(recs.len(), 13 * 8);
    assert!(matches!(&recs[8], Record::Trace(t) if t.t == 1 && t.agent == 0));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let mut c = short("2d_baseline", 10, 1);
    c.sim.gamma = resvec_core::engine::GammaPolicy::fixed(0.2);
    let bad = write_config(tmp.path(), "gamma", &c);
    let o = invoke("run", &bad, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec["kind"], "config");
    assert_eq!(rec["field"], "sim.gamma.lower");
    assert!(rec["message"].as_str().unwrap().contains("1 - upsilon"));

    let typo = tmp.path().join("typo.toml");
    let text = std::fs::read_to_string(write_config(tmp.path(), "x", &short("2d_baseline", 10, 1))).unwrap();
    std::fs::write(&typo, text.replace("upsilon = 0.75", "upsilom = 0.75")).unwrap();
    let o = invoke("run", &typo, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["field"], "sim.noise.upsilom");

    let o = sim(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ensemble_analyze_and_plot_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "ens", &short("2d_dim2_noise_case1", 40, 12));
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    ok(&invoke("ensemble", &cfg, &one, &["--jobs", "1"]));
    ok(&invoke("ensemble", &cfg, &two, &["--jobs", "3"]));
    let bytes = std::fs::read(one.join("ensemble.ndrec")).unwrap();
    assert_eq!(bytes, std::fs::read(two.join("ensemble.ndrec")).unwrap());
    let members = resvec_cli::records::read_ensemble(&one.join("ensemble.ndrec")).unwrap();
    assert_eq!(members.len(), 12);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(one.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 12);
    assert!(summary["covariance"].is_array());

    let o = invoke("analyze", &cfg, &one, &[]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{o:?}");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(one.join("report_analysis.json")).unwrap()).unwrap();
    assert_eq!(report["coverage"]["rows"].as_array().unwrap().len(), 4);
    assert!(report["membership"]["geometric_pass"].as_bool().unwrap());
    assert!(report["variance"]["rows"].is_array());

    ok(&invoke("plot", &cfg, &one, &[]));
    let svg = std::fs::read_to_string(one.join("mahalanobis.svg")).unwrap();
    assert_eq!(svg.matches("stroke=\"#c0392b\"").count(), 4);
    let finals = std::fs::read_to_string(one.join("finals.svg")).unwrap();
    // initial hull plus the widened hull
    assert_eq!(finals.matches("<polygon").count(), 2);
    ok(&invoke("plot", &cfg, &two, &[]));
    for f in ["initial.svg", "finals.svg", "mahalanobis.svg"] {
        assert_eq!(std::fs::read(one.join(f)).unwrap(), std::fs::read(two.join(f)).unwrap(), "{f}");
    }

    // the ensemble belongs to a different configuration once the seed changes
    let o = invoke("analyze", &cfg, &one, &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analysis_requests_are_checked_against_the_ensemble() {
    let tmp = TempDir::new().unwrap();
    let mut c = short("2d_baseline", 30, 1);
    let cfg = write_config(tmp.path(), "single", &c);
    ok(&invoke("ensemble", &cfg, tmp.path(), &[]));
    let summary = std::fs::read_to_string(tmp.path().join("summary.json")).unwrap();
    assert!(summary.contains("at least two"));
    let o = invoke("analyze", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "coverage on one run must be refused");

    c.analysis = Default::default();
    let empty = write_config(tmp.path(), "empty", &c);
    let o = invoke("analyze", &empty, tmp.path(), &[]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("nothing to do"));

    // membership needs noise confined to the named dimensions
    c.analysis.noisy_dims = vec![1];
    c.analysis.margins = vec![0.3];
    let full = write_config(tmp.path(), "full", &c);
    let o = invoke("analyze", &full, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["field"], "analysis.noisy_dims");
}

#[test]
fn plots_need_records() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "p", &short("2d_baseline", 10, 3));
    std::fs::write(tmp.path().join("empty.ndrec"), "").unwrap();
    let o = invoke("plot", &cfg, tmp.path(), &["--input", tmp.path().join("empty.ndrec").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let mut c = short("3d_baseline", 10, 3);
    c.plot.kinds = vec![PlotKind::Initial];
    let cfg3 = write_config(tmp.path(), "p3", &c);
    ok(&invoke("plot", &cfg3, tmp.path(), &[]));
    for pair in ["01", "02", "12"] {
        assert!(tmp.path().join(format!("initial_{pair}.svg")).exists());
    }
    let mut text = c.to_toml();
    text = text.replace("kinds = [\"initial\"]", "kinds = [\"mahalanobis\"]");
    let bad = tmp.path().join("bad3.toml");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(invoke("plot", &bad, tmp.path(), &[]).status.code(), Some(2));
}

#[test]
fn privacy_report_matches_closed_forms() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "priv", &short("privacy_pair", 80, 1));
    ok(&invoke("privacy", &cfg, tmp.path(), &[]));
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report_privacy.json")).unwrap()).unwrap();
    let rho = rep["rho"].as_f64().unwrap();
    assert!((rho - 3.375 / 1.62).abs() < 1e-12);
    let dist = rep["dist"].as_f64().unwrap();
    assert!(dist > 0.0 && dist <= 0.25);
    for a in rep["audits"].as_array().unwrap() {
        let alpha = a["alpha"].as_f64().unwrap();
        assert!((a["bound"].as_f64().unwrap() - alpha * rho * dist * dist).abs() < 1e-12);
        assert!(a["value"].as_f64().unwrap() <= a["bound"].as_f64().unwrap());
    }
    let e0 = rep["dp_table"][0]["epsilon"].as_f64().unwrap();
    assert!((e0 - 1.26864).abs() < 1e-5);
    assert!(rep["transmitted_gap"].as_f64().unwrap() <= 1e-9);

    let mut zero = short("privacy_pair", 40, 1);
    zero.privacy.as_mut().unwrap().shift = ShiftSpec::Explicit {
        shifts: vec![Point::xy(0.0, 0.0); 5],
    };
    let cfg0 = write_config(tmp.path(), "zero", &zero);
    let out0 = tmp.path().join("zero");
    ok(&invoke("privacy", &cfg0, &out0, &[]));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out0.join("report_privacy.json")).unwrap()).unwrap();
    for a in rep["audits"].as_array().unwrap() {
        assert_eq!(a["value"].as_f64().unwrap(), 0.0);
    }

    let mut noisy_one = short("privacy_pair", 40, 1);
    noisy_one.sim.noise.mask = Some(vec![0]);
    let path = tmp.path().join("masked.toml");
    std::fs::write(&path, noisy_one.to_toml()).unwrap();
    assert_eq!(invoke("privacy", &path, tmp.path(), &[]).status.code(), Some(2));
}

fn finite() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits).prop_filter("finite", |x| x.is_finite())
}

proptest! {
    #[test]
    fn records_round_trip(
        seed in any::<u64>(),
        digest in any::<u64>(),
        finals in prop::collection::vec(finite(), 6),
        ids in prop::collection::vec(0usize..100, 3),
    ) {
        let run = RunRecord {
            seed,
            d: 2,
            config_digest: digest,
            schedule_digest: digest ^ seed,
            normal_ids: ids.clone(),
            fallback_steps: ids[0],
            finals: finals.clone(),
        };
        let member = MemberRecord {
            index: ids[1],
            seed,
            d: 3,
            config_digest: digest,
            schedule_digest: seed,
            finals: finals.clone(),
        };
        let trace = TraceRecord { t: ids[2], agent: ids[0], x: finals[..3].to_vec() };
        let text = format!("{}\n{}\n{}\n", run.emit().unwrap(), member.emit().unwrap(), trace.emit().unwrap());
        let back = parse_records(&text).unwrap();
        prop_assert_eq!(back, vec![Record::Run(run), Record::Member(member), Record::Trace(trace)]);
    }

    #[test]
    fn configs_round_trip(pick in 0usize..9, seed in 0u64..1_000_000, runs in 1usize..5000) {
        let (name, _) = presets::named()[pick];
        let mut cfg = preset(name).unwrap();
        cfg.sim.seed = seed;
        cfg.runs = runs;
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
