//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line and
//! fails when its criterion is not met; tolerances are the stated ones.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use sketchlab::conditions::{self, ConditionOptions};
use sketchlab::empirical::dkw_band;
use sketchlab::experiments::{self, fit_power_law, ExperimentOptions, FigureRegime, RateAxis, KS_PLAIN_NORMAL, KS_SKETCHED_NORMAL};
use sketchlab::rng::{lane, RngStream};
use sketchlab::sketch::{normalizer, Sampler};
use sketchlab::{Engine, EntryDistribution, ProblemConfig, StatisticKind, YSource};
use sketchlab_cli::commands::{counterexample_checks, figure_checks, SLOPE_WINDOW};

const SEED: u64 = 20240611;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within_budget(start: Instant, minutes: u64) -> (bool, f64) {
    let elapsed = start.elapsed();
    (elapsed <= Duration::from_secs(60 * minutes), elapsed.as_secs_f64())
}

#[test]
fn criterion_1_exact_second_moment() {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, dist_s, target) in [
        ("gaussian", EntryDistribution::gaussian(), 1.0 + 1.0 / 550.0),
        ("rademacher", EntryDistribution::rademacher(), 1.0 - 1.0 / 550.0),
    ] {
        let mut cfg = ProblemConfig::gaussian(50, 500, 1, SEED);
        cfg.dist_s = dist_s;
        let r = conditions::y_second_moment(&cfg, 200_000, &ConditionOptions::default()).unwrap();
        let z = (r.estimate.mean - target) / r.estimate.stderr;
        let ok = z.abs() <= 5.0;
        pass &= ok;
        parts.push(format!("{label}: {:.7} ± {:.1e} vs {target:.7} (z = {z:+.2})", r.estimate.mean, r.estimate.stderr));
    }
    let (in_time, secs) = within_budget(start, 2);
    pass &= in_time;
    report(1, pass, &format!("{}; {secs:.1}s", parts.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_2_figure_reproduction() {
    let start = Instant::now();
    let opts = ExperimentOptions::default();
    let outputs: Vec<_> = FigureRegime::ALL
        .iter()
        .map(|&r| experiments::figure_reproduction(r, SEED, 100_000, &opts).unwrap())
        .collect();
    for o in &outputs {
        assert_eq!(o.histogram.total, 1000);
        assert_eq!(o.overlay.len(), 200);
    }
    let checks = figure_checks(&outputs);
    let (in_time, secs) = within_budget(start, 10);
    let pass = checks.iter().all(|c| c.pass) && in_time;
    let detail: Vec<String> = checks.iter().map(|c| format!("{} = {:.4} ({})", c.name, c.value, c.threshold)).collect();
    report(2, pass, &format!("{}; {secs:.1}s", detail.join("; ")));
    assert!(pass);
}

fn rate_detail(result: &sketchlab::ExperimentResult, key: &str) -> String {
    result
        .cells
        .iter()
        .map(|c| format!("{} ks = {:.4}", c.label, c.ks(key).map_or(f64::NAN, |r| r.distance)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Slope over every cell, ignoring the noise-floor rule. Diagnostic only.
fn unexcluded_slope(result: &sketchlab::ExperimentResult, grid: &[usize], key: &str) -> String {
    let samples: Vec<(usize, f64)> = result.cells.iter().zip(grid).map(|(c, &s)| (s, c.ks(key).unwrap().distance)).collect();
    match fit_power_law(&samples, 0.0, 0.0) {
        Ok(f) => format!("{:.3} (r² {:.3})", f.slope, f.r_squared),
        Err(e) => e.to_string(),
    }
}

#[test]
fn criterion_3_rate_fit_m_axis() {
    let start = Instant::now();
    let grid = [16, 64, 256, 1024];
    let template = ProblemConfig::gaussian(16, 4096, 1, SEED);
    let result = experiments::rate_fit_experiment(
        &template,
        StatisticKind::SketchedInner,
        RateAxis::M,
        &grid,
        50_000,
        &ExperimentOptions { keep_batches: false, ..Default::default() },
    )
    .unwrap();
    let (in_time, secs) = within_budget(start, 15);
    let floor = dkw_band(50_000.0, 0.01);
    let (pass, fit) = match &result.rate_fit {
        Some(f) => (
            (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&f.slope) && f.r_squared >= 0.9 && in_time,
            format!("slope {:.3}, r² {:.3}", f.slope, f.r_squared),
        ),
        None => (false, result.rate_fit_error.clone().unwrap_or_default()),
    };
    report(
        3,
        pass,
        &format!(
            "{fit}; {}; exclusion below {:.4}; unexcluded slope {}; {secs:.1}s",
            rate_detail(&result, KS_SKETCHED_NORMAL),
            3.0 * floor,
            unexcluded_slope(&result, &grid, KS_SKETCHED_NORMAL)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_berry_esseen_baseline() {
    let start = Instant::now();
    let grid = [256, 1024, 4096];
    let template = ProblemConfig::new(1, 256, EntryDistribution::rademacher(), 1, SEED);
    let result = experiments::rate_fit_experiment(
        &template,
        StatisticKind::PlainInner,
        RateAxis::N,
        &grid,
        100_000,
        &ExperimentOptions { keep_batches: false, ..Default::default() },
    )
    .unwrap();
    let floor = dkw_band(100_000.0, 0.01);
    let (pass, fit) = match &result.rate_fit {
        Some(f) => ((SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&f.slope), format!("slope {:.3}, r² {:.3}", f.slope, f.r_squared)),
        None => (false, result.rate_fit_error.clone().unwrap_or_default()),
    };
    report(
        4,
        pass,
        &format!(
            "{fit}; {}; exclusion below {:.4}; unexcluded slope {}; {:.1}s",
            rate_detail(&result, KS_PLAIN_NORMAL),
            3.0 * floor,
            unexcluded_slope(&result, &grid, KS_PLAIN_NORMAL),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_counterexample() {
    let start = Instant::now();
    let opts = ExperimentOptions { keep_batches: false, ..Default::default() };
    let result = experiments::counterexample_fixed_m(&[100, 1000, 10_000], 100_000, SEED, &opts).unwrap();
    let checks = counterexample_checks(&result);
    assert_eq!(checks.len(), 3);
    let pass = checks.iter().all(|c| c.pass);
    let detail: Vec<String> = checks.iter().map(|c| format!("{} = {:.4} ({})", c.name, c.value, c.threshold)).collect();
    report(5, pass, &format!("{}; {:.1}s", detail.join("; "), start.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_6_condition_suite() {
    let start = Instant::now();
    let cfg = ProblemConfig::gaussian(500, 5000, 1, SEED);
    let opts = ConditionOptions::default();
    let mut parts = Vec::new();
    let mut pass = true;

    let mixed = conditions::mixed_second_moments(&cfg, 20_000, &opts).unwrap();
    let ok = (mixed.estimate.mean - 1.0).abs() <= 5.0 * mixed.estimate.stderr + 0.01;
    pass &= ok;
    parts.push(format!("mixed_second_moments {:.5} ± {:.1e} {}", mixed.estimate.mean, mixed.estimate.stderr, verdict(ok)));

    let pn = conditions::pn_fourth_moment(&cfg, 100_000, &opts).unwrap();
    let ok = (pn.estimate.mean - 3.0).abs() <= 0.15;
    pass &= ok;
    parts.push(format!("pn_fourth_moment {:.4} ± {:.1e} {}", pn.estimate.mean, pn.estimate.stderr, verdict(ok)));

    let y4 = conditions::y_fourth_moment(&cfg, 100_000, &opts).unwrap();
    let ok = (y4.estimate.mean - 2.7355).abs() <= 0.15;
    pass &= ok;
    parts.push(format!(
        "y_fourth_moment {:.4} ± {:.1e} vs 2.7355 (exact Gaussian value {:.4}) {}",
        y4.estimate.mean,
        y4.estimate.stderr,
        y4.reference.get("gaussian_exact").copied().unwrap_or(f64::NAN),
        verdict(ok)
    ));

    let stub = ProblemConfig::gaussian(1, 10_000, 1, SEED);
    let lln = conditions::lln_rate(&stub, 10_000, &opts.with_source(YSource::IidGaussian)).unwrap();
    let ok = (lln.estimate.mean - 0.0039894).abs() <= 0.15 * 0.0039894;
    pass &= ok;
    parts.push(format!(
        "lln_rate {:.6} ± {:.1e} vs 0.0039894 (Var(y²) = 2 limit {:.6}) {}",
        lln.estimate.mean,
        lln.estimate.stderr,
        conditions::lln_rate_iid_gaussian_target(10_000),
        verdict(ok)
    ));

    report(6, pass, &format!("{}; {:.1}s", parts.join("; "), start.elapsed().as_secs_f64()));
    assert!(pass);
}

fn verdict(ok: bool) -> &'static str {
    if ok { "ok" } else { "out of tolerance" }
}

/// `Xᵀ (SᵀS) Z` with `SᵀS` formed explicitly.
fn dense_quadratic_form(s: &[f64], m: usize, n: usize, x: &[f64], z: &[f64]) -> f64 {
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = (0..m).map(|k| s[k * n + i] * s[k * n + j]).sum();
        }
    }
    (0..n).map(|i| x[i] * (0..n).map(|j| gram[i * n + j] * z[j]).sum::<f64>()).sum()
}

#[test]
fn criterion_7_small_instance_oracle() {
    use rand::Rng;
    let dists = [
        EntryDistribution::gaussian(),
        EntryDistribution::rademacher(),
        EntryDistribution::three_point(2.5, 0.08).unwrap(),
        EntryDistribution::scaled_uniform(),
    ];
    let mut rng = RngStream::path(SEED, &[0xACCE, 7]).rng();
    let mut worst: f64 = 0.0;
    let tag = StatisticKind::SketchedInner.tag();
    for instance in 0..50 {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(1..=8);
        let mut cfg = ProblemConfig::new(m, n, dists[instance % 4], 1, SEED + instance as u64);
        cfg.dist_x = dists[(instance / 4) % 4];
        cfg.engine = Engine::Direct;
        let sampler = Sampler::new(&cfg).unwrap();
        let streamed = sampler.scalar(StatisticKind::SketchedInner, tag, instance);

        // Rebuild the same replicate's X, Z and S as dense arrays.
        let stream = RngStream::path(cfg.master_seed, &[tag, instance as u64]);
        let x = cfg.dist_x.sample(n, &stream.child(lane::X));
        let z = cfg.dist_z.sample(n, &stream.child(lane::Z));
        let mut s = vec![0.0; m * n];
        let mut s_rng = stream.child(lane::S).rng();
        for row in s.chunks_mut(n) {
            cfg.dist_s.fill(&mut s_rng, row);
        }
        let dense = dense_quadratic_form(&s, m, n, &x, &z) / normalizer(StatisticKind::SketchedInner, m, n);
        let rel = if streamed == dense { 0.0 } else { (streamed - dense).abs() / dense.abs() };
        worst = worst.max(rel);
    }
    let pass = worst <= 1e-10;
    report(7, pass, &format!("50 instances, worst relative error {worst:.2e}"));
    assert!(pass);
}

fn collect_outputs(dir: &Path, into: &mut BTreeMap<String, Vec<u8>>, prefix: &str) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = format!("{prefix}/{}", path.file_name().unwrap().to_string_lossy());
        if path.is_dir() {
            collect_outputs(&path, into, &name);
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "svg")) {
            into.insert(name, std::fs::read(&path).unwrap());
        }
    }
}

fn run_cli(args: &[&str], workers: &str, via_env: bool, out: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sketchlab"));
    cmd.args(args).arg("--out").arg(out).env_remove("SKETCHLAB_WORKERS");
    if via_env {
        cmd.env("SKETCHLAB_WORKERS", workers);
    } else {
        cmd.args(["--workers", workers]);
    }
    let status = cmd.output().unwrap();
    assert!(status.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&status.stderr));
    let mut files = BTreeMap::new();
    collect_outputs(out, &mut files, "");
    files
}

#[test]
fn criterion_8_determinism_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 5] = [
        &["simulate", "--m", "40", "--n", "60", "--dist", "three_point", "--a", "2.5", "--p", "0.08", "--N", "3000", "--seed", "11"],
        &["simulate", "--m", "6", "--n", "9", "--N", "2000", "--seed", "12", "--direct", "--kind", "y_vector"],
        &["figures", "--regime", "proj_small,embed_small", "--large-n", "4000", "--seed", "13"],
        &["rate-fit", "--dist", "rademacher", "--kind", "plain_inner", "--axis", "n", "--grid", "4,16,64", "--N", "2000", "--seed", "14"],
        &["counterexample", "--n-grid", "50,100", "--N", "10000", "--seed", "15"],
    ];
    let mut pass = true;
    let mut compared = 0;
    for (i, args) in runs.iter().enumerate() {
        let reference = run_cli(args, "1", false, &dir.path().join(format!("{i}-w1")));
        assert!(!reference.is_empty());
        for (workers, via_env) in [("4", false), ("3", true)] {
            let other = run_cli(args, workers, via_env, &dir.path().join(format!("{i}-w{workers}")));
            if other != reference {
                pass = false;
                println!("outputs of `{}` differ with {workers} workers", args[0]);
            }
            compared += reference.len();
        }
    }
    // Replotting a histogram CSV is byte-stable as well.
    let csv = dir.path().join("2-w1/figures/proj_small_hist.csv");
    let a = run_cli(&["plot", "--input", csv.to_str().unwrap()], "1", false, &dir.path().join("plot-a"));
    let b = run_cli(&["plot", "--input", csv.to_str().unwrap()], "2", false, &dir.path().join("plot-b"));
    pass &= a == b && a.keys().any(|k| k.ends_with(".svg"));
    let svg_from_figures = std::fs::read(dir.path().join("2-w1/figures/proj_small.svg")).unwrap();
    pass &= a.get("/figures/proj_small.svg") == Some(&svg_from_figures);
    report(8, pass, &format!("{compared} CSV/SVG files compared across --workers 1, 4 and SKETCHLAB_WORKERS=3"));
    assert!(pass);
}
