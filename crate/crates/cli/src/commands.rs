//! Subcommand execution and output layout.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sketchlab::conditions::{self, ConditionOptions, DEFAULT_WINDOW_SCALE};
use sketchlab::empirical::histogram;
use sketchlab::experiments::{
    self, ExperimentOptions, ExperimentResult, FigureOutput, FigureRegime, HISTOGRAM_BINS, HISTOGRAM_RANGE,
    KS_SKETCHED_NORMAL, KS_SKETCHED_PRODUCT,
};
use sketchlab::{collect_batch, Parallelism, StatisticKind};

use crate::config::{Command, RunConfig};
use crate::plot::emit_plot;

/// One pass/fail line of the run summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: String,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), pass: value <= limit, value, threshold: format!("≤ {limit}") }
    }

    fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), pass: value >= limit, value, threshold: format!("≥ {limit}") }
    }

    fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), pass: (lo..=hi).contains(&value), value, threshold: format!("in [{lo}, {hi}]") }
    }
}

pub const SLOPE_WINDOW: (f64, f64) = (-0.75, -0.25);

#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn parallelism(config: &RunConfig) -> Parallelism {
    Parallelism::from_workers(config.workers)
}

fn experiment_options(config: &RunConfig) -> ExperimentOptions {
    ExperimentOptions {
        dkw_delta: config.dkw_delta,
        parallelism: parallelism(config),
        coupled: config.coupled,
        ..ExperimentOptions::default()
    }
}

pub fn run(config: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create output directory {}", config.output_dir.display()))?;
    match config.command {
        Command::Simulate => simulate(config),
        Command::Conditions => run_conditions(config),
        Command::RateFit => rate_fit(config),
        Command::Counterexample => counterexample(config),
        Command::Figures => figures(config),
        Command::Plot => plot(config),
    }
}

fn figures_dir(config: &RunConfig) -> Result<std::path::PathBuf> {
    let dir = config.output_dir.join("figures");
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_figure(config: &RunConfig, stem: &str, hist_csv: &str) -> Result<()> {
    let dir = figures_dir(config)?;
    fs::write(dir.join(format!("{stem}_hist.csv")), hist_csv)?;
    if config.emit_plots {
        fs::write(dir.join(format!("{stem}.svg")), emit_plot(hist_csv, config.overlay)?)?;
    }
    Ok(())
}

fn simulate(config: &RunConfig) -> Result<Outcome> {
    let opts = experiment_options(config);
    let mut result = experiments::invariance_experiment(&config.problem, &opts)?;
    if config.statistic == StatisticKind::YVector {
        let batch = collect_batch(&config.problem, StatisticKind::YVector, opts.parallelism)?;
        result.cells[0].batches.push(("y_vector".into(), batch));
    }
    result.write_dir(&config.output_dir)?;
    for (name, batch) in &result.cells[0].batches {
        let h = histogram(&batch.values, HISTOGRAM_BINS, HISTOGRAM_RANGE)?;
        write_figure(config, name, &h.to_csv())?;
    }
    Ok(Outcome::default())
}

fn run_conditions(config: &RunConfig) -> Result<Outcome> {
    let opts = ConditionOptions {
        y_source: config.y_source,
        threshold_sigma: config.threshold_sigma,
        window_scale: DEFAULT_WINDOW_SCALE,
        parallelism: parallelism(config),
    };
    let reports = conditions::run_all(&config.problem, config.problem.replicates, config.eps, &opts)?;
    let manifest = serde_json::json!({
        "experiment": "conditions",
        "sampler": sketchlab::rng::SAMPLER_ID,
        "config": config.problem,
        "config_digest": config.problem.digest(),
        "seed": config.problem.master_seed,
    });
    fs::write(config.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(config.output_dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
    let checks = reports
        .iter()
        .map(|r| Check {
            name: format!("{:?}", r.condition_id),
            pass: r.pass,
            value: r.estimate.mean,
            threshold: match r.analytic_target {
                Some(t) => format!("{t} ± ({}·{:.3e} + {:.3e})", r.threshold_sigma, r.estimate.stderr, r.window),
                None => "finite and stable".into(),
            },
        })
        .collect();
    Ok(Outcome { checks })
}

fn rate_fit(config: &RunConfig) -> Result<Outcome> {
    let grid = config.grid.as_ref().context("rate-fit requires a grid")?;
    let result = experiments::rate_fit_experiment(
        &config.problem,
        config.statistic,
        grid.axis,
        &grid.sizes,
        config.problem.replicates,
        &experiment_options(config),
    )?;
    result.write_dir(&config.output_dir)?;
    let check = match (&result.rate_fit, &result.rate_fit_error) {
        (Some(fit), _) => Check::within("slope", fit.slope, SLOPE_WINDOW.0, SLOPE_WINDOW.1),
        (None, err) => Check {
            name: "slope".into(),
            pass: false,
            value: f64::NAN,
            threshold: err.clone().unwrap_or_else(|| "fit unavailable".into()),
        },
    };
    Ok(Outcome { checks: vec![check] })
}

/// Checks for the fixed-`m` counterexample at the largest `n` of the grid.
pub fn counterexample_checks(result: &ExperimentResult) -> Vec<Check> {
    let Some(last) = result.cells.last() else { return Vec::new() };
    let mut checks = Vec::new();
    if let Some(r) = last.ks(KS_SKETCHED_NORMAL) {
        checks.push(Check::at_least(format!("{}_ks_vs_normal", last.label), r.distance, 0.05));
    }
    if let Some(r) = last.ks(KS_SKETCHED_PRODUCT) {
        checks.push(Check::at_most(format!("{}_ks_vs_product_normal", last.label), r.distance, 0.02));
    }
    if result.cells.len() > 1 {
        let spread = experiments::ks_spread(result, KS_SKETCHED_NORMAL).unwrap_or(f64::INFINITY);
        checks.push(Check::at_most("ks_vs_normal_max_over_min", spread, 2.0));
    }
    checks
}

fn counterexample(config: &RunConfig) -> Result<Outcome> {
    let result = experiments::counterexample_fixed_m(
        &config.n_grid,
        config.problem.replicates,
        config.problem.master_seed,
        &experiment_options(config),
    )?;
    result.write_dir(&config.output_dir)?;
    Ok(Outcome { checks: counterexample_checks(&result) })
}

fn ks_limit(regime: FigureRegime) -> f64 {
    match regime {
        FigureRegime::ProjSmall | FigureRegime::EmbedSmall => 0.08,
        FigureRegime::ProjLarge | FigureRegime::EmbedLarge => 0.03,
    }
}

/// KS ceilings per regime plus large-beats-small for each regime pair present.
pub fn figure_checks(outputs: &[FigureOutput]) -> Vec<Check> {
    let mut checks: Vec<Check> = outputs
        .iter()
        .map(|o| Check::at_most(format!("{}_ks", o.regime.name()), o.ks_large.distance, ks_limit(o.regime)))
        .collect();
    let find = |r: FigureRegime| outputs.iter().find(|o| o.regime == r);
    for (small, large) in [
        (FigureRegime::ProjSmall, FigureRegime::ProjLarge),
        (FigureRegime::EmbedSmall, FigureRegime::EmbedLarge),
    ] {
        if let (Some(s), Some(l)) = (find(small), find(large)) {
            checks.push(Check {
                name: format!("{}_ks_below_{}", large.name(), small.name()),
                pass: l.ks_large.distance < s.ks_large.distance,
                value: l.ks_large.distance,
                threshold: format!("< {}", s.ks_large.distance),
            });
        }
    }
    checks
}

fn figures(config: &RunConfig) -> Result<Outcome> {
    let opts = experiment_options(config);
    let seed = config.problem.master_seed;
    let mut outputs = Vec::new();
    let batch_dir = config.output_dir.join("batches");
    fs::create_dir_all(&batch_dir)?;
    let mut manifest_cells = Vec::new();
    for &regime in &config.regimes {
        let out = experiments::figure_reproduction(regime, seed, config.large_replicates, &opts)?;
        write_figure(config, regime.name(), &out.histogram.to_csv())?;
        fs::write(figures_dir(config)?.join(format!("{}_overlay.csv", regime.name())), out.overlay_csv())?;
        if let Some(batch) = &out.histogram_batch {
            let file = format!("{}__sketched_inner.csv", regime.name());
            fs::write(batch_dir.join(&file), batch.to_csv())?;
            manifest_cells.push(serde_json::json!({
                "label": regime.name(),
                "config_digest": batch.config_digest,
                "seed": batch.seed,
                "batches": [{"file": format!("batches/{file}"), "values_digest": batch.values_digest(), "route": batch.route}],
            }));
        }
        outputs.push(out);
    }
    let manifest = serde_json::json!({
        "experiment": "figures",
        "sampler": sketchlab::rng::SAMPLER_ID,
        "seed": seed,
        "large_replicates": config.large_replicates,
        "cells": manifest_cells,
    });
    fs::write(config.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(config.output_dir.join("reports.json"), serde_json::to_string_pretty(&outputs)?)?;
    Ok(Outcome { checks: figure_checks(&outputs) })
}

fn plot(config: &RunConfig) -> Result<Outcome> {
    let dir = figures_dir(config)?;
    for input in &config.inputs {
        let csv = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
        let svg = emit_plot(&csv, config.overlay).with_context(|| format!("cannot plot {}", input.display()))?;
        let stem = Path::new(input).file_stem().and_then(|s| s.to_str()).unwrap_or("histogram");
        let stem = stem.strip_suffix("_hist").unwrap_or(stem);
        fs::write(dir.join(format!("{stem}.svg")), svg)?;
    }
    Ok(Outcome::default())
}

/// `summary.json`, written whether or not the run succeeded.
pub fn write_summary(config: &RunConfig, outcome: Option<&Outcome>, error: Option<&str>) -> Result<()> {
    let summary = serde_json::json!({
        "command": config.command.name(),
        "seed": config.problem.master_seed,
        "config": config,
        "passed": error.is_none() && outcome.is_none_or(Outcome::passed),
        "checks": outcome.map(|o| &o.checks),
        "error": error,
    });
    fs::create_dir_all(&config.output_dir)?;
    fs::write(config.output_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
