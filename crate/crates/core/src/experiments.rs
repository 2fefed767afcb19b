//! Invariance comparisons, KS-rate fits over dimension grids, figure
//! regimes and the fixed-`m` counterexample.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditions::ConditionReport;
use crate::distributions::EntryDistribution;
use crate::empirical::{
    dkw_band, histogram, ks_one_sample, ks_two_sample, standard_normal_cdf, standard_normal_pdf, EmpiricalCdf,
    Histogram, KsReport, DEFAULT_DKW_DELTA,
};
use crate::exec::{map_indexed, Parallelism};
use crate::rng::{lane, RngStream};
use crate::sketch::{collect_batch, collect_batch_tagged, ProblemConfig, SampleBatch, StatisticKind};
use crate::{Error, Result};

pub const DEFAULT_EXCLUSION_FACTOR: f64 = 3.0;

pub const KS_SKETCHED_NORMAL: &str = "sketched_vs_normal";
pub const KS_PLAIN_NORMAL: &str = "plain_vs_normal";
pub const KS_SKETCHED_PLAIN: &str = "sketched_vs_plain";
pub const KS_SKETCHED_PRODUCT: &str = "sketched_vs_product_normal";

#[derive(Clone, Copy, Debug)]
pub struct ExperimentOptions {
    pub dkw_delta: f64,
    pub parallelism: Parallelism,
    /// Grid cells with KS below this multiple of the DKW band are excluded
    /// from slope fits.
    pub exclusion_factor: f64,
    /// Share `X, Z` between the sketched and plain batches.
    pub coupled: bool,
    /// Keep sampled batches in the result for CSV output.
    pub keep_batches: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            dkw_delta: DEFAULT_DKW_DELTA,
            parallelism: Parallelism::Auto,
            exclusion_factor: DEFAULT_EXCLUSION_FACTOR,
            coupled: false,
            keep_batches: true,
        }
    }
}

impl ExperimentOptions {
    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub config: ProblemConfig,
    pub config_digest: String,
    pub seed: u64,
    pub ks: BTreeMap<String, KsReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionReport>,
    #[serde(skip)]
    pub batches: Vec<(String, SampleBatch)>,
}

impl Cell {
    fn new(label: impl Into<String>, config: ProblemConfig) -> Self {
        Self {
            label: label.into(),
            config_digest: config.digest(),
            seed: config.master_seed,
            config,
            ks: BTreeMap::new(),
            conditions: Vec::new(),
            batches: Vec::new(),
        }
    }

    pub fn ks(&self, key: &str) -> Option<&KsReport> {
        self.ks.get(key)
    }

    fn keep(&mut self, name: &str, batch: SampleBatch, opts: &ExperimentOptions) {
        if opts.keep_batches {
            self.batches.push((name.to_string(), batch));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub size: usize,
    pub log_scale: f64,
    pub ks: f64,
    pub log_ks: f64,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub noise_floor: f64,
    pub exclusion_factor: f64,
}

impl RateFit {
    pub fn usable(&self) -> usize {
        self.points.iter().filter(|p| !p.excluded).count()
    }
}

/// Least-squares fit of `ln ks` on `ln size`, dropping cells with
/// `ks < factor · noise_floor`.
pub fn fit_power_law(samples: &[(usize, f64)], noise_floor: f64, factor: f64) -> Result<RateFit> {
    let points: Vec<RatePoint> = samples
        .iter()
        .map(|&(size, ks)| RatePoint {
            size,
            log_scale: (size as f64).ln(),
            ks,
            log_ks: ks.ln(),
            excluded: ks.is_nan() || ks <= 0.0 || ks < factor * noise_floor,
        })
        .collect();
    let used: Vec<&RatePoint> = points.iter().filter(|p| !p.excluded).collect();
    if used.len() < 3 {
        return Err(Error::DegenerateFit { usable: used.len() });
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|p| p.log_scale).sum::<f64>() / k;
    let my = used.iter().map(|p| p.log_ks).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.log_scale - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.log_scale - mx) * (p.log_ks - my)).sum();
    let syy: f64 = used.iter().map(|p| (p.log_ks - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("grid sizes must be distinct".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { points, slope, intercept, r_squared, noise_floor, exclusion_factor: factor })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateAxis {
    M,
    N,
    /// Both dimensions grow with `n/m` held at the template's ratio.
    Diagonal,
}

impl RateAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(RateAxis::M),
            "n" => Ok(RateAxis::N),
            "diagonal" => Ok(RateAxis::Diagonal),
            other => Err(Error::InvalidArgument(format!("unknown rate axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub cells: Vec<Cell>,
    pub rate_fit: Option<RateFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_fit_error: Option<String>,
    pub runtime_secs: f64,
}

impl ExperimentResult {
    fn new(experiment: &str) -> Self {
        Self { experiment: experiment.into(), cells: Vec::new(), rate_fit: None, rate_fit_error: None, runtime_secs: 0.0 }
    }

    pub fn cell(&self, label: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// `manifest.json`, `batches/*.csv` and `reports.json` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let batch_dir = dir.join("batches");
        fs::create_dir_all(&batch_dir)?;
        let mut manifest_cells = Vec::new();
        for cell in &self.cells {
            let mut files = Vec::new();
            for (name, batch) in &cell.batches {
                let file = format!("{}__{}.csv", cell.label, name);
                fs::write(batch_dir.join(&file), batch.to_csv())?;
                files.push(serde_json::json!({
                    "file": format!("batches/{file}"),
                    "values_digest": batch.values_digest(),
                    "route": batch.route,
                }));
            }
            manifest_cells.push(serde_json::json!({
                "label": cell.label,
                "config": cell.config,
                "config_digest": cell.config_digest,
                "seed": cell.seed,
                "batches": files,
            }));
        }
        let manifest = serde_json::json!({
            "experiment": self.experiment,
            "sampler": crate::rng::SAMPLER_ID,
            "cells": manifest_cells,
            "runtime_secs": self.runtime_secs,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let reports = serde_json::json!({
            "experiment": self.experiment,
            "cells": self.cells,
            "rate_fit": self.rate_fit,
            "rate_fit_error": self.rate_fit_error,
        });
        fs::write(dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
        Ok(())
    }
}

fn ks_normal(batch: &SampleBatch, delta: f64) -> Result<KsReport> {
    Ok(ks_one_sample(&EmpiricalCdf::new(&batch.values)?, standard_normal_cdf, delta))
}

fn ks_between(a: &[f64], b: &[f64], delta: f64) -> Result<KsReport> {
    Ok(ks_two_sample(&EmpiricalCdf::new(a)?, &EmpiricalCdf::new(b)?, delta))
}

/// Sketched and plain batches with their KS distances to Φ and to each
/// other. Batches are independent unless `opts.coupled`.
pub fn invariance_experiment(config: &ProblemConfig, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    let start = Instant::now();
    let mut result = ExperimentResult::new("invariance");
    result.cells.push(invariance_cell(format!("m{}_n{}", config.m, config.n), config, opts)?);
    result.runtime_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

fn invariance_cell(label: String, config: &ProblemConfig, opts: &ExperimentOptions) -> Result<Cell> {
    let sketched_tag = StatisticKind::SketchedInner.tag();
    let plain_tag = if opts.coupled { sketched_tag } else { StatisticKind::PlainInner.tag() };
    let sketched = collect_batch_tagged(config, StatisticKind::SketchedInner, sketched_tag, opts.parallelism)?;
    let plain = collect_batch_tagged(config, StatisticKind::PlainInner, plain_tag, opts.parallelism)?;
    let mut cell = Cell::new(label, config.clone());
    cell.ks.insert(KS_SKETCHED_NORMAL.into(), ks_normal(&sketched, opts.dkw_delta)?);
    cell.ks.insert(KS_PLAIN_NORMAL.into(), ks_normal(&plain, opts.dkw_delta)?);
    cell.ks.insert(KS_SKETCHED_PLAIN.into(), ks_between(&sketched.values, &plain.values, opts.dkw_delta)?);
    cell.keep("sketched_inner", sketched, opts);
    cell.keep("plain_inner", plain, opts);
    Ok(cell)
}

fn cell_config(template: &ProblemConfig, axis: RateAxis, size: usize, replicates: usize) -> ProblemConfig {
    let mut cfg = template.clone();
    match axis {
        RateAxis::M => cfg.m = size,
        RateAxis::N => cfg.n = size,
        RateAxis::Diagonal => {
            let ratio = template.n as f64 / template.m as f64;
            cfg.m = size;
            cfg.n = ((size as f64 * ratio).round() as usize).max(1);
        }
    }
    cfg.replicates = replicates;
    cfg.master_seed = RngStream::derive_seed(template.master_seed, &[0x5A7E, axis as u64, size as u64]);
    cfg
}

/// KS of `kind` against Φ on each grid cell, then a log-log slope fit. A
/// degenerate fit is reported in `rate_fit_error` with the cells intact.
pub fn rate_fit_experiment(
    template: &ProblemConfig,
    kind: StatisticKind,
    axis: RateAxis,
    grid: &[usize],
    replicates: usize,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    let start = Instant::now();
    if grid.len() < 3 || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
        return Err(Error::InvalidArgument(format!("rate grid must be strictly increasing with ≥ 3 positive sizes, got {grid:?}")));
    }
    if kind == StatisticKind::YVector {
        return Err(Error::InvalidArgument("rate fits use a scalar statistic".into()));
    }
    let largest = *grid.last().expect("non-empty");
    if kind == StatisticKind::SketchedInner {
        match axis {
            RateAxis::M if template.n < 4 * largest => {
                return Err(Error::InvalidArgument(format!(
                    "m-axis fit needs n ≥ 4·max(grid) = {} so the 1/√m term dominates, got n = {}",
                    4 * largest,
                    template.n
                )))
            }
            RateAxis::N if template.m < 4 * largest => {
                return Err(Error::InvalidArgument(format!(
                    "n-axis fit needs m ≥ 4·max(grid) = {} so the 1/√n term dominates, got m = {}",
                    4 * largest,
                    template.m
                )))
            }
            _ => {}
        }
    }
    let mut result = ExperimentResult::new("rate_fit");
    let mut samples = Vec::with_capacity(grid.len());
    for &size in grid {
        let cfg = cell_config(template, axis, size, replicates);
        let batch = collect_batch(&cfg, kind, opts.parallelism)?;
        let report = ks_normal(&batch, opts.dkw_delta)?;
        samples.push((size, report.distance));
        let mut cell = Cell::new(format!("{}{}", axis_label(axis), size), cfg);
        let key = if kind == StatisticKind::PlainInner { KS_PLAIN_NORMAL } else { KS_SKETCHED_NORMAL };
        cell.ks.insert(key.into(), report);
        cell.keep(kind.name(), batch, opts);
        result.cells.push(cell);
    }
    let floor = dkw_band(replicates as f64, opts.dkw_delta);
    match fit_power_law(&samples, floor, opts.exclusion_factor) {
        Ok(fit) => result.rate_fit = Some(fit),
        Err(e @ Error::DegenerateFit { .. }) => result.rate_fit_error = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    result.runtime_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// As [`rate_fit_experiment`] but returning the fit or the degenerate-fit
/// error directly.
pub fn rate_fit(
    template: &ProblemConfig,
    kind: StatisticKind,
    axis: RateAxis,
    grid: &[usize],
    replicates: usize,
    opts: &ExperimentOptions,
) -> Result<RateFit> {
    let result = rate_fit_experiment(template, kind, axis, grid, replicates, &ExperimentOptions { keep_batches: false, ..*opts })?;
    match result.rate_fit {
        Some(fit) => Ok(fit),
        None => {
            let floor = dkw_band(replicates as f64, opts.dkw_delta);
            let samples: Vec<(usize, f64)> = result
                .cells
                .iter()
                .zip(grid)
                .map(|(c, &s)| (s, c.ks.values().next().map_or(0.0, |r| r.distance)))
                .collect();
            fit_power_law(&samples, floor, opts.exclusion_factor)
        }
    }
}

fn axis_label(axis: RateAxis) -> &'static str {
    match axis {
        RateAxis::M => "m",
        RateAxis::N => "n",
        RateAxis::Diagonal => "d",
    }
}

/// `m = 1`, Gaussian `X`, Rademacher `S` and `Z`: the sketched statistic
/// converges to a product of two independent Gaussians, not to Φ.
pub fn counterexample_config(n: usize, replicates: usize, seed: u64) -> ProblemConfig {
    let mut cfg = ProblemConfig::new(1, n, EntryDistribution::rademacher(), replicates, seed);
    cfg.dist_x = EntryDistribution::gaussian();
    cfg
}

/// `count` products of independent standard Gaussians from a reserved stream.
pub fn product_normal_oracle(count: usize, seed: u64, parallelism: Parallelism) -> Vec<f64> {
    map_indexed(count, parallelism, |i| {
        let mut rng = RngStream::path(seed, &[lane::ORACLE, i as u64]).rng();
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        a * b
    })
}

pub fn counterexample_fixed_m(n_grid: &[usize], replicates: usize, seed: u64, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    let start = Instant::now();
    if replicates < 10_000 {
        return Err(Error::InvalidArgument(format!("counterexample needs N ≥ 10⁴, got {replicates}")));
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidArgument("empty n grid".into()));
    }
    let oracle = product_normal_oracle(replicates, seed, opts.parallelism);
    let mut result = ExperimentResult::new("counterexample_fixed_m");
    for &n in n_grid {
        let cfg = counterexample_config(n, replicates, RngStream::derive_seed(seed, &[0xC0DE, n as u64]));
        let sketched = collect_batch(&cfg, StatisticKind::SketchedInner, opts.parallelism)?;
        let plain = collect_batch(&cfg, StatisticKind::PlainInner, opts.parallelism)?;
        let mut cell = Cell::new(format!("n{n}"), cfg);
        cell.ks.insert(KS_SKETCHED_NORMAL.into(), ks_normal(&sketched, opts.dkw_delta)?);
        cell.ks.insert(KS_SKETCHED_PRODUCT.into(), ks_between(&sketched.values, &oracle, opts.dkw_delta)?);
        cell.ks.insert(KS_PLAIN_NORMAL.into(), ks_normal(&plain, opts.dkw_delta)?);
        cell.keep("sketched_inner", sketched, opts);
        result.cells.push(cell);
    }
    result.runtime_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// `max / min` of a KS entry across cells.
pub fn ks_spread(result: &ExperimentResult, key: &str) -> Option<f64> {
    let values: Vec<f64> = result.cells.iter().filter_map(|c| c.ks(key)).map(|r| r.distance).collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (!values.is_empty() && min > 0.0).then(|| max / min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureRegime {
    ProjSmall,
    ProjLarge,
    EmbedSmall,
    EmbedLarge,
}

pub const HISTOGRAM_SAMPLES: usize = 1000;
pub const HISTOGRAM_BINS: usize = 40;
pub const HISTOGRAM_RANGE: (f64, f64) = (-4.0, 4.0);
pub const OVERLAY_POINTS: usize = 200;

impl FigureRegime {
    pub const ALL: [FigureRegime; 4] =
        [FigureRegime::ProjSmall, FigureRegime::ProjLarge, FigureRegime::EmbedSmall, FigureRegime::EmbedLarge];

    pub fn dims(self) -> (usize, usize) {
        match self {
            FigureRegime::ProjSmall => (10, 100),
            FigureRegime::ProjLarge => (500, 5000),
            FigureRegime::EmbedSmall => (500, 50),
            FigureRegime::EmbedLarge => (5000, 500),
        }
    }

    pub fn distribution(self) -> EntryDistribution {
        match self {
            FigureRegime::ProjSmall | FigureRegime::ProjLarge => EntryDistribution::gaussian(),
            FigureRegime::EmbedSmall | FigureRegime::EmbedLarge => {
                EntryDistribution::three_point(2.5, 0.08).expect("normalized")
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FigureRegime::ProjSmall => "proj_small",
            FigureRegime::ProjLarge => "proj_large",
            FigureRegime::EmbedSmall => "embed_small",
            FigureRegime::EmbedLarge => "embed_large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown figure regime `{s}`")))
    }

    pub fn config(self, replicates: usize, seed: u64) -> ProblemConfig {
        let (m, n) = self.dims();
        ProblemConfig::new(m, n, self.distribution(), replicates, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureOutput {
    pub regime: FigureRegime,
    pub m: usize,
    pub n: usize,
    pub histogram: Histogram,
    /// `(t, φ(t))` on the histogram range.
    pub overlay: Vec<(f64, f64)>,
    pub ks_small: KsReport,
    pub ks_large: KsReport,
    #[serde(skip)]
    pub histogram_batch: Option<SampleBatch>,
}

impl FigureOutput {
    pub fn overlay_csv(&self) -> String {
        let mut out = String::from("t,density\n");
        for (t, d) in &self.overlay {
            out.push_str(&format!("{t},{d}\n"));
        }
        out
    }
}

pub fn normal_overlay(range: (f64, f64), points: usize) -> Vec<(f64, f64)> {
    (0..points)
        .map(|i| {
            let t = range.0 + (range.1 - range.0) * i as f64 / (points - 1) as f64;
            (t, standard_normal_pdf(t))
        })
        .collect()
}

/// 1000-sample histogram plus KS to Φ at `N = 1000` and `N = large_replicates`.
pub fn figure_reproduction(
    regime: FigureRegime,
    seed: u64,
    large_replicates: usize,
    opts: &ExperimentOptions,
) -> Result<FigureOutput> {
    let regime_seed = RngStream::derive_seed(seed, &[0xF16, regime as u64]);
    let small_cfg = regime.config(HISTOGRAM_SAMPLES, regime_seed);
    let small = collect_batch(&small_cfg, StatisticKind::SketchedInner, opts.parallelism)?;
    let large_cfg = regime.config(large_replicates, RngStream::derive_seed(regime_seed, &[1]));
    let large = collect_batch(&large_cfg, StatisticKind::SketchedInner, opts.parallelism)?;
    let (m, n) = regime.dims();
    Ok(FigureOutput {
        regime,
        m,
        n,
        histogram: histogram(&small.values, HISTOGRAM_BINS, HISTOGRAM_RANGE)?,
        overlay: normal_overlay(HISTOGRAM_RANGE, OVERLAY_POINTS),
        ks_small: ks_normal(&small, opts.dkw_delta)?,
        ks_large: ks_normal(&large, opts.dkw_delta)?,
        histogram_batch: opts.keep_batches.then_some(small),
    })
}
