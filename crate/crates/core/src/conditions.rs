//! Monte Carlo estimates of the product-CLT hypotheses for the sketched
//! sequence `Y = SᵀS Z / √(m² + mn)` and the statistic built from it.
//!
//! Each estimator is split into a pure function of sampled values and a
//! driver that draws them. Stubbed sources (`Y ≡ 1`, i.i.d. Gaussian `Y`)
//! replace the sketched sequence to reproduce the classical baselines.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::empirical::{standard_normal_cdf, MomentEstimate};
use crate::exec::{map_indexed, Parallelism};
use crate::numeric::{self, NeumaierSum};
use crate::rng::{lane, RngStream};
use crate::sketch::{plain_inner, ProblemConfig, Sampler, StatisticKind};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD_SIGMA: f64 = 5.0;
/// Multiplier on `1/m + 1/(m+n)` for targets known only to leading order.
pub const DEFAULT_WINDOW_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    YSecondMoment,
    YFourthMoment,
    MixedSecondMoments,
    PnFourthMoment,
    LlnRate,
    TailProbability,
    ThirdMomentBound,
}

impl ConditionId {
    pub const ALL: [ConditionId; 7] = [
        ConditionId::YSecondMoment,
        ConditionId::YFourthMoment,
        ConditionId::MixedSecondMoments,
        ConditionId::PnFourthMoment,
        ConditionId::LlnRate,
        ConditionId::TailProbability,
        ConditionId::ThirdMomentBound,
    ];

    fn tag(self) -> u64 {
        0x100 + self as u64
    }

    pub fn min_replicates(self) -> usize {
        match self {
            ConditionId::YSecondMoment | ConditionId::MixedSecondMoments => 100,
            ConditionId::PnFourthMoment => 10_000,
            _ => 1000,
        }
    }
}

/// Where the sequence `Y` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YSource {
    #[default]
    Sketched,
    /// `Yₖ = 1`, the martingale baseline.
    AllOnes,
    /// i.i.d. standard Gaussian `Yₖ`.
    IidGaussian,
}

#[derive(Clone, Copy, Debug)]
pub struct ConditionOptions {
    pub y_source: YSource,
    pub threshold_sigma: f64,
    pub window_scale: f64,
    pub parallelism: Parallelism,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            y_source: YSource::Sketched,
            threshold_sigma: DEFAULT_THRESHOLD_SIGMA,
            window_scale: DEFAULT_WINDOW_SCALE,
            parallelism: Parallelism::Auto,
        }
    }
}

impl ConditionOptions {
    pub fn with_source(mut self, y_source: YSource) -> Self {
        self.y_source = y_source;
        self
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub y_source: YSource,
    pub estimate: MomentEstimate,
    pub analytic_target: Option<f64>,
    /// Half-width allowed on top of `threshold_sigma · stderr`.
    pub window: f64,
    pub threshold_sigma: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(id: ConditionId, source: YSource, estimate: MomentEstimate, target: Option<f64>, window: f64, sigma: f64) -> Self {
        let estimate = match target {
            Some(t) => estimate.with_target(t),
            None => estimate,
        };
        let pass = estimate.mean.is_finite()
            && target.is_none_or(|t| (estimate.mean - t).abs() <= sigma * estimate.stderr + window);
        Self {
            condition_id: id,
            y_source: source,
            estimate,
            analytic_target: target,
            window,
            threshold_sigma: sigma,
            pass,
            reference: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Distance of the estimate from the target in standard errors.
    pub fn z_score(&self) -> Option<f64> {
        self.analytic_target.map(|t| (self.estimate.mean - t) / self.estimate.stderr.max(f64::MIN_POSITIVE))
    }

    fn with_reference(mut self, name: &str, value: f64) -> Self {
        self.reference.insert(name.to_string(), value);
        self
    }
}

/// `1 + (E S⁴ − 2)/(m + n)`, exact for every `n, m`.
pub fn y_second_moment_target(s_fourth: f64, m: usize, n: usize) -> f64 {
    1.0 + (s_fourth - 2.0) / (m + n) as f64
}

/// Leading-order `3n/(m+n) + m²/(m+n)²`.
pub fn y_fourth_moment_leading(m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    3.0 * n / (m + n) + m * m / ((m + n) * (m + n))
}

/// Exact `E y₁⁴` for Gaussian `S` and `Z`.
///
/// Conditioning on column 1 of `S` gives `a·y₁ = C z₁ + √C ρ ξ` with
/// `C ~ χ²_m`, `ρ² ~ χ²_{n−1}`, `ξ ~ N(0, 1)`, all independent.
pub fn y_fourth_moment_gaussian_exact(m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    let c2 = m * (m + 2.0);
    let c3 = c2 * (m + 4.0);
    let c4 = c3 * (m + 6.0);
    let rho2 = n - 1.0;
    let rho4 = (n - 1.0) * (n + 1.0);
    let a4 = (m * m + m * n).powi(2);
    (3.0 * c4 + 6.0 * c3 * rho2 + 3.0 * c2 * rho4) / a4
}

/// Leading-order window `scale · (1/m + 1/(m+n))`.
pub fn order_window(scale: f64, m: usize, n: usize) -> f64 {
    scale * (1.0 / m as f64 + 1.0 / (m + n) as f64)
}

/// `((Σyᵢ²)² − Σyᵢ⁴) / n²`, i.e. `(1/n²) Σ_{i≠j} yᵢ² yⱼ²`.
pub fn mixed_second_moment_value(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let s2 = numeric::sum_squares(y);
    let s4 = y.iter().map(|v| v.powi(4)).collect::<NeumaierSum>().total();
    (s2 * s2 - s4) / (n * n)
}

/// `Sₙ = √(Σyₖ² / n)`.
pub fn self_normalizer(y: &[f64]) -> f64 {
    (numeric::sum_squares(y) / y.len() as f64).sqrt()
}

/// `1 ∧ |Sₙ − 1|`.
pub fn lln_rate_value(y: &[f64]) -> f64 {
    (self_normalizer(y) - 1.0).abs().min(1.0)
}

/// `E|N(0, ¼)| / √n = ½√(2/π) / √n`, the limit when `Var(y²) = 1`.
pub fn lln_rate_quarter_variance(n: usize) -> f64 {
    0.5 * (2.0 / std::f64::consts::PI).sqrt() / (n as f64).sqrt()
}

/// Limit of `E[1 ∧ |Sₙ − 1|]` for i.i.d. standard Gaussian `y`:
/// `√n (Sₙ − 1) → N(0, Var(y²)/4) = N(0, ½)`.
pub fn lln_rate_iid_gaussian_target(n: usize) -> f64 {
    std::f64::consts::SQRT_2 * lln_rate_quarter_variance(n)
}

/// Standard deviation of `Sₙ − 1` for i.i.d. standard Gaussian `y`.
fn iid_gaussian_normalizer_sd(n: usize) -> f64 {
    (0.5 / n as f64).sqrt()
}

pub fn pn_fourth_moment_from_values(values: &[f64], sigma: f64) -> Result<ConditionReport> {
    let est = MomentEstimate::from_values(&values.iter().map(|v| v.powi(4)).collect::<Vec<_>>())?;
    Ok(ConditionReport::new(ConditionId::PnFourthMoment, YSource::Sketched, est, Some(3.0), 0.0, sigma))
}

fn require(id: ConditionId, replicates: usize) -> Result<()> {
    if replicates < id.min_replicates() {
        return Err(Error::InvalidArgument(format!(
            "{id:?} needs at least {} replicates, got {replicates}",
            id.min_replicates()
        )));
    }
    Ok(())
}

struct Source<'a> {
    sampler: Sampler<'a>,
    config: &'a ProblemConfig,
    kind: YSource,
}

impl<'a> Source<'a> {
    fn new(config: &'a ProblemConfig, kind: YSource) -> Result<Self> {
        Ok(Self { sampler: Sampler::new(config)?, config, kind })
    }

    fn stub(&self, tag: u64, index: usize) -> Vec<f64> {
        let n = self.config.n;
        match self.kind {
            YSource::AllOnes => vec![1.0; n],
            _ => {
                let stream = RngStream::path(self.config.master_seed, &[tag, index as u64, lane::AUX]);
                let mut rng = stream.rng();
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        }
    }

    fn y(&self, tag: u64, index: usize) -> Vec<f64> {
        match self.kind {
            YSource::Sketched => self.sampler.y_vector(tag, index),
            _ => self.stub(tag, index),
        }
    }

    fn y_first(&self, tag: u64, index: usize) -> f64 {
        match self.kind {
            YSource::Sketched => self.sampler.y_first(tag, index),
            YSource::AllOnes => 1.0,
            YSource::IidGaussian => {
                let stream = RngStream::path(self.config.master_seed, &[tag, index as u64, lane::AUX]);
                StandardNormal.sample(&mut stream.rng())
            }
        }
    }

    /// `Pₙ = (1/√n) Σ Xᵢ Yᵢ`.
    fn pn(&self, tag: u64, index: usize) -> f64 {
        match self.kind {
            YSource::Sketched => self.sampler.scalar(StatisticKind::SketchedInner, tag, index),
            _ => {
                let x = self
                    .config
                    .dist_x
                    .sample(self.config.n, &RngStream::path(self.config.master_seed, &[tag, index as u64, lane::X]));
                plain_inner(&x, &self.stub(tag, index))
            }
        }
    }
}

pub fn y_second_moment(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::YSecondMoment;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(replicates, opts.parallelism, |i| src.y_first(id.tag(), i).powi(2));
    let target = match opts.y_source {
        YSource::Sketched => y_second_moment_target(config.dist_s.moments().fourth, config.m, config.n),
        _ => 1.0,
    };
    Ok(ConditionReport::new(id, opts.y_source, MomentEstimate::from_values(&values)?, Some(target), 0.0, opts.threshold_sigma))
}

pub fn y_fourth_moment(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::YFourthMoment;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(replicates, opts.parallelism, |i| src.y_first(id.tag(), i).powi(4));
    let est = MomentEstimate::from_values(&values)?;
    let (m, n) = (config.m, config.n);
    let report = match opts.y_source {
        YSource::Sketched => {
            let r = ConditionReport::new(
                id,
                opts.y_source,
                est,
                Some(y_fourth_moment_leading(m, n)),
                order_window(opts.window_scale, m, n),
                opts.threshold_sigma,
            );
            if config.dist_s.is_gaussian() && config.dist_z.is_gaussian() {
                r.with_reference("gaussian_exact", y_fourth_moment_gaussian_exact(m, n))
            } else {
                r
            }
        }
        YSource::AllOnes => ConditionReport::new(id, opts.y_source, est, Some(1.0), 0.0, opts.threshold_sigma),
        YSource::IidGaussian => ConditionReport::new(id, opts.y_source, est, Some(3.0), 0.0, opts.threshold_sigma),
    };
    Ok(report)
}

pub fn mixed_second_moments(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::MixedSecondMoments;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(replicates, opts.parallelism, |i| mixed_second_moment_value(&src.y(id.tag(), i)));
    let est = MomentEstimate::from_values(&values)?;
    let (m, n) = (config.m, config.n);
    Ok(match opts.y_source {
        YSource::Sketched => {
            ConditionReport::new(id, opts.y_source, est, Some(1.0), order_window(opts.window_scale, m, n), opts.threshold_sigma)
        }
        _ => ConditionReport::new(id, opts.y_source, est, Some(1.0 - 1.0 / n as f64), 0.0, opts.threshold_sigma),
    })
}

pub fn pn_fourth_moment(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::PnFourthMoment;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(replicates, opts.parallelism, |i| src.pn(id.tag(), i).powi(4));
    let est = MomentEstimate::from_values(&values)?;
    let (m, n) = (config.m, config.n);
    let x4 = config.dist_x.moments().fourth;
    Ok(match opts.y_source {
        YSource::Sketched => ConditionReport::new(
            id,
            opts.y_source,
            est,
            Some(3.0),
            opts.window_scale * (1.0 / m as f64 + 1.0 / n as f64),
            opts.threshold_sigma,
        ),
        // i.i.d. products: E Pₙ⁴ = 3 + (E X⁴ E Y⁴ − 3)/n exactly.
        YSource::AllOnes => {
            ConditionReport::new(id, opts.y_source, est, Some(3.0 + (x4 - 3.0) / n as f64), 0.0, opts.threshold_sigma)
        }
        YSource::IidGaussian => {
            ConditionReport::new(id, opts.y_source, est, Some(3.0 + (3.0 * x4 - 3.0) / n as f64), 0.0, opts.threshold_sigma)
        }
    })
}

pub fn lln_rate(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::LlnRate;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(replicates, opts.parallelism, |i| lln_rate_value(&src.y(id.tag(), i)));
    let est = MomentEstimate::from_values(&values)?;
    let target = match opts.y_source {
        YSource::Sketched => None,
        YSource::AllOnes => Some(0.0),
        YSource::IidGaussian => Some(lln_rate_iid_gaussian_target(config.n)),
    };
    let mut report = ConditionReport::new(id, opts.y_source, est, target, 0.0, opts.threshold_sigma);
    if opts.y_source == YSource::IidGaussian {
        report = report.with_reference("quarter_variance_limit", lln_rate_quarter_variance(config.n));
    }
    Ok(report)
}

pub fn tail_probability(config: &ProblemConfig, replicates: usize, eps: f64, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::TailProbability;
    require(id, replicates)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("tail threshold must be positive, got {eps}")));
    }
    let src = Source::new(config, opts.y_source)?;
    let hits = map_indexed(replicates, opts.parallelism, |i| (self_normalizer(&src.y(id.tag(), i)) - 1.0).abs() > eps);
    let count = hits.iter().filter(|&&h| h).count();
    let p = count as f64 / replicates as f64;
    let est = MomentEstimate { mean: p, stderr: (p * (1.0 - p) / replicates as f64).sqrt(), count: replicates, target: None };
    let target = match opts.y_source {
        YSource::Sketched => None,
        YSource::AllOnes => Some(0.0),
        YSource::IidGaussian => Some(2.0 * standard_normal_cdf(-eps / iid_gaussian_normalizer_sd(config.n))),
    };
    let mut report = ConditionReport::new(id, opts.y_source, est, target, 0.0, opts.threshold_sigma).with_reference("eps", eps);
    if opts.y_source == YSource::IidGaussian {
        let quarter = 2.0 * standard_normal_cdf(-2.0 * (config.n as f64).sqrt() * eps);
        report = report.with_reference("quarter_variance_limit", quarter);
    }
    Ok(report)
}

/// `E|x₁|³` from the closed form and `E|y₁|³` by Monte Carlo; passes when
/// the latter is finite and doubling the replicate count moves it by less
/// than three standard errors.
pub fn third_moment_bound(config: &ProblemConfig, replicates: usize, opts: &ConditionOptions) -> Result<ConditionReport> {
    let id = ConditionId::ThirdMomentBound;
    require(id, replicates)?;
    let src = Source::new(config, opts.y_source)?;
    let values = map_indexed(2 * replicates, opts.parallelism, |i| src.y_first(id.tag(), i).abs().powi(3));
    let half = MomentEstimate::from_values(&values[..replicates])?;
    let full = MomentEstimate::from_values(&values)?;
    let stable = (full.mean - half.mean).abs() < 3.0 * half.stderr.max(f64::MIN_POSITIVE) || half.stderr == 0.0;
    let mut report = ConditionReport::new(id, opts.y_source, full, None, 0.0, opts.threshold_sigma)
        .with_reference("x_abs_third", config.dist_x.moments().abs_third)
        .with_reference("y_abs_third_half", half.mean);
    report.pass = report.pass && stable;
    if !stable {
        report.notes.push(format!("estimate moved from {} to {} on doubling N", half.mean, full.mean));
    }
    Ok(report)
}

/// Every condition at `replicates` (raised to each condition's minimum).
pub fn run_all(config: &ProblemConfig, replicates: usize, eps: f64, opts: &ConditionOptions) -> Result<Vec<ConditionReport>> {
    let mut reports = Vec::with_capacity(ConditionId::ALL.len());
    for id in ConditionId::ALL {
        let n = replicates.max(id.min_replicates());
        let mut r = match id {
            ConditionId::YSecondMoment => y_second_moment(config, n, opts)?,
            ConditionId::YFourthMoment => y_fourth_moment(config, n, opts)?,
            ConditionId::MixedSecondMoments => mixed_second_moments(config, n, opts)?,
            ConditionId::PnFourthMoment => pn_fourth_moment(config, n, opts)?,
            ConditionId::LlnRate => lln_rate(config, n, opts)?,
            ConditionId::TailProbability => tail_probability(config, n, eps, opts)?,
            ConditionId::ThirdMomentBound => third_moment_bound(config, n, opts)?,
        };
        if config.dist_s.moments().eighth.is_none() {
            r.notes.push("S entry law has no known eighth moment".into());
        }
        reports.push(r);
    }
    Ok(reports)
}
