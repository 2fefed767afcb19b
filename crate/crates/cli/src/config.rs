//! Run configuration: clap flags layered over an optional JSON document.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sketchlab::distributions::DistributionSpec;
use sketchlab::empirical::DEFAULT_DKW_DELTA;
use sketchlab::experiments::FigureRegime;
use sketchlab::{Engine, EntryDistribution, Error, ProblemConfig, RateAxis, StatisticKind, YSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Conditions,
    RateFit,
    Counterexample,
    Figures,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Conditions => "conditions",
            Command::RateFit => "rate-fit",
            Command::Counterexample => "counterexample",
            Command::Figures => "figures",
            Command::Plot => "plot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axis: RateAxis,
    pub sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
    /// Draw the φ curve over histograms.
    pub overlay: bool,
    pub dkw_delta: f64,
    pub threshold_sigma: f64,
    pub statistic: StatisticKind,
    pub y_source: YSource,
    pub eps: f64,
    pub coupled: bool,
    pub n_grid: Vec<usize>,
    pub regimes: Vec<FigureRegime>,
    pub large_replicates: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Failures before any sampling starts; each maps to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown distribution kind `{0}` (expected standard_gaussian, rademacher, three_point or scaled_uniform)")]
    UnknownDistribution(String),
    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),
    #[error("rate-fit requires a grid: pass --axis and --grid (e.g. --axis m --grid 16,64,256)")]
    MissingGrid,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file {path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("malformed config file {path}: {source}")]
    FileFormat { path: PathBuf, source: serde_json::Error },
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::UnknownDistribution(_) => 3,
            ConfigError::InvalidDistribution(_) => 4,
            ConfigError::MissingGrid => 5,
            ConfigError::Invalid(_) => 6,
            ConfigError::File { .. } | ConfigError::FileFormat { .. } => 7,
        }
    }
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownDistribution(k) => ConfigError::UnknownDistribution(k),
            Error::InvalidDistribution(msg) => ConfigError::InvalidDistribution(msg),
            other => ConfigError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sketchlab", version, about = "Monte Carlo laboratory for sketched inner products")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Sample sketched and plain statistics and compare their laws.
    Simulate(Flags),
    /// Run the hypothesis verifiers and write a JSON array of reports.
    Conditions(Flags),
    /// Fit the KS decay exponent over a dimension grid.
    RateFit(Flags),
    /// The fixed-m construction where the sketched statistic is not normal.
    Counterexample(Flags),
    /// Histograms and KS distances for the figure regimes.
    Figures(Flags),
    /// Render histogram CSV files as SVG.
    Plot(Flags),
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON run-config document; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Entry law for S, X and Z.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub dist_s: Option<String>,
    #[arg(long)]
    pub dist_x: Option<String>,
    #[arg(long)]
    pub dist_z: Option<String>,
    /// three_point magnitude.
    #[arg(long)]
    pub a: Option<f64>,
    /// three_point mass at each of ±a.
    #[arg(long)]
    pub p: Option<f64>,
    /// Replicate count.
    #[arg(long = "N")]
    pub replicates: Option<usize>,
    /// Master seed; drawn from system entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fixed_s: bool,
    /// Sample every replicate through the row-streamed reference route.
    #[arg(long)]
    pub direct: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes results.
    #[arg(long, env = "SKETCHLAB_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub dkw_delta: Option<f64>,
    #[arg(long)]
    pub threshold_sigma: Option<f64>,
    /// Write SVG figures next to histogram CSVs.
    #[arg(long, overrides_with = "no_plots")]
    pub plots: bool,
    #[arg(long)]
    pub no_plots: bool,
    /// Omit the standard normal density curve from plots.
    #[arg(long)]
    pub no_overlay: bool,
    /// m | n | diagonal.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated sizes, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// plain_inner | sketched_inner | y_vector.
    #[arg(long)]
    pub kind: Option<String>,
    /// sketched | all_ones | iid_gaussian.
    #[arg(long)]
    pub y_source: Option<String>,
    /// Tail threshold for tail_probability.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Share X, Z between the sketched and plain batches.
    #[arg(long)]
    pub coupled: bool,
    /// Comma-separated n values for the counterexample.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Comma-separated figure regimes.
    #[arg(long, value_delimiter = ',')]
    pub regime: Option<Vec<String>>,
    /// Replicate count for the large-sample KS of each figure regime.
    #[arg(long)]
    pub large_n: Option<usize>,
    /// Histogram CSV files to render.
    #[arg(long)]
    pub input: Vec<PathBuf>,
}

impl Sub {
    pub fn split(self) -> (Command, Flags) {
        match self {
            Sub::Simulate(f) => (Command::Simulate, f),
            Sub::Conditions(f) => (Command::Conditions, f),
            Sub::RateFit(f) => (Command::RateFit, f),
            Sub::Counterexample(f) => (Command::Counterexample, f),
            Sub::Figures(f) => (Command::Figures, f),
            Sub::Plot(f) => (Command::Plot, f),
        }
    }
}

/// Partial document accepted by `--config`: every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<Command>,
    problem: Option<FileProblem>,
    grid: Option<GridSpec>,
    output_dir: Option<PathBuf>,
    emit_plots: Option<bool>,
    overlay: Option<bool>,
    dkw_delta: Option<f64>,
    threshold_sigma: Option<f64>,
    statistic: Option<StatisticKind>,
    y_source: Option<YSource>,
    eps: Option<f64>,
    coupled: Option<bool>,
    n_grid: Option<Vec<usize>>,
    regimes: Option<Vec<FigureRegime>>,
    large_replicates: Option<usize>,
    inputs: Option<Vec<PathBuf>>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileProblem {
    m: Option<usize>,
    n: Option<usize>,
    dist: Option<DistributionSpec>,
    dist_s: Option<DistributionSpec>,
    dist_x: Option<DistributionSpec>,
    dist_z: Option<DistributionSpec>,
    replicates: Option<usize>,
    master_seed: Option<u64>,
    fixed_s: Option<bool>,
    engine: Option<Engine>,
}

fn spec_dist(spec: &DistributionSpec) -> Result<EntryDistribution, ConfigError> {
    Ok(EntryDistribution::from_name(&spec.kind, spec.a, spec.p)?)
}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::File { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::FileFormat { path: path.into(), source })
}

/// Parses `argv` (program name first) and resolves a validated config.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(ParseFailure::Usage)?;
    let (command, flags) = cli.command.split();
    resolve(command, flags).map_err(ParseFailure::Config)
}

#[derive(Debug)]
pub enum ParseFailure {
    Usage(clap::Error),
    Config(ConfigError),
}

pub fn resolve(command: Command, flags: Flags) -> Result<RunConfig, ConfigError> {
    let file = match &flags.config {
        Some(path) => read_file(path)?,
        None => FileConfig::default(),
    };
    if let Some(c) = file.command {
        if c != command {
            return Err(ConfigError::Invalid(format!(
                "config file is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )));
        }
    }
    let fp = file.problem.unwrap_or_default();

    // Distribution precedence: per-matrix flag, shared flag, per-matrix file
    // entry, shared file entry, Gaussian.
    let flag_dist = |name: &Option<String>| -> Result<Option<EntryDistribution>, ConfigError> {
        name.as_deref().map(|k| EntryDistribution::from_name(k, flags.a, flags.p).map_err(Into::into)).transpose()
    };
    let shared_flag = flag_dist(&flags.dist)?;
    let shared_file = fp.dist.as_ref().map(spec_dist).transpose()?;
    let pick = |flag: &Option<String>, file: &Option<DistributionSpec>| -> Result<EntryDistribution, ConfigError> {
        if let Some(d) = flag_dist(flag)? {
            return Ok(d);
        }
        if let Some(d) = shared_flag {
            return Ok(d);
        }
        if let Some(spec) = file {
            return spec_dist(spec);
        }
        Ok(shared_file.unwrap_or_else(EntryDistribution::gaussian))
    };
    let dist_s = pick(&flags.dist_s, &fp.dist_s)?;
    let dist_x = pick(&flags.dist_x, &fp.dist_x)?;
    let dist_z = pick(&flags.dist_z, &fp.dist_z)?;

    let (default_m, default_n) = match command {
        Command::Counterexample => (1, 10_000),
        _ => (10, 100),
    };
    let seed = flags.seed.or(fp.master_seed).unwrap_or_else(rand::random);
    let engine = if flags.direct { Engine::Direct } else { fp.engine.unwrap_or_default() };
    let problem = ProblemConfig {
        m: flags.m.or(fp.m).unwrap_or(default_m),
        n: flags.n.or(fp.n).unwrap_or(default_n),
        dist_s,
        dist_x,
        dist_z,
        replicates: flags.replicates.or(fp.replicates).unwrap_or(10_000),
        master_seed: seed,
        fixed_s: flags.fixed_s || fp.fixed_s.unwrap_or(false),
        engine,
    };
    problem.validate()?;

    let axis = flags.axis.as_deref().map(RateAxis::parse).transpose()?;
    let grid = match (axis, flags.grid) {
        (Some(axis), Some(sizes)) => Some(GridSpec { axis, sizes }),
        (None, None) => file.grid,
        (Some(axis), None) => file.grid.map(|g| GridSpec { axis, ..g }),
        (None, Some(sizes)) => Some(GridSpec { axis: file.grid.map_or(RateAxis::M, |g| g.axis), sizes }),
    };
    match (command, &grid) {
        (Command::RateFit, None) => return Err(ConfigError::MissingGrid),
        (Command::RateFit, Some(g)) if g.sizes.len() < 3 || g.sizes.windows(2).any(|w| w[0] >= w[1]) => {
            return Err(ConfigError::Invalid(format!(
                "grid must be strictly increasing with at least 3 sizes, got {:?}",
                g.sizes
            )))
        }
        (Command::RateFit, _) => {}
        (_, Some(_)) => return Err(ConfigError::Invalid(format!("a grid is only accepted by rate-fit, not `{}`", command.name()))),
        (_, None) => {}
    }

    let statistic = match flags.kind.as_deref() {
        Some(k) => StatisticKind::parse(k)?,
        None => file.statistic.unwrap_or(StatisticKind::SketchedInner),
    };
    let y_source = match flags.y_source.as_deref() {
        Some("sketched") => YSource::Sketched,
        Some("all_ones") => YSource::AllOnes,
        Some("iid_gaussian") => YSource::IidGaussian,
        Some(other) => return Err(ConfigError::Invalid(format!("unknown y source `{other}`"))),
        None => file.y_source.unwrap_or_default(),
    };
    let regimes = match flags.regime {
        Some(names) => names.iter().map(|r| FigureRegime::parse(r)).collect::<Result<Vec<_>, _>>()?,
        None => file.regimes.unwrap_or_else(|| FigureRegime::ALL.to_vec()),
    };
    let dkw_delta = flags.dkw_delta.or(file.dkw_delta).unwrap_or(DEFAULT_DKW_DELTA);
    if !(dkw_delta > 0.0 && dkw_delta < 1.0) {
        return Err(ConfigError::Invalid(format!("dkw_delta must lie in (0, 1), got {dkw_delta}")));
    }
    let threshold_sigma = flags.threshold_sigma.or(file.threshold_sigma).unwrap_or(sketchlab::conditions::DEFAULT_THRESHOLD_SIGMA);
    if !(threshold_sigma > 0.0 && threshold_sigma.is_finite()) {
        return Err(ConfigError::Invalid(format!("threshold_sigma must be positive, got {threshold_sigma}")));
    }
    let eps = flags.eps.or(file.eps).unwrap_or(0.05);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ConfigError::Invalid(format!("eps must be positive, got {eps}")));
    }
    let emit_plots = if flags.no_plots {
        false
    } else {
        flags.plots || file.emit_plots.unwrap_or(true)
    };
    let inputs = if flags.input.is_empty() { file.inputs.unwrap_or_default() } else { flags.input };
    if command == Command::Plot && inputs.is_empty() {
        return Err(ConfigError::Invalid("plot needs at least one --input histogram CSV".into()));
    }
    if flags.workers == Some(0) || (flags.workers.is_none() && file.workers == Some(0)) {
        return Err(ConfigError::Invalid("workers must be ≥ 1".into()));
    }

    Ok(RunConfig {
        command,
        problem,
        grid,
        output_dir: flags.out.or(file.output_dir).unwrap_or_else(|| PathBuf::from("sketchlab-out")),
        emit_plots,
        overlay: !flags.no_overlay && file.overlay.unwrap_or(true),
        dkw_delta,
        threshold_sigma,
        statistic,
        y_source,
        eps,
        coupled: flags.coupled || file.coupled.unwrap_or(false),
        n_grid: flags.n_grid.or(file.n_grid).unwrap_or_else(|| vec![100, 1000, 10_000]),
        regimes,
        large_replicates: flags.large_n.or(file.large_replicates).unwrap_or(100_000),
        inputs,
        workers: flags.workers.or(file.workers),
    })
}
