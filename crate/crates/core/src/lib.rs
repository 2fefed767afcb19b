//! Monte Carlo laboratory for normalized inner products under random
//! projections.
//!
//! The crate samples the sketched statistic `Xᵀ SᵀS Z / √(m²n + mn²)`, the
//! unprojected `Xᵀ Z / √n` and the dependent sequence `Y = SᵀS Z / √(m² + mn)`,
//! estimates the moment and concentration hypotheses of the product CLT, and
//! measures Kolmogorov–Smirnov distances and their scaling in `m` and `n`.
//!
//! Every random quantity is drawn from a counter-derived substream keyed by
//! `(master seed, tag, replicate index)`, so results do not depend on the
//! number of worker threads.

pub mod conditions;
pub mod distributions;
pub mod empirical;
mod error;
pub mod exec;
pub mod experiments;
pub mod numeric;
mod reduced;
pub mod rng;
pub mod sketch;

pub use conditions::{ConditionId, ConditionOptions, ConditionReport, YSource};
pub use distributions::{DistributionKind, EntryDistribution, Moments};
pub use empirical::{EmpiricalCdf, Histogram, KsReport, MomentEstimate};
pub use error::{Error, Result};
pub use exec::Parallelism;
pub use experiments::{ExperimentResult, FigureRegime, RateAxis, RateFit};
pub use rng::RngStream;
pub use sketch::{collect_batch, Engine, ProblemConfig, SampleBatch, StatisticKind};
