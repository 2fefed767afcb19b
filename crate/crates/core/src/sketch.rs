//! Random objects `X, Z, S` and the normalized statistics built from them.
//!
//! `SᵀS` is never formed. The sketched statistic is `(S X)·(S Z)` over two
//! m-vectors, and `Y = Sᵀ(S Z)` replays the row stream a second time, so the
//! direct engine holds one row of `S` at a time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::EntryDistribution;
use crate::exec::{map_indexed, Parallelism};
use crate::numeric::{self, NeumaierSum};
use crate::reduced::{GaussianPlan, LatticePlan, MAX_LATTICE_N};
use crate::rng::{lane, RngStream, StreamRng, SAMPLER_ID};
use crate::{Error, Result};

/// How the law of the statistic is sampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Reduced sampler when one exists for the entry laws, direct otherwise.
    #[default]
    Auto,
    /// Row-streamed `S` every time.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    pub dist_s: EntryDistribution,
    pub dist_x: EntryDistribution,
    pub dist_z: EntryDistribution,
    pub replicates: usize,
    pub master_seed: u64,
    /// Reuse one `S` for every replicate. Changes the law under test.
    #[serde(default)]
    pub fixed_s: bool,
    #[serde(default)]
    pub engine: Engine,
}

impl ProblemConfig {
    pub fn new(m: usize, n: usize, dist: EntryDistribution, replicates: usize, master_seed: u64) -> Self {
        Self {
            m,
            n,
            dist_s: dist,
            dist_x: dist,
            dist_z: dist,
            replicates,
            master_seed,
            fixed_s: false,
            engine: Engine::Auto,
        }
    }

    pub fn gaussian(m: usize, n: usize, replicates: usize, master_seed: u64) -> Self {
        Self::new(m, n, EntryDistribution::gaussian(), replicates, master_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.replicates == 0 {
            return Err(Error::InvalidConfig(format!(
                "m, n and replicates must be ≥ 1 (m = {}, n = {}, N = {})",
                self.m, self.n, self.replicates
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex16(&Sha256::digest(&json))
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(16).fold(String::with_capacity(32), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// `X·Z / √n`
    PlainInner,
    /// `Xᵀ SᵀS Z / √(m²n + mn²)`
    SketchedInner,
    /// `SᵀS Z / √(m² + mn)`; batches keep the first coordinate.
    YVector,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 3] =
        [StatisticKind::PlainInner, StatisticKind::SketchedInner, StatisticKind::YVector];

    pub fn tag(self) -> u64 {
        match self {
            StatisticKind::PlainInner => 1,
            StatisticKind::SketchedInner => 2,
            StatisticKind::YVector => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::PlainInner => "plain_inner",
            StatisticKind::SketchedInner => "sketched_inner",
            StatisticKind::YVector => "y_vector",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain_inner" | "plain" => Ok(StatisticKind::PlainInner),
            "sketched_inner" | "sketched" => Ok(StatisticKind::SketchedInner),
            "y_vector" | "y" => Ok(StatisticKind::YVector),
            other => Err(Error::InvalidArgument(format!("unknown statistic `{other}`"))),
        }
    }
}

/// `√n`, `√(m²n + mn²)` or `√(m² + mn)`, computed as products of square
/// roots so that dimensions up to 2³¹ cannot overflow.
pub fn normalizer(kind: StatisticKind, m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    match kind {
        StatisticKind::PlainInner => n.sqrt(),
        StatisticKind::SketchedInner => m.sqrt() * n.sqrt() * (m + n).sqrt(),
        StatisticKind::YVector => m.sqrt() * (m + n).sqrt(),
    }
}

/// Sequential access to the rows of an `m × n` matrix.
pub trait RowSource {
    fn fill_row(&mut self, row: &mut [f64]);
    /// Restarts at row 0 with the same content.
    fn rewind(&mut self);
}

/// Rows of a random matrix drawn from a replayable stream.
pub struct RandomRows {
    dist: EntryDistribution,
    stream: RngStream,
    rng: StreamRng,
}

impl RandomRows {
    pub fn new(dist: EntryDistribution, stream: RngStream) -> Self {
        Self { dist, stream, rng: stream.rng() }
    }
}

impl RowSource for RandomRows {
    fn fill_row(&mut self, row: &mut [f64]) {
        self.dist.fill(&mut self.rng, row);
    }

    fn rewind(&mut self) {
        self.rng = self.stream.rng();
    }
}

/// Rows of an explicit row-major matrix.
pub struct MatrixRows<'a> {
    data: &'a [f64],
    n: usize,
    next: usize,
}

impl<'a> MatrixRows<'a> {
    pub fn new(data: &'a [f64], n: usize) -> Self {
        assert!(n > 0 && data.len().is_multiple_of(n), "row-major data must be m × n");
        Self { data, n, next: 0 }
    }
}

impl RowSource for MatrixRows<'_> {
    fn fill_row(&mut self, row: &mut [f64]) {
        let start = self.next * self.n;
        row.copy_from_slice(&self.data[start..start + self.n]);
        self.next += 1;
    }

    fn rewind(&mut self) {
        self.next = 0;
    }
}

pub fn plain_inner(x: &[f64], z: &[f64]) -> f64 {
    numeric::dot(x, z) / normalizer(StatisticKind::PlainInner, 0, x.len())
}

/// `(S X)·(S Z) / √(m²n + mn²)` from `m` streamed rows.
pub fn sketched_inner_streamed(rows: &mut impl RowSource, m: usize, x: &[f64], z: &[f64]) -> f64 {
    let n = x.len();
    let mut row = vec![0.0; n];
    let mut acc = NeumaierSum::new();
    for _ in 0..m {
        rows.fill_row(&mut row);
        acc.add(numeric::dot(&row, x) * numeric::dot(&row, z));
    }
    acc.total() / normalizer(StatisticKind::SketchedInner, m, n)
}

/// `Sᵀ(S Z) / √(m² + mn)` in two passes over the rows.
pub fn y_vector_streamed(rows: &mut impl RowSource, m: usize, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut row = vec![0.0; n];
    let mut w = Vec::with_capacity(m);
    for _ in 0..m {
        rows.fill_row(&mut row);
        w.push(numeric::dot(&row, z));
    }
    rows.rewind();
    let mut acc = vec![NeumaierSum::new(); n];
    for &wi in &w {
        rows.fill_row(&mut row);
        for (a, &s) in acc.iter_mut().zip(&row) {
            a.add(s * wi);
        }
    }
    let scale = normalizer(StatisticKind::YVector, m, n);
    acc.iter().map(|a| a.total() / scale).collect()
}

/// First coordinate of [`y_vector_streamed`] in a single pass.
pub fn y_first_streamed(rows: &mut impl RowSource, m: usize, z: &[f64]) -> f64 {
    let n = z.len();
    let mut row = vec![0.0; n];
    let mut acc = NeumaierSum::new();
    for _ in 0..m {
        rows.fill_row(&mut row);
        acc.add(row[0] * numeric::dot(&row, z));
    }
    acc.total() / normalizer(StatisticKind::YVector, m, n)
}

enum Plan {
    Direct,
    Gaussian(GaussianPlan),
    Lattice(LatticePlan),
}

/// Which route produced a statistic; recorded in batch metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    ReducedGaussian,
    ReducedLattice,
}

/// Per-config sampling state shared read-only across workers.
pub struct Sampler<'a> {
    config: &'a ProblemConfig,
    plan: Plan,
}

impl<'a> Sampler<'a> {
    pub fn new(config: &'a ProblemConfig) -> Result<Self> {
        config.validate()?;
        let plan = if config.engine == Engine::Direct || config.fixed_s {
            Plan::Direct
        } else if config.dist_s.is_gaussian() {
            Plan::Gaussian(GaussianPlan::new(config.m, config.n))
        } else {
            match (config.dist_s.lattice(), config.dist_x.lattice(), config.dist_z.lattice()) {
                (Some(s), Some(x), Some(z)) if config.n <= MAX_LATTICE_N => {
                    Plan::Lattice(LatticePlan::new(s, x, z, config.m, config.n))
                }
                _ => Plan::Direct,
            }
        };
        Ok(Self { config, plan })
    }

    pub fn config(&self) -> &ProblemConfig {
        self.config
    }

    pub fn route(&self, kind: StatisticKind) -> Route {
        match (&self.plan, kind) {
            (_, StatisticKind::PlainInner) => Route::Direct,
            (Plan::Gaussian(_), _) => Route::ReducedGaussian,
            (Plan::Lattice(_), StatisticKind::SketchedInner) => Route::ReducedLattice,
            _ => Route::Direct,
        }
    }

    fn replicate(&self, tag: u64, index: usize) -> RngStream {
        RngStream::path(self.config.master_seed, &[tag, index as u64])
    }

    fn draw_xz(&self, stream: &RngStream) -> (Vec<f64>, Vec<f64>) {
        let c = self.config;
        (c.dist_x.sample(c.n, &stream.child(lane::X)), c.dist_z.sample(c.n, &stream.child(lane::Z)))
    }

    fn draw_z(&self, stream: &RngStream) -> Vec<f64> {
        self.config.dist_z.sample(self.config.n, &stream.child(lane::Z))
    }

    fn rows(&self, stream: &RngStream) -> RandomRows {
        let s_stream = if self.config.fixed_s {
            RngStream::path(self.config.master_seed, &[lane::FIXED_S])
        } else {
            stream.child(lane::S)
        };
        RandomRows::new(self.config.dist_s, s_stream)
    }

    /// Scalar statistic for replicate `index` drawn under stream tag `tag`.
    pub fn scalar(&self, kind: StatisticKind, tag: u64, index: usize) -> f64 {
        let c = self.config;
        let stream = self.replicate(tag, index);
        match kind {
            StatisticKind::PlainInner => {
                let (x, z) = self.draw_xz(&stream);
                plain_inner(&x, &z)
            }
            StatisticKind::SketchedInner => {
                let (x, z) = self.draw_xz(&stream);
                let norm = normalizer(kind, c.m, c.n);
                match &self.plan {
                    Plan::Gaussian(p) => p.quadratic_form(&x, &z, &mut stream.child(lane::AUX).rng()) / norm,
                    Plan::Lattice(p) => p.quadratic_form(&x, &z, &mut stream.child(lane::AUX).rng()) / norm,
                    Plan::Direct => sketched_inner_streamed(&mut self.rows(&stream), c.m, &x, &z),
                }
            }
            StatisticKind::YVector => self.y_first(tag, index),
        }
    }

    pub fn y_vector(&self, tag: u64, index: usize) -> Vec<f64> {
        let stream = self.replicate(tag, index);
        let z = self.draw_z(&stream);
        match &self.plan {
            Plan::Gaussian(p) => p.y_vector(&z, &mut stream.child(lane::AUX).rng()),
            _ => y_vector_streamed(&mut self.rows(&stream), self.config.m, &z),
        }
    }

    pub fn y_first(&self, tag: u64, index: usize) -> f64 {
        let stream = self.replicate(tag, index);
        let z = self.draw_z(&stream);
        match &self.plan {
            Plan::Gaussian(p) => p.y_first(&z, &mut stream.child(lane::AUX).rng()),
            _ => y_first_streamed(&mut self.rows(&stream), self.config.m, &z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statistic {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// One replicate of `kind` from substream `(seed, kind, index)`.
pub fn draw_statistic(config: &ProblemConfig, kind: StatisticKind, index: usize) -> Result<Statistic> {
    if index >= config.replicates {
        return Err(Error::InvalidArgument(format!(
            "replicate index {index} out of range for N = {}",
            config.replicates
        )));
    }
    let sampler = Sampler::new(config)?;
    Ok(match kind {
        StatisticKind::YVector => Statistic::Vector(sampler.y_vector(kind.tag(), index)),
        _ => Statistic::Scalar(sampler.scalar(kind, kind.tag(), index)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub values: Vec<f64>,
    pub statistic: StatisticKind,
    pub config_digest: String,
    pub seed: u64,
    pub route: Route,
    pub sampler: String,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Hex SHA-256 over the little-endian bytes of the values.
    pub fn values_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex16(&h.finalize())
    }

    /// One value per line after a `#` metadata header; shortest round-trip
    /// decimal formatting.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# config_digest={} statistic={} seed={} route={} sampler={} count={}\nvalue\n",
            self.config_digest,
            self.statistic.name(),
            self.seed,
            serde_json::to_value(self.route).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            self.sampler,
            self.values.len()
        );
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<f64>> {
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && l.trim() != "value")
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Malformed(format!("`{l}`: {e}"))))
            .collect()
    }

    pub fn envelope(&self, config: &ProblemConfig, include_values: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "config": config,
            "kind": self.statistic,
            "seed": self.seed,
            "route": self.route,
            "sampler": self.sampler,
            "count": self.values.len(),
            "values_digest": self.values_digest(),
        });
        if include_values {
            v["values"] = serde_json::json!(self.values);
        }
        v
    }
}

/// `N` replicates of `kind`; placement is by replicate index.
pub fn collect_batch(config: &ProblemConfig, kind: StatisticKind, parallelism: Parallelism) -> Result<SampleBatch> {
    collect_batch_tagged(config, kind, kind.tag(), parallelism)
}

/// As [`collect_batch`] with an explicit stream tag; two batches sharing a
/// tag see the same `X, Z` per replicate.
pub fn collect_batch_tagged(
    config: &ProblemConfig,
    kind: StatisticKind,
    tag: u64,
    parallelism: Parallelism,
) -> Result<SampleBatch> {
    let sampler = Sampler::new(config)?;
    let values = map_indexed(config.replicates, parallelism, |i| sampler.scalar(kind, tag, i));
    Ok(SampleBatch {
        values,
        statistic: kind,
        config_digest: config.digest(),
        seed: config.master_seed,
        route: sampler.route(kind),
        sampler: SAMPLER_ID.to_string(),
    })
}
