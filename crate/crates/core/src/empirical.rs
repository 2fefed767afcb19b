//! Empirical CDFs, Kolmogorov–Smirnov distances with DKW bands, histograms
//! and moment estimates.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numeric::NeumaierSum;
use crate::{Error, Result};

pub const DEFAULT_DKW_DELTA: f64 = 0.01;

/// Φ(t) through the complementary error function.
pub fn standard_normal_cdf(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-t / SQRT_2)
}

pub fn standard_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// One-sided DKW half-width `√(ln(2/δ) / 2N)`.
pub fn dkw_band(count: f64, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * count)).sqrt()
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.to_vec())
    }

    pub fn from_vec(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        check_finite(&values)?;
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Right-continuous `#{x ≤ t} / N`.
    pub fn eval(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= t) as f64 / self.len() as f64
    }

    /// Distinct values with the counts strictly below and up to each.
    fn steps(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let mut i = 0;
        std::iter::from_fn(move || {
            if i >= self.sorted.len() {
                return None;
            }
            let v = self.sorted[i];
            let start = i;
            while i < self.sorted.len() && self.sorted[i] == v {
                i += 1;
            }
            Some((v, start, i))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub distance: f64,
    pub location: f64,
    pub dkw_band: f64,
    pub delta: f64,
    /// Second size is `None` for an analytic reference.
    pub sample_sizes: (usize, Option<usize>),
}

/// Exact sup-distance between the ECDF and a continuous reference CDF.
pub fn ks_one_sample<F>(ecdf: &EmpiricalCdf, reference: F, delta: f64) -> KsReport
where
    F: Fn(f64) -> f64,
{
    let n = ecdf.len() as f64;
    let mut distance = 0.0;
    let mut location = ecdf.sorted[0];
    for (v, below, upto) in ecdf.steps() {
        let f = reference(v);
        let d = (upto as f64 / n - f).abs().max((below as f64 / n - f).abs());
        if d > distance {
            distance = d;
            location = v;
        }
    }
    KsReport {
        distance: distance.min(1.0),
        location,
        dkw_band: dkw_band(n, delta),
        delta,
        sample_sizes: (ecdf.len(), None),
    }
}

pub fn ks_vs_normal(values: &[f64], delta: f64) -> Result<KsReport> {
    Ok(ks_one_sample(&EmpiricalCdf::new(values)?, standard_normal_cdf, delta))
}

/// Exact sup-distance between two ECDFs by a merge scan.
pub fn ks_two_sample(a: &EmpiricalCdf, b: &EmpiricalCdf, delta: f64) -> KsReport {
    let (xs, ys) = (&a.sorted, &b.sorted);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut distance = 0.0;
    let mut location = xs[0].min(ys[0]);
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        let d = (i as f64 / na - j as f64 / nb).abs();
        if d > distance {
            distance = d;
            location = v;
        }
    }
    let effective = na * nb / (na + nb);
    KsReport {
        distance,
        location,
        dkw_band: dkw_band(effective, delta),
        delta,
        sample_sizes: (xs.len(), Some(ys.len())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub center: f64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub range: (f64, f64),
    pub bins: Vec<Bin>,
    pub total: usize,
    pub clipped_below: usize,
    pub clipped_above: usize,
}

impl Histogram {
    pub fn clipped(&self) -> usize {
        self.clipped_below + self.clipped_above
    }

    pub fn bin_width(&self) -> f64 {
        (self.range.1 - self.range.0) / self.bins.len() as f64
    }

    /// `bin_center,density` rows with round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for bin in &self.bins {
            let _ = writeln!(out, "{},{}", bin.center, bin.density);
        }
        out
    }
}

/// Density-normalized histogram on `[lo, hi]`; the top edge belongs to the
/// last bin.
pub fn histogram(values: &[f64], bin_count: usize, range: (f64, f64)) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    check_finite(values)?;
    let (lo, hi) = range;
    if bin_count == 0 || !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "histogram needs bin_count ≥ 1 and a finite range of positive width, got {bin_count} bins on [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bin_count as f64;
    let mut counts = vec![0usize; bin_count];
    let (mut below, mut above) = (0, 0);
    for &v in values {
        if v < lo {
            below += 1;
        } else if v > hi {
            above += 1;
        } else {
            let k = (((v - lo) / width) as usize).min(bin_count - 1);
            counts[k] += 1;
        }
    }
    let scale = 1.0 / (values.len() as f64 * width);
    let bins = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| Bin { center: lo + (k as f64 + 0.5) * width, density: c as f64 * scale })
        .collect();
    Ok(Histogram { range, bins, total: values.len(), clipped_below: below, clipped_above: above })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl MomentEstimate {
    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        check_finite(values)?;
        let n = values.len();
        let mean = values.iter().copied().collect::<NeumaierSum>().total() / n as f64;
        let stderr = if n > 1 {
            let ss = values.iter().map(|v| (v - mean).powi(2)).collect::<NeumaierSum>().total();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, stderr, count: n, target: None })
    }
}

/// Sample mean of `transform(v)` with its standard error.
pub fn estimate_moment<F>(values: &[f64], transform: F) -> Result<MomentEstimate>
where
    F: Fn(f64) -> f64,
{
    let mapped: Vec<f64> = values.iter().map(|&v| transform(v)).collect();
    MomentEstimate::from_values(&mapped)
}

pub fn estimate_power(values: &[f64], power: i32) -> Result<MomentEstimate> {
    estimate_moment(values, |v| v.powi(power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::EntryDistribution;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    /// Φ(t) by Simpson quadrature of the density from 0, independent of erfc.
    fn phi_quadrature(t: f64) -> f64 {
        let steps = 20_000;
        let h = t / steps as f64;
        let mut acc = standard_normal_pdf(0.0) + standard_normal_pdf(t);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * standard_normal_pdf(i as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(standard_normal_cdf(0.0), 0.5);
        assert!((phi_quadrature(1.0) - 0.8413447461).abs() < 1e-10);
        assert!((phi_quadrature(-1.96) - 0.0249978951).abs() < 1e-10);
        for t in [-6.0, -3.3, -1.96, -1.0, -0.2, 0.7, 1.0, 2.5, 5.0] {
            assert!((standard_normal_cdf(t) - phi_quadrature(t)).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn ks_two_point_sample() {
        let ecdf = EmpiricalCdf::new(&[-1.0, 1.0]).unwrap();
        let r = ks_one_sample(&ecdf, standard_normal_cdf, 0.01);
        // max |0.5 − Φ(±1)| by hand.
        assert!((r.distance - 0.3413447).abs() < 1e-7);
    }

    #[test]
    fn ks_against_own_ecdf() {
        let xs = EntryDistribution::gaussian().sample(500, &RngStream::root(1));
        let ecdf = EmpiricalCdf::new(&xs).unwrap();
        let r = ks_one_sample(&ecdf, |t| ecdf.eval(t), 0.01);
        assert!(r.distance <= 1.0 / 500.0 + 1e-15);
    }

    #[test]
    fn ks_rejects_non_finite() {
        assert!(matches!(ks_vs_normal(&[0.0, f64::NAN], 0.01), Err(Error::NonFinite { index: 1, .. })));
        assert!(matches!(EmpiricalCdf::new(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn ks_two_sample_edge_cases() {
        let a = EmpiricalCdf::new(&[0.3, -1.2, 4.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &a, 0.01).distance, 0.0);
        let zero = EmpiricalCdf::new(&[0.0]).unwrap();
        let one = EmpiricalCdf::new(&[1.0]).unwrap();
        assert_eq!(ks_two_sample(&zero, &one, 0.01).distance, 1.0);
    }

    #[test]
    fn ks_large_gaussian_batches() {
        let g = EntryDistribution::gaussian();
        let a = g.sample(100_000, &RngStream::root(31));
        let b = g.sample(100_000, &RngStream::root(32));
        let one = ks_vs_normal(&a, 0.01).unwrap();
        assert!((one.dkw_band - (200f64.ln() / 2e5).sqrt()).abs() < 1e-15);
        assert!(one.distance <= 0.00702, "{}", one.distance);
        let two = ks_two_sample(&EmpiricalCdf::new(&a).unwrap(), &EmpiricalCdf::new(&b).unwrap(), 0.01);
        assert!(two.distance <= 0.00993, "{}", two.distance);
        assert!((two.dkw_band - dkw_band(5e4, 0.01)).abs() < 1e-15);
    }

    #[test]
    fn ties_use_jump_steps() {
        // Three-point style sample: mass 0.5 at 0 and 0.25 at ±1.
        let ecdf = EmpiricalCdf::new(&[0.0, 0.0, -1.0, 1.0]).unwrap();
        let r = ks_one_sample(&ecdf, standard_normal_cdf, 0.01);
        let brute = brute_force_sup(&ecdf, standard_normal_cdf);
        assert!((r.distance - brute).abs() < 1e-6);
        assert!((r.distance - 0.25).abs() < 1e-12);
    }

    /// Dense-grid scan including left/right limits around each sample point.
    fn brute_force_sup<F: Fn(f64) -> f64>(ecdf: &EmpiricalCdf, f: F) -> f64 {
        let mut best: f64 = 0.0;
        for k in 0..=200_000 {
            let t = -8.0 + 16.0 * k as f64 / 200_000.0;
            best = best.max((ecdf.eval(t) - f(t)).abs());
        }
        for &v in ecdf.sorted_values() {
            for t in [v - 1e-9, v, v + 1e-9] {
                best = best.max((ecdf.eval(t) - f(t)).abs());
            }
        }
        best
    }

    #[test]
    fn exact_sup_matches_brute_force() {
        for seed in 0..5 {
            let xs = EntryDistribution::gaussian().sample(12, &RngStream::root(seed));
            let ecdf = EmpiricalCdf::new(&xs).unwrap();
            let exact = ks_one_sample(&ecdf, standard_normal_cdf, 0.01).distance;
            let brute = brute_force_sup(&ecdf, standard_normal_cdf);
            assert!(exact >= brute - 1e-12);
            assert!(exact - brute < 1e-6, "{exact} vs {brute}");
        }
    }

    #[test]
    fn dkw_coverage() {
        let g = EntryDistribution::gaussian();
        let exceed = (0..200)
            .filter(|&i| {
                let xs = g.sample(10_000, &RngStream::path(77, &[i]));
                let r = ks_vs_normal(&xs, 0.05).unwrap();
                r.distance > r.dkw_band
            })
            .count();
        assert!(exceed as f64 / 200.0 <= 0.10, "{exceed} exceedances");
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[0.0; 4], 1, (-1.0, 1.0)).unwrap();
        assert_eq!(h.bins[0].density, 0.5);
        let h = histogram(&[-5.0], 8, (-4.0, 4.0)).unwrap();
        assert_eq!(h.clipped(), 1);
        assert!(h.bins.iter().all(|b| b.density == 0.0));
        assert!(histogram(&[], 4, (0.0, 1.0)).is_err());
        assert!(histogram(&[0.5], 0, (0.0, 1.0)).is_err());
        assert!(histogram(&[0.5], 3, (1.0, 1.0)).is_err());
        let h = histogram(&[1.0], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.bins[1].density, 2.0);
        assert_eq!(h.to_csv(), "bin_center,density\n0.25,0\n0.75,2\n");
    }

    #[test]
    fn histogram_center_bin_density() {
        let xs = EntryDistribution::gaussian().sample(100_000, &RngStream::root(8));
        let h = histogram(&xs, 50, (-4.0, 4.0)).unwrap();
        let center = h.bins.iter().min_by(|a, b| a.center.abs().total_cmp(&b.center.abs())).unwrap();
        assert!((center.density - standard_normal_pdf(0.0)).abs() < 0.02);
        let mass: f64 = h.bins.iter().map(|b| b.density * h.bin_width()).sum();
        assert!((mass - (1.0 - h.clipped() as f64 / h.total as f64)).abs() < 1e-9);
    }

    #[test]
    fn moment_estimates() {
        let e = estimate_power(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
        let e = estimate_power(&[-1.0, 1.0], 1).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!((e.stderr - 1.0).abs() < 1e-15);
        assert!(estimate_moment(&[1.0, 0.0], |v| 1.0 / v).is_err());
        let xs = EntryDistribution::gaussian().sample(1_000_000, &RngStream::root(4));
        let e = estimate_power(&xs, 4).unwrap();
        assert!((e.mean - 3.0).abs() <= 5.0 * e.stderr);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ks_invariant_under_affine_maps(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let xs = EntryDistribution::gaussian().sample(200, &RngStream::root(seed));
            let ys = EntryDistribution::scaled_uniform().sample(150, &RngStream::root(seed + 1));
            let base = ks_vs_normal(&xs, 0.01).unwrap().distance;
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let ecdf = EmpiricalCdf::new(&moved).unwrap();
            let mapped = ks_one_sample(&ecdf, |t| standard_normal_cdf((t - shift) / scale), 0.01).distance;
            prop_assert!((base - mapped).abs() < 1e-12);

            let two = ks_two_sample(&EmpiricalCdf::new(&xs).unwrap(), &EmpiricalCdf::new(&ys).unwrap(), 0.01).distance;
            let ys_moved: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
            let two_moved = ks_two_sample(&ecdf, &EmpiricalCdf::new(&ys_moved).unwrap(), 0.01).distance;
            prop_assert!((two - two_moved).abs() < 1e-12);
        }

        #[test]
        fn ks_bounded(values in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
            let r = ks_vs_normal(&values, 0.01).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.distance));
        }
    }
}
