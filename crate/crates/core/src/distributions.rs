//! Zero-mean, unit-variance entry laws for `X`, `Z` and `S`.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{RngStream, StreamRng};
use crate::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;
const SQRT_3: f64 = 1.732_050_807_568_877_2;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistributionKind {
    StandardGaussian,
    Rademacher,
    /// `±a` with probability `p` each, `0` otherwise.
    ThreePoint { a: f64, p: f64 },
    /// Uniform on `[-√3, √3]`.
    ScaledUniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub abs_third: f64,
    pub fourth: f64,
    /// `None` when no closed form is available.
    pub eighth: Option<f64>,
}

/// Symmetric law supported on `{-scale, 0, scale}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Lattice {
    pub scale: f64,
    pub nonzero_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub struct EntryDistribution {
    kind: DistributionKind,
    moments: Moments,
}

/// Run-config form: `{"kind": "three_point", "a": 2.5, "p": 0.08}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl EntryDistribution {
    pub fn new(kind: DistributionKind) -> Result<Self> {
        let moments = match kind {
            DistributionKind::StandardGaussian => Moments {
                mean: 0.0,
                variance: 1.0,
                abs_third: 2.0 * (2.0 / PI).sqrt(),
                fourth: 3.0,
                eighth: Some(105.0),
            },
            DistributionKind::Rademacher => Moments {
                mean: 0.0,
                variance: 1.0,
                abs_third: 1.0,
                fourth: 1.0,
                eighth: Some(1.0),
            },
            DistributionKind::ThreePoint { a, p } => {
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "three_point requires a > 0, got a = {a}"
                    )));
                }
                if !(p > 0.0 && p < 0.5) {
                    return Err(Error::InvalidDistribution(format!(
                        "three_point requires 0 < p < 0.5, got p = {p}"
                    )));
                }
                let variance = 2.0 * p * a * a;
                if (variance - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidDistribution(format!(
                        "three_point variance 2·p·a² = {variance} ≠ 1 (a = {a}, p = {p})"
                    )));
                }
                Moments {
                    mean: 0.0,
                    variance: 1.0,
                    abs_third: 2.0 * p * a.powi(3),
                    fourth: 2.0 * p * a.powi(4),
                    eighth: Some(2.0 * p * a.powi(8)),
                }
            }
            DistributionKind::ScaledUniform => Moments {
                mean: 0.0,
                variance: 1.0,
                abs_third: 0.75 * SQRT_3,
                fourth: 1.8,
                eighth: Some(9.0),
            },
        };
        Ok(Self { kind, moments })
    }

    pub fn gaussian() -> Self {
        Self::new(DistributionKind::StandardGaussian).expect("valid")
    }

    pub fn rademacher() -> Self {
        Self::new(DistributionKind::Rademacher).expect("valid")
    }

    pub fn three_point(a: f64, p: f64) -> Result<Self> {
        Self::new(DistributionKind::ThreePoint { a, p })
    }

    pub fn scaled_uniform() -> Self {
        Self::new(DistributionKind::ScaledUniform).expect("valid")
    }

    /// Builds a law from its config-file name and optional parameters.
    pub fn from_name(name: &str, a: Option<f64>, p: Option<f64>) -> Result<Self> {
        let kind = match name {
            "standard_gaussian" | "gaussian" | "normal" => DistributionKind::StandardGaussian,
            "rademacher" => DistributionKind::Rademacher,
            "three_point" => match (a, p) {
                (Some(a), Some(p)) => DistributionKind::ThreePoint { a, p },
                _ => {
                    return Err(Error::InvalidDistribution(
                        "three_point requires both a and p".into(),
                    ))
                }
            },
            "scaled_uniform" | "uniform" => DistributionKind::ScaledUniform,
            other => return Err(Error::UnknownDistribution(other.to_string())),
        };
        Self::new(kind)
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn moments(&self) -> &Moments {
        &self.moments
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DistributionKind::StandardGaussian => "standard_gaussian",
            DistributionKind::Rademacher => "rademacher",
            DistributionKind::ThreePoint { .. } => "three_point",
            DistributionKind::ScaledUniform => "scaled_uniform",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, DistributionKind::StandardGaussian)
    }

    pub(crate) fn lattice(&self) -> Option<Lattice> {
        match self.kind {
            DistributionKind::Rademacher => Some(Lattice { scale: 1.0, nonzero_prob: 1.0 }),
            DistributionKind::ThreePoint { a, p } => Some(Lattice { scale: a, nonzero_prob: 2.0 * p }),
            _ => None,
        }
    }

    #[inline]
    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self.kind {
            DistributionKind::StandardGaussian => StandardNormal.sample(rng),
            DistributionKind::Rademacher => {
                if rng.next_u64() >> 63 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            DistributionKind::ThreePoint { a, p } => three_point_from_bits(rng.next_u64(), a, p),
            DistributionKind::ScaledUniform => uniform_from_bits(rng.next_u64()),
        }
    }

    /// Fills `out` with i.i.d. draws. Rademacher consumes one word per 64
    /// entries, so this is not equivalent to repeated [`Self::draw`].
    pub fn fill(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self.kind {
            DistributionKind::StandardGaussian => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            DistributionKind::Rademacher => {
                for chunk in out.chunks_mut(64) {
                    let bits = rng.next_u64();
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v = if (bits >> k) & 1 == 0 { 1.0 } else { -1.0 };
                    }
                }
            }
            DistributionKind::ThreePoint { a, p } => {
                for v in out.iter_mut() {
                    *v = three_point_from_bits(rng.next_u64(), a, p);
                }
            }
            DistributionKind::ScaledUniform => {
                for v in out.iter_mut() {
                    *v = uniform_from_bits(rng.random::<u64>());
                }
            }
        }
    }

    /// `count` i.i.d. draws from `stream`; a pure function of its inputs.
    pub fn sample(&self, count: usize, stream: &RngStream) -> Vec<f64> {
        let mut out = vec![0.0; count];
        self.fill(&mut stream.rng(), &mut out);
        out
    }

    pub fn spec(&self) -> DistributionSpec {
        let (a, p) = match self.kind {
            DistributionKind::ThreePoint { a, p } => (Some(a), Some(p)),
            _ => (None, None),
        };
        DistributionSpec { kind: self.name().to_string(), a, p }
    }
}

#[inline]
fn three_point_from_bits(bits: u64, a: f64, p: f64) -> f64 {
    let lower = (p * TWO_POW_64) as u64;
    let upper = (2.0 * p * TWO_POW_64) as u64;
    if bits < lower {
        -a
    } else if bits < upper {
        a
    } else {
        0.0
    }
}

#[inline]
fn uniform_from_bits(bits: u64) -> f64 {
    let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (2.0 * u - 1.0) * SQRT_3
}

impl TryFrom<DistributionSpec> for EntryDistribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        Self::from_name(&spec.kind, spec.a, spec.p)
    }
}

impl From<EntryDistribution> for DistributionSpec {
    fn from(d: EntryDistribution) -> Self {
        d.spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::estimate_moment;

    fn all_kinds() -> Vec<EntryDistribution> {
        vec![
            EntryDistribution::gaussian(),
            EntryDistribution::rademacher(),
            EntryDistribution::three_point(2.5, 0.08).unwrap(),
            EntryDistribution::scaled_uniform(),
        ]
    }

    #[test]
    fn three_point_moments() {
        let d = EntryDistribution::three_point(2.5, 0.08).unwrap();
        assert!((d.moments().fourth - 6.25).abs() < 1e-12);
        assert!((d.moments().abs_third - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rademacher_moments() {
        let m = *EntryDistribution::rademacher().moments();
        assert_eq!(m.fourth, 1.0);
        assert_eq!(m.abs_third, 1.0);
    }

    #[test]
    fn gaussian_abs_third_matches_quadrature() {
        // Composite Simpson on 2∫₀^12 x³φ(x)dx.
        let steps = 20_000;
        let h = 12.0 / steps as f64;
        let f = |x: f64| 2.0 * x.powi(3) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let mut acc = f(0.0) + f(12.0);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let quad = acc * h / 3.0;
        assert!((quad - 1.595769).abs() < 1e-6);
        assert!((EntryDistribution::gaussian().moments().abs_third - quad).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_three_point() {
        assert!(EntryDistribution::three_point(2.5, 0.1).is_err());
        assert!(EntryDistribution::three_point(-2.5, 0.08).is_err());
        assert!(EntryDistribution::three_point(0.0, 0.08).is_err());
        assert!(EntryDistribution::three_point(1.0, 0.5).is_err());
        assert!(EntryDistribution::three_point(10.0, 0.005).is_ok());
        assert!(matches!(EntryDistribution::from_name("cauchy", None, None), Err(Error::UnknownDistribution(_))));
        assert!(EntryDistribution::from_name("three_point", Some(2.5), None).is_err());
    }

    #[test]
    fn deterministic_per_stream() {
        let stream = RngStream::path(1, &[2, 3]);
        let d = EntryDistribution::rademacher();
        assert_eq!(d.sample(4, &stream), d.sample(4, &stream));
        let g = EntryDistribution::gaussian();
        let a = g.sample(16, &stream);
        let b = g.sample(16, &stream);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn serde_form() {
        let d = EntryDistribution::three_point(2.5, 0.08).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"kind":"three_point","a":2.5,"p":0.08}"#);
        let back: EntryDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let g: EntryDistribution = serde_json::from_str(r#"{"kind":"gaussian"}"#).unwrap();
        assert!(g.is_gaussian());
        assert!(serde_json::from_str::<EntryDistribution>(r#"{"kind":"three_point","a":2.5,"p":0.1}"#).is_err());
    }

    #[test]
    fn large_sample_moments_within_standard_errors() {
        let count = 1_000_000;
        for (i, d) in all_kinds().into_iter().enumerate() {
            let xs = d.sample(count, &RngStream::path(99, &[i as u64]));
            let mean = estimate_moment(&xs, |x| x).unwrap();
            let var = estimate_moment(&xs, |x| x * x).unwrap();
            assert!(mean.mean.abs() < 5e-3, "{}: mean {}", d.name(), mean.mean);
            assert!((var.mean - 1.0).abs() < 0.02, "{}: var {}", d.name(), var.mean);
            let third = estimate_moment(&xs, |x| x.abs().powi(3)).unwrap();
            let fourth = estimate_moment(&xs, |x| x.powi(4)).unwrap();
            let m = d.moments();
            assert!((third.mean - m.abs_third).abs() <= 5.0 * third.stderr.max(1e-12), "{}", d.name());
            assert!((fourth.mean - m.fourth).abs() <= 5.0 * fourth.stderr.max(1e-12), "{}", d.name());
        }
    }

    #[test]
    fn gaussian_tail_fraction() {
        let xs = EntryDistribution::gaussian().sample(1_000_000, &RngStream::root(5));
        let frac = xs.iter().filter(|x| x.abs() > 1.96).count() as f64 / xs.len() as f64;
        // 2·(1 − Φ(1.96)) = 0.0499958
        assert!((frac - 0.05).abs() < 0.004, "{frac}");
    }

    #[test]
    fn three_point_tolerance_holds_for_independent_generator() {
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        // Same tolerance, different generator and sampling route.
        let mut rng = StdRng::seed_from_u64(11);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.08 {
                    -2.5
                } else if u < 0.16 {
                    2.5
                } else {
                    0.0
                }
            })
            .collect();
        let ours = EntryDistribution::three_point(2.5, 0.08)
            .unwrap()
            .sample(1_000_000, &RngStream::root(11));
        for sample in [&xs, &ours] {
            let mean = sample.iter().sum::<f64>() / sample.len() as f64;
            let var = sample.iter().map(|x| x * x).sum::<f64>() / sample.len() as f64 - mean * mean;
            assert!(mean.abs() < 5.0 * (1.0f64 / 1e6).sqrt());
            assert!((var - 1.0).abs() < 0.02);
        }
    }
}
