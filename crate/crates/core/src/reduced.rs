//! Exact-in-law samplers that integrate `S` out conditionally on `X, Z`.
//!
//! Gaussian `S`: with `e = Z/|Z|`, `g = S e ~ N(0, I_m)` is independent of
//! `S(I − eeᵀ)`, which gives
//!
//! ```text
//! SᵀS Z = |g|² Z + |Z| |g| (I − eeᵀ) h,      h ~ N(0, I_n)
//! Xᵀ SᵀS Z = |g|² (X·Z) + |Z| |g| √(|X|² − (X·e)²) ξ
//! ```
//!
//! with `|g|² ~ χ²_m` and `ξ ~ N(0, 1)`.
//!
//! Lattice `S` (entries `a·δ`, `δ ∈ {−1, 0, 1}` symmetric) with lattice `X`
//! and `Z`: only the supports and relative signs of `X, Z` matter. Columns
//! split into `X`-only, `Z`-only, same-sign and opposite-sign groups; each
//! row contributes `u = A + P + M`, `v = B + P − M` where each group sum is
//! an independent symmetric lattice walk of the group's size. Walk laws are
//! tabulated once per size and sampled by alias lookup.

use std::sync::OnceLock;

use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::distributions::Lattice;
use crate::numeric;
use crate::rng::StreamRng;

/// Above this ambient dimension the walk tables get too costly to build.
pub(crate) const MAX_LATTICE_N: usize = 4096;

pub(crate) struct GaussianPlan {
    chi_m: ChiSquared<f64>,
    a_nm: f64,
}

impl GaussianPlan {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            chi_m: ChiSquared::new(m as f64).expect("m ≥ 1"),
            a_nm: ((m * m) as f64 + m as f64 * n as f64).sqrt(),
        }
    }

    /// Unnormalized `Xᵀ SᵀS Z`.
    pub fn quadratic_form(&self, x: &[f64], z: &[f64], aux: &mut StreamRng) -> f64 {
        let zz = numeric::sum_squares(z);
        if zz == 0.0 {
            return 0.0;
        }
        let xz = numeric::dot(x, z);
        let xx = numeric::sum_squares(x);
        let perp = (xx - xz * xz / zz).max(0.0);
        let g2 = self.chi_m.sample(aux);
        let xi: f64 = StandardNormal.sample(aux);
        g2 * xz + (zz * g2 * perp).sqrt() * xi
    }

    /// `Y = SᵀS Z / √(m² + mn)`.
    pub fn y_vector(&self, z: &[f64], aux: &mut StreamRng) -> Vec<f64> {
        let zz = numeric::sum_squares(z);
        let g2 = self.chi_m.sample(aux);
        let mut h: Vec<f64> = (0..z.len()).map(|_| StandardNormal.sample(aux)).collect();
        if zz == 0.0 {
            return vec![0.0; z.len()];
        }
        let eh = numeric::dot(z, &h) / zz.sqrt();
        let norm_z = zz.sqrt();
        let g = g2.sqrt();
        for (hj, &zj) in h.iter_mut().zip(z) {
            let perp = *hj - zj / norm_z * eh;
            *hj = (g2 * zj + norm_z * g * perp) / self.a_nm;
        }
        h
    }

    /// First coordinate of [`Self::y_vector`] without drawing all of `h`:
    /// `(h₁, e·h)` is bivariate normal with correlation `e₁`.
    pub fn y_first(&self, z: &[f64], aux: &mut StreamRng) -> f64 {
        let zz = numeric::sum_squares(z);
        let g2 = self.chi_m.sample(aux);
        let h1: f64 = StandardNormal.sample(aux);
        let zeta: f64 = StandardNormal.sample(aux);
        if zz == 0.0 {
            return 0.0;
        }
        let norm_z = zz.sqrt();
        let e1 = z[0] / norm_z;
        let eh = e1 * h1 + (1.0 - e1 * e1).max(0.0).sqrt() * zeta;
        (g2 * z[0] + norm_z * g2.sqrt() * (h1 - e1 * eh)) / self.a_nm
    }
}

pub(crate) struct LatticePlan {
    s: Lattice,
    x: Lattice,
    z: Lattice,
    m: usize,
    walks: Vec<OnceLock<WeightedAliasIndex<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct GroupSizes {
    pub x_only: usize,
    pub z_only: usize,
    pub same: usize,
    pub opposite: usize,
}

impl GroupSizes {
    pub fn of(x: &[f64], z: &[f64]) -> Self {
        let mut g = Self::default();
        for (&xj, &zj) in x.iter().zip(z) {
            match (xj != 0.0, zj != 0.0) {
                (true, false) => g.x_only += 1,
                (false, true) => g.z_only += 1,
                (true, true) if (xj > 0.0) == (zj > 0.0) => g.same += 1,
                (true, true) => g.opposite += 1,
                (false, false) => {}
            }
        }
        g
    }
}

/// Law of a sum of `k` i.i.d. `δ` with `P(δ = ±1) = q/2`; index `i` ↔ value `i − k`.
pub(crate) fn walk_pmf(k: usize, nonzero_prob: f64) -> Vec<f64> {
    let side = nonzero_prob / 2.0;
    let stay = 1.0 - nonzero_prob;
    let mut pmf = vec![1.0];
    for _ in 0..k {
        let mut next = vec![0.0; pmf.len() + 2];
        for (i, &p) in pmf.iter().enumerate() {
            next[i] += p * side;
            next[i + 1] += p * stay;
            next[i + 2] += p * side;
        }
        pmf = next;
    }
    pmf
}

impl LatticePlan {
    pub fn new(s: Lattice, x: Lattice, z: Lattice, m: usize, n: usize) -> Self {
        Self { s, x, z, m, walks: (0..=n).map(|_| OnceLock::new()).collect() }
    }

    fn walk(&self, k: usize, rng: &mut StreamRng) -> i64 {
        if k == 0 {
            return 0;
        }
        let table = self.walks[k].get_or_init(|| {
            WeightedAliasIndex::new(walk_pmf(k, self.s.nonzero_prob)).expect("non-degenerate walk")
        });
        table.sample(rng) as i64 - k as i64
    }

    /// Unnormalized `Xᵀ SᵀS Z`; exact integer accumulation of the lattice part.
    pub fn quadratic_form(&self, x: &[f64], z: &[f64], aux: &mut StreamRng) -> f64 {
        let g = GroupSizes::of(x, z);
        let mut acc: i128 = 0;
        for _ in 0..self.m {
            let a = self.walk(g.x_only, aux);
            let b = self.walk(g.z_only, aux);
            let p = self.walk(g.same, aux);
            let q = self.walk(g.opposite, aux);
            acc += ((a + p + q) * (b + p - q)) as i128;
        }
        acc as f64 * self.s.scale * self.s.scale * self.x.scale * self.z.scale
    }
}
