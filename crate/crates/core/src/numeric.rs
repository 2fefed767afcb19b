//! Compensated accumulation.
//!
//! Inner products here run over up to ~10⁵ signed terms, so partial sums are
//! formed over short blocks and the blocks combined with Neumaier's
//! compensated addition.

const BLOCK: usize = 32;

#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn sum(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for chunk in values.chunks(BLOCK) {
        acc.add(chunk.iter().sum());
    }
    acc.total()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = NeumaierSum::new();
    for (ca, cb) in a.chunks(BLOCK).zip(b.chunks(BLOCK)) {
        acc.add(ca.iter().zip(cb).map(|(x, y)| x * y).sum());
    }
    acc.total()
}

pub fn sum_squares(a: &[f64]) -> f64 {
    dot(a, a)
}
