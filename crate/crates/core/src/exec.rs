//! Index-ordered parallel map.
//!
//! Work items are replicate indices; results are placed by index, so the
//! output of [`map_indexed`] is identical for every [`Parallelism`] setting.
//! Without the `parallel` feature every setting runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool.
    #[default]
    Auto,
    /// A dedicated pool capped at this many workers.
    Workers(usize),
}

impl Parallelism {
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            None => Parallelism::Auto,
            Some(0) | Some(1) => Parallelism::Sequential,
            Some(k) => Parallelism::Workers(k),
        }
    }
}

pub fn map_indexed<T, F>(count: usize, parallelism: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match parallelism {
        Parallelism::Sequential => (0..count).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Auto => par_map(count, f),
        #[cfg(feature = "parallel")]
        Parallelism::Workers(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| par_map(count, f)),
            Err(_) => (0..count).map(f).collect(),
        },
        #[cfg(not(feature = "parallel"))]
        _ => (0..count).map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().with_min_len(16).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_is_by_index() {
        let f = |i: usize| (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let seq = map_indexed(1000, Parallelism::Sequential, f);
        for par in [Parallelism::Auto, Parallelism::Workers(3), Parallelism::Workers(8)] {
            assert_eq!(map_indexed(1000, par, f), seq);
        }
    }

    #[test]
    fn worker_flag_mapping() {
        assert_eq!(Parallelism::from_workers(None), Parallelism::Auto);
        assert_eq!(Parallelism::from_workers(Some(1)), Parallelism::Sequential);
        assert_eq!(Parallelism::from_workers(Some(4)), Parallelism::Workers(4));
    }
}
