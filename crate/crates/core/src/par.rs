//! Data-parallel loop helpers.
//!
//! With the `parallel` feature the loops below run on rayon's pool; without
//! it they compile to plain sequential iteration. Each helper writes to
//! disjoint chunks and never reorders a floating-point reduction, so
//! results are bit-identical in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a kernel schedules its outer loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without `parallel`.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Worker threads this executor will use.
    pub fn threads(self) -> usize {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => rayon::current_num_threads(),
            _ => 1,
        }
    }

    /// Calls `f(index, chunk)` for each `chunk_len`-sized piece of `data`.
    pub fn for_each_chunk<T, F>(self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data
                .par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            _ => data
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
        }
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let mut a = vec![0.0f64; 1000];
        let mut b = a.clone();
        let f = |i: usize, c: &mut [f64]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 7 + j) as f64 * 0.1;
            }
        };
        Exec::Sequential.for_each_chunk(&mut a, 64, f);
        Exec::Parallel.for_each_chunk(&mut b, 64, f);
        assert_eq!(a, b);
        assert_eq!(
            Exec::Sequential.map_range(10, |i| i * i),
            Exec::Parallel.map_range(10, |i| i * i)
        );
    }
}
