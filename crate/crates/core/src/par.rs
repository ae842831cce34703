//! Parallel/sequential dispatch for data-parallel inner loops.
//!
//! Every hot loop in the crate is a map over disjoint items collected in
//! index order, so the parallel and sequential paths produce bit-identical
//! results. The `parallel` feature (on by default) routes [`map_collect`]
//! and [`map_indexed`] through rayon; without it they alias the `*_seq`
//! variants. The `*_seq` functions stay available under either feature so
//! benchmarks can compare both paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, collecting results in input order.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_collect_seq(items, f)
    }
}

/// Sequential counterpart of [`map_collect`].
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Sequential counterpart of [`map_indexed`].
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        let a = map_collect(&items, |x| x.sin() * x.cos());
        let b = map_collect_seq(&items, |x| x.sin() * x.cos());
        assert_eq!(a, b);
        let c = map_indexed(100, |i| (i * 7) % 13);
        let d = map_indexed_seq(100, |i| (i * 7) % 13);
        assert_eq!(c, d);
    }
}
