//! Execution back end: rayon when the `parallel` feature is on, a plain loop
//! otherwise. Work is always split into the same ordered units and results
//! come back in unit order, so both back ends produce identical output.

/// How to run independent work units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Applies `f` to every unit in `0..units`, returning results in unit order.
pub fn map_units<T, F>(exec: Execution, units: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..units).into_par_iter().map(f).collect()
        }
        _ => (0..units).map(f).collect(),
    }
}

/// Same as [`map_units`] over a slice.
pub fn map_items<I, T, F>(exec: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_units(exec, items.len(), |i| f(&items[i]))
}

/// Pairwise (cascade) summation; order-stable for a given input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_backends_agree() {
        let seq = map_units(Execution::Sequential, 100, |i| (i * i) as f64);
        let par = map_units(Execution::Parallel, 100, |i| (i * i) as f64);
        assert_eq!(seq, par);
        assert_eq!(pairwise_sum(&seq), (0..100).map(|i| (i * i) as f64).sum::<f64>());
    }
}
