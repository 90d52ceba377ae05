//! Execution strategy switch: data-parallel via rayon when the `parallel`
//! feature is on, plain sequential otherwise. The benchmark suite drives both
//! through [`Exec`] explicitly; library entry points call [`Exec::default`].

/// How to run a divisible workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Single-threaded reference path, always available.
    Sequential,
    /// rayon work-stealing path; only constructible with the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

/// Map a function over items, collecting results in input order.
pub fn map_collect<T, U, F>(exec: Exec, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    match exec {
        Exec::Sequential => items.into_iter().map(f).collect(),
        Exec::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.into_iter().map(f).collect()
            }
        }
    }
}

/// Map a function over indices `0..len`, collecting results in order.
pub fn map_range<U, F>(exec: Exec, len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..len).map(f).collect(),
        Exec::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..len).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_collect(Exec::Sequential, items.clone(), |x| x * x + 1);
        let par = map_collect(Exec::Parallel, items, |x| x * x + 1);
        assert_eq!(seq, par);
        let seq_r = map_range(Exec::Sequential, 50, |i| i as u64 * 3);
        let par_r = map_range(Exec::Parallel, 50, |i| i as u64 * 3);
        assert_eq!(seq_r, par_r);
    }
}
