//! Execution strategy for the data-parallel loops.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] maps over a
//! rayon pool; without it every strategy runs sequentially. Results always
//! come back in input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this strategy actually fans out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Fallible map. Sequential execution stops at the first error; parallel
    /// execution stops scheduling new items once an error is seen.
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Runs `f` on a dedicated pool of `threads` workers. Backend calls
    /// block, so the pool is sized by the in-flight cap rather than by CPU
    /// count.
    pub fn install<R: Send>(self, threads: usize, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
                Ok(pool) => return pool.install(f),
                Err(err) => log::warn!("falling back to the global pool: {err}"),
            }
        }
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_preserve_order() {
        let items: Vec<u32> = (0..500).collect();
        let seq = Execution::Sequential.map(&items, |x| x * 3);
        let par = Execution::Parallel.install(4, || Execution::Parallel.map(&items, |x| x * 3));
        assert_eq!(seq, par);
        assert_eq!(seq[499], 1497);
    }

    #[test]
    fn try_map_surfaces_errors() {
        let items: Vec<u32> = (0..100).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out: Result<Vec<u32>, String> =
                exec.try_map(&items, |&x| if x == 57 { Err(format!("bad {x}")) } else { Ok(x) });
            assert_eq!(out.unwrap_err(), "bad 57");
            let ok: Result<Vec<u32>, String> = exec.try_map(&items, |&x| Ok(x + 1));
            assert_eq!(ok.unwrap().len(), 100);
        }
    }
}
