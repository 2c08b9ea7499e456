//! Row-parallel evaluation with a sequential fallback.
//!
//! With the `parallel` feature (default) rows are distributed over the
//! current rayon pool. Every row is computed by the same code path either
//! way, so results are bit-identical across thread counts.

use crate::grid::Grid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Fills a `width × height` grid by evaluating `f(row, col)` for every cell.
pub fn fill_grid<T, F>(
    width: usize,
    height: usize,
    resolution: f64,
    exec: Execution,
    f: F,
) -> Grid<T>
where
    T: Copy + Send + Default,
    F: Fn(usize, usize) -> T + Sync,
{
    let mut data = vec![T::default(); width * height];
    let fill_row = |(r, row): (usize, &mut [T])| {
        for (c, out) in row.iter_mut().enumerate() {
            *out = f(r, c);
        }
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(width).enumerate().for_each(fill_row);
        }
        _ => data.chunks_mut(width).enumerate().for_each(fill_row),
    }
    Grid::from_vec(width, height, resolution, data)
}

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<I, T, F>(items: &[I], exec: Execution, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(&f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `f` on a pool of `jobs` threads (0 = rayon default). Without the
/// `parallel` feature `f` runs on the calling thread.
pub fn with_threads<R, F>(jobs: usize, f: F) -> Result<R, String>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok(f())
    }
}
