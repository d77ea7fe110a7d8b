//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction is split into fixed-size chunks whose partial sums are
//! combined left to right, so the parallel and sequential paths produce
//! bit-identical results. Builds without the `parallel` feature run
//! [`Execution::Parallel`] requests sequentially.

use std::ops::Range;

/// Chunk length used for reductions and element-wise kernels.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
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

impl Execution {
    fn parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

fn dot_serial(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[cfg(feature = "parallel")]
mod backend {
    use super::dot_serial;
    use rayon::prelude::*;
    use std::ops::Range;

    pub fn partials(a: &[f64], b: &[f64], chunk: usize) -> Vec<f64> {
        a.par_chunks(chunk)
            .zip(b.par_chunks(chunk))
            .map(|(x, y)| dot_serial(x, y))
            .collect()
    }

    pub fn chunks_mut<F>(data: &mut [f64], chunk: usize, f: &F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    }

    pub fn sweep<T, F>(seeds: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        seeds.into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod backend {
    use super::dot_serial;
    use std::ops::Range;

    pub fn partials(a: &[f64], b: &[f64], chunk: usize) -> Vec<f64> {
        a.chunks(chunk)
            .zip(b.chunks(chunk))
            .map(|(x, y)| dot_serial(x, y))
            .collect()
    }

    pub fn chunks_mut<F>(data: &mut [f64], chunk: usize, f: &F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    }

    pub fn sweep<T, F>(seeds: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        seeds.map(f).collect()
    }
}

/// Inner product with a fixed reduction tree.
pub fn dot(exec: Execution, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let partials: Vec<f64> = if exec.parallel() {
        backend::partials(a, b, CHUNK)
    } else {
        a.chunks(CHUNK)
            .zip(b.chunks(CHUNK))
            .map(|(x, y)| dot_serial(x, y))
            .collect()
    };
    partials.into_iter().fold(0.0, |acc, p| acc + p)
}

/// Applies `f(offset, chunk)` to consecutive mutable chunks of `data`.
pub fn for_each_chunk_mut<F>(exec: Execution, data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    if exec.parallel() {
        backend::chunks_mut(data, chunk, &f);
    } else {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    }
}

/// `y += alpha * x`
pub fn axpy(exec: Execution, alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    for_each_chunk_mut(exec, y, CHUNK, |off, c| {
        let n = c.len();
        for (yi, xi) in c.iter_mut().zip(&x[off..off + n]) {
            *yi += alpha * xi;
        }
    });
}

/// `y = x + beta * y`
pub fn xpby(exec: Execution, x: &[f64], beta: f64, y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    for_each_chunk_mut(exec, y, CHUNK, |off, c| {
        let n = c.len();
        for (yi, xi) in c.iter_mut().zip(&x[off..off + n]) {
            *yi = xi + beta * *yi;
        }
    });
}

/// Evaluates `f` for every seed in `seeds`, returning results in seed order.
pub fn sweep<T, F>(exec: Execution, seeds: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if exec.parallel() {
        backend::sweep(seeds, f)
    } else {
        seeds.map(f).collect()
    }
}
