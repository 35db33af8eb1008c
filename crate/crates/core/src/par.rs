//! Execution policy and the vector kernels shared by the operators and the solver.
//!
//! Reductions always sum fixed-size chunks and then fold the partial sums in
//! order, so the sequential and parallel paths produce bit-identical results
//! regardless of thread count. With the `parallel` feature disabled,
//! [`Exec::Parallel`] silently runs the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per reduction chunk. Part of the numerical contract: changing it
/// changes the rounding of every dot product.
pub const REDUCE_CHUNK: usize = 4096;

/// Below this many elements the parallel path is not worth the dispatch cost.
#[cfg(feature = "parallel")]
const PAR_MIN_LEN: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
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

#[cfg(feature = "parallel")]
impl Exec {
    #[inline]
    fn go_parallel(self, len: usize) -> bool {
        self == Exec::Parallel && len >= PAR_MIN_LEN
    }
}

fn chunk_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn dot(exec: Exec, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if exec.go_parallel(a.len()) {
        let partials: Vec<f64> = a
            .par_chunks(REDUCE_CHUNK)
            .zip(b.par_chunks(REDUCE_CHUNK))
            .map(|(x, y)| chunk_dot(x, y))
            .collect();
        return partials.iter().sum();
    }
    let _ = exec;
    a.chunks(REDUCE_CHUNK)
        .zip(b.chunks(REDUCE_CHUNK))
        .map(|(x, y)| chunk_dot(x, y))
        .sum()
}

pub fn norm2(exec: Exec, a: &[f64]) -> f64 {
    dot(exec, a, a).sqrt()
}

/// `y += a * x`
pub fn axpy(exec: Exec, a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(feature = "parallel")]
    if exec.go_parallel(y.len()) {
        y.par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(yi, xi)| *yi += a * xi);
        return;
    }
    let _ = exec;
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// `y = x + b * y`
pub fn xpby(exec: Exec, x: &[f64], b: f64, y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(feature = "parallel")]
    if exec.go_parallel(y.len()) {
        y.par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(yi, xi)| *yi = xi + b * *yi);
        return;
    }
    let _ = exec;
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi = xi + b * *yi);
}

/// Fill `out` row by row; `f(row_index, row)` must only write its own row.
pub fn for_each_row<F>(exec: Exec, out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.go_parallel(out.len()) {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = exec;
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

/// Map independent work items, in parallel when allowed. Output order follows input order.
pub fn map_items<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && items.len() > 1 {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Run two closures, concurrently when allowed.
pub fn join<A, B, RA, RB>(exec: Exec, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        return rayon::join(a, b);
    }
    let _ = exec;
    (a(), b())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()
    }

    #[test]
    fn dot_is_bit_identical_across_policies() {
        let n = 3 * (1 << 14) + 17;
        let a = ramp(n, 0.1);
        let b = ramp(n, 1.3);
        let s = dot(Exec::Sequential, &a, &b);
        let p = dot(Exec::Parallel, &a, &b);
        assert_eq!(s.to_bits(), p.to_bits());
    }

    #[test]
    fn axpy_and_xpby() {
        let x = vec![1.0, 2.0, 3.0];
        let mut y = vec![1.0, 1.0, 1.0];
        axpy(Exec::Sequential, 2.0, &x, &mut y);
        assert_eq!(y, vec![3.0, 5.0, 7.0]);
        xpby(Exec::Sequential, &x, 0.5, &mut y);
        assert_eq!(y, vec![2.5, 4.5, 6.5]);
    }

    #[test]
    fn rows_cover_buffer() {
        let mut out = vec![0.0; 12];
        for_each_row(Exec::Parallel, &mut out, 4, |r, row| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (r * 10 + c) as f64;
            }
        });
        assert_eq!(out[5], 11.0);
        assert_eq!(out[11], 23.0);
    }
}
