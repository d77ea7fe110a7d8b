//! Matrix-free Poisson operator and conjugate-gradient solver.
//!
//! The operator is the negative Laplacian discretized with the 7-point
//! central-difference stencil on a uniform grid, with homogeneous Dirichlet
//! boundaries: ghost values outside the grid are zero. Unknowns are stored
//! x-fastest, `idx = i + nx * (j + ny * k)`.
//!
//! Jacobi preconditioning is offered for completeness. On this operator the
//! diagonal is the constant `6 / h^2`, so Jacobi only rescales the residual
//! and produces the same search directions as the unpreconditioned method.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
}

impl PoissonGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Self, WorkloadError> {
        let g = PoissonGrid { nx, ny, nz, h };
        g.check()?;
        Ok(g)
    }

    /// `n^3` interior unknowns of the unit cube, `h = 1 / (n + 1)`.
    pub fn unit_cube(n: usize) -> Result<Self, WorkloadError> {
        PoissonGrid::new(n, n, n, 1.0 / (n as f64 + 1.0))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<(), WorkloadError> {
        if self.nx < 2 || self.ny < 2 || self.nz < 2 || !(self.h > 0.0 && self.h.is_finite()) {
            return Err(WorkloadError::ShapeMismatch(format!(
                "grid {}x{}x{} with h={} is below the 2x2x2 minimum or has non-positive spacing",
                self.nx, self.ny, self.nz, self.h
            )));
        }
        Ok(())
    }

    fn check_field(&self, len: usize) -> Result<(), WorkloadError> {
        self.check()?;
        if len != self.len() {
            return Err(WorkloadError::ShapeMismatch(format!(
                "field has {len} values, grid {}x{}x{} needs {}",
                self.nx,
                self.ny,
                self.nz,
                self.len()
            )));
        }
        Ok(())
    }

    /// Coordinates of node `(i, j, k)`; the first interior node sits at `h`.
    pub fn coords(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        ((i + 1) as f64 * self.h, (j + 1) as f64 * self.h, (k + 1) as f64 * self.h)
    }

    /// Samples `f` at every grid node.
    pub fn sample(&self, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for k in 0..self.nz {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let (x, y, z) = self.coords(i, j, k);
                    v.push(f(x, y, z));
                }
            }
        }
        v
    }

    pub fn diagonal(&self) -> f64 {
        6.0 / (self.h * self.h)
    }
}

/// `out = -Laplace(u)` on `grid`.
pub fn apply_poisson_into(exec: Execution, grid: &PoissonGrid, u: &[f64], out: &mut [f64]) -> Result<(), WorkloadError> {
    grid.check_field(u.len())?;
    grid.check_field(out.len())?;
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let plane = nx * ny;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    par::for_each_chunk_mut(exec, out, plane, |off, slab| {
        let k = off / plane;
        for j in 0..ny {
            for i in 0..nx {
                let idx = off + i + nx * j;
                let c = u[idx];
                let xm = if i > 0 { u[idx - 1] } else { 0.0 };
                let xp = if i + 1 < nx { u[idx + 1] } else { 0.0 };
                let ym = if j > 0 { u[idx - nx] } else { 0.0 };
                let yp = if j + 1 < ny { u[idx + nx] } else { 0.0 };
                let zm = if k > 0 { u[idx - plane] } else { 0.0 };
                let zp = if k + 1 < nz { u[idx + plane] } else { 0.0 };
                slab[i + nx * j] = inv_h2 * (6.0 * c - xm - xp - ym - yp - zm - zp);
            }
        }
    });
    Ok(())
}

pub fn apply_poisson(grid: &PoissonGrid, u: &[f64]) -> Result<Vec<f64>, WorkloadError> {
    let mut out = vec![0.0; u.len()];
    apply_poisson_into(Execution::default(), grid, u, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    Identity,
    Jacobi,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Absolute bound on the residual 2-norm.
    pub tol_abs: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
    pub exec: Execution,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol_abs: DEFAULT_TOLERANCE,
            max_iter: 10_000,
            preconditioner: Preconditioner::Identity,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// 2-norm of the recurrence residual at exit.
    pub final_residual: f64,
    /// 2-norm of `b - A x`, recomputed at exit.
    pub true_residual: f64,
    /// Recurrence residual norm before the first and after every iteration.
    pub residual_history: Vec<f64>,
    /// Wall time; not deterministic.
    pub runtime_seconds: f64,
}

/// Solves `-Laplace(x) = rhs` with zero initial guess.
///
/// Reductions use a fixed chunked order, so iterates are bit-identical
/// between runs and between sequential and parallel execution.
pub fn solve_cg(grid: &PoissonGrid, rhs: &[f64], opts: &CgOptions) -> Result<CgResult, WorkloadError> {
    grid.check_field(rhs.len())?;
    let started = Instant::now();
    let exec = opts.exec;
    let n = rhs.len();
    let inv_diag = 1.0 / grid.diagonal();

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut q = vec![0.0; n];
    let precondition = |r: &[f64], z: &mut Vec<f64>| match opts.preconditioner {
        Preconditioner::Identity => z.copy_from_slice(r),
        Preconditioner::Jacobi => {
            par::for_each_chunk_mut(exec, z, par::CHUNK, |off, c| {
                let len = c.len();
                for (zi, ri) in c.iter_mut().zip(&r[off..off + len]) {
                    *zi = ri * inv_diag;
                }
            });
        }
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = par::dot(exec, &r, &z);
    let mut rnorm = par::dot(exec, &r, &r).sqrt();
    let mut history = vec![rnorm];
    let mut best = rnorm;

    let finish = |x: Vec<f64>, iterations: usize, rnorm: f64, history: Vec<f64>| -> Result<CgResult, WorkloadError> {
        let mut ax = vec![0.0; n];
        apply_poisson_into(exec, grid, &x, &mut ax)?;
        let mut res = rhs.to_vec();
        par::axpy(exec, -1.0, &ax, &mut res);
        let true_residual = par::dot(exec, &res, &res).sqrt();
        Ok(CgResult {
            solution: x,
            iterations,
            final_residual: rnorm,
            true_residual,
            residual_history: history,
            runtime_seconds: started.elapsed().as_secs_f64(),
        })
    };

    if rnorm <= opts.tol_abs {
        return finish(x, 0, rnorm, history);
    }
    for it in 1..=opts.max_iter {
        apply_poisson_into(exec, grid, &p, &mut q)?;
        let pq = par::dot(exec, &p, &q);
        let alpha = rz / pq;
        par::axpy(exec, alpha, &p, &mut x);
        par::axpy(exec, -alpha, &q, &mut r);
        rnorm = par::dot(exec, &r, &r).sqrt();
        history.push(rnorm);
        best = best.min(rnorm);
        if rnorm <= opts.tol_abs {
            return finish(x, it, rnorm, history);
        }
        if !rnorm.is_finite() {
            break;
        }
        precondition(&r, &mut z);
        let rz_new = par::dot(exec, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::xpby(exec, &z, beta, &mut p);
    }
    Err(WorkloadError::MaxIterExceeded { iterations: opts.max_iter, best_residual: best })
}

/// Right-hand sides with known continuous solutions on the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    /// `u = sin(k pi x) sin(k pi y) sin(k pi z)`, `f = 3 k^2 pi^2 u`.
    SineProduct {
        #[serde(default = "two")]
        k: u32,
    },
    /// `u = sin(pi x) * y(1-y) * z^2(1-z)`, not an eigenfunction of the
    /// discrete operator.
    Mixed,
    /// `f = value`; no closed-form solution.
    Constant { value: f64 },
}

fn two() -> u32 {
    2
}

impl Default for RhsSpec {
    fn default() -> Self {
        RhsSpec::SineProduct { k: 2 }
    }
}

impl RhsSpec {
    pub fn rhs(&self, grid: &PoissonGrid) -> Vec<f64> {
        match *self {
            RhsSpec::SineProduct { k } => {
                let w = k as f64 * PI;
                grid.sample(|x, y, z| 3.0 * w * w * (w * x).sin() * (w * y).sin() * (w * z).sin())
            }
            RhsSpec::Mixed => grid.sample(|x, y, z| {
                let sx = (PI * x).sin();
                let gy = y * (1.0 - y);
                let hz = z * z * (1.0 - z);
                // -(u_xx + u_yy + u_zz) with u_xx = -pi^2 u, g'' = -2, h'' = 2 - 6z
                PI * PI * sx * gy * hz + 2.0 * sx * hz - sx * gy * (2.0 - 6.0 * z)
            }),
            RhsSpec::Constant { value } => vec![value; grid.len()],
        }
    }

    pub fn exact(&self, grid: &PoissonGrid) -> Option<Vec<f64>> {
        match *self {
            RhsSpec::SineProduct { k } => {
                let w = k as f64 * PI;
                Some(grid.sample(|x, y, z| (w * x).sin() * (w * y).sin() * (w * z).sin()))
            }
            RhsSpec::Mixed => Some(grid.sample(|x, y, z| (PI * x).sin() * y * (1.0 - y) * z * z * (1.0 - z))),
            RhsSpec::Constant { .. } => None,
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
