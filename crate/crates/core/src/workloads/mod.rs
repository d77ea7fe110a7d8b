//! Workloads a task can run, and what running them costs in simulated time.

pub mod osu;
pub mod poisson;
pub mod scaling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{InterconnectModel, SimDuration};
use crate::par::Execution;
use poisson::{CgOptions, PoissonGrid, Preconditioner, RhsSpec};
use scaling::{GridShape, ScalingConstants, ScalingMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("CG did not converge in {iterations} iterations (best residual {best_residual:e})")]
    MaxIterExceeded { iterations: usize, best_residual: f64 },
    #[error("invalid workload parameter: {0}")]
    InvalidParameter(String),
}

fn default_max_bytes() -> u64 {
    osu::DEFAULT_MAX_BYTES
}

fn default_window() -> u64 {
    osu::DEFAULT_WINDOW
}

fn default_repetitions() -> u32 {
    osu::DEFAULT_REPETITIONS
}

fn default_tolerance() -> f64 {
    poisson::DEFAULT_TOLERANCE
}

fn default_max_iter() -> usize {
    10_000
}

fn default_iterations() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    FixedDuration {
        seconds: f64,
        #[serde(default)]
        output_bytes: u64,
    },
    PingPongLatency {
        #[serde(default = "default_repetitions")]
        repetitions: u32,
        #[serde(default = "default_max_bytes")]
        max_bytes: u64,
    },
    PingPongBandwidth {
        #[serde(default = "default_window")]
        window: u64,
        #[serde(default = "default_repetitions")]
        repetitions: u32,
        #[serde(default = "default_max_bytes")]
        max_bytes: u64,
    },
    /// Real CG solve on the `n^3` unit cube.
    PoissonCg {
        n: usize,
        #[serde(default)]
        preconditioner: Preconditioner,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default)]
        rhs: RhsSpec,
    },
    /// Modeled runtime on a grid too large to solve locally; `nx, ny, nz`
    /// is the single-node grid in weak mode.
    PoissonScaling {
        nx: u64,
        ny: u64,
        nz: u64,
        #[serde(default)]
        mode: ScalingMode,
        #[serde(default = "default_iterations")]
        iterations: u64,
    },
}

/// What a finished workload reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSummary {
    FixedDuration,
    PingPongLatency { smallest_us: f64, largest_us: f64 },
    PingPongBandwidth { peak_mb_per_s: f64 },
    PoissonCg { iterations: usize, final_residual: f64, true_residual: f64, max_error: Option<f64> },
    PoissonScaling { cells: u64, seconds_per_iteration: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadRun {
    pub duration: SimDuration,
    pub output_bytes: u64,
    pub summary: WorkloadSummary,
}

/// Placement the scheduler granted a task.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext<'a> {
    pub nodes: u32,
    pub procs_per_node: u32,
    pub interconnect: &'a InterconnectModel,
    pub exec: Execution,
}

fn positive(name: &str, ok: bool) -> Result<(), WorkloadError> {
    if ok {
        Ok(())
    } else {
        Err(WorkloadError::InvalidParameter(format!("{name} must be positive")))
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            WorkloadSpec::FixedDuration { seconds, .. } => positive("seconds", seconds > 0.0 && seconds.is_finite()),
            WorkloadSpec::PingPongLatency { repetitions, max_bytes } => {
                positive("repetitions", repetitions >= 1)?;
                positive("max_bytes", max_bytes >= 1)
            }
            WorkloadSpec::PingPongBandwidth { window, repetitions, max_bytes } => {
                positive("window", window >= 1)?;
                positive("repetitions", repetitions >= 1)?;
                positive("max_bytes", max_bytes >= 1)
            }
            WorkloadSpec::PoissonCg { n, tolerance, max_iter, .. } => {
                PoissonGrid::unit_cube(n)?;
                positive("tolerance", tolerance > 0.0)?;
                positive("max_iter", max_iter >= 1)
            }
            WorkloadSpec::PoissonScaling { nx, ny, nz, iterations, .. } => {
                if nx < 2 || ny < 2 || nz < 2 {
                    return Err(WorkloadError::ShapeMismatch(format!("grid {nx}x{ny}x{nz} is below the 2x2x2 minimum")));
                }
                positive("iterations", iterations >= 1)
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WorkloadSpec::FixedDuration { .. } => "fixed_duration",
            WorkloadSpec::PingPongLatency { .. } => "ping_pong_latency",
            WorkloadSpec::PingPongBandwidth { .. } => "ping_pong_bandwidth",
            WorkloadSpec::PoissonCg { .. } => "poisson_cg",
            WorkloadSpec::PoissonScaling { .. } => "poisson_scaling",
        }
    }

    /// Runs the workload and returns its simulated duration. Poisson solves
    /// are real; their simulated time comes from the scaling model so it
    /// does not depend on the host.
    pub fn execute(&self, ctx: &ExecContext<'_>) -> Result<WorkloadRun, WorkloadError> {
        self.validate()?;
        let model = ctx.interconnect;
        let nodes = u64::from(ctx.nodes.max(1));
        let ppn = u64::from(ctx.procs_per_node.max(1));
        match *self {
            WorkloadSpec::FixedDuration { seconds, output_bytes } => Ok(WorkloadRun {
                duration: SimDuration::from_secs_f64(seconds),
                output_bytes,
                summary: WorkloadSummary::FixedDuration,
            }),
            WorkloadSpec::PingPongLatency { repetitions, max_bytes } => {
                let sizes = osu::latency_sizes(max_bytes);
                let rows = osu::osu_latency(model, &sizes, repetitions, None);
                let table = osu::latency_tsv(model, &rows);
                Ok(WorkloadRun {
                    duration: SimDuration::from_secs_f64(osu::latency_run_seconds(model, &sizes, repetitions)),
                    output_bytes: table.len() as u64,
                    summary: WorkloadSummary::PingPongLatency {
                        smallest_us: rows[0].seconds * 1e6,
                        largest_us: rows[rows.len() - 1].seconds * 1e6,
                    },
                })
            }
            WorkloadSpec::PingPongBandwidth { window, repetitions, max_bytes } => {
                let sizes = osu::bandwidth_sizes(max_bytes);
                let rows = osu::osu_bandwidth(model, &sizes, window);
                let table = osu::bandwidth_tsv(model, &rows);
                let peak = rows.iter().map(|r| r.bytes_per_second).fold(0.0, f64::max);
                Ok(WorkloadRun {
                    duration: SimDuration::from_secs_f64(osu::bandwidth_run_seconds(model, &sizes, window, repetitions)),
                    output_bytes: table.len() as u64,
                    summary: WorkloadSummary::PingPongBandwidth { peak_mb_per_s: peak / 1e6 },
                })
            }
            WorkloadSpec::PoissonCg { n, preconditioner, tolerance, max_iter, rhs } => {
                let grid = PoissonGrid::unit_cube(n)?;
                let b = rhs.rhs(&grid);
                let opts = CgOptions { tol_abs: tolerance, max_iter, preconditioner, exec: ctx.exec };
                let res = poisson::solve_cg(&grid, &b, &opts)?;
                let max_error = rhs.exact(&grid).map(|u| poisson::max_abs_diff(&u, &res.solution));
                let shape = GridShape { nx: n as u64, ny: n as u64, nz: n as u64 };
                let per_iter = scaling::modeled_poisson_runtime(shape, nodes, ppn, model, &ScalingConstants::default());
                Ok(WorkloadRun {
                    duration: SimDuration::from_secs_f64(per_iter * res.iterations.max(1) as f64),
                    output_bytes: (res.solution.len() * 8) as u64,
                    summary: WorkloadSummary::PoissonCg {
                        iterations: res.iterations,
                        final_residual: res.final_residual,
                        true_residual: res.true_residual,
                        max_error,
                    },
                })
            }
            WorkloadSpec::PoissonScaling { nx, ny, nz, mode, iterations } => {
                let grid = GridShape { nx, ny, nz }.scaled(mode, nodes);
                let per_iter = scaling::modeled_poisson_runtime(grid, nodes, ppn, model, &ScalingConstants::default());
                Ok(WorkloadRun {
                    duration: SimDuration::from_secs_f64(per_iter * iterations as f64),
                    output_bytes: 0,
                    summary: WorkloadSummary::PoissonScaling { cells: grid.cells(), seconds_per_iteration: per_iter },
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(m: &InterconnectModel) -> ExecContext<'_> {
        ExecContext { nodes: 2, procs_per_node: 12, interconnect: m, exec: Execution::default() }
    }

    #[test]
    fn yaml_forms() {
        let w: WorkloadSpec = serde_yaml::from_str("kind: fixed_duration\nseconds: 25200\n").unwrap();
        assert_eq!(w, WorkloadSpec::FixedDuration { seconds: 25200.0, output_bytes: 0 });
        let w: WorkloadSpec = serde_yaml::from_str("kind: poisson_cg\nn: 8\nrhs: {kind: mixed}\n").unwrap();
        assert!(matches!(w, WorkloadSpec::PoissonCg { n: 8, rhs: RhsSpec::Mixed, .. }));
        assert!(serde_yaml::from_str::<WorkloadSpec>("kind: fixed_duration\nseconds: 1\nbogus: 2\n").is_err());
    }

    #[test]
    fn validation() {
        assert!(WorkloadSpec::FixedDuration { seconds: 0.0, output_bytes: 0 }.validate().is_err());
        assert!(matches!(
            WorkloadSpec::PoissonCg { n: 1, preconditioner: Preconditioner::Identity, tolerance: 1e-12, max_iter: 10, rhs: RhsSpec::default() }
                .validate(),
            Err(WorkloadError::ShapeMismatch(_))
        ));
        assert!(WorkloadSpec::PingPongBandwidth { window: 0, repetitions: 1, max_bytes: 8 }.validate().is_err());
    }

    #[test]
    fn fixed_duration_is_exact_millis() {
        let m = InterconnectModel::azure();
        let r = WorkloadSpec::FixedDuration { seconds: 25200.0, output_bytes: 7 }.execute(&ctx(&m)).unwrap();
        assert_eq!(r.duration, SimDuration::from_secs(25200));
        assert_eq!(r.output_bytes, 7);
    }

    #[test]
    fn poisson_cg_reports_solution_error() {
        let m = InterconnectModel::azure();
        let w = WorkloadSpec::PoissonCg {
            n: 12,
            preconditioner: Preconditioner::Jacobi,
            tolerance: 1e-12,
            max_iter: 1000,
            rhs: RhsSpec::default(),
        };
        let r = w.execute(&ctx(&m)).unwrap();
        match r.summary {
            WorkloadSummary::PoissonCg { final_residual, max_error, .. } => {
                assert!(final_residual <= 1e-12);
                assert!(max_error.unwrap() < 0.2);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(r.output_bytes, 12 * 12 * 12 * 8);
        assert!(r.duration.millis() >= 1);
    }
}
