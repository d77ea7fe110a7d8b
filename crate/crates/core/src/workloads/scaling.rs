//! Modeled Poisson runtime per iteration for grids too large to solve here.
//!
//! Compute cost is spread evenly over all processes. Communication is two
//! 8-byte allreduces per iteration (the CG dot products) among the nodes,
//! plus a halo exchange for a 1D slab decomposition along the longest axis:
//! every slab boundary moves one face of 8-byte values, and a rank with two
//! neighbours pays two exchanges.

use serde::{Deserialize, Serialize};

use crate::fabric::InterconnectModel;

/// Every tunable constant of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConstants {
    /// Seconds one process spends per cell per iteration.
    pub per_cell_cost: f64,
    pub value_bytes: u64,
    pub allreduces_per_iteration: u32,
}

impl Default for ScalingConstants {
    fn default() -> Self {
        ScalingConstants { per_cell_cost: 2e-8, value_bytes: 8, allreduces_per_iteration: 2 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    #[default]
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: u64,
    pub ny: u64,
    pub nz: u64,
}

impl GridShape {
    pub fn cells(&self) -> u64 {
        self.nx * self.ny * self.nz
    }

    fn sorted(&self) -> [u64; 3] {
        let mut d = [self.nx, self.ny, self.nz];
        d.sort_unstable();
        d
    }

    /// Cells on a slab boundary when cutting along the longest axis.
    pub fn face_cells(&self) -> u64 {
        let d = self.sorted();
        d[0] * d[1]
    }

    /// Strong mode keeps the grid; weak mode stretches the longest axis.
    pub fn scaled(&self, mode: ScalingMode, nodes: u64) -> GridShape {
        match mode {
            ScalingMode::Strong => *self,
            ScalingMode::Weak => {
                let mut g = *self;
                let longest = self.sorted()[2];
                if g.nx == longest {
                    g.nx *= nodes;
                } else if g.ny == longest {
                    g.ny *= nodes;
                } else {
                    g.nz *= nodes;
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeBreakdown {
    pub compute: f64,
    pub allreduce: f64,
    pub halo: f64,
}

impl RuntimeBreakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.allreduce + self.halo
    }
}

pub fn modeled_breakdown(
    grid: GridShape,
    nodes: u64,
    procs_per_node: u64,
    model: &InterconnectModel,
    consts: &ScalingConstants,
) -> RuntimeBreakdown {
    assert!(nodes >= 1 && procs_per_node >= 1, "node and process counts must be positive");
    let compute = grid.cells() as f64 * consts.per_cell_cost / (nodes * procs_per_node) as f64;
    let allreduce = consts.allreduces_per_iteration as f64 * model.allreduce_time(nodes, consts.value_bytes);
    let neighbours = (nodes - 1).min(2);
    let halo = if neighbours == 0 { 0.0 } else { neighbours as f64 * model.comm_time(grid.face_cells() * consts.value_bytes) };
    RuntimeBreakdown { compute, allreduce, halo }
}

/// Seconds per iteration.
pub fn modeled_poisson_runtime(
    grid: GridShape,
    nodes: u64,
    procs_per_node: u64,
    model: &InterconnectModel,
    consts: &ScalingConstants,
) -> f64 {
    modeled_breakdown(grid, nodes, procs_per_node, model, consts).total()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub nodes: u64,
    pub cells: u64,
    pub seconds_per_iteration: f64,
}

pub fn scaling_table(
    base: GridShape,
    mode: ScalingMode,
    node_counts: &[u64],
    procs_per_node: u64,
    model: &InterconnectModel,
    consts: &ScalingConstants,
) -> Vec<ScalingPoint> {
    node_counts
        .iter()
        .map(|&nodes| {
            let grid = base.scaled(mode, nodes);
            ScalingPoint {
                nodes,
                cells: grid.cells(),
                seconds_per_iteration: modeled_poisson_runtime(grid, nodes, procs_per_node, model, consts),
            }
        })
        .collect()
}

pub fn scaling_tsv(mode: ScalingMode, model: &InterconnectModel, rows: &[ScalingPoint]) -> String {
    let mut out = format!("# Poisson {} scaling, modeled, interconnect {}\n# Nodes\tCells\tSeconds/iteration\n", match mode {
        ScalingMode::Strong => "strong",
        ScalingMode::Weak => "weak",
    }, model.name);
    for r in rows {
        out.push_str(&format!("{}\t{}\t{:.6e}\n", r.nodes, r.cells, r.seconds_per_iteration));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BIG: GridShape = GridShape { nx: 1000, ny: 1000, nz: 50 };

    #[test]
    fn single_node_has_no_communication() {
        let b = modeled_breakdown(BIG, 1, 24, &InterconnectModel::azure(), &ScalingConstants::default());
        assert_eq!(b.allreduce, 0.0);
        assert_eq!(b.halo, 0.0);
        assert!((b.compute - 5e7 * 2e-8 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn halo_uses_smallest_face() {
        assert_eq!(BIG.face_cells(), 50_000);
        let m = InterconnectModel::azure();
        let b = modeled_breakdown(BIG, 2, 1, &m, &ScalingConstants::default());
        assert!((b.halo - (1.95e-6 + 400_000.0 / 5.2e9)).abs() < 1e-15);
        let b4 = modeled_breakdown(BIG, 4, 1, &m, &ScalingConstants::default());
        assert!((b4.halo - 2.0 * b.halo).abs() < 1e-15);
    }

    #[test]
    fn weak_scaling_stretches_longest_axis() {
        let g = GridShape { nx: 50, ny: 400, nz: 100 };
        assert_eq!(g.scaled(ScalingMode::Weak, 3), GridShape { nx: 50, ny: 1200, nz: 100 });
        assert_eq!(g.scaled(ScalingMode::Strong, 3), g);
    }

    #[test]
    fn table_columns() {
        let rows = scaling_table(BIG, ScalingMode::Weak, &[1, 2], 12, &InterconnectModel::azure(), &ScalingConstants::default());
        assert_eq!(rows[1].cells, 2 * rows[0].cells);
        let tsv = scaling_tsv(ScalingMode::Weak, &InterconnectModel::azure(), &rows);
        assert_eq!(tsv.lines().count(), 4);
    }
}
