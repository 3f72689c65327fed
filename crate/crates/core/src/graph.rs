//! Feature-annotated computational graphs over a [`GridModel`].
//!
//! Node feature columns (all normalized by [`FeatureNorm`]):
//!
//! | col | feature                                  |
//! |-----|------------------------------------------|
//! | 0   | pressure                                 |
//! | 1   | water saturation                         |
//! | 2   | ln kx                                    |
//! | 3   | porosity                                 |
//! | 4   | bulk volume                              |
//! | 5   | depth                                    |
//! | 6   | well index (0 off-well)                  |
//! | 7   | perforation rate (0 off-well)            |
//! | 8-10| one-hot type: interior, well, ring       |
//! | 11  | time step length                         |
//!
//! Edge feature columns: transmissibility, signed center offsets dx, dy, dz and
//! their Euclidean norm. Every face yields two directed edges `a -> b` and
//! `b -> a`, stored consecutively.

use std::sync::Arc;

use diffcore::{Index, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{peaceman_index, Completion, GridModel};

/// Bumped whenever the meaning or order of a feature column changes.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const NODE_DIM: usize = 12;
pub const EDGE_DIM: usize = 5;

pub const COL_P: usize = 0;
pub const COL_SW: usize = 1;
pub const COL_K: usize = 2;
pub const COL_PHI: usize = 3;
pub const COL_V: usize = 4;
pub const COL_D: usize = 5;
pub const COL_W: usize = 6;
pub const COL_Q: usize = 7;
pub const COL_TYPE: usize = 8;
pub const COL_DT: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeType {
    Interior,
    Well,
    Ring,
}

impl NodeType {
    fn slot(self) -> usize {
        match self {
            NodeType::Interior => 0,
            NodeType::Well => 1,
            NodeType::Ring => 2,
        }
    }
}

/// Normalization statistics shared by graph construction, training and rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    /// Overall pressure range of the training data (bar).
    pub p_min: f64,
    pub p_max: f64,
    pub ln_k_min: f64,
    pub ln_k_max: f64,
    pub phi_max: f64,
    pub v_max: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Well index scale (md m).
    pub w_scale: f64,
    /// Rate scale (Mt/yr), the per-well injection rate.
    pub q_scale: f64,
    /// Time step scale (yr).
    pub dt_scale: f64,
    pub t_scale: f64,
    /// Length scale for edge offsets (m).
    pub len_scale: f64,
}

impl FeatureNorm {
    /// Static statistics from `grid`, with the pressure range and rate scale supplied.
    pub fn new(grid: &GridModel, p_range: (f64, f64), q_scale: f64, dt_scale: f64, rw: f64) -> Result<Self> {
        if !(p_range.1 > p_range.0) {
            return Err(CoreError::InvalidArgument(format!("empty pressure range {p_range:?}")));
        }
        let ln_k = grid.kx.iter().map(|k| k.ln());
        let (ln_k_min, ln_k_max) = min_max(ln_k);
        let (depth_min, depth_max) = min_max(grid.depth.iter().copied());
        let mut w_scale: f64 = 0.0;
        for c in 0..grid.n_cells() {
            w_scale = w_scale.max(peaceman_index(grid, c, [grid.dx, 0.0, 0.0], rw)?);
        }
        let t_scale = grid
            .faces()
            .iter()
            .map(|f| f.trans)
            .fold(0.0, f64::max);
        Ok(Self {
            p_min: p_range.0,
            p_max: p_range.1,
            ln_k_min,
            ln_k_max,
            phi_max: grid.phi.iter().copied().fold(0.0, f64::max),
            v_max: grid.bulk_volume(),
            depth_min,
            depth_max,
            w_scale,
            q_scale,
            dt_scale,
            t_scale: if t_scale > 0.0 { t_scale } else { 1.0 },
            len_scale: grid.dx.max(grid.dy).max(grid.dz),
        })
    }

    pub fn p_range(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn norm_p(&self, p: f64) -> f64 {
        (p - self.p_min) / self.p_range()
    }

    pub fn denorm_p(&self, x: f64) -> f64 {
        self.p_min + x * self.p_range()
    }

    pub fn norm_q(&self, q: f64) -> f64 {
        q / self.q_scale
    }

    pub fn denorm_q(&self, x: f64) -> f64 {
        x * self.q_scale
    }

    fn unit(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Clone, Debug)]
pub struct FlowGraph {
    pub node_features: Tensor,
    pub edge_features: Arc<Tensor>,
    pub senders: Index,
    pub receivers: Index,
    pub node_type: Arc<[NodeType]>,
}

impl FlowGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }
}

/// Well-related node data for one well configuration.
#[derive(Clone, Debug)]
pub struct WellNodes {
    /// Distinct well cells in first-appearance order.
    pub cells: Vec<usize>,
    /// Index into `cells` for every completion.
    pub slot_of: Vec<usize>,
    /// Summed well index per well cell (md m).
    pub w: Vec<f64>,
    pub node_type: Arc<[NodeType]>,
    /// Position in `cells` by grid cell, `usize::MAX` off-well.
    pub lookup: Vec<usize>,
}

impl WellNodes {
    pub fn new(grid: &GridModel, completions: &[Completion]) -> Self {
        let n = grid.n_cells();
        let mut lookup = vec![usize::MAX; n];
        let mut cells = Vec::new();
        let mut w = Vec::new();
        let mut slot_of = Vec::with_capacity(completions.len());
        for comp in completions {
            if lookup[comp.cell] == usize::MAX {
                lookup[comp.cell] = cells.len();
                cells.push(comp.cell);
                w.push(0.0);
            }
            let s = lookup[comp.cell];
            w[s] += comp.w;
            slot_of.push(s);
        }
        let node_type = (0..n)
            .map(|c| {
                if lookup[c] != usize::MAX {
                    NodeType::Well
                } else if grid.in_aquifer(c) {
                    NodeType::Interior
                } else {
                    NodeType::Ring
                }
            })
            .collect();
        Self { cells, slot_of, w, node_type, lookup }
    }

    /// Sums per-completion values into per-well-cell values.
    pub fn to_cells(&self, per_completion: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len()];
        for (&s, v) in self.slot_of.iter().zip(per_completion) {
            out[s] += v;
        }
        out
    }

    /// Splits per-well-cell values back to completions in proportion to W.
    pub fn to_completions(&self, per_cell: &[f64], completions: &[Completion]) -> Vec<f64> {
        completions
            .iter()
            .zip(&self.slot_of)
            .map(|(c, &s)| if self.w[s] > 0.0 { per_cell[s] * c.w / self.w[s] } else { 0.0 })
            .collect()
    }
}

/// The configuration-independent part of a graph: topology, edge features and
/// static node columns.
#[derive(Clone, Debug)]
pub struct GraphTemplate {
    pub n: usize,
    pub senders: Index,
    pub receivers: Index,
    pub edge_features: Arc<Tensor>,
    static_cols: Vec<[f64; 4]>,
}

impl GraphTemplate {
    pub fn new(grid: &GridModel, norm: &FeatureNorm) -> Self {
        let faces = grid.faces();
        let mut senders = Vec::with_capacity(2 * faces.len());
        let mut receivers = Vec::with_capacity(2 * faces.len());
        let mut ef = Vec::with_capacity(2 * faces.len() * EDGE_DIM);
        for f in &faces {
            let (ca, cb) = (grid.center(f.a), grid.center(f.b));
            let d = [(cb[0] - ca[0]) / norm.len_scale, (cb[1] - ca[1]) / norm.len_scale, (cb[2] - ca[2]) / norm.len_scale];
            let dt = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let t = f.trans / norm.t_scale;
            senders.extend([f.a, f.b]);
            receivers.extend([f.b, f.a]);
            ef.extend([t, d[0], d[1], d[2], dt]);
            ef.extend([t, -d[0], -d[1], -d[2], dt]);
        }
        let n_edges = senders.len();
        let static_cols = (0..grid.n_cells())
            .map(|c| {
                [
                    FeatureNorm::unit(grid.kx[c].ln(), norm.ln_k_min, norm.ln_k_max),
                    grid.phi[c] / norm.phi_max,
                    grid.bulk_volume() / norm.v_max,
                    FeatureNorm::unit(grid.depth[c], norm.depth_min, norm.depth_max),
                ]
            })
            .collect();
        Self {
            n: grid.n_cells(),
            senders: senders.into(),
            receivers: receivers.into(),
            edge_features: Arc::new(Tensor::from_rows(n_edges, EDGE_DIM, ef).expect("edge feature count")),
            static_cols,
        }
    }

    /// Node features for a state; `q_cells` is per well cell (Mt/yr).
    pub fn node_features(
        &self,
        wells: &WellNodes,
        norm: &FeatureNorm,
        pressure: &[f64],
        sat_w: &[f64],
        q_cells: &[f64],
        dt: f64,
    ) -> Result<Tensor> {
        for (what, len) in [("pressure", pressure.len()), ("saturation", sat_w.len())] {
            if len != self.n {
                return Err(CoreError::Shape { what, expected: self.n, got: len });
            }
        }
        if q_cells.len() != wells.cells.len() {
            return Err(CoreError::Shape { what: "well-cell rates", expected: wells.cells.len(), got: q_cells.len() });
        }
        let mut data = vec![0.0; self.n * NODE_DIM];
        for c in 0..self.n {
            let row = &mut data[c * NODE_DIM..(c + 1) * NODE_DIM];
            row[COL_P] = norm.norm_p(pressure[c]);
            row[COL_SW] = sat_w[c];
            row[COL_K..COL_K + 4].copy_from_slice(&self.static_cols[c]);
            let s = wells.lookup[c];
            if s != usize::MAX {
                row[COL_W] = wells.w[s] / norm.w_scale;
                row[COL_Q] = norm.norm_q(q_cells[s]);
            }
            row[COL_TYPE + wells.node_type[c].slot()] = 1.0;
            row[COL_DT] = dt / norm.dt_scale;
        }
        Ok(Tensor::from_rows(self.n, NODE_DIM, data).expect("node feature count"))
    }

    pub fn graph(&self, wells: &WellNodes, node_features: Tensor) -> FlowGraph {
        FlowGraph {
            node_features,
            edge_features: self.edge_features.clone(),
            senders: self.senders.clone(),
            receivers: self.receivers.clone(),
            node_type: wells.node_type.clone(),
        }
    }
}

/// One-shot graph construction; `q_perf` is per completion (Mt/yr), `dt` in years.
pub fn build_graph(
    grid: &GridModel,
    completions: &[Completion],
    pressure: &[f64],
    sat_w: &[f64],
    q_perf: &[f64],
    dt: f64,
    norm: &FeatureNorm,
) -> Result<FlowGraph> {
    if q_perf.len() != completions.len() {
        return Err(CoreError::Shape { what: "perforation rates", expected: completions.len(), got: q_perf.len() });
    }
    let template = GraphTemplate::new(grid, norm);
    let wells = WellNodes::new(grid, completions);
    let x = template.node_features(&wells, norm, pressure, sat_w, &wells.to_cells(q_perf), dt)?;
    Ok(template.graph(&wells, x))
}
