//! Per-well bottom-hole pressure from the states of the cells a well crosses.
//!
//! Each (well, step) row holds the node features of the well's completion cells
//! in path order, repeated cyclically to fill `max_completions` slots, followed
//! by a step encoding. First-step rows appear four times in training data.

use std::path::Path;

use diffcore::{adam_step, mlp_forward, Activation, AdamConfig, AdamState, Eager, Exec, MlpParams, MlpShape, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gnsm::RolloutResult;
use crate::graph::{FeatureNorm, GraphTemplate, WellNodes, COL_P, FEATURE_SCHEMA_VERSION, NODE_DIM};
use crate::grid::{Completion, GridModel};
use crate::refsim::SnapshotSeries;

/// Node-feature columns copied per slot: p, S_w, k, phi, V, D, W, Q.
pub const SLOT_FEATURES: usize = 8;
/// `step / n_t` and a first-step flag.
pub const STEP_FEATURES: usize = 2;
/// Number of times each first-step row appears in a training set.
pub const FIRST_STEP_COPIES: usize = 4;

pub fn input_dim(max_completions: usize) -> usize {
    max_completions * SLOT_FEATURES + STEP_FEATURES
}

/// Rows of `(well, step)` inputs with BHP targets (bar).
#[derive(Clone, Debug, PartialEq)]
pub struct BhpDataset {
    pub inputs: Tensor,
    pub targets: Vec<f64>,
    /// `(case, well, step)` of every row.
    pub keys: Vec<(usize, usize, usize)>,
}

impl BhpDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Completion indices per well, in path order.
fn well_completions(completions: &[Completion]) -> Vec<Vec<usize>> {
    let n_wells = completions.iter().map(|c| c.well + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); n_wells];
    for (i, c) in completions.iter().enumerate() {
        out[c.well].push(i);
    }
    out
}

/// One input row per well for the state at report `step` of `n_t`.
pub fn well_inputs(
    node_features: &Tensor,
    completions: &[Completion],
    step: usize,
    n_t: usize,
    max_completions: usize,
) -> Result<Vec<Vec<f64>>> {
    if node_features.cols() != NODE_DIM {
        return Err(CoreError::Shape { what: "node features", expected: NODE_DIM, got: node_features.cols() });
    }
    well_completions(completions)
        .into_iter()
        .enumerate()
        .map(|(w, idx)| {
            if idx.is_empty() || idx.len() > max_completions {
                return Err(CoreError::InvalidWell {
                    well: w,
                    reason: format!("{} completions, BHP model takes 1..={max_completions}", idx.len()),
                });
            }
            let mut row = Vec::with_capacity(input_dim(max_completions));
            for s in 0..max_completions {
                let cell = completions[idx[s % idx.len()]].cell;
                row.extend_from_slice(&node_features.row_slice(cell)[COL_P..COL_P + SLOT_FEATURES]);
            }
            row.push(step as f64 / n_t as f64);
            row.push(if step == 1 { 1.0 } else { 0.0 });
            Ok(row)
        })
        .collect()
}

/// Node features of a full state; the time-step column is irrelevant here.
fn state_features(
    template: &GraphTemplate,
    wells: &WellNodes,
    norm: &FeatureNorm,
    pressure: &[f64],
    sat_g: &[f64],
    q_perf: &[f64],
) -> Result<Tensor> {
    let sat_w: Vec<f64> = sat_g.iter().map(|s| 1.0 - s).collect();
    template.node_features(wells, norm, pressure, &sat_w, &wells.to_cells(q_perf), norm.dt_scale)
}

/// Training rows from simulated series: `n_s * n_w * (n_t + 3)` rows.
pub fn build_bhp_dataset(grid: &GridModel, series: &[SnapshotSeries], norm: &FeatureNorm, max_completions: usize) -> Result<BhpDataset> {
    let template = GraphTemplate::new(grid, norm);
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut keys = Vec::new();
    for (case, s) in series.iter().enumerate() {
        let n_t = s.n_reports();
        let n_wells = s.well_config.n_wells();
        if s.bhp.len() != n_t + 1 || s.bhp.iter().any(|b| b.len() != n_wells) {
            return Err(CoreError::Missing(format!("case {case}: BHP series does not cover {n_wells} wells at {} reports", n_t + 1)));
        }
        let wells = WellNodes::new(grid, &s.completions);
        for step in 1..=n_t {
            let x = state_features(&template, &wells, norm, &s.pressure[step], &s.saturation_g[step], &s.q_perf[step])?;
            let rows = well_inputs(&x, &s.completions, step, n_t, max_completions)?;
            let copies = if step == 1 { FIRST_STEP_COPIES } else { 1 };
            for (w, row) in rows.iter().enumerate() {
                for _ in 0..copies {
                    data.extend_from_slice(row);
                    targets.push(s.bhp[step][w]);
                    keys.push((case, w, step));
                }
            }
        }
    }
    let n = targets.len();
    Ok(BhpDataset { inputs: Tensor::from_rows(n, input_dim(max_completions), data)?, targets, keys })
}

/// Mean squared error over all rows of normalized BHP.
pub fn bhp_loss<E: Exec>(ex: &mut E, pred: &E::V, target: &Tensor) -> Result<E::V> {
    let p = ex.value(pred);
    if p.rows() != target.rows() || p.cols() != target.cols() {
        return Err(CoreError::Shape { what: "BHP predictions", expected: target.numel(), got: p.numel() });
    }
    let w2 = Tensor::full(target.rows(), target.cols(), 1.0 / target.numel() as f64);
    let w1 = Tensor::zeros(target.rows(), target.cols());
    Ok(ex.weighted_loss(pred, target, &w2, &w1)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhpConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub max_completions: usize,
}

impl Default for BhpConfig {
    fn default() -> Self {
        Self { hidden: 128, hidden_layers: 3, activation: Activation::LeakyRelu, max_completions: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BhpTrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch_size: 64, lr: 1e-3, seed: 0 }
    }
}

/// MLP plus the scales it was trained with. Targets are mapped to `[-1, 1]`
/// over the training BHP range, so a zero output is the range midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct BhpModel {
    pub config: BhpConfig,
    pub norm: FeatureNorm,
    pub bhp_min: f64,
    pub bhp_max: f64,
    pub schema: u32,
    pub store: ParamStore,
    pub mlp: MlpParams,
}

impl BhpModel {
    pub fn new(config: BhpConfig, norm: FeatureNorm, bhp_range: (f64, f64), seed: u64) -> Result<Self> {
        if !(bhp_range.1 > bhp_range.0) {
            return Err(CoreError::InvalidArgument(format!("empty BHP range {bhp_range:?}")));
        }
        if config.max_completions == 0 || config.hidden == 0 || config.hidden_layers == 0 {
            return Err(CoreError::Config(format!("degenerate BHP model {config:?}")));
        }
        let mut store = ParamStore::new();
        let shape = MlpShape {
            input: input_dim(config.max_completions),
            hidden: config.hidden,
            hidden_layers: config.hidden_layers,
            output: 1,
        };
        let mlp = MlpParams::new(&mut store, "bhp", shape, config.activation, None, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, norm, bhp_min: bhp_range.0, bhp_max: bhp_range.1, schema: FEATURE_SCHEMA_VERSION, store, mlp })
    }

    pub fn normalize(&self, bhp: f64) -> f64 {
        2.0 * (bhp - self.bhp_min) / (self.bhp_max - self.bhp_min) - 1.0
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        self.bhp_min + 0.5 * (x + 1.0) * (self.bhp_max - self.bhp_min)
    }

    pub fn zero_output(&mut self) {
        self.mlp.zero_output(&mut self.store);
    }

    /// BHP (bar) for each input row.
    pub fn predict_rows(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let y = mlp_forward(&mut Eager, &self.store, &self.mlp, inputs)?;
        Ok(y.data().iter().map(|v| self.denormalize(*v)).collect())
    }

    /// Trains on `data`, returning the mean loss of every epoch.
    pub fn train(&mut self, data: &BhpDataset, cfg: &BhpTrainConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(CoreError::Missing("empty BHP training set".into()));
        }
        if cfg.batch_size == 0 {
            return Err(CoreError::Config("BHP batch size must be positive".into()));
        }
        let dim = data.inputs.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = AdamState::new(&self.store);
        let adam = AdamConfig::with_lr(cfg.lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut x = Vec::with_capacity(batch.len() * dim);
                let mut y = Vec::with_capacity(batch.len());
                for &r in batch {
                    x.extend_from_slice(data.inputs.row_slice(r));
                    y.push(self.normalize(data.targets[r]));
                }
                let mut tape = Tape::new();
                let xv = tape.constant(Tensor::from_rows(batch.len(), dim, x)?);
                let out = mlp_forward(&mut tape, &self.store, &self.mlp, &xv)?;
                let loss = bhp_loss(&mut tape, &out, &Tensor::column(y))?;
                total += tape.value(&loss).item() * batch.len() as f64;
                let grads = tape.backward(loss)?.for_store(&self.store);
                adam_step(&mut self.store, &grads, &mut state, &adam)?;
            }
            let mean = total / data.len() as f64;
            if !mean.is_finite() {
                return Err(CoreError::Numerical("BHP training loss is not finite".into()));
            }
            curve.push(mean);
        }
        Ok(curve)
    }

    /// `bhp[t][well]` for report times 1..=n_t of a surrogate rollout.
    pub fn predict_rollout(&self, grid: &GridModel, rollout: &RolloutResult) -> Result<Vec<Vec<f64>>> {
        self.predict_states(grid, &rollout.completions, &rollout.pressure, &rollout.saturation_g, &rollout.q_perf)
    }

    /// `bhp[t][well]` for states at report times 1..=n_t.
    pub fn predict_states(
        &self,
        grid: &GridModel,
        completions: &[Completion],
        pressure: &[Vec<f64>],
        sat_g: &[Vec<f64>],
        q_perf: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        if self.schema != FEATURE_SCHEMA_VERSION {
            return Err(CoreError::Schema(format!(
                "BHP model uses feature schema {}, this build reads {FEATURE_SCHEMA_VERSION}",
                self.schema
            )));
        }
        let n_t = pressure.len();
        let template = GraphTemplate::new(grid, &self.norm);
        let wells = WellNodes::new(grid, completions);
        let dim = input_dim(self.config.max_completions);
        let mut data = Vec::new();
        let mut n_wells = 0;
        for t in 0..n_t {
            let x = state_features(&template, &wells, &self.norm, &pressure[t], &sat_g[t], &q_perf[t])?;
            let rows = well_inputs(&x, completions, t + 1, n_t, self.config.max_completions)?;
            n_wells = rows.len();
            data.extend(rows.into_iter().flatten());
        }
        let flat = self.predict_rows(&Tensor::from_rows(n_t * n_wells, dim, data)?)?;
        Ok(flat.chunks(n_wells.max(1)).map(|c| c.to_vec()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "co2gnsm-bhp",
            "schema": self.schema,
            "config": self.config,
            "norm": self.norm,
            "bhp_min": self.bhp_min,
            "bhp_max": self.bhp_max,
        });
        diffcore::save_checkpoint(path, &self.store, &meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = diffcore::load_checkpoint(path)?;
        let bad = |m: String| CoreError::format(path, m);
        if meta.get("kind").and_then(|v| v.as_str()) != Some("co2gnsm-bhp") {
            return Err(bad("not a BHP checkpoint".into()));
        }
        let schema = meta.get("schema").and_then(|v| v.as_u64()).ok_or_else(|| bad("missing schema".into()))? as u32;
        if schema != FEATURE_SCHEMA_VERSION {
            return Err(CoreError::Schema(format!(
                "checkpoint {} uses feature schema {schema}, this build reads {FEATURE_SCHEMA_VERSION}",
                path.display()
            )));
        }
        let config: BhpConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(e.to_string()))?;
        let norm: FeatureNorm = serde_json::from_value(meta["norm"].clone()).map_err(|e| bad(e.to_string()))?;
        let range = (meta["bhp_min"].as_f64(), meta["bhp_max"].as_f64());
        let (Some(lo), Some(hi)) = range else {
            return Err(bad("missing BHP range".into()));
        };
        let mut model = Self::new(config, norm, (lo, hi), 0)?;
        model.store.load_from(&store)?;
        Ok(model)
    }
}
