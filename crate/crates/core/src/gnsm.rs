//! Encode-process-decode graph networks for pressure and saturation.
//!
//! Both networks read the same node/edge features. The pressure network decodes
//! one channel (normalized pressure change); the saturation network decodes two
//! (water saturation change, normalized perforation-rate change) at every node,
//! the rate channel being meaningful at well nodes only.
//!
//! Edge latents are not updated by the processor, so the per-block edge terms
//! of the message MLPs are computed once per graph topology and reused.

use std::path::Path;
use std::time::Instant;

use diffcore::{
    mlp_forward, Activation, Eager, Exec, MlpParams, MlpShape, NormParams, ParamStore, Reduce, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::graph::{FeatureNorm, FlowGraph, GraphTemplate, NodeType, WellNodes, EDGE_DIM, FEATURE_SCHEMA_VERSION, NODE_DIM};
use crate::grid::{complete_wells, Completion, GridModel, WellConfig};
use crate::refsim::{hydrostatic_pressure, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Pressure,
    Saturation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    /// `[h_dst, h_src, h_dst - h_src, e]`.
    AllInfo,
    /// `[h_dst, h_src]`.
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    None,
    /// Group norm on the node latents after every message-passing round.
    Processor,
    /// Group norm before every hidden activation of every MLP.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub role: NetRole,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub latent: usize,
    pub n_msg: usize,
    pub message: MessageType,
    pub aggregation: Reduce,
    pub activation: Activation,
    pub norm: NormPlacement,
    pub norm_groups: usize,
}

impl NetConfig {
    /// Chosen pressure-network settings.
    pub fn pressure() -> Self {
        Self {
            role: NetRole::Pressure,
            hidden: 128,
            hidden_layers: 2,
            latent: 32,
            n_msg: 15,
            message: MessageType::AllInfo,
            aggregation: Reduce::Sum,
            activation: Activation::LeakyRelu,
            norm: NormPlacement::None,
            norm_groups: 8,
        }
    }

    /// Chosen saturation-network settings.
    pub fn saturation() -> Self {
        Self { role: NetRole::Saturation, n_msg: 10, norm: NormPlacement::Mlp, ..Self::pressure() }
    }

    pub fn out_dim(&self) -> usize {
        match self.role {
            NetRole::Pressure => 1,
            NetRole::Saturation => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if !(1..=15).contains(&self.n_msg) {
            return bad(format!("n_msg = {} outside 1..=15", self.n_msg));
        }
        if self.latent != 16 && self.latent != 32 {
            return bad(format!("latent size {} is not 16 or 32", self.latent));
        }
        if self.hidden == 0 || self.hidden_layers == 0 {
            return bad("hidden size and layer count must be positive".into());
        }
        if self.norm != NormPlacement::None {
            let chans = if self.norm == NormPlacement::Mlp { self.hidden } else { self.latent };
            if self.norm_groups == 0 || chans % self.norm_groups != 0 {
                return bad(format!("{chans} channels not divisible into {} groups", self.norm_groups));
            }
        }
        Ok(())
    }
}

/// One message-passing round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub message: MlpParams,
    pub update: MlpParams,
    pub norm: Option<NormParams>,
}

/// Parameters of one encode-process-decode network plus the feature scales it
/// was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateNet {
    pub config: NetConfig,
    pub norm: FeatureNorm,
    pub schema: u32,
    pub store: ParamStore,
    pub node_encoder: MlpParams,
    pub edge_encoder: MlpParams,
    pub blocks: Vec<Block>,
    pub decoder: MlpParams,
}

/// Edge-dependent terms of every message MLP's first layer.
pub struct EdgeTerms<V> {
    per_block: Vec<V>,
}

impl<V> EdgeTerms<V> {
    pub fn first(&self) -> &V {
        &self.per_block[0]
    }
}

impl SurrogateNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, norm: FeatureNorm, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (h, l, hl) = (config.hidden, config.latent, config.hidden_layers);
        let groups = (config.norm == NormPlacement::Mlp).then_some(config.norm_groups);
        let act = config.activation;
        let mlp = |store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R| {
            MlpParams::new(store, name, MlpShape { input, hidden: h, hidden_layers: hl, output }, act, groups, rng)
        };
        let node_encoder = mlp(&mut store, "enc_node", NODE_DIM, l, rng)?;
        let edge_encoder = mlp(&mut store, "enc_edge", EDGE_DIM, l, rng)?;
        let msg_in = match config.message {
            MessageType::AllInfo => 4 * l,
            MessageType::Reduced => 2 * l,
        };
        let mut blocks = Vec::with_capacity(config.n_msg);
        for b in 0..config.n_msg {
            let message = mlp(&mut store, &format!("mp{b}.msg"), msg_in, l, rng)?;
            let update = mlp(&mut store, &format!("mp{b}.upd"), 2 * l, l, rng)?;
            let norm = match config.norm {
                NormPlacement::Processor => Some(NormParams::new(&mut store, &format!("mp{b}.gn"), l, config.norm_groups)?),
                _ => None,
            };
            blocks.push(Block { message, update, norm });
        }
        let decoder = mlp(&mut store, "dec", l, config.out_dim(), rng)?;
        Ok(Self { config, norm, schema: FEATURE_SCHEMA_VERSION, store, node_encoder, edge_encoder, blocks, decoder })
    }

    pub fn n_params(&self) -> usize {
        self.store.numel()
    }

    /// Zeroes the decoder output layer, making every prediction exactly zero.
    pub fn zero_decoder(&mut self) {
        self.decoder.zero_output(&mut self.store);
    }

    fn check_graph(&self, graph: &FlowGraph) -> Result<()> {
        let (nc, ec) = (graph.node_features.cols(), graph.edge_features.cols());
        if nc != NODE_DIM {
            return Err(CoreError::Shape { what: "node features", expected: NODE_DIM, got: nc });
        }
        if ec != EDGE_DIM {
            return Err(CoreError::Shape { what: "edge features", expected: EDGE_DIM, got: ec });
        }
        Ok(())
    }

    /// Node latents from node features.
    pub fn encode_nodes<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<E::V> {
        Ok(mlp_forward(ex, &self.store, &self.node_encoder, x)?)
    }

    /// Edge latents and the per-block edge terms of the message MLPs.
    pub fn edge_terms<E: Exec>(&self, ex: &mut E, edge_features: &E::V) -> Result<EdgeTerms<E::V>> {
        let e = mlp_forward(ex, &self.store, &self.edge_encoder, edge_features)?;
        let l = self.config.latent;
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let first = &b.message.layers[0];
            let w = ex.param(&self.store, first.weight);
            let bias = ex.param(&self.store, first.bias);
            let term = match self.config.message {
                MessageType::AllInfo => {
                    let we = ex.slice_rows(&w, 3 * l, l)?;
                    let t = ex.matmul(&e, &we)?;
                    ex.add_bias(&t, &bias)?
                }
                MessageType::Reduced => {
                    let rows = ex.value(&e).rows();
                    let zero = ex.constant(Tensor::zeros(rows, first.fan_out));
                    ex.add_bias(&zero, &bias)?
                }
            };
            per_block.push(term);
        }
        Ok(EdgeTerms { per_block })
    }

    /// `n_rounds` message-passing rounds starting from node latents `h`.
    pub fn message_pass<E: Exec>(
        &self,
        ex: &mut E,
        graph: &FlowGraph,
        edges: &EdgeTerms<E::V>,
        mut h: E::V,
        n_rounds: usize,
    ) -> Result<E::V> {
        let l = self.config.latent;
        let n = graph.n_nodes();
        for (b, term) in self.blocks.iter().zip(&edges.per_block).take(n_rounds) {
            let w = ex.param(&self.store, b.message.layers[0].weight);
            let (dst_w, src_w) = match self.config.message {
                MessageType::AllInfo => {
                    let wd = ex.slice_rows(&w, 0, l)?;
                    let ws = ex.slice_rows(&w, l, l)?;
                    let wdiff = ex.slice_rows(&w, 2 * l, l)?;
                    (ex.add(&wd, &wdiff)?, ex.sub(&ws, &wdiff)?)
                }
                MessageType::Reduced => (ex.slice_rows(&w, 0, l)?, ex.slice_rows(&w, l, l)?),
            };
            let a = ex.matmul(&h, &dst_w)?;
            let s = ex.matmul(&h, &src_w)?;
            let a = ex.gather_rows(&a, &graph.receivers)?;
            let s = ex.gather_rows(&s, &graph.senders)?;
            let pre = ex.add(&a, &s)?;
            let pre = ex.add(&pre, term)?;
            let m = b.message.forward_from_first(ex, &self.store, pre)?;
            let agg = ex.scatter_rows(&m, &graph.receivers, n, self.config.aggregation)?;
            let cat = ex.concat_cols(&[h.clone(), agg])?;
            let u = mlp_forward(ex, &self.store, &b.update, &cat)?;
            h = ex.add(&h, &u)?;
            if let Some(gn) = &b.norm {
                h = gn.forward(ex, &self.store, &h)?;
            }
        }
        Ok(h)
    }

    pub fn decode<E: Exec>(&self, ex: &mut E, h: &E::V) -> Result<E::V> {
        Ok(mlp_forward(ex, &self.store, &self.decoder, h)?)
    }

    /// Full forward pass with precomputed edge terms: `n x out_dim` residuals.
    pub fn forward_with<E: Exec>(&self, ex: &mut E, graph: &FlowGraph, x: &E::V, edges: &EdgeTerms<E::V>) -> Result<E::V> {
        self.check_graph(graph)?;
        let h = self.encode_nodes(ex, x)?;
        let h = self.message_pass(ex, graph, edges, h, self.blocks.len())?;
        self.decode(ex, &h)
    }

    /// Full forward pass on a graph.
    pub fn forward<E: Exec>(&self, ex: &mut E, graph: &FlowGraph) -> Result<E::V> {
        self.check_graph(graph)?;
        let x = ex.constant(graph.node_features.clone());
        let ef = ex.constant((*graph.edge_features).clone());
        let edges = self.edge_terms(ex, &ef)?;
        self.forward_with(ex, graph, &x, &edges)
    }

    /// Writes parameters plus configuration, scales and schema version.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "co2gnsm-surrogate",
            "schema": self.schema,
            "config": self.config,
            "norm": self.norm,
        });
        diffcore::save_checkpoint(path, &self.store, &meta)?;
        Ok(())
    }

    /// Loads a checkpoint, refusing a different feature schema.
    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = diffcore::load_checkpoint(path)?;
        let bad = |m: String| CoreError::format(path, m);
        if meta.get("kind").and_then(|v| v.as_str()) != Some("co2gnsm-surrogate") {
            return Err(bad("not a surrogate checkpoint".into()));
        }
        let schema = meta.get("schema").and_then(|v| v.as_u64()).ok_or_else(|| bad("missing schema".into()))? as u32;
        if schema != FEATURE_SCHEMA_VERSION {
            return Err(CoreError::Schema(format!(
                "checkpoint {} uses feature schema {schema}, this build reads {FEATURE_SCHEMA_VERSION}",
                path.display()
            )));
        }
        let config: NetConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(e.to_string()))?;
        let norm: FeatureNorm = serde_json::from_value(meta["norm"].clone()).map_err(|e| bad(e.to_string()))?;
        let mut net = Self::new(config, norm, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.store.load_from(&store)?;
        Ok(net)
    }
}

/// Weights of the training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// MAE ratio over all cells.
    pub alpha: f64,
    /// MAE ratio over well cells.
    pub beta: f64,
    /// Well-cell loss ratio.
    pub gamma: f64,
    /// First-step weight.
    pub eta: f64,
    /// Plume weight.
    pub zeta: f64,
    pub sigma_p: f64,
    pub sigma_s: f64,
    /// Gas saturation above which a cell counts as plume.
    pub plume_threshold: f64,
}

impl LossWeights {
    pub fn pressure() -> Self {
        Self { alpha: 0.1, beta: 0.1, gamma: 0.1, eta: 0.3, zeta: 0.3, sigma_p: 0.03, sigma_s: 0.03, plume_threshold: 0.1 }
    }

    pub fn saturation() -> Self {
        Self { sigma_p: 0.01, sigma_s: 0.01, ..Self::pressure() }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.eta, self.zeta, self.sigma_p, self.sigma_s];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(CoreError::Config(format!("loss weights and noise levels must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Cell roles of one (sample, step) training pair.
#[derive(Clone, Debug)]
pub struct PairRoles {
    pub well: Vec<bool>,
    pub plume: Vec<bool>,
    /// The pair is the transition out of the initial state.
    pub first_step: bool,
}

/// Per-entry weights `(w2, w1)` such that `sum(w2 d^2 + w1 |d|)` over the pair's
/// `n x channels` residual error is the pair's share of the loss.
///
/// The loss over a set of `n_pairs` pairs drawn from series of `n_t` steps is
/// the mean over pairs of
/// `mean_c (d_c^2 + alpha |d_c|)`
/// `+ gamma mean_{well c} sum_ch (d^2 + beta |d|)`
/// `+ eta n_t [first step] mean_c d_c^2`
/// `+ zeta mean_{plume c} d_c^2`,
/// where unsubscripted `d_c` is channel 0 and empty well or plume sets add 0.
pub fn loss_entry_weights(roles: &PairRoles, channels: usize, w: &LossWeights, n_t: usize, n_pairs: usize) -> (Tensor, Tensor) {
    let n = roles.well.len();
    let inv_pairs = 1.0 / n_pairs as f64;
    let inv_n = 1.0 / n as f64;
    let n_well = roles.well.iter().filter(|&&b| b).count();
    let n_plume = roles.plume.iter().filter(|&&b| b).count();
    let first = if roles.first_step { w.eta * n_t as f64 * inv_n } else { 0.0 };
    let mut w2 = vec![0.0; n * channels];
    let mut w1 = vec![0.0; n * channels];
    for c in 0..n {
        let base = c * channels;
        w2[base] += inv_n + first;
        w1[base] += w.alpha * inv_n;
        if roles.plume[c] {
            w2[base] += w.zeta / n_plume as f64;
        }
        if roles.well[c] {
            for ch in 0..channels {
                w2[base + ch] += w.gamma / n_well as f64;
                w1[base + ch] += w.gamma * w.beta / n_well as f64;
            }
        }
    }
    for v in w2.iter_mut().chain(w1.iter_mut()) {
        *v *= inv_pairs;
    }
    (Tensor::from_rows(n, channels, w2).expect("sizes"), Tensor::from_rows(n, channels, w1).expect("sizes"))
}

/// The pair's loss contribution given predicted and true residuals.
pub fn pair_loss<E: Exec>(
    ex: &mut E,
    pred: &E::V,
    target: &Tensor,
    roles: &PairRoles,
    w: &LossWeights,
    n_t: usize,
    n_pairs: usize,
) -> Result<E::V> {
    let (w2, w1) = loss_entry_weights(roles, target.cols(), w, n_t, n_pairs);
    Ok(ex.weighted_loss(pred, target, &w2, &w1)?)
}

/// Adds `N(0, sigma^2)` noise to normalized pressure and water saturation.
/// The same seed always yields the same noise.
pub fn perturb(p_norm: &[f64], sat_w: &[f64], sigma_p: f64, sigma_s: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let noise = |sigma: f64| {
        let bad = || CoreError::InvalidArgument(format!("noise level {sigma} must be non-negative"));
        if !(sigma >= 0.0) {
            return Err(bad());
        }
        Normal::new(0.0, sigma).map_err(|_| bad())
    };
    let (np, ns) = (noise(sigma_p)?, noise(sigma_s)?);
    let p = p_norm.iter().map(|v| if sigma_p > 0.0 { v + np.sample(rng) } else { *v }).collect();
    let s = sat_w.iter().map(|v| if sigma_s > 0.0 { v + ns.sample(rng) } else { *v }).collect();
    Ok((p, s))
}

/// Model state at one report time.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateState {
    pub pressure: Vec<f64>,
    pub sat_w: Vec<f64>,
    /// Rate per well cell (Mt/yr).
    pub q_cells: Vec<f64>,
}

/// Everything a rollout needs that does not change between steps.
pub struct RolloutContext {
    pub template: GraphTemplate,
    pub wells: WellNodes,
    pub completions: Vec<Completion>,
    pub dt: f64,
    pres_edges: EdgeTerms<Tensor>,
    sat_edges: EdgeTerms<Tensor>,
}

impl RolloutContext {
    pub fn new(pres: &SurrogateNet, sat: &SurrogateNet, grid: &GridModel, completions: Vec<Completion>, dt: f64) -> Result<Self> {
        for net in [pres, sat] {
            if net.schema != FEATURE_SCHEMA_VERSION {
                return Err(CoreError::Schema(format!(
                    "network uses feature schema {}, this build reads {FEATURE_SCHEMA_VERSION}",
                    net.schema
                )));
            }
        }
        if pres.config.role != NetRole::Pressure || sat.config.role != NetRole::Saturation {
            return Err(CoreError::Config("expected a pressure network and a saturation network".into()));
        }
        if pres.norm != sat.norm {
            return Err(CoreError::Config("pressure and saturation networks use different feature scales".into()));
        }
        let template = GraphTemplate::new(grid, &pres.norm);
        let wells = WellNodes::new(grid, &completions);
        let ef = (*template.edge_features).clone();
        let pres_edges = pres.edge_terms(&mut Eager, &ef)?;
        let sat_edges = sat.edge_terms(&mut Eager, &ef)?;
        Ok(Self { template, wells, completions, dt, pres_edges, sat_edges })
    }
}

/// One surrogate step: decoded residuals added to the current state.
pub fn predict_step(pres: &SurrogateNet, sat: &SurrogateNet, ctx: &RolloutContext, s: &SurrogateState) -> Result<SurrogateState> {
    let norm = &pres.norm;
    let x = ctx.template.node_features(&ctx.wells, norm, &s.pressure, &s.sat_w, &s.q_cells, ctx.dt)?;
    let graph = ctx.template.graph(&ctx.wells, x);
    let dp = pres.forward_with(&mut Eager, &graph, &graph.node_features, &ctx.pres_edges)?;
    let ds = sat.forward_with(&mut Eager, &graph, &graph.node_features, &ctx.sat_edges)?;
    let pressure = s.pressure.iter().enumerate().map(|(c, p)| p + dp.get(c, 0) * norm.p_range()).collect();
    let sat_w = s.sat_w.iter().enumerate().map(|(c, v)| (v + ds.get(c, 0)).clamp(0.0, 1.0)).collect();
    let q_cells = ctx
        .wells
        .cells
        .iter()
        .zip(&s.q_cells)
        .map(|(&c, q)| q + norm.denorm_q(ds.get(c, 1)))
        .collect();
    Ok(SurrogateState { pressure, sat_w, q_cells })
}

/// Predicted fields at report times 1..=n_t.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    pub pressure: Vec<Vec<f64>>,
    pub saturation_g: Vec<Vec<f64>>,
    /// Per completion (Mt/yr).
    pub q_perf: Vec<Vec<f64>>,
    /// Wall time of each step (s); excluded from equality-sensitive outputs.
    pub step_seconds: Vec<f64>,
    pub completions: Vec<Completion>,
}

/// Initial state: hydrostatic pressure, no gas, rates split in proportion to W.
pub fn initial_state(grid: &GridModel, fluids: &FluidModel, wells: &WellNodes, rate_per_well: f64, completions: &[Completion]) -> SurrogateState {
    let n_wells = completions.iter().map(|c| c.well + 1).max().unwrap_or(0);
    let mut tot = vec![0.0; n_wells];
    for c in completions {
        tot[c.well] += c.w;
    }
    let q: Vec<f64> = completions.iter().map(|c| rate_per_well * c.w / tot[c.well]).collect();
    SurrogateState { pressure: hydrostatic_pressure(grid, fluids), sat_w: vec![1.0; grid.n_cells()], q_cells: wells.to_cells(&q) }
}

/// Autoregressive rollout over the schedule's report times.
pub fn rollout(
    pres: &SurrogateNet,
    sat: &SurrogateNet,
    grid: &GridModel,
    fluids: &FluidModel,
    wells: &WellConfig,
    schedule: &Schedule,
    well_radius: f64,
) -> Result<RolloutResult> {
    let n_t = schedule.n_reports()?;
    let completions = complete_wells(grid, wells, well_radius)?;
    let ctx = RolloutContext::new(pres, sat, grid, completions, schedule.report_every)?;
    let mut state = initial_state(grid, fluids, &ctx.wells, schedule.rate_per_well, &ctx.completions);
    let mut out = RolloutResult {
        times: Vec::with_capacity(n_t),
        pressure: Vec::with_capacity(n_t),
        saturation_g: Vec::with_capacity(n_t),
        q_perf: Vec::with_capacity(n_t),
        step_seconds: Vec::with_capacity(n_t),
        completions: ctx.completions.clone(),
    };
    for k in 1..=n_t {
        let t0 = Instant::now();
        state = predict_step(pres, sat, &ctx, &state)?;
        out.step_seconds.push(t0.elapsed().as_secs_f64());
        out.times.push(k as f64 * schedule.report_every);
        out.pressure.push(state.pressure.clone());
        out.saturation_g.push(state.sat_w.iter().map(|s| 1.0 - s).collect());
        out.q_perf.push(ctx.wells.to_completions(&state.q_cells, &ctx.completions));
    }
    Ok(out)
}

/// Node roles of a graph: well flags from the node types.
pub fn well_mask(node_type: &[NodeType]) -> Vec<bool> {
    node_type.iter().map(|t| *t == NodeType::Well).collect()
}
