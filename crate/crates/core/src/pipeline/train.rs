//! Three-stage surrogate training plus the BHP model.
//!
//! Stage 1 trains every candidate hyperparameter set on a few cases and ranks
//! them per network by single-step error on held-out cases. Stage 2 continues
//! the winners single-step on all training cases. Stage 3 fine-tunes on
//! chained predictions: each chained step feeds the network's own previous
//! prediction (detached) back in, with the other network's variables taken
//! from the simulation.

use std::path::Path;
use std::time::Instant;

use diffcore::{adam_step, AdamConfig, AdamState, DiffError, Eager, Exec, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NetSetup};
use super::derive_seed;
use crate::bhp::{build_bhp_dataset, BhpModel};
use crate::error::{CoreError, Result};
use crate::gnsm::{pair_loss, perturb, well_mask, LossWeights, NetRole, PairRoles, SurrogateNet};
use crate::graph::{FeatureNorm, GraphTemplate, WellNodes};
use crate::grid::GridModel;
use crate::refsim::SnapshotSeries;

/// Simulated states of one case in the form the networks consume.
pub struct TrainingCase {
    pub wells: WellNodes,
    pub well: Vec<bool>,
    /// Report states `0..=n_t`.
    pub pressure: Vec<Vec<f64>>,
    pub sat_w: Vec<Vec<f64>>,
    pub sat_g: Vec<Vec<f64>>,
    /// Rate per well cell (Mt/yr).
    pub q_cells: Vec<Vec<f64>>,
}

impl TrainingCase {
    pub fn new(grid: &GridModel, s: &SnapshotSeries) -> Self {
        let wells = WellNodes::new(grid, &s.completions);
        let well = well_mask(&wells.node_type);
        Self {
            well,
            pressure: s.pressure.clone(),
            sat_w: s.saturation_g.iter().map(|v| v.iter().map(|g| 1.0 - g).collect()).collect(),
            sat_g: s.saturation_g.clone(),
            q_cells: s.q_perf.iter().map(|q| wells.to_cells(q)).collect(),
            wells,
        }
    }

    pub fn n_t(&self) -> usize {
        self.pressure.len() - 1
    }
}

/// Feature scales and graph topology shared by every case of a grid.
pub struct TrainContext {
    pub norm: FeatureNorm,
    pub template: GraphTemplate,
    pub dt: f64,
}

impl TrainContext {
    pub fn new(grid: &GridModel, norm: FeatureNorm, dt: f64) -> Self {
        let template = GraphTemplate::new(grid, &norm);
        Self { norm, template, dt }
    }
}

/// Overall pressure range of a set of simulations (bar).
pub fn pressure_range(series: &[SnapshotSeries]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in series.iter().flat_map(|s| s.pressure.iter().flatten()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !(hi > lo) {
        return Err(CoreError::Missing("no pressure variation in the training data".into()));
    }
    Ok((lo, hi))
}

/// Feature scales for a configuration, with the pressure range of `train`.
pub fn feature_norm(cfg: &ExperimentConfig, grid: &GridModel, train: &[SnapshotSeries]) -> Result<FeatureNorm> {
    FeatureNorm::new(grid, pressure_range(train)?, cfg.schedule.rate_per_well, cfg.schedule.report_every, cfg.sim.well_radius)
}

/// State fed to a network.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub pressure: Vec<f64>,
    pub sat_w: Vec<f64>,
    pub q_cells: Vec<f64>,
}

impl StepInput {
    pub fn truth(case: &TrainingCase, t: usize) -> Self {
        Self { pressure: case.pressure[t].clone(), sat_w: case.sat_w[t].clone(), q_cells: case.q_cells[t].clone() }
    }

    /// Truth at `t` with Gaussian noise on normalized pressure and water saturation.
    pub fn noisy(case: &TrainingCase, t: usize, norm: &FeatureNorm, loss: &LossWeights, seed: u64) -> Result<Self> {
        let p_norm: Vec<f64> = case.pressure[t].iter().map(|p| norm.norm_p(*p)).collect();
        let (p, sw) = perturb(&p_norm, &case.sat_w[t], loss.sigma_p, loss.sigma_s, seed)?;
        Ok(Self { pressure: p.iter().map(|x| norm.denorm_p(*x)).collect(), sat_w: sw, q_cells: case.q_cells[t].clone() })
    }
}

/// Residual targets taking `input` to the simulated state at `t_next`.
pub fn residual_target(role: NetRole, norm: &FeatureNorm, case: &TrainingCase, t_next: usize, input: &StepInput) -> Tensor {
    let n = input.pressure.len();
    match role {
        NetRole::Pressure => Tensor::column((0..n).map(|c| (case.pressure[t_next][c] - input.pressure[c]) / norm.p_range()).collect()),
        NetRole::Saturation => {
            let mut data = vec![0.0; 2 * n];
            for c in 0..n {
                data[2 * c] = case.sat_w[t_next][c] - input.sat_w[c];
            }
            for (s, &c) in case.wells.cells.iter().enumerate() {
                data[2 * c + 1] = norm.norm_q(case.q_cells[t_next][s]) - norm.norm_q(input.q_cells[s]);
            }
            Tensor::from_rows(n, 2, data).expect("two channels per node")
        }
    }
}

/// The next input of a chain: the network's own prediction replaces its
/// variables, the rest comes from the simulation at `t_next`.
pub fn advance(role: NetRole, norm: &FeatureNorm, case: &TrainingCase, t_next: usize, input: &StepInput, pred: &Tensor) -> StepInput {
    let mut next = StepInput::truth(case, t_next);
    match role {
        NetRole::Pressure => {
            for (c, p) in next.pressure.iter_mut().enumerate() {
                *p = input.pressure[c] + pred.get(c, 0) * norm.p_range();
            }
        }
        NetRole::Saturation => {
            for (c, s) in next.sat_w.iter_mut().enumerate() {
                *s = (input.sat_w[c] + pred.get(c, 0)).clamp(0.0, 1.0);
            }
            for (s, &c) in case.wells.cells.iter().enumerate() {
                next.q_cells[s] = input.q_cells[s] + norm.denorm_q(pred.get(c, 1));
            }
        }
    }
    next
}

fn numerical(e: CoreError) -> CoreError {
    match e {
        CoreError::Diff(DiffError::NonFinite { op }) => CoreError::Numerical(format!("training diverged: non-finite value in {op}")),
        other => other,
    }
}

/// Loss of one chain starting at `(case, t)` and its parameter gradients,
/// added into `grads`. `n_pairs` is the batch size the loss is averaged over.
#[allow(clippy::too_many_arguments)]
pub fn chain_objective(
    net: &SurrogateNet,
    ctx: &TrainContext,
    case: &TrainingCase,
    t: usize,
    loss: &LossWeights,
    extra_steps: usize,
    n_pairs: usize,
    noise_seed: u64,
    grads: Option<&mut [Tensor]>,
) -> Result<f64> {
    let role = net.config.role;
    let n_t = case.n_t();
    let mut input = StepInput::noisy(case, t, &ctx.norm, loss, noise_seed)?;
    let mut total = 0.0;
    let mut grads = grads;
    for k in 0..=extra_steps {
        let t_next = t + k + 1;
        if t_next > n_t {
            break;
        }
        let x = ctx.template.node_features(&case.wells, &ctx.norm, &input.pressure, &input.sat_w, &input.q_cells, ctx.dt)?;
        let graph = ctx.template.graph(&case.wells, x);
        let target = residual_target(role, &ctx.norm, case, t_next, &input);
        let roles = PairRoles {
            well: case.well.clone(),
            plume: case.sat_g[t_next].iter().map(|s| *s > loss.plume_threshold).collect(),
            first_step: t + k == 0,
        };
        let pred = match grads.as_deref_mut() {
            Some(acc) => {
                let mut tape = Tape::new();
                let out = net.forward(&mut tape, &graph).map_err(numerical)?;
                let l = pair_loss(&mut tape, &out, &target, &roles, loss, n_t, n_pairs).map_err(numerical)?;
                let value = tape.value(&l).item();
                if !value.is_finite() {
                    return Err(CoreError::Numerical(format!("training loss is {value}")));
                }
                total += value;
                let g = tape.backward(l)?.for_store(&net.store);
                for (a, gi) in acc.iter_mut().zip(&g) {
                    a.axpy(1.0, gi)?;
                }
                tape.value(&out).clone()
            }
            None => {
                let out = net.forward(&mut Eager, &graph)?;
                total += pair_loss(&mut Eager, &out, &target, &roles, loss, n_t, n_pairs)?.item();
                out
            }
        };
        input = advance(role, &ctx.norm, case, t_next, &input, &pred);
    }
    Ok(total)
}

/// Every `(case, step)` with a successor state.
pub fn training_pairs(cases: &[TrainingCase]) -> Vec<(usize, usize)> {
    cases.iter().enumerate().flat_map(|(i, c)| (0..c.n_t()).map(move |t| (i, t))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRun {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub extra_steps: usize,
    pub seed: u64,
}

fn noise_seed(seed: u64, epoch: usize, case: usize, t: usize) -> u64 {
    derive_seed(seed, "noise", ((epoch as u64) << 40) ^ ((case as u64) << 16) ^ t as u64)
}

/// Adam over shuffled batches; returns the mean batch loss of every epoch.
pub fn train_net(net: &mut SurrogateNet, ctx: &TrainContext, cases: &[TrainingCase], loss: &LossWeights, run: &StageRun) -> Result<Vec<f64>> {
    let mut pairs = training_pairs(cases);
    if pairs.is_empty() {
        return Err(CoreError::Missing("no training pairs".into()));
    }
    if run.batch_size == 0 {
        return Err(CoreError::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.seed, "shuffle", 0));
    let mut state = AdamState::new(&net.store);
    let adam = AdamConfig::with_lr(run.lr);
    let mut curve = Vec::with_capacity(run.epochs);
    for epoch in 0..run.epochs {
        pairs.shuffle(&mut rng);
        let t0 = Instant::now();
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in pairs.chunks(run.batch_size) {
            let mut grads: Vec<Tensor> = net.store.iter().map(|(_, _, t)| Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).expect("shape")).collect();
            for &(c, t) in batch {
                let seed = noise_seed(run.seed, epoch, c, t);
                sum += chain_objective(net, ctx, &cases[c], t, loss, run.extra_steps, batch.len(), seed, Some(&mut grads))?;
            }
            adam_step(&mut net.store, &grads, &mut state, &adam)?;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::info!("{:?} epoch {}/{}: loss {mean:.6e} ({:.1} s)", net.config.role, epoch + 1, run.epochs, t0.elapsed().as_secs_f64());
        curve.push(mean);
    }
    Ok(curve)
}

/// Mean single-step squared error of the primary channel, noise-free.
pub fn validation_mse(net: &SurrogateNet, ctx: &TrainContext, cases: &[TrainingCase]) -> Result<f64> {
    let plain = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, eta: 0.0, zeta: 0.0, sigma_p: 0.0, sigma_s: 0.0, plume_threshold: 1.0 };
    let pairs = training_pairs(cases);
    if pairs.is_empty() {
        return Err(CoreError::Missing("no validation pairs".into()));
    }
    let mut sum = 0.0;
    for &(c, t) in &pairs {
        sum += chain_objective(net, ctx, &cases[c], t, &plain, 0, 1, 0, None)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: String,
    pub role: NetRole,
    pub n_params: usize,
    pub validation_mse: f64,
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleLog {
    pub role: NetRole,
    pub candidate: String,
    pub stage2: Vec<f64>,
    pub stage3: Vec<f64>,
}

/// Outcome of [`run_training`]; `seconds` is the only non-deterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub p_range: (f64, f64),
    /// Stage-1 scores, best first within each role.
    pub stage1: Vec<CandidateScore>,
    pub roles: Vec<RoleLog>,
    pub bhp_curve: Vec<f64>,
    pub seconds: Vec<(String, f64)>,
}

pub const PRESSURE_CKPT: &str = "pressure.ckpt";
pub const SATURATION_CKPT: &str = "saturation.ckpt";
pub const BHP_CKPT: &str = "bhp.ckpt";

/// Trained artifacts under a training output directory.
pub struct Trained {
    pub pressure: SurrogateNet,
    pub saturation: SurrogateNet,
    pub bhp: BhpModel,
}

impl Trained {
    pub fn load(dir: &Path) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(CoreError::Missing(format!("{} (run train first)", p.display())))
            }
        };
        Ok(Self {
            pressure: SurrogateNet::load(&need(PRESSURE_CKPT)?)?,
            saturation: SurrogateNet::load(&need(SATURATION_CKPT)?)?,
            bhp: BhpModel::load(&need(BHP_CKPT)?)?,
        })
    }
}

fn new_net(setup: &NetSetup, norm: &FeatureNorm, seed: u64) -> Result<SurrogateNet> {
    SurrogateNet::new(setup.net.clone(), norm.clone(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Stage 1 for one role: every candidate trained on the leading cases and
/// scored on the held-out ones, best first.
pub fn stage1(
    cfg: &ExperimentConfig,
    ctx: &TrainContext,
    cases: &[TrainingCase],
    role: NetRole,
    dir: &Path,
) -> Result<Vec<(CandidateScore, SurrogateNet)>> {
    let s1 = &cfg.train.stage1;
    let n_fit = s1.cases - s1.validation;
    let (fit, held) = (&cases[..n_fit], &cases[n_fit..s1.cases]);
    let mut out = Vec::new();
    for cand in &s1.candidates {
        let setup = cand.setup(role);
        let tag = format!("stage1-{role:?}-{}", cand.name);
        let mut net = new_net(setup, &ctx.norm, derive_seed(cfg.seed, &tag, 0))?;
        let run = StageRun { epochs: s1.epochs, lr: s1.lr, batch_size: cfg.train.batch_size, extra_steps: 0, seed: derive_seed(cfg.seed, &tag, 1) };
        let curve = train_net(&mut net, ctx, fit, &setup.loss, &run)?;
        let validation_mse = validation_mse(&net, ctx, held)?;
        log::info!("stage 1 {role:?} `{}`: validation MSE {validation_mse:.6e}", cand.name);
        net.save(&dir.join(format!("stage1_{}_{}.ckpt", role_name(role), cand.name)))?;
        out.push((CandidateScore { candidate: cand.name.clone(), role, n_params: net.n_params(), validation_mse, curve }, net));
    }
    out.sort_by(|a, b| a.0.validation_mse.total_cmp(&b.0.validation_mse));
    Ok(out)
}

pub fn role_name(role: NetRole) -> &'static str {
    match role {
        NetRole::Pressure => "pressure",
        NetRole::Saturation => "saturation",
    }
}

/// All three stages for both networks plus the BHP model; checkpoints and
/// the log are written to `dir`.
pub fn run_training(cfg: &ExperimentConfig, grid: &GridModel, train: &[SnapshotSeries], dir: &Path) -> Result<TrainLog> {
    cfg.validate()?;
    if train.len() < cfg.train.stage1.cases {
        return Err(CoreError::Missing(format!("{} training cases, stage 1 needs {}", train.len(), cfg.train.stage1.cases)));
    }
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
    let norm = feature_norm(cfg, grid, train)?;
    let ctx = TrainContext::new(grid, norm.clone(), cfg.schedule.report_every);
    let cases: Vec<TrainingCase> = train.iter().map(|s| TrainingCase::new(grid, s)).collect();
    let mut log = TrainLog { p_range: (norm.p_min, norm.p_max), stage1: Vec::new(), roles: Vec::new(), bhp_curve: Vec::new(), seconds: Vec::new() };

    for role in [NetRole::Pressure, NetRole::Saturation] {
        let name = role_name(role);
        let t0 = Instant::now();
        let ranked = stage1(cfg, &ctx, &cases, role, dir)?;
        log.seconds.push((format!("stage1_{name}"), t0.elapsed().as_secs_f64()));
        let (best, mut net) = (ranked[0].0.clone(), ranked[0].1.clone());
        log.stage1.extend(ranked.into_iter().map(|(s, _)| s));
        let setup = cfg.train.stage1.candidates.iter().find(|c| c.name == best.candidate).expect("ranked candidate exists").setup(role).clone();

        let t0 = Instant::now();
        let s2 = &cfg.train.stage2;
        let run = StageRun { epochs: s2.epochs, lr: s2.lr, batch_size: cfg.train.batch_size, extra_steps: s2.extra_steps, seed: derive_seed(cfg.seed, &format!("stage2-{name}"), 0) };
        let stage2 = train_net(&mut net, &ctx, &cases, &setup.loss, &run)?;
        net.save(&dir.join(format!("stage2_{name}.ckpt")))?;
        log.seconds.push((format!("stage2_{name}"), t0.elapsed().as_secs_f64()));

        let t0 = Instant::now();
        let s3 = &cfg.train.stage3;
        let run = StageRun { epochs: s3.epochs, lr: s3.lr, batch_size: cfg.train.batch_size, extra_steps: s3.extra_steps, seed: derive_seed(cfg.seed, &format!("stage3-{name}"), 0) };
        let stage3 = train_net(&mut net, &ctx, &cases, &setup.loss, &run)?;
        net.save(&dir.join(match role {
            NetRole::Pressure => PRESSURE_CKPT,
            NetRole::Saturation => SATURATION_CKPT,
        }))?;
        log.seconds.push((format!("stage3_{name}"), t0.elapsed().as_secs_f64()));
        log.roles.push(RoleLog { role, candidate: best.candidate, stage2, stage3 });
    }

    let t0 = Instant::now();
    let data = build_bhp_dataset(grid, train, &norm, cfg.train.bhp.max_completions)?;
    let lo = data.targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bhp = BhpModel::new(cfg.train.bhp.clone(), norm, (lo, hi), derive_seed(cfg.seed, "bhp", 0))?;
    let bhp_train = crate::bhp::BhpTrainConfig { seed: derive_seed(cfg.seed, "bhp", 1), ..cfg.train.bhp_train.clone() };
    log.bhp_curve = bhp.train(&data, &bhp_train)?;
    bhp.save(&dir.join(BHP_CKPT))?;
    log.seconds.push(("bhp".into(), t0.elapsed().as_secs_f64()));
    Ok(log)
}

/// Writes the loss curves as `stage,role,candidate,epoch,loss` rows.
pub fn write_curves(log: &TrainLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::io(format!("writing {}", path.display()), e.into()))?;
    w.write_record(["stage", "role", "candidate", "epoch", "loss"]).map_err(|e| CoreError::io(format!("writing {}", path.display()), e.into()))?;
    let mut row = |stage: &str, role: &str, cand: &str, curve: &[f64]| -> Result<()> {
        for (e, l) in curve.iter().enumerate() {
            w.write_record([stage, role, cand, &(e + 1).to_string(), &format!("{l:e}")])
                .map_err(|e| CoreError::io(format!("writing {}", path.display()), e.into()))?;
        }
        Ok(())
    };
    for s in &log.stage1 {
        row("1", role_name(s.role), &s.candidate, &s.curve)?;
    }
    for r in &log.roles {
        row("2", role_name(r.role), &r.candidate, &r.stage2)?;
        row("3", role_name(r.role), &r.candidate, &r.stage3)?;
    }
    row("bhp", "bhp", "", &log.bhp_curve)?;
    w.flush().map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}
