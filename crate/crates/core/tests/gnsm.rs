use std::sync::Arc;

use co2gnsm::fluid::FluidModel;
use co2gnsm::gnsm::*;
use co2gnsm::graph::{build_graph, FeatureNorm, FlowGraph, NodeType, NODE_DIM};
use co2gnsm::grid::{build_grid, complete_wells, GridModel, GridSpec, Well, WellConfig, DEFAULT_WELL_RADIUS};
use co2gnsm::refsim::Schedule;
use diffcore::gradcheck::{check_entries, pick_entries};
use diffcore::{mlp_forward, Activation, Eager, Reduce, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cube() -> GridModel {
    build_grid(&GridSpec::homogeneous(3, 3, 3, [10.0, 10.0, 10.0], 100.0, 0.2)).unwrap()
}

fn norm_for(grid: &GridModel) -> FeatureNorm {
    FeatureNorm::new(grid, (150.0, 250.0), 0.5, 2.0, DEFAULT_WELL_RADIUS).unwrap()
}

fn small(role: NetRole, n_msg: usize) -> NetConfig {
    let base = match role {
        NetRole::Pressure => NetConfig::pressure(),
        NetRole::Saturation => NetConfig::saturation(),
    };
    NetConfig { hidden: 16, latent: 16, n_msg, norm_groups: 4, ..base }
}

fn net(config: NetConfig, grid: &GridModel, seed: u64) -> SurrogateNet {
    SurrogateNet::new(config, norm_for(grid), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Cube graph with one well along x through the centre row and random states.
fn cube_graph(grid: &GridModel, seed: u64) -> FlowGraph {
    let wells = WellConfig { wells: vec![Well { heel: [1.0, 15.0, 15.0], toe: [29.0, 15.0, 15.0] }] };
    let comps = complete_wells(grid, &wells, DEFAULT_WELL_RADIUS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n_cells();
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(150.0..250.0)).collect();
    let sw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let q: Vec<f64> = comps.iter().map(|_| rng.random_range(0.1..0.2)).collect();
    build_graph(grid, &comps, &p, &sw, &q, 2.0, &norm_for(grid)).unwrap()
}

fn zero_params(net: &mut SurrogateNet, prefix: &str) {
    let ids: Vec<_> = net.store.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(id, _, _)| id).collect();
    assert!(!ids.is_empty());
    for id in ids {
        net.store.get_mut(id).data_mut().fill(0.0);
    }
}

#[test]
fn chosen_configs() {
    let p = NetConfig::pressure();
    assert_eq!((p.hidden, p.hidden_layers, p.latent, p.n_msg), (128, 2, 32, 15));
    assert_eq!((p.message, p.aggregation, p.activation), (MessageType::AllInfo, Reduce::Sum, Activation::LeakyRelu));
    assert_eq!(p.norm, NormPlacement::None);
    let s = NetConfig::saturation();
    assert_eq!((s.n_msg, s.norm, s.out_dim()), (10, NormPlacement::Mlp, 2));
    assert_eq!(LossWeights::pressure().sigma_p, 0.03);
    assert_eq!(LossWeights::saturation().sigma_s, 0.01);
    let w = LossWeights::pressure();
    assert_eq!((w.alpha, w.beta, w.gamma, w.eta, w.zeta, w.plume_threshold), (0.1, 0.1, 0.1, 0.3, 0.3, 0.1));
}

#[test]
fn invalid_configs_rejected() {
    let g = cube();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [
        NetConfig { n_msg: 0, ..NetConfig::pressure() },
        NetConfig { n_msg: 16, ..NetConfig::pressure() },
        NetConfig { latent: 24, ..NetConfig::pressure() },
        NetConfig { norm: NormPlacement::Processor, norm_groups: 5, ..NetConfig::pressure() },
    ] {
        assert!(SurrogateNet::new(cfg, norm_for(&g), &mut rng).is_err());
    }
}

#[test]
fn encoder_latent_size_and_zero_encoder() {
    let g = cube();
    let graph = cube_graph(&g, 1);
    let mut n = net(NetConfig::pressure(), &g, 2);
    let h = n.encode_nodes(&mut Eager, &graph.node_features).unwrap();
    assert_eq!((h.rows(), h.cols()), (27, 32));
    let e = mlp_forward(&mut Eager, &n.store, &n.edge_encoder, &graph.edge_features).unwrap();
    assert_eq!((e.rows(), e.cols()), (graph.n_edges(), 32));
    zero_params(&mut n, "enc_node");
    let h = n.encode_nodes(&mut Eager, &graph.node_features).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn feature_dim_mismatch_rejected() {
    let g = cube();
    let mut graph = cube_graph(&g, 1);
    graph.node_features = Tensor::zeros(27, NODE_DIM - 1);
    assert!(net(small(NetRole::Pressure, 2), &g, 0).forward(&mut Eager, &graph).is_err());
}

fn permuted(graph: &FlowGraph, perm: &[usize], edge_perm: &[usize]) -> FlowGraph {
    let n = graph.n_nodes();
    let cols = graph.node_features.cols();
    let mut x = Tensor::zeros(n, cols);
    for i in 0..n {
        for c in 0..cols {
            x.set(perm[i], c, graph.node_features.get(i, c));
        }
    }
    let ec = graph.edge_features.cols();
    let mut ef = Tensor::zeros(edge_perm.len(), ec);
    let (mut s, mut r) = (vec![0; edge_perm.len()], vec![0; edge_perm.len()]);
    for (new, &old) in edge_perm.iter().enumerate() {
        for c in 0..ec {
            ef.set(new, c, graph.edge_features.get(old, c));
        }
        s[new] = perm[graph.senders[old]];
        r[new] = perm[graph.receivers[old]];
    }
    let mut types = vec![NodeType::Interior; n];
    for i in 0..n {
        types[perm[i]] = graph.node_type[i];
    }
    FlowGraph {
        node_features: x,
        edge_features: Arc::new(ef),
        senders: s.into(),
        receivers: r.into(),
        node_type: types.into(),
    }
}

#[test]
fn permutation_equivariance() {
    let g = cube();
    let graph = cube_graph(&g, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (cfg, seed) in [
        (small(NetRole::Pressure, 3), 5),
        (NetConfig { aggregation: Reduce::Mean, ..small(NetRole::Saturation, 3) }, 6),
        (NetConfig { aggregation: Reduce::Max, norm: NormPlacement::Processor, ..small(NetRole::Pressure, 3) }, 7),
        (NetConfig { message: MessageType::Reduced, ..small(NetRole::Saturation, 2) }, 8),
    ] {
        let n = net(cfg, &g, seed);
        let mut perm: Vec<usize> = (0..27).collect();
        perm.shuffle(&mut rng);
        let mut edge_perm: Vec<usize> = (0..graph.n_edges()).collect();
        edge_perm.shuffle(&mut rng);
        let y = n.forward(&mut Eager, &graph).unwrap();
        let yp = n.forward(&mut Eager, &permuted(&graph, &perm, &edge_perm)).unwrap();
        for i in 0..27 {
            for c in 0..y.cols() {
                let d = (y.get(i, c) - yp.get(perm[i], c)).abs();
                assert!(d <= 1e-12, "node {i} channel {c}: {d}");
            }
        }
    }
}

fn hops(g: &GridModel, a: usize, b: usize) -> usize {
    let (i, j, k) = g.ijk(a);
    let (x, y, z) = g.ijk(b);
    i.abs_diff(x) + j.abs_diff(y) + k.abs_diff(z)
}

#[test]
fn two_rounds_see_two_hops() {
    let g = cube();
    let graph = cube_graph(&g, 9);
    let n = net(small(NetRole::Pressure, 2), &g, 10);
    let node = 18;
    let base = n.forward(&mut Eager, &graph).unwrap().get(node, 0);
    let far: Vec<usize> = (0..27).filter(|&c| hops(&g, node, c) > 2).collect();
    assert!(!far.is_empty());
    let mut moved = graph.clone();
    for &c in &far {
        for col in 0..NODE_DIM {
            moved.node_features.set(c, col, moved.node_features.get(c, col) + 3.0);
        }
    }
    assert_eq!(n.forward(&mut Eager, &moved).unwrap().get(node, 0), base);
    for c in (0..27).filter(|&c| hops(&g, node, c) == 2) {
        let mut near = graph.clone();
        near.node_features.set(c, 0, near.node_features.get(c, 0) + 3.0);
        assert_ne!(n.forward(&mut Eager, &near).unwrap().get(node, 0), base, "hop-2 node {c}");
    }
}

#[test]
fn zero_update_keeps_latents() {
    let g = cube();
    let graph = cube_graph(&g, 11);
    let mut n = net(small(NetRole::Pressure, 3), &g, 12);
    for b in 0..3 {
        n.blocks[b].update.zero_output(&mut n.store);
    }
    let ex = &mut Eager;
    let h = n.encode_nodes(ex, &graph.node_features).unwrap();
    let edges = n.edge_terms(ex, &graph.edge_features).unwrap();
    let out = n.message_pass(ex, &graph, &edges, h.clone(), 3).unwrap();
    assert_eq!(out, h);
}

/// Path graph 0 - 1 - 2; node 1 receives two different messages.
fn path_graph() -> FlowGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    FlowGraph {
        node_features: Tensor::randn(3, NODE_DIM, 1.0, &mut rng),
        edge_features: Arc::new(Tensor::randn(4, 5, 1.0, &mut rng)),
        senders: vec![0, 1, 1, 2].into(),
        receivers: vec![1, 0, 2, 1].into(),
        node_type: vec![NodeType::Interior; 3].into(),
    }
}

#[test]
fn sum_and_mean_match_hand_aggregation() {
    let g = cube();
    let graph = path_graph();
    let ex = &mut Eager;
    let mut results = Vec::new();
    for agg in [Reduce::Sum, Reduce::Mean] {
        let n = net(NetConfig { aggregation: agg, ..small(NetRole::Pressure, 1) }, &g, 14);
        let h = n.encode_nodes(ex, &graph.node_features).unwrap();
        let e = mlp_forward(ex, &n.store, &n.edge_encoder, &graph.edge_features).unwrap();
        let msg = |dst: usize, src: usize, edge: usize| {
            let (hd, hs) = (h.row_slice(dst), h.row_slice(src));
            let mut row = Vec::new();
            row.extend_from_slice(hd);
            row.extend_from_slice(hs);
            row.extend(hd.iter().zip(hs).map(|(a, b)| a - b));
            row.extend_from_slice(e.row_slice(edge));
            let x = Tensor::from_rows(1, row.len(), row).unwrap();
            mlp_forward(&mut Eager, &n.store, &n.blocks[0].message, &x).unwrap()
        };
        let (m01, m21) = (msg(1, 0, 0), msg(1, 2, 3));
        assert!(m01.data().iter().zip(m21.data()).any(|(a, b)| a != b));
        let scale = if agg == Reduce::Mean { 0.5 } else { 1.0 };
        let agg_row: Vec<f64> = m01.data().iter().zip(m21.data()).map(|(a, b)| (a + b) * scale).collect();
        let mut upd_in = h.row_slice(1).to_vec();
        upd_in.extend(agg_row);
        let u = mlp_forward(&mut Eager, &n.store, &n.blocks[0].update, &Tensor::from_rows(1, 32, upd_in).unwrap()).unwrap();
        let expect: Vec<f64> = h.row_slice(1).iter().zip(u.data()).map(|(a, b)| a + b).collect();
        let edges = n.edge_terms(ex, &graph.edge_features).unwrap();
        let got = n.message_pass(ex, &graph, &edges, h.clone(), 1).unwrap();
        for (a, b) in got.row_slice(1).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{agg:?}: {a} vs {b}");
        }
        results.push(got.row_slice(1).to_vec());
    }
    assert_ne!(results[0], results[1]);
}

fn desk_setup() -> (GridModel, FluidModel, WellConfig, Schedule) {
    let g = build_grid(&GridSpec::desk(3)).unwrap();
    let wells = WellConfig {
        wells: vec![
            Well { heel: [2000.0, 2000.0, 61.0], toe: [3000.0, 2000.0, 61.0] },
            Well { heel: [6000.0, 6000.0, 30.0], toe: [6000.0, 6900.0, 30.0] },
        ],
    };
    (g, FluidModel::default(), wells, Schedule::default())
}

#[test]
fn zero_decoder_rollout_is_constant() {
    let (g, fluids, wells, sched) = desk_setup();
    let mut p = net(small(NetRole::Pressure, 2), &g, 15);
    let mut s = net(small(NetRole::Saturation, 2), &g, 16);
    p.zero_decoder();
    s.zero_decoder();
    let r = rollout(&p, &s, &g, &fluids, &wells, &sched, DEFAULT_WELL_RADIUS).unwrap();
    assert_eq!(r.pressure.len(), 10);
    assert_eq!(r.times, (1..=10).map(|k| 2.0 * k as f64).collect::<Vec<_>>());
    let comps = complete_wells(&g, &wells, DEFAULT_WELL_RADIUS).unwrap();
    let ctx = RolloutContext::new(&p, &s, &g, comps.clone(), 2.0).unwrap();
    let init = initial_state(&g, &fluids, &ctx.wells, sched.rate_per_well, &comps);
    assert_eq!(predict_step(&p, &s, &ctx, &init).unwrap(), init);
    for t in 0..10 {
        assert_eq!(r.pressure[t], init.pressure);
        assert!(r.saturation_g[t].iter().all(|&v| v == 0.0));
        assert_eq!(r.q_perf[t], r.q_perf[0]);
    }
    for w in 0..2 {
        let q: f64 = comps.iter().zip(&r.q_perf[0]).filter(|(c, _)| c.well == w).map(|(_, q)| q).sum();
        assert!((q - 0.5).abs() < 1e-12);
    }
}

#[test]
fn rollout_is_deterministic_and_clamped() {
    let (g, fluids, wells, sched) = desk_setup();
    let p = net(small(NetRole::Pressure, 2), &g, 17);
    let s = net(small(NetRole::Saturation, 2), &g, 18);
    let a = rollout(&p, &s, &g, &fluids, &wells, &sched, DEFAULT_WELL_RADIUS).unwrap();
    let b = rollout(&p, &s, &g, &fluids, &wells, &sched, DEFAULT_WELL_RADIUS).unwrap();
    assert_eq!((a.pressure.clone(), a.saturation_g.clone(), a.q_perf.clone()), (b.pressure, b.saturation_g, b.q_perf));
    assert!(a.saturation_g.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.step_seconds.len(), 10);
}

#[test]
fn rollout_refuses_mismatched_nets() {
    let (g, fluids, wells, sched) = desk_setup();
    let p = net(small(NetRole::Pressure, 2), &g, 1);
    let mut s = net(small(NetRole::Saturation, 2), &g, 2);
    assert!(rollout(&s, &p, &g, &fluids, &wells, &sched, DEFAULT_WELL_RADIUS).is_err());
    s.schema += 1;
    assert!(rollout(&p, &s, &g, &fluids, &wells, &sched, DEFAULT_WELL_RADIUS).is_err());
}

#[test]
fn checkpoint_round_trip_and_schema_guard() {
    let g = cube();
    let graph = cube_graph(&g, 19);
    let n = net(small(NetRole::Saturation, 3), &g, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sat.ckpt");
    n.save(&path).unwrap();
    let back = SurrogateNet::load(&path).unwrap();
    assert_eq!(back.config, n.config);
    assert_eq!(back.norm, n.norm);
    assert_eq!(back.forward(&mut Eager, &graph).unwrap(), n.forward(&mut Eager, &graph).unwrap());
    let mut stale = n.clone();
    stale.schema += 1;
    stale.save(&path).unwrap();
    assert!(SurrogateNet::load(&path).is_err());
}

#[test]
fn normalization_round_trip() {
    let norm = norm_for(&cube());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let p = rng.random_range(100.0..400.0);
        assert!((norm.denorm_p(norm.norm_p(p)) - p).abs() <= 1e-12 * p);
        let q = rng.random_range(0.0..1.0);
        assert!((norm.denorm_q(norm.norm_q(q)) - q).abs() <= 1e-12);
    }
    assert_eq!(norm.norm_p(150.0), 0.0);
    assert_eq!(norm.norm_p(250.0), 1.0);
}

/// Straight-line evaluation of the training loss over a full set of samples and
/// steps. `pred[i][k][c][ch]`, `well[i][c]`, `plume[i][k][c]`.
#[allow(clippy::too_many_arguments)]
fn loss_oracle(
    pred: &[Vec<Vec<Vec<f64>>>],
    truth: &[Vec<Vec<Vec<f64>>>],
    well: &[Vec<bool>],
    plume: &[Vec<Vec<bool>>],
    w: &LossWeights,
) -> f64 {
    let n_s = pred.len();
    let n_t = pred[0].len();
    let n_c = pred[0][0].len();
    let chans = pred[0][0][0].len();
    let mut global_sq = 0.0;
    let mut global_abs = 0.0;
    let mut first = 0.0;
    let mut well_sq = 0.0;
    let mut well_abs = 0.0;
    let mut plume_sq = 0.0;
    for i in 0..n_s {
        let n_w = well[i].iter().filter(|b| **b).count() as f64;
        for k in 0..n_t {
            let n_p = plume[i][k].iter().filter(|b| **b).count() as f64;
            for c in 0..n_c {
                let d0 = pred[i][k][c][0] - truth[i][k][c][0];
                global_sq += d0 * d0 / n_c as f64;
                global_abs += d0.abs() / n_c as f64;
                if k == 0 {
                    first += d0 * d0 / n_c as f64;
                }
                if plume[i][k][c] {
                    plume_sq += d0 * d0 / n_p;
                }
                if well[i][c] {
                    for ch in 0..chans {
                        let d = pred[i][k][c][ch] - truth[i][k][c][ch];
                        well_sq += d * d / n_w;
                        well_abs += d.abs() / n_w;
                    }
                }
            }
        }
    }
    let st = (n_s * n_t) as f64;
    (global_sq + w.alpha * global_abs) / st
        + w.gamma * (well_sq + w.beta * well_abs) / st
        + w.eta * first / n_s as f64
        + w.zeta * plume_sq / st
}

#[test]
fn loss_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (n_s, n_t, n_c) = (3, 4, 12);
    let w = LossWeights { alpha: 0.3, beta: 0.7, gamma: 0.2, eta: 0.5, zeta: 0.4, ..LossWeights::saturation() };
    for chans in [1, 2] {
        let field = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<Vec<f64>>>> {
            (0..n_s)
                .map(|_| (0..n_t).map(|_| (0..n_c).map(|_| (0..chans).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).collect())
                .collect()
        };
        let pred = field(&mut rng);
        let truth = field(&mut rng);
        let well: Vec<Vec<bool>> = (0..n_s).map(|_| (0..n_c).map(|c| c % 5 == 1).collect()).collect();
        // Sample 0 has no plume at its first step.
        let plume: Vec<Vec<Vec<bool>>> = (0..n_s)
            .map(|i| (0..n_t).map(|k| (0..n_c).map(|_| !(i == 0 && k == 0) && rng.random_bool(0.4)).collect()).collect())
            .collect();
        let mut ours = 0.0;
        for i in 0..n_s {
            for k in 0..n_t {
                let flat = |f: &Vec<Vec<Vec<Vec<f64>>>>| Tensor::from_rows(n_c, chans, f[i][k].concat()).unwrap();
                let roles = PairRoles { well: well[i].clone(), plume: plume[i][k].clone(), first_step: k == 0 };
                let x = flat(&pred);
                ours += pair_loss(&mut Eager, &x, &flat(&truth), &roles, &w, n_t, n_s * n_t).unwrap().item();
            }
        }
        let oracle = loss_oracle(&pred, &truth, &well, &plume, &w);
        assert!((ours - oracle).abs() <= 1e-12 * oracle.max(1.0), "{chans} channels: {ours} vs {oracle}");
    }
}

#[test]
fn loss_reduces_to_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 40;
    let x = Tensor::randn(n, 1, 1.0, &mut rng);
    let y = Tensor::randn(n, 1, 1.0, &mut rng);
    let w = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, eta: 0.0, zeta: 0.0, ..LossWeights::pressure() };
    let roles = PairRoles { well: (0..n).map(|c| c < 3).collect(), plume: vec![true; n], first_step: true };
    let l = pair_loss(&mut Eager, &x, &y, &roles, &w, 1, 1).unwrap().item();
    let mse: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    assert!((l - mse).abs() < 1e-14);
    let full = LossWeights::pressure();
    assert_eq!(pair_loss(&mut Eager, &x, &x, &roles, &full, 10, 4).unwrap().item(), 0.0);
}

#[test]
fn noise_statistics() {
    let n = 1_000_000;
    let zeros = vec![0.0; n];
    let (p, s) = perturb(&zeros, &zeros, 0.03, 0.01, 24).unwrap();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    assert!((var(&p) / 0.03f64.powi(2) - 1.0).abs() < 0.01);
    assert!((var(&s) / 0.01f64.powi(2) - 1.0).abs() < 0.01);
    let base: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
    assert_eq!(perturb(&base, &base, 0.0, 0.0, 1).unwrap(), (base.clone(), base.clone()));
    assert_eq!(perturb(&base, &base, 0.05, 0.05, 7).unwrap(), perturb(&base, &base, 0.05, 0.05, 7).unwrap());
    assert_ne!(perturb(&base, &base, 0.05, 0.05, 7).unwrap(), perturb(&base, &base, 0.05, 0.05, 8).unwrap());
    assert!(perturb(&base, &base, -0.1, 0.0, 1).is_err());
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let g = cube();
    let graph = cube_graph(&g, 25);
    for cfg in [
        small(NetRole::Saturation, 2),
        NetConfig { norm: NormPlacement::Processor, activation: Activation::Elu, ..small(NetRole::Pressure, 2) },
    ] {
        let mut n = net(cfg, &g, 26);
        let chans = n.config.out_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let target = Tensor::randn(27, chans, 0.1, &mut rng);
        let roles = PairRoles {
            well: graph.node_type.iter().map(|t| *t == NodeType::Well).collect(),
            plume: (0..27).map(|c| c % 3 == 0).collect(),
            first_step: true,
        };
        let w = LossWeights::saturation();
        let mut tape = Tape::new();
        let out = n.forward(&mut tape, &graph).unwrap();
        let loss = pair_loss(&mut tape, &out, &target, &roles, &w, 10, 2).unwrap();
        let grads = tape.backward(loss).unwrap().for_store(&n.store);
        let entries = pick_entries(&n.store, 20, &mut rng);
        let probe = n.clone();
        let report = check_entries(&mut n.store, &grads, &entries, 1e-6, |s| {
            let mut m = probe.clone();
            m.store.load_from(s).unwrap();
            let out = m.forward(&mut Eager, &graph).unwrap();
            pair_loss(&mut Eager, &out, &target, &roles, &w, 10, 2).unwrap().item()
        });
        assert_eq!(report.probes.len(), 20);
        assert!(report.max_rel_err() < 1e-5, "{:?}", report.worst());
    }
}

#[test]
fn well_mask_marks_well_nodes() {
    let g = cube();
    let graph = cube_graph(&g, 28);
    let m = well_mask(&graph.node_type);
    assert_eq!(m.iter().filter(|b| **b).count(), 3);
    assert!(m[g.idx(0, 1, 1)] && m[g.idx(1, 1, 1)] && m[g.idx(2, 1, 1)]);
}
