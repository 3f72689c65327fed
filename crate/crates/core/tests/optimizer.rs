use co2gnsm::grid::{build_grid, GridSpec, Well, WellConfig};
use co2gnsm::optimizer::*;
use co2gnsm::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_placement() -> Placement {
    let g = build_grid(&GridSpec::desk(1)).unwrap();
    Placement::new(&g, 4, GeometryLimits::default()).unwrap()
}

/// Distance from `p` to segment `a-b`, closed form.
fn point_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let d: Vec<f64> = (0..3).map(|i| b[i] - a[i]).collect();
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let t = if dd == 0.0 { 0.0 } else { ((0..3).map(|i| (p[i] - a[i]) * d[i]).sum::<f64>() / dd).clamp(0.0, 1.0) };
    (0..3).map(|i| (p[i] - a[i] - t * d[i]).powi(2)).sum::<f64>().sqrt()
}

/// Segment distance by golden-section search over the first segment; the
/// distance to a convex set along a line is convex.
fn segment_oracle(p1: [f64; 3], q1: [f64; 3], p2: [f64; 3], q2: [f64; 3]) -> f64 {
    let at = |s: f64| [p1[0] + s * (q1[0] - p1[0]), p1[1] + s * (q1[1] - p1[1]), p1[2] + s * (q1[2] - p1[2])];
    let f = |s: f64| point_segment(at(s), p2, q2);
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b)).min(f(0.0)).min(f(1.0)).min(point_segment(p2, p1, q1)).min(point_segment(q2, p1, q1))
}

/// Every limit checked directly from the geometry.
fn satisfies_limits(u: &[f64], ext: [f64; 3], dz: f64) -> std::result::Result<(), String> {
    let l = GeometryLimits::default();
    let wells: Vec<([f64; 3], [f64; 3])> = u.chunks(6).map(|c| ([c[0], c[1], c[2]], [c[3], c[4], c[5]])).collect();
    for (w, (h, t)) in wells.iter().enumerate() {
        for p in [h, t] {
            if p[0] < l.min_boundary || p[0] > ext[0] - l.min_boundary || p[1] < l.min_boundary || p[1] > ext[1] - l.min_boundary {
                return Err(format!("well {w} too close to the boundary: {p:?}"));
            }
            if p[2] < 0.5 * dz || p[2] > ext[2] - 0.5 * dz {
                return Err(format!("well {w} outside the layers: {p:?}"));
            }
        }
        let len = ((h[0] - t[0]).powi(2) + (h[1] - t[1]).powi(2) + (h[2] - t[2]).powi(2)).sqrt();
        if len < l.min_len || len > l.max_len {
            return Err(format!("well {w} length {len}"));
        }
        if h[2] != t[2] {
            return Err(format!("well {w} not horizontal"));
        }
    }
    for a in 0..wells.len() {
        for b in a + 1..wells.len() {
            let d = segment_oracle(wells[a].0, wells[a].1, wells[b].0, wells[b].1);
            if d < l.min_interwell - 1e-9 {
                return Err(format!("wells {a} and {b} at {d} m"));
            }
        }
    }
    Ok(())
}

#[test]
fn table_limits_are_the_defaults() {
    let l = GeometryLimits::default();
    assert_eq!((l.max_len, l.min_len, l.min_interwell, l.min_boundary, l.max_dz), (1200.0, 480.0, 720.0, 424.0, 0.0));
    assert_eq!(P_ALLOW, 276.3);
    assert_eq!(FEASIBILITY_TOL, 1e-5);
    let d = DeConfig::default();
    assert_eq!((d.pop_size, d.max_iter, d.stall_iters, d.stall_rel), (24, 50, 20, 0.01));
}

#[test]
fn segment_distance_matches_search_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pt = || [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    for _ in 0..2000 {
        let (a, b, c, d) = (pt(), pt(), pt(), pt());
        let ours = segment_distance(a, b, c, d).0;
        let oracle = segment_oracle(a, b, c, d);
        assert!((ours - oracle).abs() < 1e-7, "{ours} vs {oracle}");
    }
    // Parallel and degenerate segments.
    assert!((segment_distance([0.0; 3], [1.0, 0.0, 0.0], [0.5, 2.0, 0.0], [3.0, 2.0, 0.0]).0 - 2.0).abs() < 1e-15);
    assert!((segment_distance([0.0; 3], [0.0; 3], [3.0, 4.0, 0.0], [3.0, 4.0, 0.0]).0 - 5.0).abs() < 1e-15);
}

#[test]
fn repair_on_random_vectors_is_feasible_and_idempotent() {
    let pl = desk_placement();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rejected = 0;
    for _ in 0..10_000 {
        let u = pl.random_vector(&mut rng);
        match pl.repair(&u) {
            Ok(v) => {
                satisfies_limits(&v, pl.extent, pl.dz).unwrap();
                assert!(pl.is_feasible(&v));
                assert_eq!(pl.repair(&v).unwrap(), v);
                assert_eq!(pl.repair(&u).unwrap(), v);
            }
            Err(_) => rejected += 1,
        }
    }
    assert_eq!(rejected, 0);
}

#[test]
fn feasible_input_is_a_fixed_point() {
    let pl = desk_placement();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let u = pl.sample_feasible(&mut rng);
        satisfies_limits(&u, pl.extent, pl.dz).unwrap();
        assert_eq!(pl.repair(&u).unwrap(), u);
    }
}

fn single_well(w: Well) -> (Placement, Vec<f64>) {
    let g = build_grid(&GridSpec::desk(1)).unwrap();
    let pl = Placement::new(&g, 1, GeometryLimits::default()).unwrap();
    (pl, WellConfig { wells: vec![w] }.to_vector())
}

#[test]
fn long_well_shrinks_about_its_midpoint() {
    let (pl, u) = single_well(Well { heel: [3000.0, 4000.0, 45.75], toe: [4300.0, 4000.0, 45.75] });
    let v = WellConfig::from_vector(&pl.repair(&u).unwrap()).unwrap().wells[0];
    assert!((v.length() - 1200.0).abs() < 1e-5, "{}", v.length());
    assert!(v.length() <= 1200.0);
    assert!((v.midpoint()[0] - 3650.0).abs() < 1e-9 && (v.midpoint()[1] - 4000.0).abs() < 1e-9);
    let (pl, u) = single_well(Well { heel: [3000.0, 4000.0, 45.75], toe: [3300.0, 4000.0, 45.75] });
    let v = WellConfig::from_vector(&pl.repair(&u).unwrap()).unwrap().wells[0];
    assert!((v.length() - 480.0).abs() < 1e-5 && v.length() >= 480.0);
}

#[test]
fn tilted_well_is_levelled_onto_a_layer_center() {
    let (pl, u) = single_well(Well { heel: [3000.0, 4000.0, 40.0], toe: [3800.0, 4000.0, 70.0] });
    let v = WellConfig::from_vector(&pl.repair(&u).unwrap()).unwrap().wells[0];
    // Mean depth 55 m snaps to the second layer center, 1.5 * 30.5 m.
    assert_eq!(v.heel[2], 45.75);
    assert_eq!(v.toe[2], 45.75);
    assert_eq!(pl.snap_z(91.0), 76.25);
    assert_eq!(pl.snap_z(500.0), 106.75);
}

#[test]
fn bad_placements_are_rejected() {
    let g = build_grid(&GridSpec::desk(1)).unwrap();
    assert!(Placement::new(&g, 0, GeometryLimits::default()).is_err());
    let tight = GeometryLimits { max_len: 9000.0, ..GeometryLimits::default() };
    assert!(Placement::new(&g, 4, tight).is_err());
    let pl = desk_placement();
    assert!(pl.repair(&[0.0; 5]).is_err());
    assert!(pl.repair(&[f64::NAN; 24]).is_err());
}

fn eq4_oracle(bhp: &[Vec<f64>], p_allow: f64) -> f64 {
    let mut m = bhp[0][0];
    for row in bhp {
        for &b in row {
            if b > m {
                m = b;
            }
        }
    }
    if m > p_allow {
        (m - p_allow) / p_allow
    } else {
        0.0
    }
}

#[test]
fn constraint_formulas() {
    assert_eq!(bhp_constraint(&[vec![250.0, 276.3], vec![270.0, 200.0]], P_ALLOW), 0.0);
    assert!((bhp_constraint(&[vec![250.0, 303.93]], P_ALLOW) - 0.1).abs() < 1e-12);
    assert_eq!(retention_constraint(5.0e9, 5.0e9), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let bhp: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(200.0..320.0)).collect()).collect();
        assert!((bhp_constraint(&bhp, P_ALLOW) - eq4_oracle(&bhp, P_ALLOW)).abs() <= 1e-12);
        let m_inj = rng.random_range(1e9..1e11);
        let m_ret = m_inj * rng.random_range(0.5..1.0);
        let oracle = 1.0 - m_ret / m_inj;
        assert!((retention_constraint(m_inj, m_ret) - oracle).abs() <= 1e-12);
    }
}

#[test]
fn selection_rules() {
    let f = |j, b, r| Score { j, c_bhp: b, c_ret: r };
    let tol = FEASIBILITY_TOL;
    assert!(f(0.9, 0.0, 0.0).preferred_over(&f(0.1, 0.01, 0.0), tol));
    assert!(f(0.2, 5e-6, 0.0).preferred_over(&f(0.3, 0.0, 0.0), tol));
    assert!(!f(0.4, 0.0, 0.0).preferred_over(&f(0.3, 0.0, 0.0), tol));
    assert!(f(0.9, 0.01, 0.01).preferred_over(&f(0.1, 0.02, 0.01), tol));
    // Incomparable violations: retention decides, then BHP.
    assert!(f(0.9, 0.5, 0.01).preferred_over(&f(0.1, 0.01, 0.02), tol));
    assert!(!f(0.1, 0.01, 0.02).preferred_over(&f(0.9, 0.5, 0.01), tol));
}

#[test]
fn filter_holds_only_non_dominated_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut filter = Filter::new(FEASIBILITY_TOL);
    let mut all = Vec::new();
    for i in 0..3000 {
        let c = |rng: &mut ChaCha8Rng| if rng.random_bool(0.4) { rng.random_range(0.0..1e-5) } else { rng.random_range(0.0..0.3) };
        let s = Score { j: (rng.random_range(0..40) as f64) / 40.0, c_bhp: c(&mut rng), c_ret: c(&mut rng) };
        filter.insert(&[i as f64], s);
        all.push(s);
    }
    let e = &filter.entries;
    for a in e {
        for b in e {
            assert!(!a.1.dominates(&b.1, FEASIBILITY_TOL));
        }
    }
    // Every point ever offered is kept or dominated by a kept entry.
    for s in &all {
        assert!(e.iter().any(|(_, f)| f == s || f.dominates(s, FEASIBILITY_TOL)));
    }
}

/// Unconstrained sphere in `d` dimensions on `[-5, 5]^d`.
struct Sphere(usize);

impl Problem for Sphere {
    fn dim(&self) -> usize {
        self.0
    }
    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.0).map(|_| rng.random_range(-5.0..5.0)).collect()
    }
    fn repair(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(u.iter().map(|v| v.clamp(-5.0, 5.0)).collect())
    }
    fn evaluate(&self, us: &[Vec<f64>]) -> Result<Vec<Score>> {
        Ok(us.iter().map(|u| Score { j: u.iter().map(|v| v * v).sum(), c_bhp: 0.0, c_ret: 0.0 }).collect())
    }
}

#[test]
fn de_solves_the_sphere() {
    let cfg = DeConfig { pop_size: 20, max_iter: 100, stall_iters: 0, ..DeConfig::default() };
    let r = differential_evolution(&Sphere(2), &cfg, 16).unwrap();
    assert_eq!(r.evaluations(), 2000);
    assert!(r.best.j < 1e-6, "{}", r.best.j);
    let best: Vec<f64> = r.iterations.iter().map(|i| i.best_feasible_j.unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    let again = differential_evolution(&Sphere(2), &cfg, 16).unwrap();
    assert_eq!(r, again);
    assert_ne!(r.history, differential_evolution(&Sphere(2), &cfg, 17).unwrap().history);
}

#[test]
fn identical_population_is_stationary() {
    let p = Sphere(3);
    let cfg = DeConfig { pop_size: 6, ..DeConfig::default() };
    let mut pop = vec![vec![1.0, -2.0, 0.5]; 6];
    let mut scores = p.evaluate(&pop).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..5 {
        let (trials, _) = de_step(&p, &mut pop, &mut scores, &cfg, &mut rng).unwrap();
        assert!(trials.iter().all(|t| t == &vec![1.0, -2.0, 0.5]));
        assert!(pop.iter().all(|t| t == &vec![1.0, -2.0, 0.5]));
    }
}

#[test]
fn stall_rule_stops_a_flat_problem() {
    struct Flat;
    impl Problem for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
            vec![rng.random(), rng.random()]
        }
        fn repair(&self, u: &[f64]) -> Result<Vec<f64>> {
            Ok(u.to_vec())
        }
        fn evaluate(&self, us: &[Vec<f64>]) -> Result<Vec<Score>> {
            Ok(us.iter().map(|_| Score { j: 1.0, c_bhp: 0.0, c_ret: 0.0 }).collect())
        }
    }
    let r = differential_evolution(&Flat, &DeConfig::default(), 19).unwrap();
    assert_eq!(r.stop, StopReason::Stalled);
    assert_eq!(r.iterations.len(), 21);
    assert_eq!(r.evaluations(), 21 * 24);
}

/// Cheap analytic stand-in for a flow evaluator: wells near the center are
/// compact, wells near the edge break the retention limit.
struct Toy(Placement);

impl Problem for Toy {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.0.random_vector(rng)
    }
    fn repair(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.0.repair(u)
    }
    fn evaluate(&self, us: &[Vec<f64>]) -> Result<Vec<Score>> {
        let c = [0.5 * self.0.extent[0], 0.5 * self.0.extent[1]];
        Ok(us
            .iter()
            .map(|u| {
                let w = WellConfig::from_vector(u).unwrap();
                let r: Vec<f64> = w.wells.iter().map(|w| (w.midpoint()[0] - c[0]).hypot(w.midpoint()[1] - c[1])).collect();
                let far = r.iter().copied().fold(0.0, f64::max);
                Score { j: r.iter().sum::<f64>() / 1e4, c_bhp: (w.wells[0].heel[2] - 60.0).max(0.0) / 1e3, c_ret: (far - 2500.0).max(0.0) / 1e4 }
            })
            .collect())
    }
}

#[test]
fn placement_search_respects_caps_and_elitism() {
    let toy = Toy(desk_placement());
    let r = differential_evolution(&toy, &DeConfig::default(), 20).unwrap();
    assert!(r.evaluations() <= 1200);
    assert!(r.iterations.len() <= 50);
    let best: Vec<Option<f64>> = r.iterations.iter().map(|i| i.best_feasible_j).collect();
    for w in best.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            assert!(b <= a);
        } else {
            assert!(w[1].is_some() || w[0].is_none());
        }
    }
    assert!(r.best.is_feasible(FEASIBILITY_TOL));
    assert!(r.history.iter().all(|e| toy.0.is_feasible(&e.u)));
    let rs = random_search(&toy, r.evaluations(), 24, FEASIBILITY_TOL, 21).unwrap();
    assert_eq!(rs.evaluations(), r.evaluations());
    assert!(r.best.j <= rs.best.j);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn repair_is_a_projection(seed in any::<u64>(), scale in 0.5f64..3.0) {
        let pl = desk_placement();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = pl.axis_bounds();
        // Draws around the bounds box exercise clamping as well.
        let u: Vec<f64> = (0..pl.dim()).map(|i| {
            let (lo, hi) = b[i % 3];
            let mid = 0.5 * (lo + hi);
            mid + scale * rng.random_range(-0.5..0.5) * (hi - lo)
        }).collect();
        if let Ok(v) = pl.repair(&u) {
            prop_assert!(satisfies_limits(&v, pl.extent, pl.dz).is_ok());
            prop_assert_eq!(pl.repair(&v).unwrap(), v);
        }
    }

    #[test]
    fn dominance_is_a_strict_order(a in prop::array::uniform3(0.0f64..1.0), b in prop::array::uniform3(0.0f64..1.0), c in prop::array::uniform3(0.0f64..1.0)) {
        let s = |v: [f64; 3]| Score { j: v[0], c_bhp: v[1], c_ret: v[2] };
        let (a, b, c) = (s(a), s(b), s(c));
        prop_assert!(!a.dominates(&a, FEASIBILITY_TOL));
        prop_assert!(!(a.dominates(&b, FEASIBILITY_TOL) && b.dominates(&a, FEASIBILITY_TOL)));
        if a.dominates(&b, FEASIBILITY_TOL) && b.dominates(&c, FEASIBILITY_TOL) {
            prop_assert!(a.dominates(&c, FEASIBILITY_TOL));
        }
    }
}
