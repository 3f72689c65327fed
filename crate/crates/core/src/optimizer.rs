//! Well placement by constrained differential evolution.
//!
//! Geometric limits are enforced by repair before every evaluation; BHP and
//! retention limits are handled by feasibility-first selection and a filter of
//! non-dominated `(J, C_bhp, C_ret)` triples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bhp::BhpModel;
use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::gnsm::{rollout, SurrogateNet};
use crate::grid::{GridModel, Well, WellConfig};
use crate::pipeline::metrics::footprint;
use crate::refsim::{gas_mass, simulate, Schedule, SimOptions};

/// Allowed bottom-hole pressure (bar).
pub const P_ALLOW: f64 = 276.3;
/// Constraint values at or below this count as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-5;
/// Repair aims this far (m) inside length limits so the result passes exact checks.
const LENGTH_MARGIN: f64 = 1e-6;
/// Extra separation (m) added when pushing two wells apart.
const PUSH_MARGIN: f64 = 0.5;
pub const MAX_REPAIR_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryLimits {
    pub max_len: f64,
    pub min_len: f64,
    pub min_interwell: f64,
    pub min_boundary: f64,
    pub max_dz: f64,
}

impl Default for GeometryLimits {
    fn default() -> Self {
        Self { max_len: 1200.0, min_len: 480.0, min_interwell: 720.0, min_boundary: 424.0, max_dz: 0.0 }
    }
}

/// Closest points between segments `p1-q1` and `p2-q2`: `(distance, c1, c2)`.
pub fn segment_distance(p1: [f64; 3], q1: [f64; 3], p2: [f64; 3], q2: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let at = |p: [f64; 3], d: [f64; 3], t: f64| [p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]];
    let (d1, d2, r) = (sub(q1, p1), sub(q2, p2), sub(p1, p2));
    let (a, e, f) = (dot(d1, d1), dot(d2, d2), dot(d2, r));
    const EPS: f64 = 1e-18;
    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = dot(d1, r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let (c1, c2) = (at(p1, d1, s), at(p2, d2, t));
    let d = sub(c1, c2);
    (dot(d, d).sqrt(), c1, c2)
}

/// Geometry of the decision space: heel and toe coordinates of every well in
/// the aquifer frame, with the well-placement limits.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub n_wells: usize,
    pub extent: [f64; 3],
    pub dz: f64,
    pub nz: usize,
    pub limits: GeometryLimits,
}

impl Placement {
    pub fn new(grid: &GridModel, n_wells: usize, limits: GeometryLimits) -> Result<Self> {
        let extent = grid.aquifer_extent();
        let free = (extent[0] - 2.0 * limits.min_boundary).min(extent[1] - 2.0 * limits.min_boundary);
        if n_wells == 0 || !(limits.min_len > 0.0) || limits.min_len > limits.max_len || free < limits.max_len {
            return Err(CoreError::Config(format!(
                "well limits {limits:?} do not fit {n_wells} wells into a {:.0} x {:.0} m aquifer",
                extent[0], extent[1]
            )));
        }
        Ok(Self { n_wells, extent, dz: grid.dz, nz: grid.aquifer_box.dims()[2], limits })
    }

    pub fn dim(&self) -> usize {
        6 * self.n_wells
    }

    /// Bounds of x, y and z.
    pub fn axis_bounds(&self) -> [(f64, f64); 3] {
        let b = self.limits.min_boundary;
        [(b, self.extent[0] - b), (b, self.extent[1] - b), (0.5 * self.dz, self.extent[2] - 0.5 * self.dz)]
    }

    /// Nearest layer center to `z`.
    pub fn snap_z(&self, z: f64) -> f64 {
        let k = ((z - 0.5 * self.dz) / self.dz).round().clamp(0.0, (self.nz - 1) as f64);
        (k + 0.5) * self.dz
    }

    /// Every violated limit, checked exactly.
    pub fn violations(&self, u: &[f64]) -> Vec<String> {
        let mut out = Vec::new();
        let Ok(cfg) = WellConfig::from_vector(u) else {
            return vec![format!("decision vector has length {}", u.len())];
        };
        if cfg.n_wells() != self.n_wells {
            out.push(format!("{} wells, expected {}", cfg.n_wells(), self.n_wells));
        }
        let bounds = self.axis_bounds();
        let l = &self.limits;
        for (w, well) in cfg.wells.iter().enumerate() {
            for p in [well.heel, well.toe] {
                for (ax, (lo, hi)) in bounds.iter().enumerate() {
                    if !(p[ax] >= *lo && p[ax] <= *hi) {
                        out.push(format!("well {w}: coordinate {ax} = {} outside [{lo}, {hi}]", p[ax]));
                    }
                }
            }
            let len = well.length();
            if !(len >= l.min_len && len <= l.max_len) {
                out.push(format!("well {w}: length {len} outside [{}, {}]", l.min_len, l.max_len));
            }
            if !((well.heel[2] - well.toe[2]).abs() <= l.max_dz) {
                out.push(format!("well {w}: heel-toe depth difference {}", (well.heel[2] - well.toe[2]).abs()));
            }
        }
        for a in 0..cfg.n_wells() {
            for b in a + 1..cfg.n_wells() {
                let (wa, wb) = (&cfg.wells[a], &cfg.wells[b]);
                let d = segment_distance(wa.heel, wa.toe, wb.heel, wb.toe).0;
                if !(d >= l.min_interwell) {
                    out.push(format!("wells {a} and {b}: distance {d} below {}", l.min_interwell));
                }
            }
        }
        out
    }

    pub fn is_feasible(&self, u: &[f64]) -> bool {
        self.violations(u).is_empty()
    }

    /// Translates a well in x-y so both ends lie within bounds, then clamps.
    fn shift_inside(&self, w: &mut Well) {
        let bounds = self.axis_bounds();
        for (ax, &(lo, hi)) in bounds.iter().enumerate().take(2) {
            let (a, b) = (w.heel[ax].min(w.toe[ax]), w.heel[ax].max(w.toe[ax]));
            let shift = if a < lo {
                lo - a
            } else if b > hi {
                hi - b
            } else {
                0.0
            };
            w.heel[ax] = (w.heel[ax] + shift).clamp(lo, hi);
            w.toe[ax] = (w.toe[ax] + shift).clamp(lo, hi);
        }
    }

    fn repair_well(&self, w: &mut Well) {
        let bounds = self.axis_bounds();
        for p in [&mut w.heel, &mut w.toe] {
            for (ax, &(lo, hi)) in bounds.iter().enumerate() {
                p[ax] = p[ax].clamp(lo, hi);
            }
        }
        if !((w.heel[2] - w.toe[2]).abs() <= self.limits.max_dz) {
            let z = self.snap_z(0.5 * (w.heel[2] + w.toe[2]));
            w.heel[2] = z;
            w.toe[2] = z;
        }
        let l = &self.limits;
        let len = w.length();
        if !(len >= l.min_len && len <= l.max_len) {
            let target = if len > l.max_len { l.max_len - LENGTH_MARGIN } else { l.min_len + LENGTH_MARGIN };
            let (dx, dy) = (w.toe[0] - w.heel[0], w.toe[1] - w.heel[1]);
            let h = dx.hypot(dy);
            let (ux, uy) = if h > 0.0 { (dx / h, dy / h) } else { (1.0, 0.0) };
            let m = w.midpoint();
            w.heel = [m[0] - 0.5 * target * ux, m[1] - 0.5 * target * uy, w.heel[2]];
            w.toe = [m[0] + 0.5 * target * ux, m[1] + 0.5 * target * uy, w.toe[2]];
            self.shift_inside(w);
        }
    }

    /// Pushes every too-close pair apart along the line joining their closest points.
    fn separate(&self, wells: &mut [Well]) {
        let n = wells.len();
        for a in 0..n {
            for b in a + 1..n {
                let (wa, wb) = (wells[a], wells[b]);
                let (d, ca, cb) = segment_distance(wa.heel, wa.toe, wb.heel, wb.toe);
                if d >= self.limits.min_interwell {
                    continue;
                }
                let mut v = [cb[0] - ca[0], cb[1] - ca[1]];
                if v[0].hypot(v[1]) < 1e-9 {
                    let (ma, mb) = (wa.midpoint(), wb.midpoint());
                    v = [mb[0] - ma[0], mb[1] - ma[1]];
                }
                if v[0].hypot(v[1]) < 1e-9 {
                    // Coincident wells: separate along a pair-dependent direction.
                    let ang = 2.399963 * (a * n + b) as f64;
                    v = [ang.cos(), ang.sin()];
                }
                let norm = v[0].hypot(v[1]);
                let push = 0.5 * (self.limits.min_interwell - d) + PUSH_MARGIN;
                let (px, py) = (push * v[0] / norm, push * v[1] / norm);
                for (idx, sign) in [(a, -1.0), (b, 1.0)] {
                    let w = &mut wells[idx];
                    w.heel[0] += sign * px;
                    w.heel[1] += sign * py;
                    w.toe[0] += sign * px;
                    w.toe[1] += sign * py;
                    self.shift_inside(w);
                }
            }
        }
    }

    /// Projects `u` onto the limits. Feasible input is returned unchanged; an
    /// error means the projection did not settle and the caller should resample.
    pub fn repair(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() || u.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(format!("decision vector of length {} with {} wells", u.len(), self.n_wells)));
        }
        let mut cfg = WellConfig::from_vector(u)?;
        for _ in 0..MAX_REPAIR_ITER {
            let v = cfg.to_vector();
            if self.is_feasible(&v) {
                return Ok(v);
            }
            for w in cfg.wells.iter_mut() {
                self.repair_well(w);
            }
            self.separate(&mut cfg.wells);
        }
        let v = cfg.to_vector();
        if self.is_feasible(&v) {
            return Ok(v);
        }
        Err(CoreError::Numerical(format!("repair did not settle after {MAX_REPAIR_ITER} iterations: {:?}", self.violations(&v))))
    }

    /// Uniform draw from the coordinate bounds.
    pub fn random_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.axis_bounds();
        (0..self.dim()).map(|i| {
            let (lo, hi) = b[i % 3];
            rng.random_range(lo..=hi)
        })
        .collect()
    }

    /// A random configuration satisfying every limit: random heels, headings,
    /// lengths and layers, then repair.
    pub fn sample_feasible<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.axis_bounds();
        let l = &self.limits;
        loop {
            let mut u = Vec::with_capacity(self.dim());
            for _ in 0..self.n_wells {
                let len = rng.random_range(l.min_len..=l.max_len);
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let z = (rng.random_range(0..self.nz) as f64 + 0.5) * self.dz;
                let heel = [rng.random_range(b[0].0..=b[0].1), rng.random_range(b[1].0..=b[1].1), z];
                let mut w = Well { heel, toe: [heel[0] + len * ang.cos(), heel[1] + len * ang.sin(), z] };
                self.shift_inside(&mut w);
                u.extend(w.heel.into_iter().chain(w.toe));
            }
            if let Ok(v) = self.repair(&u) {
                return v;
            }
        }
    }
}

/// `max(0, max_bhp - p_allow) / p_allow` over all wells and steps.
pub fn bhp_constraint(bhp: &[Vec<f64>], p_allow: f64) -> f64 {
    let max = bhp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    (max - p_allow).max(0.0) / p_allow
}

/// Fraction of the injected mass not retained in the aquifer.
pub fn retention_constraint(m_injected: f64, m_retained: f64) -> f64 {
    (m_injected - m_retained) / m_injected
}

/// Objective and constraint values of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub j: f64,
    pub c_bhp: f64,
    pub c_ret: f64,
}

impl Score {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.c_bhp <= tol && self.c_ret <= tol
    }

    fn violation(&self) -> (f64, f64) {
        (self.c_bhp.max(0.0), self.c_ret.max(0.0))
    }

    /// Whether `self` is kept over `other`: feasible beats infeasible, lower J
    /// wins among feasible, lower violations win among infeasible with ties of
    /// incomparable violations broken by retention first. Ties keep `self`.
    pub fn preferred_over(&self, other: &Score, tol: f64) -> bool {
        match (self.is_feasible(tol), other.is_feasible(tol)) {
            (true, true) => self.j <= other.j,
            (true, false) => true,
            (false, true) => false,
            (false, false) => {
                let (a, b) = (self.violation(), other.violation());
                if a.0 <= b.0 && a.1 <= b.1 {
                    true
                } else if b.0 <= a.0 && b.1 <= a.1 {
                    false
                } else if a.1 != b.1 {
                    a.1 < b.1
                } else {
                    a.0 <= b.0
                }
            }
        }
    }

    /// Pareto dominance on `(J, C_bhp, C_ret)` with satisfied constraints read as 0.
    pub fn dominates(&self, other: &Score, tol: f64) -> bool {
        let v = |s: &Score| {
            let c = |x: f64| if x <= tol { 0.0 } else { x };
            [s.j, c(s.c_bhp), c(s.c_ret)]
        };
        let (a, b) = (v(self), v(other));
        a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
    }
}

/// Mutually non-dominated scores seen so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Filter {
    pub entries: Vec<(Vec<f64>, Score)>,
    pub tol: f64,
}

impl Filter {
    pub fn new(tol: f64) -> Self {
        Self { entries: Vec::new(), tol }
    }

    /// Adds the point unless an entry dominates or equals it; drops entries it dominates.
    pub fn insert(&mut self, u: &[f64], s: Score) -> bool {
        let tol = self.tol;
        if self.entries.iter().any(|(_, e)| e.dominates(&s, tol) || *e == s) {
            return false;
        }
        self.entries.retain(|(_, e)| !s.dominates(e, tol));
        self.entries.push((u.to_vec(), s));
        true
    }
}

/// A minimization problem for [`differential_evolution`].
pub trait Problem {
    fn dim(&self) -> usize;
    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
    /// Maps a trial vector into the feasible geometry; `Err` asks for a resample.
    fn repair(&self, u: &[f64]) -> Result<Vec<f64>>;
    /// Scores in input order.
    fn evaluate(&self, us: &[Vec<f64>]) -> Result<Vec<Score>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    pub pop_size: usize,
    pub f: f64,
    pub cr: f64,
    /// Iterations including the initial population.
    pub max_iter: usize,
    /// Stop when best feasible J improved by less than `stall_rel` (relative)
    /// over this many iterations; 0 disables the rule.
    pub stall_iters: usize,
    pub stall_rel: f64,
    pub tol: f64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self { pop_size: 24, f: 0.8, cr: 0.9, max_iter: 50, stall_iters: 20, stall_rel: 0.01, tol: FEASIBILITY_TOL }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 4 || self.max_iter == 0 || !(self.f > 0.0) || !(0.0..=1.0).contains(&self.cr) {
            return Err(CoreError::Config(format!("invalid differential evolution settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub index: usize,
    pub u: Vec<f64>,
    pub score: Score,
    pub best_feasible_j: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub evaluations: usize,
    pub best_feasible_j: Option<f64>,
    pub n_feasible: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Stalled,
    Budget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_u: Vec<f64>,
    pub best: Score,
    pub history: Vec<EvalRecord>,
    pub iterations: Vec<IterRecord>,
    pub filter: Filter,
    pub stop: StopReason,
}

impl SearchResult {
    pub fn evaluations(&self) -> usize {
        self.history.len()
    }

    pub fn best_feasible_j(&self) -> Option<f64> {
        self.iterations.last().and_then(|r| r.best_feasible_j)
    }
}

/// Bookkeeping shared by DE and random search.
struct Tracker {
    tol: f64,
    best: Option<(Vec<f64>, Score)>,
    best_feasible: Option<f64>,
    history: Vec<EvalRecord>,
    iterations: Vec<IterRecord>,
    filter: Filter,
}

impl Tracker {
    fn new(tol: f64) -> Self {
        Self { tol, best: None, best_feasible: None, history: Vec::new(), iterations: Vec::new(), filter: Filter::new(tol) }
    }

    fn record(&mut self, iteration: usize, us: &[Vec<f64>], scores: &[Score]) {
        let mut n_feasible = 0;
        for (index, (u, s)) in us.iter().zip(scores).enumerate() {
            if s.is_feasible(self.tol) {
                n_feasible += 1;
                self.best_feasible = Some(self.best_feasible.map_or(s.j, |b| b.min(s.j)));
            }
            let better = match &self.best {
                None => true,
                Some((_, b)) => s.preferred_over(b, self.tol) && s != b,
            };
            if better {
                self.best = Some((u.clone(), *s));
            }
            self.filter.insert(u, *s);
            self.history.push(EvalRecord { iteration, index, u: u.clone(), score: *s, best_feasible_j: self.best_feasible });
        }
        self.iterations.push(IterRecord { iteration, evaluations: self.history.len(), best_feasible_j: self.best_feasible, n_feasible });
    }

    fn stalled(&self, window: usize, rel: f64) -> bool {
        let n = self.iterations.len();
        if window == 0 || n <= window {
            return false;
        }
        match (self.iterations[n - 1 - window].best_feasible_j, self.iterations[n - 1].best_feasible_j) {
            (Some(old), Some(new)) => (old - new) <= rel * old.abs(),
            _ => false,
        }
    }

    fn finish(self, stop: StopReason) -> Result<SearchResult> {
        let (best_u, best) = self.best.ok_or_else(|| CoreError::Numerical("search evaluated nothing".into()))?;
        Ok(SearchResult { best_u, best, history: self.history, iterations: self.iterations, filter: self.filter, stop })
    }
}

/// Repairs `u`, falling back to fresh random draws when repair does not settle.
fn repaired<P: Problem, R: Rng + ?Sized>(p: &P, u: &[f64], rng: &mut R) -> Vec<f64> {
    if let Ok(v) = p.repair(u) {
        return v;
    }
    loop {
        if let Ok(v) = p.repair(&p.random(rng)) {
            return v;
        }
    }
}

/// rand/1/bin trial vectors for every member of `pop`, repaired.
pub fn de_trials<P: Problem>(p: &P, pop: &[Vec<f64>], cfg: &DeConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = pop.len();
    let d = p.dim();
    (0..n)
        .map(|i| {
            let pick = |rng: &mut ChaCha8Rng, avoid: &[usize]| loop {
                let r = rng.random_range(0..n);
                if !avoid.contains(&r) {
                    break r;
                }
            };
            let r1 = pick(rng, &[i]);
            let r2 = pick(rng, &[i, r1]);
            let r3 = pick(rng, &[i, r1, r2]);
            let j_rand = rng.random_range(0..d);
            let trial: Vec<f64> = (0..d)
                .map(|j| {
                    if j == j_rand || rng.random::<f64>() < cfg.cr {
                        pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j])
                    } else {
                        pop[i][j]
                    }
                })
                .collect();
            repaired(p, &trial, rng)
        })
        .collect()
}

/// One generation: trials, evaluation and one-to-one selection.
pub fn de_step<P: Problem>(
    p: &P,
    pop: &mut [Vec<f64>],
    scores: &mut [Score],
    cfg: &DeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<Score>)> {
    let trials = de_trials(p, pop, cfg, rng);
    let trial_scores = p.evaluate(&trials)?;
    for i in 0..pop.len() {
        if trial_scores[i].preferred_over(&scores[i], cfg.tol) {
            pop[i] = trials[i].clone();
            scores[i] = trial_scores[i];
        }
    }
    Ok((trials, trial_scores))
}

/// Differential evolution from a seeded random initial population.
pub fn differential_evolution<P: Problem>(p: &P, cfg: &DeConfig, seed: u64) -> Result<SearchResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop: Vec<Vec<f64>> = (0..cfg.pop_size)
        .map(|_| {
            let u = p.random(&mut rng);
            repaired(p, &u, &mut rng)
        })
        .collect();
    let mut scores = p.evaluate(&pop)?;
    let mut tracker = Tracker::new(cfg.tol);
    tracker.record(1, &pop, &scores);
    for iteration in 2..=cfg.max_iter {
        if tracker.stalled(cfg.stall_iters, cfg.stall_rel) {
            return tracker.finish(StopReason::Stalled);
        }
        let (trials, trial_scores) = de_step(p, &mut pop, &mut scores, cfg, &mut rng)?;
        tracker.record(iteration, &trials, &trial_scores);
    }
    let stop = if tracker.stalled(cfg.stall_iters, cfg.stall_rel) { StopReason::Stalled } else { StopReason::MaxIterations };
    tracker.finish(stop)
}

/// Independent random feasible draws in batches of `batch`, `budget` in total.
pub fn random_search<P: Problem>(p: &P, budget: usize, batch: usize, tol: f64, seed: u64) -> Result<SearchResult> {
    if budget == 0 || batch == 0 {
        return Err(CoreError::Config("random search needs a positive budget and batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(tol);
    let mut done = 0;
    let mut iteration = 0;
    while done < budget {
        iteration += 1;
        let n = batch.min(budget - done);
        let us: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let u = p.random(&mut rng);
                repaired(p, &u, &mut rng)
            })
            .collect();
        let scores = p.evaluate(&us)?;
        tracker.record(iteration, &us, &scores);
        done += n;
    }
    tracker.finish(StopReason::Budget)
}

/// Objective, constraints and diagnostics of one well configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: Score,
    pub max_bhp: f64,
    pub m_injected: f64,
    pub m_retained: f64,
}

pub trait Evaluator: Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, wells: &WellConfig) -> Result<Evaluation>;
}

/// Scores configurations with the reference simulator.
pub struct OracleEvaluator<'a> {
    pub grid: &'a GridModel,
    pub fluids: &'a FluidModel,
    pub schedule: Schedule,
    pub options: SimOptions,
    pub p_allow: f64,
}

impl Evaluator for OracleEvaluator<'_> {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn evaluate(&self, wells: &WellConfig) -> Result<Evaluation> {
        let s = simulate(self.grid, self.fluids, wells, &self.schedule, &self.options)?;
        let last = s.n_reports();
        let fp = footprint(self.grid, &s.saturation_g[last])?;
        let (aquifer, _) = s.mass_split(self.grid, self.fluids, last);
        let m_injected = s.injected_mass[last];
        let bhp = &s.bhp[1..];
        Ok(Evaluation {
            score: Score { j: fp.ratio, c_bhp: bhp_constraint(bhp, self.p_allow), c_ret: retention_constraint(m_injected, aquifer) },
            max_bhp: bhp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max),
            m_injected,
            m_retained: aquifer,
        })
    }
}

/// Scores configurations with the trained networks.
///
/// Predicted fields do not conserve mass, so escape is measured directly as the
/// gas mass in boundary-ring cells whose predicted saturation exceeds
/// `ring_floor`; retained mass is injected mass minus that escape.
pub struct SurrogateEvaluator<'a> {
    pub grid: &'a GridModel,
    pub fluids: &'a FluidModel,
    pub schedule: Schedule,
    pub pressure_net: &'a SurrogateNet,
    pub saturation_net: &'a SurrogateNet,
    pub bhp_model: &'a BhpModel,
    pub well_radius: f64,
    pub p_allow: f64,
    pub ring_floor: f64,
}

/// Default ring saturation floor for surrogate retention.
pub const RING_FLOOR: f64 = 0.02;

impl Evaluator for SurrogateEvaluator<'_> {
    fn name(&self) -> &'static str {
        "surrogate"
    }

    fn evaluate(&self, wells: &WellConfig) -> Result<Evaluation> {
        let r = rollout(self.pressure_net, self.saturation_net, self.grid, self.fluids, wells, &self.schedule, self.well_radius)?;
        let last = r.times.len() - 1;
        let fp = footprint(self.grid, &r.saturation_g[last])?;
        let bhp = self.bhp_model.predict_rollout(self.grid, &r)?;
        let sg: Vec<f64> = r.saturation_g[last].iter().map(|&s| if s > self.ring_floor { s } else { 0.0 }).collect();
        let mass = gas_mass(self.grid, self.fluids, &r.pressure[last], &sg);
        let escaped: f64 = (0..self.grid.n_cells()).filter(|&c| !self.grid.in_aquifer(c)).map(|c| mass[c]).sum();
        let m_injected = self.schedule.total_injected_kg(wells.n_wells());
        let m_retained = m_injected - escaped;
        Ok(Evaluation {
            score: Score { j: fp.ratio, c_bhp: bhp_constraint(&bhp, self.p_allow), c_ret: retention_constraint(m_injected, m_retained) },
            max_bhp: bhp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max),
            m_injected,
            m_retained,
        })
    }
}

/// Well placement over an evaluator: the [`Problem`] the optimizers run on.
pub struct PlacementProblem<'a, E: Evaluator> {
    pub placement: Placement,
    pub evaluator: &'a E,
}

impl<E: Evaluator> Problem for PlacementProblem<'_, E> {
    fn dim(&self) -> usize {
        self.placement.dim()
    }

    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.placement.random_vector(rng)
    }

    fn repair(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.placement.repair(u)
    }

    fn evaluate(&self, us: &[Vec<f64>]) -> Result<Vec<Score>> {
        us.par_iter()
            .map(|u| {
                let wells = WellConfig::from_vector(u)?;
                self.evaluator
                    .evaluate(&wells)
                    .map(|e| e.score)
                    .map_err(|e| CoreError::Evaluation { u: u.clone(), source: Box::new(e) })
            })
            .collect()
    }
}
