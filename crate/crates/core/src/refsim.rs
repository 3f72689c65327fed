//! Immiscible two-phase IMPES reference simulator.
//!
//! Pressure is implicit with upstream mobilities frozen at the old state; gas
//! mass is the explicit conserved variable and gas saturation is recovered from
//! it, so stored mass always equals injected mass up to round-off. Boundaries
//! are sealed; the outer ring acts as an aquifer through its pore volume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fluid::{FluidModel, DARCY, DAYS_PER_YEAR, GRAVITY, KG_PER_MT, PA_TO_BAR};
use crate::grid::{complete_wells, Completion, GridModel, WellConfig, DEFAULT_WELL_RADIUS};
use crate::io::{self, Array};
use crate::linsolve::{pcg, ColumnLayout, PressureMatrix};

/// Slack on the gas saturation upper bound absorbing round-off.
const SAT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Mass rate per well (Mt/yr).
    pub rate_per_well: f64,
    /// Years.
    pub horizon: f64,
    pub report_every: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { rate_per_well: 0.5, horizon: 20.0, report_every: 2.0 }
    }
}

impl Schedule {
    pub fn n_reports(&self) -> Result<usize> {
        if !(self.horizon > 0.0 && self.report_every > 0.0 && self.rate_per_well >= 0.0) {
            return Err(CoreError::InvalidArgument(format!("invalid schedule {self:?}")));
        }
        let n = (self.horizon / self.report_every).round();
        if n < 1.0 || (n * self.report_every - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(CoreError::InvalidArgument(format!(
                "horizon {} is not a whole number of report intervals {}",
                self.horizon, self.report_every
            )));
        }
        Ok(n as usize)
    }

    pub fn rate_kg_per_day(&self) -> f64 {
        self.rate_per_well * KG_PER_MT / DAYS_PER_YEAR
    }

    /// Mass (kg) injected by `n_wells` wells over the horizon.
    pub fn total_injected_kg(&self, n_wells: usize) -> f64 {
        n_wells as f64 * self.rate_kg_per_day() * self.horizon * DAYS_PER_YEAR
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub well_radius: f64,
    /// Substep bounds (days).
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// A substep changing any gas saturation by more than this is retried.
    pub ds_max: f64,
    /// Saturation change the step-size controller aims for.
    pub ds_target: f64,
    pub solver_rtol: f64,
    pub solver_max_iter: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            well_radius: DEFAULT_WELL_RADIUS,
            dt_init: 1.0,
            dt_max: 30.0,
            dt_min: 1e-6,
            ds_max: 0.2,
            ds_target: 0.05,
            solver_rtol: 1e-10,
            solver_max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub case_id: String,
    pub seed: u64,
    pub grid_id: String,
    pub substeps: usize,
}

/// Report-time fields. Index 0 is the initial state; `times` has `n_t + 1` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    /// Years.
    pub times: Vec<f64>,
    pub pressure: Vec<Vec<f64>>,
    pub saturation_g: Vec<Vec<f64>>,
    pub bhp: Vec<Vec<f64>>,
    /// Mass rate per completion (Mt/yr) at the report time.
    pub q_perf: Vec<Vec<f64>>,
    /// Cumulative injected mass (kg).
    pub injected_mass: Vec<f64>,
    pub well_config: WellConfig,
    pub completions: Vec<Completion>,
    pub meta: SeriesMeta,
}

/// Initial pressure (bar): hydrostatic water column with face-averaged density,
/// so the discrete water potential is exactly uniform along each column.
pub fn hydrostatic_pressure(grid: &GridModel, fluids: &FluidModel) -> Vec<f64> {
    let nxy = grid.nx * grid.ny;
    let mut layer = vec![grid.initial_pressure_top; grid.nz];
    for k in 1..grid.nz {
        let dd = grid.depth[k * nxy] - grid.depth[(k - 1) * nxy];
        let above = layer[k - 1];
        let mut p = above;
        for _ in 0..100 {
            let rho = 0.5 * (fluids.rho_water(above) + fluids.rho_water(p));
            let next = above + rho * GRAVITY * dd * PA_TO_BAR;
            let done = next == p;
            p = next;
            if done {
                break;
            }
        }
        layer[k] = p;
    }
    (0..grid.n_cells()).map(|c| layer[c / nxy]).collect()
}

/// Gas mass (kg) per cell.
pub fn gas_mass(grid: &GridModel, fluids: &FluidModel, pressure: &[f64], sg: &[f64]) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|c| sg[c] * grid.pore_volume(c) * fluids.pv_factor(pressure[c]) * fluids.rho_gas(pressure[c]))
        .collect()
}

/// Bottom-hole pressure per well from the linear well model
/// `q_c = C W_c lambda_c (bhp - p_c)` summed over the well's completions.
/// All slices are per completion; `q` is the volumetric rate at reservoir
/// conditions (m^3/day) and `lambda` the total mobility (1/cP).
pub fn bhp_from_state(well_of: &[usize], n_wells: usize, p: &[f64], q: &[f64], w: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let n = well_of.len();
    for (what, len) in [("pressure", p.len()), ("rate", q.len()), ("well index", w.len()), ("mobility", lambda.len())] {
        if len != n {
            return Err(CoreError::Shape { what, expected: n, got: len });
        }
    }
    let mut num = vec![0.0; n_wells];
    let mut den = vec![0.0; n_wells];
    for c in 0..n {
        let wl = DARCY * w[c] * lambda[c];
        num[well_of[c]] += q[c] + wl * p[c];
        den[well_of[c]] += wl;
    }
    (0..n_wells)
        .map(|k| {
            if den[k] > 0.0 {
                Ok(num[k] / den[k])
            } else {
                Err(CoreError::Numerical(format!("well {k} has zero total W lambda")))
            }
        })
        .collect()
}

struct Face {
    a: usize,
    b: usize,
    /// DARCY * T.
    ct: f64,
    /// g (D_a - D_b) in bar per (kg/m^3).
    gdd: f64,
}

struct Sim<'a> {
    grid: &'a GridModel,
    fluids: &'a FluidModel,
    opts: &'a SimOptions,
    faces: Vec<Face>,
    layout: ColumnLayout,
    pv0: Vec<f64>,
    completions: Vec<Completion>,
    n_wells: usize,
    rate: f64,
}

struct State {
    p: Vec<f64>,
    mass: Vec<f64>,
    sg: Vec<f64>,
}

enum Step {
    Accepted(State, f64),
    Rejected(&'static str),
}

impl Sim<'_> {
    /// Mass rate (kg/day) per completion, proportional to `W lambda_t`.
    fn allocation(&self, sg: &[f64]) -> Result<Vec<f64>> {
        let a: Vec<f64> = self.completions.iter().map(|c| c.w * self.fluids.lambda_t(sg[c.cell])).collect();
        let mut tot = vec![0.0; self.n_wells];
        for (c, ac) in self.completions.iter().zip(&a) {
            tot[c.well] += ac;
        }
        self.completions
            .iter()
            .zip(&a)
            .map(|(c, ac)| {
                if tot[c.well] > 0.0 {
                    Ok(self.rate * ac / tot[c.well])
                } else {
                    Err(CoreError::Numerical(format!("well {} has zero total W lambda", c.well)))
                }
            })
            .collect()
    }

    fn report(&self, s: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.allocation(&s.sg)?;
        let f = self.fluids;
        let cells: Vec<usize> = self.completions.iter().map(|c| c.cell).collect();
        let well_of: Vec<usize> = self.completions.iter().map(|c| c.well).collect();
        let p: Vec<f64> = cells.iter().map(|&c| s.p[c]).collect();
        let q: Vec<f64> = cells.iter().zip(&m).map(|(&c, mc)| mc / f.rho_gas(s.p[c])).collect();
        let w: Vec<f64> = self.completions.iter().map(|c| c.w).collect();
        let lam: Vec<f64> = cells.iter().map(|&c| f.lambda_t(s.sg[c])).collect();
        let bhp = bhp_from_state(&well_of, self.n_wells, &p, &q, &w, &lam)?;
        let per_year = DAYS_PER_YEAR / KG_PER_MT;
        Ok((bhp, m.iter().map(|v| v * per_year).collect()))
    }

    fn step(&self, s: &State, dt: f64) -> Result<Step> {
        let (f, n) = (self.fluids, self.grid.n_cells());
        let lam_w: Vec<f64> = s.sg.iter().map(|&v| f.lambda_w(v)).collect();
        let lam_g: Vec<f64> = s.sg.iter().map(|&v| f.lambda_g(v)).collect();
        let rho_w: Vec<f64> = s.p.iter().map(|&p| f.rho_water(p)).collect();
        let rho_g: Vec<f64> = s.p.iter().map(|&p| f.rho_gas(p)).collect();

        let mut src_mass = vec![0.0; n];
        for (c, m) in self.completions.iter().zip(self.allocation(&s.sg)?) {
            src_mass[c.cell] += m;
        }
        let mut rhs: Vec<f64> = (0..n).map(|c| src_mass[c] / rho_g[c]).collect();
        let diag: Vec<f64> = (0..n)
            .map(|c| {
                let pvf = f.pv_factor(s.p[c]);
                let fluid = s.sg[c] * f.c_g * f.rho_g / rho_g[c] + (1.0 - s.sg[c]) * f.c_w * f.rho_w / rho_w[c];
                self.pv0[c] * (f.c_r + pvf * fluid) / dt
            })
            .collect();
        let mut links = Vec::with_capacity(self.faces.len());
        let mut rho_gf = Vec::with_capacity(self.faces.len());
        for face in &self.faces {
            let (a, b) = (face.a, face.b);
            let dp = s.p[a] - s.p[b];
            let mut coef = 0.0;
            for (lam, rho) in [(&lam_w, &rho_w), (&lam_g, &rho_g)] {
                let dphi = dp - 0.5 * (rho[a] + rho[b]) * face.gdd;
                let up = if dphi >= 0.0 { a } else { b };
                let c = face.ct * lam[up];
                rhs[a] -= c * dphi;
                rhs[b] += c * dphi;
                coef += c;
            }
            links.push((a, b, coef));
            rho_gf.push(0.5 * (rho_g[a] + rho_g[b]));
        }
        let m = PressureMatrix { diag, links };
        let mut dp = vec![0.0; n];
        pcg(&m, &self.layout, &rhs, &mut dp, self.opts.solver_rtol, 0.0, self.opts.solver_max_iter)?;
        let p: Vec<f64> = s.p.iter().zip(&dp).map(|(p, d)| p + d).collect();
        if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Ok(Step::Rejected("non-positive pressure"));
        }

        let mut mass: Vec<f64> = s.mass.iter().zip(&src_mass).map(|(m, q)| m + dt * q).collect();
        for (face, rho_f) in self.faces.iter().zip(&rho_gf) {
            let (a, b) = (face.a, face.b);
            let dphi = p[a] - p[b] - rho_f * face.gdd;
            let up = if dphi >= 0.0 { a } else { b };
            if lam_g[up] == 0.0 {
                continue;
            }
            let flow = dt * face.ct * lam_g[up] * dphi * f.rho_gas(p[up]);
            mass[a] -= flow;
            mass[b] += flow;
        }
        if mass.iter().any(|&v| v < 0.0) {
            return Ok(Step::Rejected("negative gas mass"));
        }
        let sg: Vec<f64> = (0..n).map(|c| mass[c] / (self.pv0[c] * f.pv_factor(p[c]) * f.rho_gas(p[c]))).collect();
        if sg.iter().any(|&v| v > 1.0 - f.s_wc + SAT_SLACK) {
            return Ok(Step::Rejected("gas saturation above 1 - S_wc"));
        }
        let ds = sg.iter().zip(&s.sg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if ds > self.opts.ds_max {
            return Ok(Step::Rejected("saturation change too large"));
        }
        Ok(Step::Accepted(State { p, mass, sg }, ds))
    }
}

/// Runs the schedule and records every report time, the initial state included.
pub fn simulate(
    grid: &GridModel,
    fluids: &FluidModel,
    wells: &WellConfig,
    schedule: &Schedule,
    opts: &SimOptions,
) -> Result<SnapshotSeries> {
    fluids.validate()?;
    let n_t = schedule.n_reports()?;
    if !(opts.dt_min > 0.0 && opts.dt_init >= opts.dt_min && opts.dt_max >= opts.dt_init) {
        return Err(CoreError::InvalidArgument(format!("inconsistent substep bounds {opts:?}")));
    }
    let completions = complete_wells(grid, wells, opts.well_radius)?;
    let faces = grid
        .faces()
        .into_iter()
        .map(|fc| Face {
            a: fc.a,
            b: fc.b,
            ct: DARCY * fc.trans,
            gdd: GRAVITY * (grid.depth[fc.a] - grid.depth[fc.b]) * PA_TO_BAR,
        })
        .collect();
    let n = grid.n_cells();
    let sim = Sim {
        grid,
        fluids,
        opts,
        faces,
        layout: ColumnLayout { n_columns: grid.nx * grid.ny, nz: grid.nz },
        pv0: (0..n).map(|c| grid.pore_volume(c)).collect(),
        n_wells: wells.n_wells(),
        completions,
        rate: schedule.rate_kg_per_day(),
    };
    let mut state = State { p: hydrostatic_pressure(grid, fluids), mass: vec![0.0; n], sg: vec![0.0; n] };

    let mut series = SnapshotSeries {
        times: vec![0.0],
        pressure: vec![state.p.clone()],
        saturation_g: vec![state.sg.clone()],
        bhp: Vec::new(),
        q_perf: Vec::new(),
        injected_mass: vec![0.0],
        well_config: wells.clone(),
        completions: sim.completions.clone(),
        meta: SeriesMeta::default(),
    };
    let (bhp, q) = sim.report(&state)?;
    series.bhp.push(bhp);
    series.q_perf.push(q);

    let well_rate = sim.rate * sim.n_wells as f64;
    let (mut t, mut dt, mut substeps) = (0.0, opts.dt_init, 0usize);
    for r in 1..=n_t {
        let t_report = r as f64 * schedule.report_every * DAYS_PER_YEAR;
        while t < t_report {
            let remaining = t_report - t;
            // Split the tail evenly rather than leave a sliver before the report time.
            let h = if dt >= remaining * (1.0 - 1e-12) {
                remaining
            } else if 2.0 * dt > remaining {
                0.5 * remaining
            } else {
                dt
            };
            match sim.step(&state, h)? {
                Step::Accepted(next, ds) => {
                    state = next;
                    t = if h == remaining { t_report } else { t + h };
                    substeps += 1;
                    let grow = if ds > 0.0 { (opts.ds_target / ds).clamp(0.5, 2.0) } else { 2.0 };
                    dt = (h * grow).clamp(opts.dt_min, opts.dt_max);
                }
                Step::Rejected(why) => {
                    dt = 0.5 * h;
                    log::trace!("substep of {h:.3e} d at t = {t:.3} d rejected: {why}");
                    if dt < opts.dt_min {
                        return Err(CoreError::CflUnderflow { floor: opts.dt_min, time: t / DAYS_PER_YEAR });
                    }
                }
            }
        }
        debug_assert!(state.sg.iter().all(|&v| (0.0..=1.0 - fluids.s_wc + SAT_SLACK).contains(&v)));
        series.times.push(r as f64 * schedule.report_every);
        series.pressure.push(state.p.clone());
        series.saturation_g.push(state.sg.clone());
        series.injected_mass.push(well_rate * t_report);
        let (bhp, q) = sim.report(&state)?;
        series.bhp.push(bhp);
        series.q_perf.push(q);
    }
    series.meta.substeps = substeps;
    Ok(series)
}

#[derive(Serialize, Deserialize)]
struct SeriesFile {
    format: String,
    version: u32,
    units: SeriesUnits,
    times: Vec<f64>,
    injected_mass: Vec<f64>,
    well_config: WellConfig,
    completions: Vec<Completion>,
    meta: SeriesMeta,
}

#[derive(Serialize, Deserialize)]
struct SeriesUnits {
    time: String,
    pressure: String,
    bhp: String,
    q_perf: String,
    injected_mass: String,
}

const FIELDS: [&str; 4] = ["pressure", "saturation_g", "bhp", "q_perf"];

impl SnapshotSeries {
    pub fn n_reports(&self) -> usize {
        self.times.len() - 1
    }

    fn field(&self, name: &str) -> &Vec<Vec<f64>> {
        match name {
            "pressure" => &self.pressure,
            "saturation_g" => &self.saturation_g,
            "bhp" => &self.bhp,
            _ => &self.q_perf,
        }
    }

    /// Writes `meta.json` plus one binary array per field into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
        for name in FIELDS {
            io::write_array(&dir.join(format!("{name}.bin")), &Array::from_rows(self.field(name))?)?;
        }
        let file = SeriesFile {
            format: "co2gnsm-series".into(),
            version: 1,
            units: SeriesUnits {
                time: "yr".into(),
                pressure: "bar".into(),
                bhp: "bar".into(),
                q_perf: "Mt/yr".into(),
                injected_mass: "kg".into(),
            },
            times: self.times.clone(),
            injected_mass: self.injected_mass.clone(),
            well_config: self.well_config.clone(),
            completions: self.completions.clone(),
            meta: self.meta.clone(),
        };
        io::write_json(&dir.join("meta.json"), &file)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let f: SeriesFile = io::read_json(&path)?;
        if f.format != "co2gnsm-series" || f.version != 1 {
            return Err(CoreError::format(&path, format!("unsupported series file {} v{}", f.format, f.version)));
        }
        let mut fields = Vec::new();
        for name in FIELDS {
            let rows = io::read_array(&dir.join(format!("{name}.bin")))?.to_rows()?;
            if rows.len() != f.times.len() {
                return Err(CoreError::format(dir.join(format!("{name}.bin")), format!("{} rows for {} times", rows.len(), f.times.len())));
            }
            fields.push(rows);
        }
        let q_perf = fields.pop().unwrap_or_default();
        let bhp = fields.pop().unwrap_or_default();
        let saturation_g = fields.pop().unwrap_or_default();
        let pressure = fields.pop().unwrap_or_default();
        Ok(Self {
            times: f.times,
            pressure,
            saturation_g,
            bhp,
            q_perf,
            injected_mass: f.injected_mass,
            well_config: f.well_config,
            completions: f.completions,
            meta: f.meta,
        })
    }

    /// Gas mass (kg) in aquifer cells and in ring cells at report `t`.
    pub fn mass_split(&self, grid: &GridModel, fluids: &FluidModel, t: usize) -> (f64, f64) {
        let m = gas_mass(grid, fluids, &self.pressure[t], &self.saturation_g[t]);
        let (mut aq, mut ring) = (0.0, 0.0);
        for (c, v) in m.iter().enumerate() {
            if grid.in_aquifer(c) {
                aq += v;
            } else {
                ring += v;
            }
        }
        (aq, ring)
    }

    /// `max_t |injected - stored| / injected` over report times with injection.
    pub fn mass_balance_error(&self, grid: &GridModel, fluids: &FluidModel) -> f64 {
        (1..self.times.len())
            .filter(|&t| self.injected_mass[t] > 0.0)
            .map(|t| {
                let (aq, ring) = self.mass_split(grid, fluids, t);
                ((aq + ring) - self.injected_mass[t]).abs() / self.injected_mass[t]
            })
            .fold(0.0, f64::max)
    }
}
