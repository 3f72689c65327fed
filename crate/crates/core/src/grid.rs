//! Structured aquifer grids, rock properties and well completions.
//!
//! Cells are indexed x-fastest: `c = i + nx * (j + ny * k)`, with `k = 0` the
//! top layer. Metric coordinates of the full grid start at the outer corner of
//! the ring; well coordinates are given in the aquifer frame, whose origin is
//! the top north-west corner of the aquifer box, with z measured downward.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::io;

pub const DEFAULT_WELL_RADIUS: f64 = 0.1;
/// Vertical to horizontal permeability ratio.
pub const KZ_RATIO: f64 = 0.1;
/// Intersections shorter than this (m) are treated as touching, not crossing.
const MIN_SEGMENT: f64 = 1e-9;

/// Log-normal permeability statistics of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPerm {
    /// Geometric mean of kx (md).
    pub k_mean: f64,
    /// Variance of ln kx.
    pub var_ln_k: f64,
    /// Gaussian correlation length (m); 0 gives uncorrelated cells.
    pub corr_len: f64,
}

impl LayerPerm {
    pub fn homogeneous(k: f64) -> Self {
        Self { k_mean: k, var_ln_k: 0.0, corr_len: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PorosityLaw {
    Constant { value: f64 },
    /// `phi = coef * (kx / k_ref)^exponent`.
    PowerLaw { coef: f64, exponent: f64, k_ref: f64 },
}

impl PorosityLaw {
    fn eval(&self, k: f64) -> f64 {
        match *self {
            PorosityLaw::Constant { value } => value,
            PorosityLaw::PowerLaw { coef, exponent, k_ref } => coef * (k / k_ref).powf(exponent),
        }
    }
}

/// Everything needed to build a [`GridModel`] deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cell counts of the full grid, ring included.
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Cell sizes (m).
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Width of the lateral pore-volume ring in cells.
    pub ring: usize,
    /// Ring pore volume as a multiple of aquifer pore volume.
    pub ring_pv_multiple: f64,
    /// Depth of the top of the grid (m).
    pub top_depth: f64,
    /// Pressure at the top layer cell centers (bar).
    pub initial_pressure_top: f64,
    /// One entry per layer, or a single entry applied to all layers.
    pub layers: Vec<LayerPerm>,
    pub porosity: PorosityLaw,
    pub seed: u64,
}

impl GridSpec {
    /// Homogeneous grid without a ring.
    pub fn homogeneous(nx: usize, ny: usize, nz: usize, d: [f64; 3], k: f64, phi: f64) -> Self {
        Self {
            nx,
            ny,
            nz,
            dx: d[0],
            dy: d[1],
            dz: d[2],
            ring: 0,
            ring_pv_multiple: 0.0,
            top_depth: 1500.0,
            initial_pressure_top: 155.0,
            layers: vec![LayerPerm::homogeneous(k)],
            porosity: PorosityLaw::Constant { value: phi },
            seed: 0,
        }
    }

    /// The 16 x 16 x 4 aquifer (8.5 km x 8.5 km x 122 m) inside a one-cell ring,
    /// with layered log-normal permeability.
    pub fn desk(seed: u64) -> Self {
        let layer = |k_mean| LayerPerm { k_mean, var_ln_k: 0.5, corr_len: 1500.0 };
        Self {
            nx: 18,
            ny: 18,
            nz: 4,
            dx: 531.25,
            dy: 531.25,
            dz: 30.5,
            ring: 1,
            ring_pv_multiple: 50.0,
            top_depth: 1500.0,
            initial_pressure_top: 155.0,
            layers: vec![layer(12.0), layer(24.0), layer(8.0), layer(18.0)],
            porosity: PorosityLaw::PowerLaw { coef: 0.2, exponent: 0.1, k_ref: 100.0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidGrid(m));
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return bad(format!("dimensions must be positive, got {}x{}x{}", self.nx, self.ny, self.nz));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return bad(format!("cell sizes must be positive, got {} {} {}", self.dx, self.dy, self.dz));
        }
        if 2 * self.ring >= self.nx || 2 * self.ring >= self.ny {
            return bad(format!("ring of width {} leaves no aquifer in {}x{}", self.ring, self.nx, self.ny));
        }
        if self.layers.len() != 1 && self.layers.len() != self.nz {
            return bad(format!("{} layer entries for {} layers", self.layers.len(), self.nz));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if !(l.k_mean > 0.0) {
                return bad(format!("layer {k}: mean permeability must be positive"));
            }
            if l.var_ln_k < 0.0 || !l.var_ln_k.is_finite() {
                return bad(format!("layer {k}: variance must be non-negative, got {}", l.var_ln_k));
            }
            if l.corr_len < 0.0 {
                return bad(format!("layer {k}: correlation length must be non-negative"));
            }
        }
        if !(self.initial_pressure_top > 0.0) {
            return bad("initial pressure must be positive".into());
        }
        Ok(())
    }
}

/// Half-open cell index ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub i: [usize; 2],
    pub j: [usize; 2],
    pub k: [usize; 2],
}

impl CellBox {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        (self.i[0]..self.i[1]).contains(&i) && (self.j[0]..self.j[1]).contains(&j) && (self.k[0]..self.k[1]).contains(&k)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.i[1] - self.i[0], self.j[1] - self.j[0], self.k[1] - self.k[0]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Permeabilities (md), kz = 0.1 kx.
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub kz: Vec<f64>,
    pub phi: Vec<f64>,
    /// Cell-center depth (m).
    pub depth: Vec<f64>,
    pub pv_mult: Vec<f64>,
    /// Pressure at the top layer (bar).
    pub initial_pressure_top: f64,
    pub aquifer_box: CellBox,
}

/// Builds the grid described by `spec`. Identical specs give bit-identical grids.
pub fn build_grid(spec: &GridSpec) -> Result<GridModel> {
    spec.validate()?;
    let (nx, ny, nz) = (spec.nx, spec.ny, spec.nz);
    let n = nx * ny * nz;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut kx = vec![0.0; n];
    for k in 0..nz {
        let layer = &spec.layers[if spec.layers.len() == 1 { 0 } else { k }];
        let z = correlated_field(nx, ny, layer.corr_len / spec.dx, layer.corr_len / spec.dy, &mut rng);
        let sd = layer.var_ln_k.sqrt();
        for (c, zc) in z.iter().enumerate() {
            kx[k * nx * ny + c] = if sd == 0.0 { layer.k_mean } else { layer.k_mean * (sd * zc).exp() };
        }
    }
    let kz: Vec<f64> = kx.iter().map(|k| KZ_RATIO * k).collect();
    let phi: Vec<f64> = kx.iter().map(|&k| spec.porosity.eval(k)).collect();
    if let Some(p) = phi.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(CoreError::InvalidGrid(format!("porosity law produced {p}, outside (0, 1)")));
    }
    let depth = (0..n).map(|c| spec.top_depth + (c / (nx * ny)) as f64 * spec.dz + 0.5 * spec.dz).collect();
    let r = spec.ring;
    let aquifer_box = CellBox { i: [r, nx - r], j: [r, ny - r], k: [0, nz] };
    let mut grid = GridModel {
        nx,
        ny,
        nz,
        dx: spec.dx,
        dy: spec.dy,
        dz: spec.dz,
        ky: kx.clone(),
        kx,
        kz,
        phi,
        depth,
        pv_mult: vec![1.0; n],
        initial_pressure_top: spec.initial_pressure_top,
        aquifer_box,
    };
    if r > 0 {
        let (mut pv_aq, mut pv_ring) = (0.0, 0.0);
        for c in 0..n {
            let pv = grid.phi[c] * grid.bulk_volume();
            if grid.in_aquifer(c) {
                pv_aq += pv;
            } else {
                pv_ring += pv;
            }
        }
        let mult = spec.ring_pv_multiple * pv_aq / pv_ring;
        if !(mult > 1.0) {
            return Err(CoreError::InvalidGrid(format!(
                "ring multiple {} gives a pore-volume multiplier {mult:.3} <= 1",
                spec.ring_pv_multiple
            )));
        }
        for c in 0..n {
            if !grid.in_aquifer(c) {
                grid.pv_mult[c] = mult;
            }
        }
    }
    Ok(grid)
}

/// Unit-variance Gaussian field on an `nx x ny` layer: white noise smoothed by a
/// separable Gaussian kernel with standard deviations given in cells.
fn correlated_field(nx: usize, ny: usize, sx: f64, sy: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(rng)).collect();
    if sx > 0.0 {
        f = smooth_axis(&f, nx, ny, sx, true);
    }
    if sy > 0.0 {
        f = smooth_axis(&f, nx, ny, sy, false);
    }
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        f.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    f
}

fn smooth_axis(f: &[f64], nx: usize, ny: usize, sigma: f64, along_x: bool) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp()).collect();
    let mut out = vec![0.0; f.len()];
    for j in 0..ny {
        for i in 0..nx {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (o, w) in (-radius..=radius).zip(&kernel) {
                let (ii, jj) = if along_x { (i as isize + o, j as isize) } else { (i as isize, j as isize + o) };
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                acc += w * f[ii as usize + nx * jj as usize];
                wsum += w;
            }
            out[i + nx * j] = acc / wsum;
        }
    }
    out
}

/// One interior face between face-adjacent cells `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    /// 0 = x, 1 = y, 2 = z.
    pub axis: usize,
    /// Transmissibility (md m).
    pub trans: f64,
}

impl GridModel {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    pub fn ijk(&self, c: usize) -> (usize, usize, usize) {
        (c % self.nx, (c / self.nx) % self.ny, c / (self.nx * self.ny))
    }

    pub fn bulk_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Reference pore volume including the ring multiplier (m^3).
    pub fn pore_volume(&self, c: usize) -> f64 {
        self.phi[c] * self.bulk_volume() * self.pv_mult[c]
    }

    pub fn in_aquifer(&self, c: usize) -> bool {
        let (i, j, k) = self.ijk(c);
        self.aquifer_box.contains(i, j, k)
    }

    pub fn aquifer_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.in_aquifer(c)).collect()
    }

    /// Aquifer extent (m) along x, y, z.
    pub fn aquifer_extent(&self) -> [f64; 3] {
        let d = self.aquifer_box.dims();
        [d[0] as f64 * self.dx, d[1] as f64 * self.dy, d[2] as f64 * self.dz]
    }

    /// Offset of the aquifer frame inside the full-grid frame (m).
    pub fn aquifer_origin(&self) -> [f64; 3] {
        let b = &self.aquifer_box;
        [b.i[0] as f64 * self.dx, b.j[0] as f64 * self.dy, b.k[0] as f64 * self.dz]
    }

    pub fn aquifer_bulk_volume(&self) -> f64 {
        let e = self.aquifer_extent();
        e[0] * e[1] * e[2]
    }

    /// Cell-center coordinates in the full-grid frame (m).
    pub fn center(&self, c: usize) -> [f64; 3] {
        let (i, j, k) = self.ijk(c);
        [(i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy, (k as f64 + 0.5) * self.dz]
    }

    fn perm(&self, c: usize, axis: usize) -> f64 {
        match axis {
            0 => self.kx[c],
            1 => self.ky[c],
            _ => self.kz[c],
        }
    }

    fn size(&self, axis: usize) -> f64 {
        [self.dx, self.dy, self.dz][axis]
    }

    /// Axis along which `a` and `b` share a face, if any.
    pub fn adjacency(&self, a: usize, b: usize) -> Option<usize> {
        let (ia, ja, ka) = self.ijk(a);
        let (ib, jb, kb) = self.ijk(b);
        let d = [ia.abs_diff(ib), ja.abs_diff(jb), ka.abs_diff(kb)];
        match d {
            [1, 0, 0] => Some(0),
            [0, 1, 0] => Some(1),
            [0, 0, 1] => Some(2),
            _ => None,
        }
    }

    fn face_trans(&self, a: usize, b: usize, axis: usize) -> f64 {
        let d = [self.dx, self.dy, self.dz];
        let area = d[(axis + 1) % 3] * d[(axis + 2) % 3];
        let half = 0.5 * self.size(axis);
        // A / (l_a/k_a + l_b/k_b): the distance-weighted harmonic mean times A/l.
        area / (half / self.perm(a, axis) + half / self.perm(b, axis))
    }

    /// All interior faces, x faces first, then y, then z.
    pub fn faces(&self) -> Vec<Face> {
        let mut out = Vec::new();
        for axis in 0..3 {
            let step = [1, self.nx, self.nx * self.ny][axis];
            for c in 0..self.n_cells() {
                let (i, j, k) = self.ijk(c);
                let has_next = match axis {
                    0 => i + 1 < self.nx,
                    1 => j + 1 < self.ny,
                    _ => k + 1 < self.nz,
                };
                if has_next {
                    let b = c + step;
                    out.push(Face { a: c, b, axis, trans: self.face_trans(c, b, axis) });
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &GridFile::new(self.clone()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: GridFile = io::read_json(path)?;
        f.check(path)?;
        Ok(f.grid)
    }
}

/// `k_f A / l` between face-adjacent cells (md m).
pub fn transmissibility(grid: &GridModel, a: usize, b: usize) -> Result<f64> {
    let n = grid.n_cells();
    if a >= n || b >= n {
        return Err(CoreError::InvalidArgument(format!("cell index out of range ({a}, {b}) for {n} cells")));
    }
    let axis = grid.adjacency(a, b).ok_or(CoreError::NotAdjacent { a, b })?;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    Ok(grid.face_trans(lo, hi, axis))
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    format: String,
    version: u32,
    units: Units,
    grid: GridModel,
}

#[derive(Serialize, Deserialize)]
struct Units {
    length: String,
    permeability: String,
    pressure: String,
    order: String,
}

impl GridFile {
    fn new(grid: GridModel) -> Self {
        Self {
            format: "co2gnsm-grid".into(),
            version: 1,
            units: Units {
                length: "m".into(),
                permeability: "md".into(),
                pressure: "bar".into(),
                order: "x-fastest, k = 0 is the top layer".into(),
            },
            grid,
        }
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.format != "co2gnsm-grid" || self.version != 1 {
            return Err(CoreError::format(path, format!("unsupported grid file {} v{}", self.format, self.version)));
        }
        let n = self.grid.n_cells();
        for (name, v) in [
            ("kx", &self.grid.kx),
            ("ky", &self.grid.ky),
            ("kz", &self.grid.kz),
            ("phi", &self.grid.phi),
            ("depth", &self.grid.depth),
            ("pv_mult", &self.grid.pv_mult),
        ] {
            if v.len() != n {
                return Err(CoreError::format(path, format!("{name} has {} entries for {n} cells", v.len())));
            }
        }
        Ok(())
    }
}

/// A horizontal well in aquifer coordinates (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Well {
    pub heel: [f64; 3],
    pub toe: [f64; 3],
}

impl Well {
    pub fn length(&self) -> f64 {
        dist(self.heel, self.toe)
    }

    pub fn midpoint(&self) -> [f64; 3] {
        [0.5 * (self.heel[0] + self.toe[0]), 0.5 * (self.heel[1] + self.toe[1]), 0.5 * (self.heel[2] + self.toe[2])]
    }
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellConfig {
    pub wells: Vec<Well>,
}

impl WellConfig {
    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }

    /// Heel xyz then toe xyz, well by well.
    pub fn to_vector(&self) -> Vec<f64> {
        self.wells.iter().flat_map(|w| w.heel.into_iter().chain(w.toe)).collect()
    }

    pub fn from_vector(u: &[f64]) -> Result<Self> {
        if u.len() % 6 != 0 || u.is_empty() {
            return Err(CoreError::InvalidArgument(format!("decision vector of length {} is not 6 n_w", u.len())));
        }
        let wells = u
            .chunks_exact(6)
            .map(|c| Well { heel: [c[0], c[1], c[2]], toe: [c[3], c[4], c[5]] })
            .collect();
        Ok(Self { wells })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &WellFile { format: "co2gnsm-wells".into(), version: 1, units: "m, aquifer frame, z down".into(), config: self.clone() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: WellFile = io::read_json(path)?;
        if f.format != "co2gnsm-wells" || f.version != 1 {
            return Err(CoreError::format(path, format!("unsupported well file {} v{}", f.format, f.version)));
        }
        Ok(f.config)
    }
}

#[derive(Serialize, Deserialize)]
struct WellFile {
    format: String,
    version: u32,
    units: String,
    config: WellConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub well: usize,
    pub cell: usize,
    /// Well index (md m).
    pub w: f64,
    /// Length of the well inside the cell (m).
    pub length: f64,
}

/// Cells crossed by the segment `p0 -> p1` (full-grid frame) in path order, with
/// the per-axis length components inside each cell. Zero-length contacts with a
/// cell (edges, corners) are skipped.
pub fn segment_cells(grid: &GridModel, p0: [f64; 3], p1: [f64; 3]) -> Vec<(usize, [f64; 3])> {
    let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let size = [grid.dx, grid.dy, grid.dz];
    let counts = [grid.nx, grid.ny, grid.nz];
    let mut ts = vec![0.0, 1.0];
    for ax in 0..3 {
        if d[ax] == 0.0 {
            continue;
        }
        let (lo, hi) = if d[ax] > 0.0 { (p0[ax], p1[ax]) } else { (p1[ax], p0[ax]) };
        let first = (lo / size[ax]).floor() as i64 + 1;
        let last = (hi / size[ax]).ceil() as i64 - 1;
        for m in first..=last {
            let t = (m as f64 * size[ax] - p0[ax]) / d[ax];
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<(usize, [f64; 3])> = Vec::new();
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt * len <= MIN_SEGMENT {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let mut ijk = [0usize; 3];
        for ax in 0..3 {
            let x = p0[ax] + tm * d[ax];
            ijk[ax] = ((x / size[ax]).floor().max(0.0) as usize).min(counts[ax] - 1);
        }
        let c = grid.idx(ijk[0], ijk[1], ijk[2]);
        let comp = [(dt * d[0]).abs(), (dt * d[1]).abs(), (dt * d[2]).abs()];
        match out.last_mut() {
            Some((last, acc)) if *last == c => {
                for ax in 0..3 {
                    acc[ax] += comp[ax];
                }
            }
            _ => out.push((c, comp)),
        }
    }
    out
}

/// Peaceman well index for the segment components `l` (m) inside cell `c`:
/// the per-axis indices combined as `sqrt(Wx^2 + Wy^2 + Wz^2)`.
pub fn peaceman_index(grid: &GridModel, c: usize, l: [f64; 3], rw: f64) -> Result<f64> {
    let k = [grid.kx[c], grid.ky[c], grid.kz[c]];
    let d = [grid.dx, grid.dy, grid.dz];
    let mut sq = 0.0;
    for ax in 0..3 {
        if l[ax] == 0.0 {
            continue;
        }
        let (a, b) = ((ax + 1) % 3, (ax + 2) % 3);
        let (ka, kb) = (k[a], k[b]);
        let ro = 0.28 * ((kb / ka).sqrt() * d[a] * d[a] + (ka / kb).sqrt() * d[b] * d[b]).sqrt()
            / ((kb / ka).powf(0.25) + (ka / kb).powf(0.25));
        if ro <= rw {
            return Err(CoreError::InvalidArgument(format!(
                "equivalent radius {ro:.4} m does not exceed the well radius {rw} m"
            )));
        }
        let w = 2.0 * PI * (ka * kb).sqrt() * l[ax] / (ro / rw).ln();
        sq += w * w;
    }
    Ok(sq.sqrt())
}

/// Completions of one horizontal well, heel to toe.
pub fn complete_well(grid: &GridModel, well_id: usize, well: &Well, rw: f64) -> Result<Vec<Completion>> {
    let err = |reason: String| CoreError::InvalidWell { well: well_id, reason };
    if well.heel[2] != well.toe[2] {
        return Err(err(format!("heel depth {} differs from toe depth {}", well.heel[2], well.toe[2])));
    }
    let ext = grid.aquifer_extent();
    for p in [well.heel, well.toe] {
        if (0..3).any(|ax| !(p[ax] >= 0.0 && p[ax] <= ext[ax])) {
            return Err(err(format!("point {p:?} lies outside the aquifer extent {ext:?}")));
        }
    }
    if well.length() <= MIN_SEGMENT {
        return Err(err("zero-length well".into()));
    }
    let o = grid.aquifer_origin();
    let shift = |p: [f64; 3]| [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
    segment_cells(grid, shift(well.heel), shift(well.toe))
        .into_iter()
        .map(|(cell, l)| {
            let length = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
            Ok(Completion { well: well_id, cell, w: peaceman_index(grid, cell, l, rw)?, length })
        })
        .collect()
}

/// Completions of every well, grouped by well in input order.
pub fn complete_wells(grid: &GridModel, config: &WellConfig, rw: f64) -> Result<Vec<Completion>> {
    let mut out = Vec::new();
    for (id, w) in config.wells.iter().enumerate() {
        out.extend(complete_well(grid, id, w, rw)?);
    }
    Ok(out)
}
