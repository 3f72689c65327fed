//! Immiscible gas/water fluid description.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Darcy constant: (m^3/day) per (md m / cP bar).
pub const DARCY: f64 = 0.008_527_02;
/// Standard gravity (m/s^2).
pub const GRAVITY: f64 = 9.806_65;
/// Converts `rho * g * dz` in Pa to bar.
pub const PA_TO_BAR: f64 = 1e-5;
pub const DAYS_PER_YEAR: f64 = 365.25;
/// kg per Mt.
pub const KG_PER_MT: f64 = 1e9;

/// Piecewise-linear table, constant beyond its ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Table {
    pub fn eval(&self, v: f64) -> f64 {
        let (x, y) = (&self.x, &self.y);
        if v <= x[0] {
            return y[0];
        }
        let n = x.len();
        if v >= x[n - 1] {
            return y[n - 1];
        }
        let hi = x.partition_point(|&xi| xi <= v);
        let lo = hi - 1;
        let t = (v - x[lo]) / (x[hi] - x[lo]);
        y[lo] + t * (y[hi] - y[lo])
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidArgument(format!("{name} table: {m}")));
        if self.x.len() < 2 || self.x.len() != self.y.len() {
            return bad("needs at least two points and equal lengths");
        }
        if self.x.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("abscissae must increase strictly");
        }
        if self.y.windows(2).any(|w| w[1] < w[0]) {
            return bad("values must be nondecreasing");
        }
        if self.y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return bad("values must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidModel {
    /// krg as a function of gas saturation.
    pub krg: Table,
    /// krw as a function of water saturation.
    pub krw: Table,
    /// Connate water saturation.
    pub s_wc: f64,
    /// Critical gas saturation.
    pub s_gc: f64,
    /// Viscosities (cP).
    pub mu_g: f64,
    pub mu_w: f64,
    /// Compressibilities (1/bar).
    pub c_g: f64,
    pub c_w: f64,
    pub c_r: f64,
    /// Densities (kg/m^3) at `p_ref`.
    pub rho_g: f64,
    pub rho_w: f64,
    /// Reference pressure for densities and pore volume (bar).
    pub p_ref: f64,
}

impl Default for FluidModel {
    fn default() -> Self {
        Self::corey(CoreyParams::default()).expect("default Corey parameters are valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreyParams {
    pub s_wc: f64,
    pub s_gc: f64,
    pub n_w: f64,
    pub n_g: f64,
    pub krg_max: f64,
    pub points: usize,
}

impl Default for CoreyParams {
    fn default() -> Self {
        Self { s_wc: 0.2, s_gc: 0.05, n_w: 3.0, n_g: 2.0, krg_max: 0.5, points: 41 }
    }
}

impl FluidModel {
    /// Tabulated Corey curves with the default fluid properties.
    pub fn corey(p: CoreyParams) -> Result<Self> {
        if !(p.s_wc >= 0.0 && p.s_gc >= 0.0 && p.s_wc + p.s_gc < 1.0 && p.points >= 2) {
            return Err(CoreError::InvalidArgument(format!("invalid Corey end points {p:?}")));
        }
        let grid = |n: usize| (0..n).map(|i| i as f64 / (n - 1) as f64).collect::<Vec<_>>();
        let sg = grid(p.points);
        let krg = sg
            .iter()
            .map(|&s| {
                let e = ((s - p.s_gc) / (1.0 - p.s_wc - p.s_gc)).clamp(0.0, 1.0);
                p.krg_max * e.powf(p.n_g)
            })
            .collect();
        let sw = grid(p.points);
        let krw = sw
            .iter()
            .map(|&s| ((s - p.s_wc) / (1.0 - p.s_wc)).clamp(0.0, 1.0).powf(p.n_w))
            .collect();
        let f = Self {
            krg: Table { x: sg, y: krg },
            krw: Table { x: sw, y: krw },
            s_wc: p.s_wc,
            s_gc: p.s_gc,
            mu_g: 0.05,
            mu_w: 0.5,
            c_g: 2e-3,
            c_w: 4e-5,
            c_r: 5e-5,
            rho_g: 650.0,
            rho_w: 1050.0,
            p_ref: 155.0,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.krg.validate("krg")?;
        self.krw.validate("krw")?;
        if self.krg.eval(0.0) != 0.0 {
            return Err(CoreError::InvalidArgument("krg(0) must be 0".into()));
        }
        if self.krw.eval(self.s_wc) != 0.0 {
            return Err(CoreError::InvalidArgument("krw at connate water must be 0".into()));
        }
        for (name, v) in [("mu_g", self.mu_g), ("mu_w", self.mu_w), ("rho_g", self.rho_g), ("rho_w", self.rho_w)] {
            if !(v > 0.0) {
                return Err(CoreError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("c_g", self.c_g), ("c_w", self.c_w), ("c_r", self.c_r)] {
            if !(v >= 0.0) {
                return Err(CoreError::InvalidArgument(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn rho_gas(&self, p: f64) -> f64 {
        self.rho_g * (1.0 + self.c_g * (p - self.p_ref))
    }

    pub fn rho_water(&self, p: f64) -> f64 {
        self.rho_w * (1.0 + self.c_w * (p - self.p_ref))
    }

    /// Pore-volume factor relative to the reference pressure.
    pub fn pv_factor(&self, p: f64) -> f64 {
        1.0 + self.c_r * (p - self.p_ref)
    }

    /// Gas mobility (1/cP) at gas saturation `sg`.
    pub fn lambda_g(&self, sg: f64) -> f64 {
        self.krg.eval(sg) / self.mu_g
    }

    /// Water mobility (1/cP) at gas saturation `sg`.
    pub fn lambda_w(&self, sg: f64) -> f64 {
        self.krw.eval(1.0 - sg) / self.mu_w
    }

    pub fn lambda_t(&self, sg: f64) -> f64 {
        self.lambda_g(sg) + self.lambda_w(sg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_curves_honor_end_points() {
        let f = FluidModel::default();
        assert_eq!(f.krg.eval(0.0), 0.0);
        assert_eq!(f.krg.eval(f.s_gc), 0.0);
        assert_eq!(f.krw.eval(f.s_wc), 0.0);
        assert_eq!(f.krw.eval(1.0), 1.0);
        assert!(f.lambda_w(1.0 - f.s_wc) == 0.0);
    }

    #[test]
    fn table_interpolates_linearly_and_clamps() {
        let t = Table { x: vec![0.0, 0.5, 1.0], y: vec![0.0, 0.2, 1.0] };
        assert_eq!(t.eval(-1.0), 0.0);
        assert!((t.eval(0.25) - 0.1).abs() < 1e-15);
        assert!((t.eval(0.75) - 0.6).abs() < 1e-15);
        assert_eq!(t.eval(2.0), 1.0);
    }

    #[test]
    fn non_monotone_table_is_rejected() {
        let mut f = FluidModel::default();
        f.krg.y[10] = 0.9;
        assert!(f.validate().is_err());
    }
}
