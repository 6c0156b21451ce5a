//! Two-dimensional maps of the resonator's vacuum magnetic-field fluctuations
//! on the crystal side of the inductor, their Fock-state normalization, and
//! the field-weighted gyromagnetic ratio.

use serde::Serialize;

use crate::constants::{HBAR, MU_0};
use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Fluctuation field components on a rectilinear (x, z) grid, x < 0.
/// Values are stored x-major: index `ix * nz + iz`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldMap {
    /// m, strictly increasing, all < 0.
    pub x: Vec<f64>,
    /// m, strictly increasing.
    pub z: Vec<f64>,
    /// T.
    pub bx: Vec<f64>,
    /// T.
    pub bz: Vec<f64>,
    /// Inductor length along the current, m.
    pub length: f64,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Trapezoidal weights for nodes `v`.
fn trapezoid_weights(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = 0.5 * (v[k + 1] - v[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

impl FieldMap {
    pub fn new(x: Vec<f64>, z: Vec<f64>, bx: Vec<f64>, bz: Vec<f64>, length: f64) -> Result<Self> {
        let map = Self { x, z, bx, bz, length };
        map.validate()?;
        Ok(map)
    }

    /// Assemble a map from scattered `(x, z, bx, bz)` samples that together
    /// cover a full rectilinear grid (any order).
    pub fn from_samples(samples: &[(f64, f64, f64, f64)], length: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("field map has no samples".into()));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.0 >= 0.0 {
                return Err(Error::Data(format!(
                    "sample {k}: x = {} m lies outside the crystal half-space (x < 0)",
                    s.0
                )));
            }
        }
        let axis = |sel: fn(&(f64, f64, f64, f64)) -> f64| {
            let mut v: Vec<f64> = samples.iter().map(sel).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let x = axis(|s| s.0);
        let z = axis(|s| s.1);
        let (nx, nz) = (x.len(), z.len());
        if nx * nz != samples.len() {
            return Err(Error::Data(format!(
                "{} samples do not form a full {nx} x {nz} grid",
                samples.len()
            )));
        }
        let mut bx = vec![f64::NAN; nx * nz];
        let mut bz = vec![f64::NAN; nx * nz];
        for s in samples {
            let ix = x.binary_search_by(|v| v.total_cmp(&s.0)).expect("x on axis");
            let iz = z.binary_search_by(|v| v.total_cmp(&s.1)).expect("z on axis");
            if !bx[ix * nz + iz].is_nan() {
                return Err(Error::Data(format!("duplicate sample at x = {}, z = {}", s.0, s.1)));
            }
            bx[ix * nz + iz] = s.2;
            bz[ix * nz + iz] = s.3;
        }
        Self::new(x, z, bx, bz, length).map_err(|e| match e {
            Error::Input(m) => Error::Data(m),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("inductor length", self.length)?;
        if self.x.len() < 2 || self.z.len() < 2 {
            return Err(Error::Input("field map needs at least 2 nodes along each axis".into()));
        }
        if !strictly_increasing(&self.x) || !strictly_increasing(&self.z) {
            return Err(Error::Input("field map grids must be strictly increasing".into()));
        }
        if self.x.iter().any(|&x| x >= 0.0) {
            return Err(Error::Input("field map must lie in the crystal half-space x < 0".into()));
        }
        let n = self.x.len() * self.z.len();
        if self.bx.len() != n || self.bz.len() != n {
            return Err(Error::Input(format!("field arrays must hold {n} values")));
        }
        for v in self.x.iter().chain(&self.z).chain(&self.bx).chain(&self.bz) {
            ensure_finite("field map entry", *v)?;
        }
        Ok(())
    }

    /// Trapezoidal integral of `f(bx, bz)` over the grid.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let wx = trapezoid_weights(&self.x);
        let wz = trapezoid_weights(&self.z);
        let nz = self.z.len();
        let mut total = 0.0;
        for (ix, wxi) in wx.iter().enumerate() {
            let mut row = 0.0;
            for (iz, wzi) in wz.iter().enumerate() {
                let k = ix * nz + iz;
                row += wzi * f(self.bx[k], self.bz[k]);
            }
            total += wxi * row;
        }
        total
    }

    /// ∬ (δB1x² + δB1z²) dx dz in T² m².
    pub fn energy_integral(&self) -> f64 {
        self.integrate(|bx, bz| bx * bx + bz * bz)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            bx: self.bx.iter().map(|v| v * factor).collect(),
            bz: self.bz.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// `mu0 hbar omega_r / (4 L)`: field-energy integral of the single-photon
/// vacuum fluctuations per unit inductor length (T² m²).
pub fn fock_target(omega_r: f64, length: f64) -> f64 {
    MU_0 * HBAR * omega_r / (4.0 * length)
}

/// Rescale `map` so its energy integral equals [`fock_target`].
pub fn normalize(map: &FieldMap, omega_r: f64) -> Result<FieldMap> {
    map.validate()?;
    ensure_positive("resonator frequency", omega_r)?;
    let integral = map.energy_integral();
    if integral.is_nan() || integral <= 0.0 {
        return Err(Error::Input("field map integrates to zero and cannot be normalized".into()));
    }
    Ok(map.scaled((fock_target(omega_r, map.length) / integral).sqrt()))
}

/// Field-weighted gyromagnetic ratio
/// `2 sqrt(∬[(g⊥|Sx| δB1x)² + (g∥|Sz| δB1z)²] / ∬[δB1x² + δB1z²])`,
/// in the units of `gamma_perp`/`gamma_par`.
pub fn gamma_tilde(map: &FieldMap, sx_abs: f64, sz_abs: f64, gamma_perp: f64, gamma_par: f64) -> Result<f64> {
    map.validate()?;
    for (n, v) in [("|<Sx>|", sx_abs), ("|<Sz>|", sz_abs), ("gamma_perp", gamma_perp), ("gamma_par", gamma_par)] {
        ensure_finite(n, v)?;
    }
    let den = map.energy_integral();
    if den.is_nan() || den <= 0.0 {
        return Err(Error::Input("field map integrates to zero".into()));
    }
    let (cx, cz) = ((gamma_perp * sx_abs).powi(2), (gamma_par * sz_abs).powi(2));
    let num = map.integrate(|bx, bz| cx * bx * bx + cz * bz * bz);
    Ok(2.0 * (num / den).sqrt())
}

/// Geometry of the analytic strip-conductor map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyWire {
    /// Strip width along z, m.
    pub width: f64,
    /// Extent of the map into the crystal (along -x), m.
    pub depth: f64,
    /// Extent along z, centred on the strip, m.
    pub span: f64,
    pub nx: usize,
    pub nz: usize,
    /// Inductor length, m.
    pub length: f64,
}

impl Default for ToyWire {
    fn default() -> Self {
        Self {
            width: 5e-6,
            depth: 200e-6,
            span: 400e-6,
            nx: 200,
            nz: 400,
            length: 725e-6,
        }
    }
}

/// Field of a thin strip in the plane x = 0 spanning |z| ≤ w/2 with uniform
/// sheet current along y, per unit sheet current and up to a factor mu0/2pi.
pub fn strip_field(width: f64, x: f64, z: f64) -> (f64, f64) {
    let h = 0.5 * width;
    let bx = 0.5 * ((x * x + (z + h).powi(2)) / (x * x + (z - h).powi(2))).ln();
    let bz = -(((z + h) / x).atan() - ((z - h) / x).atan());
    (bx, bz)
}

/// Normalized fluctuation map of a current strip on the crystal surface,
/// sampled at cell centres of an `nx × nz` grid.
pub fn toy_wire_map(geom: &ToyWire, omega_r: f64) -> Result<FieldMap> {
    for (n, v) in [("width", geom.width), ("depth", geom.depth), ("span", geom.span), ("length", geom.length)] {
        ensure_positive(n, v)?;
    }
    if geom.nx < 2 || geom.nz < 2 {
        return Err(Error::Input("toy map needs at least 2 nodes per axis".into()));
    }
    let dx = geom.depth / geom.nx as f64;
    let dz = geom.span / geom.nz as f64;
    let x: Vec<f64> = (0..geom.nx).map(|k| -geom.depth + (k as f64 + 0.5) * dx).collect();
    let z: Vec<f64> = (0..geom.nz).map(|k| -0.5 * geom.span + (k as f64 + 0.5) * dz).collect();
    let mut bx = Vec::with_capacity(x.len() * z.len());
    let mut bz = Vec::with_capacity(x.len() * z.len());
    for &xi in &x {
        for &zi in &z {
            let (a, b) = strip_field(geom.width, xi, zi);
            bx.push(a);
            bz.push(b);
        }
    }
    normalize(&FieldMap::new(x, z, bx, bz, geom.length)?, omega_r)
}
