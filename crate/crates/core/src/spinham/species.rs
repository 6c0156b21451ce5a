use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::{H, MU_B, PER_CM3};
use crate::error::{ensure_finite, Error, Result};

/// An effective-spin paramagnetic species with diagonal g and hyperfine
/// tensors in the crystal (a, b, c) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSpecies {
    pub name: String,
    /// Electron (effective) spin S.
    #[serde(rename = "S")]
    pub electron_spin: f64,
    /// Nuclear spin I.
    #[serde(rename = "I")]
    pub nuclear_spin: f64,
    /// g-tensor diagonal (g_aa, g_bb, g_cc).
    #[serde(rename = "g")]
    pub g_diag: [f64; 3],
    /// Hyperfine tensor diagonal in MHz.
    #[serde(rename = "A_MHz", default)]
    pub a_diag_mhz: [f64; 3],
    /// Number density in cm^-3.
    #[serde(default)]
    pub concentration_cm3: f64,
    /// Inhomogeneous FWHM in MHz.
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(rename = "T1_s", default, skip_serializing_if = "Option::is_none")]
    pub t1_s: Option<f64>,
}

fn default_linewidth() -> f64 {
    1.0
}

fn is_half_integer(v: f64) -> bool {
    let twice = 2.0 * v;
    (twice - twice.round()).abs() < 1e-9
}

impl SpinSpecies {
    /// A nuclear-spin-free species with the given g diagonal.
    pub fn zeeman_only(name: impl Into<String>, g_diag: [f64; 3]) -> Self {
        Self {
            name: name.into(),
            electron_spin: 0.5,
            nuclear_spin: 0.0,
            g_diag,
            a_diag_mhz: [0.0; 3],
            concentration_cm3: 0.0,
            linewidth_mhz: 1.0,
            t1_s: None,
        }
    }

    pub fn with_hyperfine(mut self, nuclear_spin: f64, a_diag_mhz: [f64; 3]) -> Self {
        self.nuclear_spin = nuclear_spin;
        self.a_diag_mhz = a_diag_mhz;
        self
    }

    pub fn with_concentration(mut self, cm3: f64) -> Self {
        self.concentration_cm3 = cm3;
        self
    }

    pub fn with_linewidth(mut self, mhz: f64) -> Self {
        self.linewidth_mhz = mhz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(format!("species {}: {msg}", self.name)));
        if !(self.electron_spin >= 0.5 && is_half_integer(self.electron_spin)) {
            return bad(format!("S must be a half-integer >= 1/2, got {}", self.electron_spin));
        }
        if !(self.nuclear_spin >= 0.0 && is_half_integer(self.nuclear_spin)) {
            return bad(format!("I must be a half-integer >= 0, got {}", self.nuclear_spin));
        }
        if self.g_diag.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad(format!("g diagonal must be positive, got {:?}", self.g_diag));
        }
        if self.a_diag_mhz.iter().any(|a| !a.is_finite()) {
            return bad("non-finite hyperfine tensor".into());
        }
        if !(self.concentration_cm3.is_finite() && self.concentration_cm3 >= 0.0) {
            return bad(format!("concentration must be >= 0, got {}", self.concentration_cm3));
        }
        if !(self.linewidth_mhz.is_finite() && self.linewidth_mhz > 0.0) {
            return bad(format!("linewidth must be positive, got {}", self.linewidth_mhz));
        }
        Ok(())
    }

    pub fn two_s(&self) -> usize {
        (2.0 * self.electron_spin).round() as usize
    }

    pub fn two_i(&self) -> usize {
        (2.0 * self.nuclear_spin).round() as usize
    }

    /// Hilbert-space dimension (2S+1)(2I+1).
    pub fn dimension(&self) -> usize {
        (self.two_s() + 1) * (self.two_i() + 1)
    }

    pub fn g_tensor(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.g_diag))
    }

    /// Hyperfine tensor in Hz.
    pub fn a_tensor_hz(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.a_diag_mhz)) * 1e6
    }

    pub fn has_hyperfine(&self) -> bool {
        self.two_i() > 0 && self.a_diag_mhz.iter().any(|a| *a != 0.0)
    }

    /// Effective g-factor |g . n| along a unit direction.
    pub fn g_effective(&self, direction: &Vector3<f64>) -> f64 {
        (self.g_tensor() * direction).norm()
    }

    /// Zeeman splitting per tesla in Hz/T for an S = 1/2 Kramers doublet.
    pub fn zeeman_hz_per_tesla(&self, direction: &Vector3<f64>) -> f64 {
        self.g_effective(direction) * MU_B / H
    }

    /// Number density in m^-3.
    pub fn density_m3(&self) -> f64 {
        self.concentration_cm3 * PER_CM3
    }
}

/// Static field magnitude and orientation in the crystal (a, b, c) frame.
/// `theta` is the polar angle from c, `phi` the azimuth from a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    /// Tesla.
    pub magnitude: f64,
    pub theta: f64,
    pub phi: f64,
}

impl FieldVector {
    pub fn new(magnitude: f64, theta: f64, phi: f64) -> Self {
        Self { magnitude, theta, phi }
    }

    /// Field along the crystal b axis (perpendicular to c).
    pub fn along_b(magnitude: f64) -> Self {
        Self::new(magnitude, std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
    }

    /// Field in the a-c plane at angle `theta` from c (signed; negative tilts toward -a).
    pub fn in_ac_plane(magnitude: f64, theta: f64) -> Self {
        Self::new(magnitude, theta, 0.0)
    }

    pub fn from_direction(magnitude: f64, dir: &Vector3<f64>) -> Result<Self> {
        let n = dir.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Input("field direction must be a non-zero finite vector".into()));
        }
        let u = dir / n;
        Ok(Self::new(magnitude, u.z.clamp(-1.0, 1.0).acos(), u.y.atan2(u.x)))
    }

    pub fn with_magnitude(self, magnitude: f64) -> Self {
        Self { magnitude, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("field magnitude", self.magnitude)?;
        ensure_finite("field polar angle", self.theta)?;
        ensure_finite("field azimuth", self.phi)?;
        if self.magnitude < 0.0 {
            return Err(Error::Input(format!("field magnitude must be >= 0, got {}", self.magnitude)));
        }
        Ok(())
    }

    /// Unit vector (a, b, c).
    pub fn direction(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.direction() * self.magnitude
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_of_er167() {
        let s = SpinSpecies::zeeman_only("Er167", [8.38, 8.38, 1.247]).with_hyperfine(3.5, [-873.0, -873.0, -130.0]);
        assert_eq!(s.dimension(), 16);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_non_half_integer_spin() {
        let mut s = SpinSpecies::zeeman_only("x", [2.0; 3]);
        s.nuclear_spin = 0.3;
        assert!(s.validate().is_err());
        s.nuclear_spin = 0.0;
        s.electron_spin = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn along_b_direction() {
        let d = FieldVector::along_b(1.0).direction();
        assert!((d - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn non_finite_field_rejected() {
        assert!(FieldVector::along_b(f64::NAN).validate().is_err());
        assert!(FieldVector::new(1.0, f64::INFINITY, 0.0).validate().is_err());
    }
}
