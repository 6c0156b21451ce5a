//! Echo-decay forward model with spectral diffusion from several paramagnetic
//! species, the temperature laws for linewidth and flip rate, Er/Yb parameter
//! tying, and 2PE/3PE fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B, MU_0, MU_B};
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::fitkit::{self, FitOptions, FitProblem, FitResult, FitStatus, Parameter};

/// Spectral-diffusion parameters of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdTerm {
    pub name: String,
    /// FWHM dynamic linewidth, Hz.
    pub gamma_sd: f64,
    /// Total flip rate, s^-1.
    pub rate: f64,
}

impl SdTerm {
    pub fn new(name: impl Into<String>, gamma_sd: f64, rate: f64) -> Self {
        Self { name: name.into(), gamma_sd, rate }
    }

    fn validate(&self) -> Result<()> {
        for (n, v) in [("spectral-diffusion linewidth", self.gamma_sd), ("flip rate", self.rate)] {
            ensure_finite(n, v)?;
            if v < 0.0 {
                return Err(Error::Input(format!("{}: {n} must be >= 0, got {v}", self.name)));
            }
        }
        Ok(())
    }
}

/// `1 - exp(-x)` without cancellation for small `x`.
fn saturation(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Effective decoherence rate `Γ0 + Σ (Γ_SD/2)(R τ + 1 - exp(-R T_W))` in Hz.
pub fn gamma_eff(tau: f64, t_w: f64, gamma0: f64, sd: &[SdTerm]) -> Result<f64> {
    for (n, v) in [("tau", tau), ("waiting time", t_w), ("gamma0", gamma0)] {
        ensure_finite(n, v)?;
        if v < 0.0 {
            return Err(Error::Input(format!("{n} must be >= 0, got {v}")));
        }
    }
    let mut g = gamma0;
    for s in sd {
        s.validate()?;
        g += 0.5 * s.gamma_sd * (s.rate * tau + saturation(s.rate * t_w));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EchoKind {
    #[serde(rename = "2PE")]
    TwoPulse,
    #[serde(rename = "3PE")]
    ThreePulse,
}

impl std::str::FromStr for EchoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "2PE" => Ok(EchoKind::TwoPulse),
            "3PE" => Ok(EchoKind::ThreePulse),
            other => Err(Error::Data(format!("unknown echo kind '{other}' (expected 2PE or 3PE)"))),
        }
    }
}

/// Modulation by one effective I = 1/2 nucleus: depth `k` and the nuclear
/// angular frequencies in the two electron manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eseem {
    pub depth: f64,
    pub omega_alpha: f64,
    pub omega_beta: f64,
}

impl Eseem {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("ESEEM depth", self.depth)?;
        ensure_finite("ESEEM omega_alpha", self.omega_alpha)?;
        ensure_finite("ESEEM omega_beta", self.omega_beta)?;
        if !(0.0..=1.0).contains(&self.depth) {
            return Err(Error::Input(format!("ESEEM depth must lie in [0, 1], got {}", self.depth)));
        }
        Ok(())
    }
}

/// Two-/three-pulse modulation envelope of one nucleus:
/// 2PE `1 - (k/2)(1 - cos wa t)(1 - cos wb t)`;
/// 3PE `1 - (k/4)[(1 - cos wa t)(1 - cos wb (t+T)) + (1 - cos wb t)(1 - cos wa (t+T))]`.
/// Values lie in `[1 - 2k, 1]`.
pub fn eseem_envelope(kind: EchoKind, tau: f64, t_w: f64, e: &Eseem) -> Result<f64> {
    e.validate()?;
    let (k, wa, wb) = (e.depth, e.omega_alpha, e.omega_beta);
    let ca = 1.0 - (wa * tau).cos();
    let cb = 1.0 - (wb * tau).cos();
    Ok(match kind {
        EchoKind::TwoPulse => 1.0 - 0.5 * k * ca * cb,
        EchoKind::ThreePulse => {
            let t = tau + t_w;
            1.0 - 0.25 * k * (ca * (1.0 - (wb * t).cos()) + cb * (1.0 - (wa * t).cos()))
        }
    })
}

/// Product of the envelopes of several nuclei.
pub fn eseem_product(kind: EchoKind, tau: f64, t_w: f64, nuclei: &[Eseem]) -> Result<f64> {
    nuclei.iter().try_fold(1.0, |v, e| Ok(v * eseem_envelope(kind, tau, t_w, e)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoConfig {
    pub kind: EchoKind,
    /// s.
    pub tau: f64,
    /// s; ignored (treated as 0) for 2PE.
    pub t_w: f64,
    /// Hz.
    pub gamma0: f64,
    pub a0: f64,
    /// Spin-lattice time, s; `None` means infinite.
    pub t1: Option<f64>,
    #[serde(default)]
    pub eseem: Vec<Eseem>,
}

impl EchoConfig {
    fn waiting(&self) -> f64 {
        match self.kind {
            EchoKind::TwoPulse => 0.0,
            EchoKind::ThreePulse => self.t_w,
        }
    }
}

/// `V A0 exp(-2π Γ_eff τ) exp(-T_W/T1)`.
pub fn echo_amplitude(cfg: &EchoConfig, sd: &[SdTerm]) -> Result<f64> {
    let t_w = cfg.waiting();
    ensure_finite("echo amplitude A0", cfg.a0)?;
    let g = gamma_eff(cfg.tau, t_w, cfg.gamma0, sd)?;
    let v = eseem_product(cfg.kind, cfg.tau, t_w, &cfg.eseem)?;
    let t1 = match cfg.t1 {
        Some(t1) => {
            ensure_positive("T1", t1)?;
            (-t_w / t1).exp()
        }
        None => 1.0,
    };
    Ok(v * cfg.a0 * (-2.0 * PI * g * cfg.tau).exp() * t1)
}

/// `sech^2(g μB B0 / 2 k T)`: the thermal factor shared by the linewidth and
/// flip-flop laws.
pub fn thermal_factor(g: f64, b0: f64, t_bath: f64) -> f64 {
    let x = g * MU_B * b0 / (2.0 * K_B * t_bath);
    let c = x.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

fn check_temperature(t: f64) -> Result<()> {
    ensure_positive("bath temperature", t)
}

/// `Γ_max sech^2(g μB B0 / 2kT)`.
pub fn gamma_sd_of_t(gamma_max: f64, g: f64, b0: f64, t_bath: f64) -> Result<f64> {
    check_temperature(t_bath)?;
    Ok(gamma_max * thermal_factor(g, b0, t_bath))
}

/// Constants of the flip-rate law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRateLaw {
    pub alpha_ff: f64,
    pub alpha_ph: f64,
    /// g-factor along B0.
    pub g: f64,
    /// g-factor perpendicular to B0 (flip-flop matrix element).
    pub g_perp: f64,
    /// Density.
    pub n: f64,
    /// Inhomogeneous linewidth Γ_S.
    pub linewidth: f64,
}

/// `α_ff g⊥^4 n^2 / Γ sech^2(x) + α_ph g^3 B0^5 coth(x)`, `x = g μB B0 / 2kT`.
pub fn flip_rate_of_t(law: &FlipRateLaw, b0: f64, t_bath: f64) -> Result<f64> {
    check_temperature(t_bath)?;
    ensure_positive("linewidth", law.linewidth)?;
    let ff = law.alpha_ff * law.g_perp.powi(4) * law.n * law.n / law.linewidth * thermal_factor(law.g, b0, t_bath);
    let ph = if law.alpha_ph == 0.0 {
        0.0
    } else {
        let x = law.g * MU_B * b0 / (2.0 * K_B * t_bath);
        law.alpha_ph * law.g.powi(3) * b0.powi(5) / x.tanh()
    };
    Ok(ff + ph)
}

/// `μB^2 μ0 g_Er g_S n_S / (9 √3 ħ)` with `n_S` in m^-3.
pub fn gamma_max_analytic(g_er: f64, g_s: f64, n_s: f64) -> Result<f64> {
    ensure_finite("density", n_s)?;
    if n_s < 0.0 {
        return Err(Error::Input(format!("density must be >= 0, got {n_s}")));
    }
    Ok(MU_B * MU_B * MU_0 * g_er * g_s * n_s / (9.0 * 3f64.sqrt() * HBAR))
}

/// Fixed quantities relating the Yb spectral-diffusion pair to the Er pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieConfig {
    /// g along B0 (thermal factor and linewidth scale).
    pub g_er: f64,
    pub g_yb: f64,
    /// g perpendicular to B0 (flip-flop scale).
    pub g_perp_er: f64,
    pub g_perp_yb: f64,
    /// Concentrations (any common unit).
    pub n_er: f64,
    pub n_yb: f64,
    /// Inhomogeneous linewidths, Hz.
    pub linewidth_er: f64,
    pub linewidth_yb: f64,
    /// Tesla.
    pub b0: f64,
    /// Kelvin.
    pub t_bath: f64,
}

impl TieConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("g_er", self.g_er),
            ("g_yb", self.g_yb),
            ("g_perp_er", self.g_perp_er),
            ("g_perp_yb", self.g_perp_yb),
            ("n_er", self.n_er),
            ("n_yb", self.n_yb),
            ("linewidth_er", self.linewidth_er),
            ("linewidth_yb", self.linewidth_yb),
            ("b0", self.b0),
            ("t_bath", self.t_bath),
        ] {
            ensure_positive(n, v)?;
        }
        Ok(())
    }

    /// `(Γ_SD^Yb / Γ_SD^Er, R^Yb / R^Er)`.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let s_er = thermal_factor(self.g_er, self.b0, self.t_bath);
        let s_yb = thermal_factor(self.g_yb, self.b0, self.t_bath);
        if s_er == 0.0 {
            return Err(Error::Undefined("Er thermal factor underflows at this temperature".into()));
        }
        let gamma = self.g_yb * self.n_yb * s_yb / (self.g_er * self.n_er * s_er);
        let rate = self.linewidth_er / self.linewidth_yb * self.g_perp_yb.powi(4) * self.n_yb.powi(2) * s_yb
            / (self.g_perp_er.powi(4) * self.n_er.powi(2) * s_er);
        Ok((gamma, rate))
    }
}

/// Yb spectral-diffusion pair implied by the Er pair.
pub fn tie_species(er: &SdTerm, cfg: &TieConfig) -> Result<SdTerm> {
    er.validate()?;
    let (rg, rr) = cfg.ratios()?;
    Ok(SdTerm::new("Yb", er.gamma_sd * rg, er.rate * rr))
}

/// `T2 = (-a + sqrt(a^2 + 2b/π)) / b`, evaluated as `2 / (π (a + sqrt(a^2 + 2b/π)))`
/// so that `b -> 0` gives `1/(π a)`. At τ = T2/2 the 2PE exponent
/// `2π(aτ + bτ^2)` equals 1.
pub fn t2_from_params(a: f64, b: f64) -> Result<f64> {
    ensure_finite("a", a)?;
    ensure_finite("b", b)?;
    if a < 0.0 || b < 0.0 {
        return Err(Error::Input(format!("a and b must be >= 0, got a = {a}, b = {b}")));
    }
    if a == 0.0 && b == 0.0 {
        return Err(Error::Undefined("T2 is infinite when a = b = 0".into()));
    }
    Ok(2.0 / (PI * (a + (a * a + 2.0 * b / PI).sqrt())))
}

/// One echo measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoPoint {
    /// s.
    pub tau: f64,
    /// s.
    pub t_w: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoDataset {
    pub kind: EchoKind,
    pub points: Vec<EchoPoint>,
    /// Kelvin.
    pub t_bath: f64,
    /// Tesla.
    pub b0: f64,
    /// Free-form label such as a pulse power.
    #[serde(default)]
    pub tag: Option<String>,
}

impl EchoDataset {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Input("echo dataset is empty".into()));
        }
        for p in &self.points {
            ensure_finite("echo amplitude", p.amplitude)?;
            ensure_positive("echo sigma", p.sigma)?;
            if !(p.tau >= 0.0 && p.t_w >= 0.0) {
                return Err(Error::Input(format!("negative delay in echo point {p:?}")));
            }
        }
        Ok(())
    }

    /// Points grouped by distinct τ (ascending), each group sorted by T_W.
    pub fn curves_by_tau(&self) -> Vec<(f64, Vec<EchoPoint>)> {
        let mut taus: Vec<f64> = self.points.iter().map(|p| p.tau).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-15));
        taus.into_iter()
            .map(|t| {
                let mut c: Vec<EchoPoint> = self
                    .points
                    .iter()
                    .cloned()
                    .filter(|p| (p.tau - t).abs() <= 1e-12 * t.abs().max(1e-15))
                    .collect();
                c.sort_by(|a, b| a.t_w.total_cmp(&b.t_w));
                (t, c)
            })
            .collect()
    }
}

/// Settings for a 3PE family fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFitConfig {
    /// Instantaneous-diffusion rate, Hz (absorbed by the per-curve amplitudes).
    pub gamma0: f64,
    pub t1: Option<f64>,
    #[serde(default)]
    pub eseem: Vec<Eseem>,
    /// Tie the Yb pair to the Er pair; `None` fits a single species.
    pub tie: Option<TieConfig>,
    /// Starting values; estimated from the data when absent.
    pub initial_gamma_sd: Option<f64>,
    pub initial_rate: Option<f64>,
}

impl Default for FamilyFitConfig {
    fn default() -> Self {
        Self { gamma0: 0.0, t1: None, eseem: Vec::new(), tie: None, initial_gamma_sd: None, initial_rate: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyFit {
    pub gamma_sd_er: f64,
    pub gamma_sd_er_err: f64,
    pub rate_er: f64,
    pub rate_er_err: f64,
    pub gamma_sd_yb: f64,
    pub gamma_sd_yb_err: f64,
    pub rate_yb: f64,
    pub rate_yb_err: f64,
    /// Per-curve amplitudes in τ order.
    pub amplitudes: Vec<f64>,
    pub taus: Vec<f64>,
    /// T2 from the T_W = 0 exponent with the fitted pairs.
    pub t2: f64,
    pub warnings: Vec<String>,
    pub fit: FitResult,
}

const GAMMA_UNIT: f64 = 1e3;
const RATE_UNIT: f64 = 1e3;

/// Joint fit of 3PE decays at several τ: free Er pair (Γ_SD, R), optional
/// Yb pair tied to it, free amplitude per curve.
pub fn fit_3pe_family(data: &EchoDataset, cfg: &FamilyFitConfig) -> Result<FamilyFit> {
    data.validate()?;
    if data.kind != EchoKind::ThreePulse {
        return Err(Error::Input("family fit expects 3PE data".into()));
    }
    let curves = data.curves_by_tau();
    let mut warnings = Vec::new();
    if curves.len() < 4 {
        warnings.push(format!(
            "only {} distinct tau values; at least 4 curves are needed to separate Gamma_SD and R reliably",
            curves.len()
        ));
    }
    let t_w_max = data.points.iter().map(|p| p.t_w).fold(0.0, f64::max);
    let (rg, rr) = match &cfg.tie {
        Some(t) => t.ratios()?,
        None => (0.0, 0.0),
    };

    // Starting values.
    let r0 = cfg.initial_rate.unwrap_or_else(|| {
        let mut tw: Vec<f64> = data.points.iter().map(|p| p.t_w).filter(|t| *t > 0.0).collect();
        tw.sort_by(f64::total_cmp);
        tw.get(tw.len() / 2).map_or(1e3, |m| 1.0 / m)
    });
    let g0 = match cfg.initial_gamma_sd {
        Some(g) => g,
        None => {
            let (tau, c) = curves.last().expect("non-empty");
            let first = c.first().expect("point");
            let last = c.last().expect("point");
            let drop = (first.amplitude.abs().max(1e-300) / last.amplitude.abs().max(1e-300)).ln().max(1e-3);
            let sat = saturation(r0 * last.t_w) - saturation(r0 * first.t_w);
            let scale = 1.0 + rg * (rr * r0 * last.t_w).min(1.0);
            drop / (PI * tau * sat.max(1e-3) * scale)
        }
    };

    let model = |q: &[f64], tau: f64, t_w: f64| -> Result<f64> {
        let mut sd = vec![SdTerm::new("Er", q[0] * GAMMA_UNIT, q[1] * RATE_UNIT)];
        if cfg.tie.is_some() {
            sd.push(SdTerm::new("Yb", q[2] * GAMMA_UNIT, q[3] * RATE_UNIT));
        }
        let c = EchoConfig {
            kind: EchoKind::ThreePulse,
            tau,
            t_w,
            gamma0: cfg.gamma0,
            a0: 1.0,
            t1: cfg.t1,
            eseem: cfg.eseem.clone(),
        };
        echo_amplitude(&c, &sd)
    };
    let mut problem = FitProblem::new();
    let ig = problem.add_param(Parameter::free("gamma_sd_er_kHz", g0 / GAMMA_UNIT).bounded(0.0, f64::INFINITY));
    let ir = problem.add_param(Parameter::free("rate_er_per_ms", r0 / RATE_UNIT).bounded(0.0, f64::INFINITY));
    problem.add_param(Parameter::tied("gamma_sd_yb_kHz", ig, rg, 0.0));
    problem.add_param(Parameter::tied("rate_yb_per_ms", ir, rr, 0.0));
    let q0 = [g0 / GAMMA_UNIT, r0 / RATE_UNIT, rg * g0 / GAMMA_UNIT, rr * r0 / RATE_UNIT];
    for (k, (tau, c)) in curves.iter().enumerate() {
        let m0 = model(&q0, *tau, c[0].t_w)?;
        let a_init = if m0 != 0.0 { c[0].amplitude / m0 } else { c[0].amplitude };
        problem.add_param(Parameter::free(format!("a0_{k}"), a_init));
    }
    for (k, (tau, c)) in curves.iter().enumerate() {
        let sigma: Vec<f64> = c.iter().map(|p| p.sigma).collect();
        let model = &model;
        let tau = *tau;
        problem.add_block_sigma(format!("tau_{:.3}us", tau * 1e6), &sigma, move |q, out| {
            let a0 = q[4 + k];
            for (o, p) in out.iter_mut().zip(c) {
                *o = a0 * model(q, tau, p.t_w)? - p.amplitude;
            }
            Ok(())
        })?;
    }
    let fit = fitkit::solve(&problem, &FitOptions::default())?;
    if fit.status == FitStatus::MaxIter {
        return Err(Error::Fit(format!("3PE family fit did not converge: {}", fit.diagnostics)));
    }
    let (gsd, rate) = (fit.params[0] * GAMMA_UNIT, fit.params[1] * RATE_UNIT);
    if rate * t_w_max < 0.1 {
        warnings.push(format!(
            "R * T_W <= {:.3} over the data: only the product Gamma_SD * R is identifiable",
            rate * t_w_max
        ));
    }
    if fit.status == FitStatus::Singular {
        warnings.push(fit.diagnostics.clone());
    }
    let mut sd = vec![SdTerm::new("Er", gsd, rate)];
    if cfg.tie.is_some() {
        sd.push(SdTerm::new("Yb", gsd * rg, rate * rr));
    }
    let b: f64 = sd.iter().map(|s| 0.5 * s.gamma_sd * s.rate).sum();
    let t2 = t2_from_params(cfg.gamma0, b).unwrap_or(f64::INFINITY);
    Ok(FamilyFit {
        gamma_sd_er: gsd,
        gamma_sd_er_err: fit.std_errors[0] * GAMMA_UNIT,
        rate_er: rate,
        rate_er_err: fit.std_errors[1] * RATE_UNIT,
        gamma_sd_yb: gsd * rg,
        gamma_sd_yb_err: fit.std_errors[2] * GAMMA_UNIT,
        rate_yb: rate * rr,
        rate_yb_err: fit.std_errors[3] * RATE_UNIT,
        amplitudes: fit.params[4..].to_vec(),
        taus: curves.iter().map(|c| c.0).collect(),
        t2,
        warnings,
        fit,
    })
}

/// A 2PE decay curve (T_W = 0) with an optional tag such as a pulse power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPulseCurve {
    pub tag: String,
    pub points: Vec<EchoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SdProduct {
    /// Shared free `Σ Γ_SD R` (s^-2).
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPulseCurveFit {
    pub tag: String,
    /// Hz.
    pub gamma0: f64,
    pub gamma0_err: f64,
    pub a0: f64,
    /// s.
    pub t2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPulseFit {
    pub curves: Vec<TwoPulseCurveFit>,
    /// `Σ Γ_SD R`, s^-2.
    pub sd_product: f64,
    pub sd_product_err: f64,
    pub fit: FitResult,
}

const SD_PRODUCT_UNIT: f64 = 1e6;

/// Log-linear least squares for a starting point: `ln A = ln A0 - 2πΓ0 τ - π s τ^2`.
fn two_pulse_guess(points: &[EchoPoint], eseem: &[Eseem]) -> Result<(f64, f64, f64)> {
    let rows: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.amplitude > 0.0)
        .map(|p| {
            let v = eseem_product(EchoKind::TwoPulse, p.tau, 0.0, eseem).unwrap_or(1.0);
            (p.tau, (p.amplitude / v.max(1e-6)).ln())
        })
        .collect();
    if rows.len() < 3 {
        let a = points.iter().map(|p| p.amplitude.abs()).fold(0.0, f64::max);
        return Ok((a.max(1e-12), 100.0, 0.0));
    }
    let scale = rows.iter().map(|r| r.0).fold(0.0, f64::max).max(1e-12);
    let m = DMatrix::from_fn(rows.len(), 3, |i, j| (rows[i].0 / scale).powi(j as i32));
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let sol = m
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Fit(format!("2PE starting-point regression failed: {e}")))?;
    let a0 = sol[0].exp();
    let gamma0 = (-sol[1] / scale / (2.0 * PI)).max(0.0);
    let s = (-sol[2] / (scale * scale) / PI).max(0.0);
    Ok((a0, gamma0, s))
}

/// Fit 2PE curves with a per-curve Γ0 and amplitude and a shared (or fixed)
/// `Σ Γ_SD R`. With several tagged curves this is the pulse-power study.
pub fn fit_2pe(curves: &[TwoPulseCurve], eseem: &[Eseem], product: SdProduct) -> Result<TwoPulseFit> {
    if curves.is_empty() || curves.iter().any(|c| c.points.is_empty()) {
        return Err(Error::Input("2PE fit needs at least one non-empty curve".into()));
    }
    for c in curves {
        for p in &c.points {
            ensure_finite("echo amplitude", p.amplitude)?;
            ensure_positive("echo sigma", p.sigma)?;
            if p.tau < 0.0 {
                return Err(Error::Input("negative tau".into()));
            }
        }
    }
    let guesses: Vec<(f64, f64, f64)> = curves.iter().map(|c| two_pulse_guess(&c.points, eseem)).collect::<Result<_>>()?;
    let mut problem = FitProblem::new();
    let s_init = guesses.iter().map(|g| g.2).sum::<f64>() / guesses.len() as f64;
    let is = match product {
        SdProduct::Free => problem.add_param(Parameter::free("sd_product_1e6", s_init / SD_PRODUCT_UNIT).bounded(0.0, f64::INFINITY)),
        SdProduct::Fixed(v) => {
            ensure_finite("fixed Gamma_SD R", v)?;
            problem.add_param(Parameter::fixed("sd_product_1e6", v / SD_PRODUCT_UNIT))
        }
    };
    for (k, g) in guesses.iter().enumerate() {
        problem.add_param(Parameter::free(format!("gamma0_{k}"), g.1).bounded(0.0, f64::INFINITY));
        problem.add_param(Parameter::free(format!("a0_{k}"), g.0));
    }
    for (k, c) in curves.iter().enumerate() {
        let sigma: Vec<f64> = c.points.iter().map(|p| p.sigma).collect();
        let pts = &c.points;
        problem.add_block_sigma(c.tag.clone(), &sigma, move |q, out| {
            let s = q[is] * SD_PRODUCT_UNIT;
            let (g0, a0) = (q[1 + 2 * k], q[2 + 2 * k]);
            for (o, p) in out.iter_mut().zip(pts) {
                let v = eseem_product(EchoKind::TwoPulse, p.tau, 0.0, eseem)?;
                *o = v * a0 * (-2.0 * PI * p.tau * (g0 + 0.5 * s * p.tau)).exp() - p.amplitude;
            }
            Ok(())
        })?;
    }
    let fit = fitkit::solve(&problem, &FitOptions::default())?;
    if fit.status == FitStatus::MaxIter {
        return Err(Error::Fit(format!("2PE fit did not converge: {}", fit.diagnostics)));
    }
    let s = fit.params[is] * SD_PRODUCT_UNIT;
    let out = curves
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let g0 = fit.params[1 + 2 * k];
            Ok(TwoPulseCurveFit {
                tag: c.tag.clone(),
                gamma0: g0,
                gamma0_err: fit.std_errors[1 + 2 * k],
                a0: fit.params[2 + 2 * k],
                t2: t2_from_params(g0, 0.5 * s).unwrap_or(f64::INFINITY),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoPulseFit { curves: out, sd_product: s, sd_product_err: fit.std_errors[is] * SD_PRODUCT_UNIT, fit })
}
