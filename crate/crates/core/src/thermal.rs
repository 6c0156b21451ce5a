//! Boltzmann polarization of spin transitions, the ensemble-coupling
//! temperature model, and the inversions built on it (concentration and
//! spin-bath temperature).

use serde::Serialize;

use crate::constants::{HBAR, K_B, MU_0, PER_CM3, TWO_PI};
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::fitkit::{self, FitOptions, FitProblem, FitResult, FitStatus, Parameter};
use crate::spinham::{resolve_transition, FieldVector, SpinSpecies, TransitionLabel};

/// `tanh(hbar omega / 2 k T)`: polarization of an isolated two-level system.
pub fn polarization_i0(t_bath: f64, omega: f64) -> Result<f64> {
    ensure_positive("bath temperature", t_bath)?;
    ensure_positive("transition frequency", omega)?;
    Ok((HBAR * omega / (2.0 * K_B * t_bath)).tanh())
}

/// Normalized Boltzmann populations of levels with angular energies
/// `energies` (rad/s). Exponents are shifted by the lowest energy so that
/// none overflows at millikelvin temperatures.
pub fn boltzmann_populations(energies: &[f64], t_bath: f64) -> Result<Vec<f64>> {
    ensure_positive("bath temperature", t_bath)?;
    if energies.is_empty() {
        return Err(Error::Input("no energy levels".into()));
    }
    let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta = HBAR / (K_B * t_bath);
    let w: Vec<f64> = energies.iter().map(|e| (-(e - e_min) * beta).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// A labelled transition of a multi-level species at the field where it is
/// addressed.
#[derive(Debug, Clone)]
pub struct PolarizationQuery {
    pub temperature: f64,
    pub field: FieldVector,
    pub transition: TransitionLabel,
    pub species: SpinSpecies,
}

/// Energies of all levels at one field plus the indices of one transition;
/// evaluating the temperature dependence does not require re-diagonalizing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPolarization {
    /// rad/s, ascending.
    pub energies: Vec<f64>,
    pub lower: usize,
    pub upper: usize,
}

impl LevelPolarization {
    pub fn resolve(species: &SpinSpecies, field: &FieldVector, transition: &TransitionLabel) -> Result<Self> {
        let (es, lower, upper) = resolve_transition(species, field, transition)?;
        Ok(Self { energies: es.energies.iter().cloned().collect(), lower, upper })
    }

    /// Population difference `p_lower - p_upper`.
    pub fn difference(&self, t_bath: f64) -> Result<f64> {
        let p = boltzmann_populations(&self.energies, t_bath)?;
        Ok(p[self.lower] - p[self.upper])
    }

    /// Combined population `p_lower + p_upper` of the level pair.
    pub fn pair_population(&self, t_bath: f64) -> Result<f64> {
        let p = boltzmann_populations(&self.energies, t_bath)?;
        Ok(p[self.lower] + p[self.upper])
    }

    /// Transition angular frequency.
    pub fn omega(&self) -> f64 {
        self.energies[self.upper] - self.energies[self.lower]
    }
}

/// Population difference of the queried transition, normalized over all
/// `(2S+1)(2I+1)` levels.
pub fn polarization_hyperfine(q: &PolarizationQuery) -> Result<f64> {
    LevelPolarization::resolve(&q.species, &q.field, &q.transition)?.difference(q.temperature)
}

/// Temperature dependence of the polarization of one transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PolarizationModel {
    /// Isolated two-level system at angular frequency `omega`.
    TwoLevel { omega: f64 },
    /// Transition embedded in a multi-level manifold.
    Levels(LevelPolarization),
}

impl PolarizationModel {
    pub fn polarization(&self, t_bath: f64) -> Result<f64> {
        match self {
            PolarizationModel::TwoLevel { omega } => polarization_i0(t_bath, *omega),
            PolarizationModel::Levels(l) => l.difference(t_bath),
        }
    }

    /// Limit T -> 0.
    pub fn ground_state_limit(&self) -> f64 {
        match self {
            PolarizationModel::TwoLevel { .. } => 1.0,
            PolarizationModel::Levels(l) => {
                let ground = l
                    .energies
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                if ground == l.lower {
                    1.0
                } else if ground == l.upper {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Parameters of `g_ens = (gamma_tilde/4) sqrt(P rho mu0 hbar omega0) / 2pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleCouplingModel {
    /// Averaged gyromagnetic ratio, rad/s/T.
    pub gamma_tilde: f64,
    /// Density of the addressed sub-ensemble, m^-3.
    pub density: f64,
    /// Resonator angular frequency.
    pub omega0: f64,
}

impl EnsembleCouplingModel {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("averaged gyromagnetic ratio", self.gamma_tilde)?;
        ensure_positive("sub-ensemble density", self.density)?;
        ensure_positive("resonator frequency", self.omega0)
    }
}

/// Ensemble coupling in Hz for polarization `p`.
pub fn ensemble_coupling(model: &EnsembleCouplingModel, p: f64) -> Result<f64> {
    model.validate()?;
    ensure_finite("polarization", p)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("polarization must lie in [0, 1], got {p}")));
    }
    Ok(model.gamma_tilde / 4.0 * (p * model.density * MU_0 * HBAR * model.omega0).sqrt() / TWO_PI)
}

/// One resonator-coupled transition whose density is a fixed fraction of the
/// total dopant concentration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionCoupling {
    pub label: String,
    /// rad/s/T.
    pub gamma_tilde: f64,
    /// Sub-ensemble density over total density (e.g. 1/1.3 for the I = 0 isotopes).
    pub density_fraction: f64,
    pub omega0: f64,
    pub polarization: PolarizationModel,
}

impl TransitionCoupling {
    fn model(&self, total_density: f64) -> EnsembleCouplingModel {
        EnsembleCouplingModel {
            gamma_tilde: self.gamma_tilde,
            density: total_density * self.density_fraction,
            omega0: self.omega0,
        }
    }

    /// g_ens in Hz at total density `rho` (m^-3) and bath temperature `t`.
    /// A negative population difference couples like its magnitude.
    pub fn gens(&self, rho: f64, t_bath: f64) -> Result<f64> {
        let p = self.polarization.polarization(t_bath)?.abs().min(1.0);
        ensemble_coupling(&self.model(rho), p)
    }

    /// Zero-temperature limit of [`gens`](Self::gens).
    pub fn gens_ground(&self, rho: f64) -> Result<f64> {
        ensemble_coupling(&self.model(rho), self.polarization.ground_state_limit().abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GensPoint {
    /// Kelvin.
    pub temperature: f64,
    /// Hz.
    pub gens: f64,
    /// Hz.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionSeries {
    pub coupling: TransitionCoupling,
    pub points: Vec<GensPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationFit {
    /// Total density, cm^-3.
    pub concentration_cm3: f64,
    pub std_error_cm3: f64,
    pub fit: FitResult,
}

/// Least-squares estimate of the total dopant density with every
/// sub-ensemble density tied to it by fixed ratios.
pub fn fit_concentration(series: &[TransitionSeries]) -> Result<ConcentrationFit> {
    let n_points: usize = series.iter().map(|s| s.points.len()).sum();
    if series.is_empty() || n_points == 0 {
        return Err(Error::Input("concentration fit needs at least one data point".into()));
    }
    for s in series {
        for p in &s.points {
            ensure_positive("temperature", p.temperature)?;
            ensure_finite("g_ens", p.gens)?;
            ensure_positive("g_ens sigma", p.sigma)?;
        }
    }
    // Initial guess from per-point inversion g ∝ sqrt(rho).
    let unit = 1e17 * PER_CM3;
    let mut guesses = Vec::new();
    for s in series {
        for p in &s.points {
            let g1 = s.coupling.gens(unit, p.temperature)?;
            if g1 > 0.0 && p.gens > 0.0 {
                guesses.push((p.gens / g1).powi(2));
            }
        }
    }
    if guesses.is_empty() {
        return Err(Error::Input("no data point carries a non-zero coupling".into()));
    }
    guesses.sort_by(f64::total_cmp);
    let x0 = guesses[guesses.len() / 2];

    // Parameter is rho in units of 1e17 cm^-3.
    let mut problem = FitProblem::new();
    problem.add_param(Parameter::free("rho_1e17_cm3", x0).bounded(0.0, f64::INFINITY));
    for s in series {
        let sigma: Vec<f64> = s.points.iter().map(|p| p.sigma).collect();
        let coupling = &s.coupling;
        let pts = &s.points;
        problem.add_block_sigma(coupling.label.clone(), &sigma, move |q, out| {
            for (o, p) in out.iter_mut().zip(pts) {
                *o = coupling.gens(q[0] * unit, p.temperature)? - p.gens;
            }
            Ok(())
        })?;
    }
    let fit = fitkit::solve(&problem, &FitOptions::default())?;
    if fit.status == FitStatus::MaxIter {
        return Err(Error::Fit(format!("concentration fit did not converge: {}", fit.diagnostics)));
    }
    Ok(ConcentrationFit {
        concentration_cm3: fit.params[0] * 1e17,
        std_error_cm3: fit.std_errors[0] * 1e17,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BathTemperature {
    /// Kelvin; 0 when the coupling sits at the ground-state asymptote.
    pub temperature: f64,
    pub lower: f64,
    pub upper: f64,
    /// The measured coupling equals the T -> 0 limit within its uncertainty.
    pub at_ground_limit: bool,
}

const T_SCAN_MIN: f64 = 1e-4;
const T_SCAN_MAX: f64 = 1e3;

fn scan_grid() -> Vec<f64> {
    let n = 600;
    (0..n).map(|k| T_SCAN_MIN * (T_SCAN_MAX / T_SCAN_MIN).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Largest coupling reached over the scan range or in the T -> 0 limit.
fn peak_gens(coupling: &TransitionCoupling, rho: f64) -> Result<f64> {
    scan_grid().iter().try_fold(coupling.gens_ground(rho)?, |m, &t| Ok(m.max(coupling.gens(rho, t)?)))
}

/// Lowest temperature at which `coupling.gens(rho, T) = target`, searched on a
/// logarithmic grid from 0.1 mK upward and refined by bisection. Models with
/// a non-monotone polarization (transitions not involving the ground level)
/// therefore resolve to the low-temperature branch.
fn invert_gens(coupling: &TransitionCoupling, rho: f64, target: f64) -> Result<Option<f64>> {
    let f = |t: f64| -> Result<f64> { Ok(coupling.gens(rho, t)? - target) };
    let grid = scan_grid();
    let mut prev = f(grid[0])?;
    if prev == 0.0 {
        return Ok(Some(grid[0]));
    }
    for w in grid.windows(2) {
        let cur = f(w[1])?;
        if (cur < 0.0) != (prev < 0.0) || cur == 0.0 {
            let (mut a, mut b, mut fa) = (w[0], w[1], prev);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = f(m)?;
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
                if (b - a) <= 1e-14 * b {
                    break;
                }
            }
            return Ok(Some(0.5 * (a + b)));
        }
        prev = cur;
    }
    Ok(None)
}

/// Spin-bath temperature implied by a measured coupling `gens ± sigma` (Hz)
/// on one transition of an ensemble with total density `rho` (m^-3).
pub fn infer_bath_temperature(gens: f64, sigma: f64, coupling: &TransitionCoupling, rho: f64) -> Result<BathTemperature> {
    ensure_finite("g_ens", gens)?;
    ensure_finite("g_ens sigma", sigma)?;
    ensure_positive("density", rho)?;
    if gens <= 0.0 {
        return Err(Error::Infeasible(format!("g_ens must be positive to infer a temperature, got {gens}")));
    }
    let asymptote = coupling.gens_ground(rho)?;
    // Transitions not involving the ground level start from zero coupling at
    // T -> 0 and peak at finite temperature.
    let peak = peak_gens(coupling, rho)?;
    let tol = 1e-12 * peak;
    if gens > peak + tol {
        return Err(Error::Infeasible(format!("g_ens {gens:.6e} Hz exceeds the largest attainable {peak:.6e} Hz")));
    }
    let sigma = sigma.abs();
    let grounded = asymptote > 0.0;
    if grounded && (asymptote - gens).abs() <= tol {
        let upper = match invert_gens(coupling, rho, gens - sigma)? {
            Some(t) if sigma > 0.0 => t,
            _ => 0.0,
        };
        return Ok(BathTemperature { temperature: 0.0, lower: 0.0, upper, at_ground_limit: true });
    }
    let t = invert_gens(coupling, rho, gens)?.ok_or_else(|| {
        Error::Infeasible(format!("g_ens {gens:.6e} Hz is not reached between {T_SCAN_MIN} K and {T_SCAN_MAX} K"))
    })?;
    let hi_g = (gens + sigma).min(peak);
    let lo_g = (gens - sigma).max(0.0);
    let a = if grounded && hi_g >= asymptote - tol { Some(0.0) } else { invert_gens(coupling, rho, hi_g)? };
    let b = invert_gens(coupling, rho, lo_g)?;
    let (mut lower, mut upper) = (a.unwrap_or(0.0), b.unwrap_or(f64::INFINITY));
    if lower > upper {
        std::mem::swap(&mut lower, &mut upper);
    }
    Ok(BathTemperature {
        temperature: t,
        lower: lower.min(t),
        upper: upper.max(t),
        at_ground_limit: grounded && (asymptote - gens).abs() <= sigma,
    })
}

/// Natural-abundance weight of the I = 0 isotopes of Er.
pub const ER_I0_ABUNDANCE: f64 = 0.77;
/// Natural-abundance weight of the I = 0 isotopes of Yb.
pub const YB_I0_ABUNDANCE: f64 = 0.70;

/// Yb density from the ratio of I = 0 ensemble couplings of Er and Yb:
/// `rho_Yb = (a_Er / a_Yb) rho_Er (g_Yb gt_Er / (g_Er gt_Yb))^2`.
pub fn yb_concentration_from_couplings(
    gens_er: f64,
    gens_yb: f64,
    gamma_tilde_er: f64,
    gamma_tilde_yb: f64,
    rho_er: f64,
    abundance_er: f64,
    abundance_yb: f64,
) -> Result<f64> {
    for (n, v) in [
        ("Er coupling", gens_er),
        ("Yb coupling", gens_yb),
        ("Er averaged gyromagnetic ratio", gamma_tilde_er),
        ("Yb averaged gyromagnetic ratio", gamma_tilde_yb),
        ("Er concentration", rho_er),
        ("Er abundance", abundance_er),
        ("Yb abundance", abundance_yb),
    ] {
        ensure_positive(n, v)?;
    }
    let ratio = gens_yb * gamma_tilde_er / (gens_er * gamma_tilde_yb);
    Ok(abundance_er / abundance_yb * rho_er * ratio * ratio)
}
