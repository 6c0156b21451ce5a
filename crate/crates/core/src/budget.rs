//! Decoherence budget versus bath temperature: instantaneous diffusion Γ0,
//! combined spectral diffusion Γ(SD), a constant nuclear floor Γ(NSD), and the
//! resulting homogeneous linewidth Γ_h and T2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, MU_0, MU_B, TWO_PI};
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::sdmodel::{t2_from_params, thermal_factor};
use crate::spinham::{FieldVector, SpinSpecies, TransitionLabel};
use crate::thermal::LevelPolarization;

/// Pulse-angle factor of the instantaneous-diffusion rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleFactor {
    /// `sin^2(θ2/2)`.
    SinSquared,
    /// `sin^-2(θ2/2)`.
    InverseSinSquared,
}

/// How the thermal occupation of the excited transition enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PopulationMeasure {
    /// `p_lower + p_upper` of the transition's level pair.
    PairPopulation,
    /// `|p_lower - p_upper|`.
    PopulationDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthRatio {
    /// `Δω / Γ_line`: fraction of the line excited by the pulses.
    BandwidthOverLinewidth,
    /// `Γ_line / Δω`.
    LinewidthOverBandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gamma0Convention {
    pub angle: AngleFactor,
    pub population: PopulationMeasure,
    pub bandwidth: BandwidthRatio,
}

impl Gamma0Convention {
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(8);
        for angle in [AngleFactor::SinSquared, AngleFactor::InverseSinSquared] {
            for population in [PopulationMeasure::PairPopulation, PopulationMeasure::PopulationDifference] {
                for bandwidth in [BandwidthRatio::BandwidthOverLinewidth, BandwidthRatio::LinewidthOverBandwidth] {
                    out.push(Self { angle, population, bandwidth });
                }
            }
        }
        out
    }
}

/// Spectral-diffusion saturation values of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSd {
    pub name: String,
    /// g-factor along B0.
    pub g: f64,
    /// Hz.
    pub gamma_max: f64,
    /// s^-1.
    pub rate_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub g_eff: f64,
    /// Inhomogeneous FWHM of the probed line, Hz.
    pub line_width: f64,
    /// Pulse excitation bandwidth, Hz.
    pub bandwidth: f64,
    /// Rabi angle of the refocusing pulse, rad.
    pub theta2: f64,
    /// Density of the probed isotope, m^-3.
    pub rho167: f64,
    /// Tesla, along b.
    pub b0: f64,
    /// Hz.
    pub gamma_nsd: f64,
    pub species: Vec<SpeciesSd>,
    /// Species and transition whose level populations set Γ0.
    pub level_species: SpinSpecies,
    pub transition: TransitionLabel,
    /// Γ0 convention; `None` selects it by calibration against the anchors.
    #[serde(default)]
    pub convention: Option<Gamma0Convention>,
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("g_eff", self.g_eff),
            ("line width", self.line_width),
            ("excitation bandwidth", self.bandwidth),
            ("rho167", self.rho167),
            ("B0", self.b0),
        ] {
            ensure_positive(n, v)?;
        }
        ensure_finite("theta2", self.theta2)?;
        if !(self.theta2 > 0.0 && self.theta2 <= std::f64::consts::PI) {
            return Err(Error::Config(format!("theta2 must lie in (0, pi], got {}", self.theta2)));
        }
        ensure_finite("Gamma_NSD", self.gamma_nsd)?;
        if self.gamma_nsd < 0.0 {
            return Err(Error::Config("Gamma_NSD must be >= 0".into()));
        }
        for s in &self.species {
            for (n, v) in [("g", s.g), ("Gamma_max", s.gamma_max), ("R_max", s.rate_max)] {
                ensure_finite(n, v)?;
                if v < 0.0 {
                    return Err(Error::Config(format!("{}: {n} must be >= 0", s.name)));
                }
            }
            ensure_positive("species g", s.g)?;
        }
        self.level_species.validate()
    }
}

/// Instantaneous-diffusion rates the convention is calibrated against:
/// (bath temperature K, Γ0 Hz).
pub const GAMMA0_ANCHORS: [(f64, f64); 3] = [(0.023, 51.0), (0.530, 630.0), (0.700, 650.0)];

#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub convention: Gamma0Convention,
    /// Γ0 at each anchor temperature, Hz.
    pub values: Vec<f64>,
    /// Sum of squared log-ratios to the anchors.
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub selected: Gamma0Convention,
    pub anchors: Vec<(f64, f64)>,
    pub candidates: Vec<CandidateScore>,
}

/// Budget evaluator with the level structure resolved once.
#[derive(Debug, Clone)]
pub struct Budget {
    pub config: BudgetConfig,
    pub convention: Gamma0Convention,
    pub calibration: Option<CalibrationReport>,
    levels: LevelPolarization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetPoint {
    /// Kelvin.
    pub temperature: f64,
    /// Hz.
    pub gamma0: f64,
    pub gamma_sd: f64,
    pub gamma_nsd: f64,
    pub gamma_h: f64,
    /// s.
    pub t2: f64,
}

impl Budget {
    pub fn new(config: BudgetConfig) -> Result<Self> {
        config.validate()?;
        let field = FieldVector::along_b(config.b0);
        let levels = LevelPolarization::resolve(&config.level_species, &field, &config.transition)?;
        let mut budget = Self {
            convention: config.convention.unwrap_or(Gamma0Convention {
                angle: AngleFactor::SinSquared,
                population: PopulationMeasure::PairPopulation,
                bandwidth: BandwidthRatio::BandwidthOverLinewidth,
            }),
            config,
            calibration: None,
            levels,
        };
        if budget.config.convention.is_none() {
            let report = budget.calibrate(&GAMMA0_ANCHORS)?;
            budget.convention = report.selected;
            budget.calibration = Some(report);
        }
        Ok(budget)
    }

    /// `μ0 (g_eff μB)^2 ρ167 / (9√3 ħ)`, s^-1.
    pub fn gamma0_prefactor(&self) -> f64 {
        let c = &self.config;
        MU_0 * (c.g_eff * MU_B).powi(2) * c.rho167 / (9.0 * 3f64.sqrt() * HBAR)
    }

    pub fn gamma0_with(&self, t_bath: f64, conv: Gamma0Convention) -> Result<f64> {
        ensure_positive("bath temperature", t_bath)?;
        let c = &self.config;
        let pop = match conv.population {
            PopulationMeasure::PairPopulation => self.levels.pair_population(t_bath)?,
            PopulationMeasure::PopulationDifference => self.levels.difference(t_bath)?.abs(),
        };
        let s2 = (0.5 * c.theta2).sin().powi(2);
        let angle = match conv.angle {
            AngleFactor::SinSquared => s2,
            AngleFactor::InverseSinSquared => 1.0 / s2,
        };
        let bw = match conv.bandwidth {
            BandwidthRatio::BandwidthOverLinewidth => c.bandwidth / c.line_width,
            BandwidthRatio::LinewidthOverBandwidth => c.line_width / c.bandwidth,
        };
        Ok(self.gamma0_prefactor() * pop * angle * bw)
    }

    /// Instantaneous-diffusion rate Γ0(T), Hz.
    pub fn gamma0(&self, t_bath: f64) -> Result<f64> {
        self.gamma0_with(t_bath, self.convention)
    }

    /// Score every convention against `anchors` and pick the best.
    pub fn calibrate(&self, anchors: &[(f64, f64)]) -> Result<CalibrationReport> {
        if anchors.is_empty() {
            return Err(Error::Config("no calibration anchors".into()));
        }
        let candidates = Gamma0Convention::all()
            .into_iter()
            .map(|conv| {
                let values = anchors.iter().map(|(t, _)| self.gamma0_with(*t, conv)).collect::<Result<Vec<_>>>()?;
                let score = values
                    .iter()
                    .zip(anchors)
                    .map(|(v, (_, a))| if *v > 0.0 { (v / a).ln().powi(2) } else { f64::INFINITY })
                    .sum();
                Ok(CandidateScore { convention: conv, values, score })
            })
            .collect::<Result<Vec<_>>>()?;
        let best = candidates
            .iter()
            .min_by(|a, b| a.score.total_cmp(&b.score))
            .expect("eight candidates");
        Ok(CalibrationReport { selected: best.convention, anchors: anchors.to_vec(), candidates: candidates.clone() })
    }

    /// `sqrt((1/4π) Σ Γ_max R_max sech^4(g μB B0 / 2kT))`, Hz.
    pub fn gamma_sd(&self, t_bath: f64) -> Result<f64> {
        gamma_sd_combined(&self.config.species, self.config.b0, t_bath)
    }

    pub fn point(&self, t_bath: f64) -> Result<BudgetPoint> {
        let gamma0 = self.gamma0(t_bath)?;
        let gamma_sd = self.gamma_sd(t_bath)?;
        let gamma_nsd = self.config.gamma_nsd;
        let gh = gamma_h(gamma0, gamma_sd, gamma_nsd)?;
        let t2 = t2_from_params(gamma0, TWO_PI * (gamma_sd * gamma_sd + gamma_nsd * gamma_nsd))?;
        Ok(BudgetPoint { temperature: t_bath, gamma0, gamma_sd, gamma_nsd, gamma_h: gh, t2 })
    }
}

/// Combined spectral-diffusion rate of several species at one temperature, Hz.
pub fn gamma_sd_combined(species: &[SpeciesSd], b0: f64, t_bath: f64) -> Result<f64> {
    ensure_positive("bath temperature", t_bath)?;
    ensure_finite("B0", b0)?;
    let sum: f64 = species
        .iter()
        .map(|s| {
            let f = thermal_factor(s.g, b0, t_bath);
            s.gamma_max * s.rate_max * f * f
        })
        .sum();
    Ok((sum / (2.0 * TWO_PI)).sqrt())
}

fn check_rates(g0: f64, gsd: f64, gnsd: f64) -> Result<()> {
    for (n, v) in [("Gamma0", g0), ("Gamma_SD", gsd), ("Gamma_NSD", gnsd)] {
        ensure_finite(n, v)?;
        if v < 0.0 {
            return Err(Error::Input(format!("{n} must be >= 0, got {v}")));
        }
    }
    if g0 == 0.0 && gsd == 0.0 && gnsd == 0.0 {
        return Err(Error::Undefined("Gamma_h is undefined when all contributions vanish".into()));
    }
    Ok(())
}

/// Homogeneous linewidth `(Γ0 + sqrt(Γ0^2 + 4Γ_SD^2 + 4Γ_NSD^2)) / 2`, Hz.
pub fn gamma_h(gamma0: f64, gamma_sd: f64, gamma_nsd: f64) -> Result<f64> {
    check_rates(gamma0, gamma_sd, gamma_nsd)?;
    let q = gamma_sd * gamma_sd + gamma_nsd * gamma_nsd;
    Ok(0.5 * (gamma0 + (gamma0 * gamma0 + 4.0 * q).sqrt()))
}

/// The same quantity as `2(Γ_SD^2 + Γ_NSD^2) / (sqrt(Γ0^2 + 4Γ_SD^2 + 4Γ_NSD^2) - Γ0)`,
/// undefined when both diffusion terms vanish.
pub fn gamma_h_quotient(gamma0: f64, gamma_sd: f64, gamma_nsd: f64) -> Result<f64> {
    check_rates(gamma0, gamma_sd, gamma_nsd)?;
    let q = gamma_sd * gamma_sd + gamma_nsd * gamma_nsd;
    let den = (gamma0 * gamma0 + 4.0 * q).sqrt() - gamma0;
    if den <= 0.0 {
        return Err(Error::Undefined("quotient form needs a non-zero diffusion term".into()));
    }
    Ok(2.0 * q / den)
}

/// Budget rows for a temperature grid, in grid order.
pub fn budget_curve(budget: &Budget, temperatures: &[f64]) -> Result<Vec<BudgetPoint>> {
    if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Input(format!("temperatures must be positive, got {t}")));
    }
    temperatures.par_iter().map(|t| budget.point(*t)).collect()
}
