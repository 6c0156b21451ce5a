//! Default parameter set for Er:CaWO4 with Yb impurities at 4.37 GHz, B0 along b.
//!
//! Yb hyperfine constants are approximate values chosen to place the 171Yb and
//! 173Yb lines near their observed fields; they are not spectroscopic fits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::budget::{BudgetConfig, SpeciesSd};
use crate::cavity::Resonator;
use crate::constants::MU_B_OVER_HBAR;
use crate::sdmodel::TieConfig;
use crate::error::Result;
use crate::spinham::{find_transition, FieldVector, SpinSpecies, TransitionLabel};
use crate::thermal::{LevelPolarization, PolarizationModel, TransitionCoupling};

/// Resonator frequency at zero field, Hz.
pub const RESONATOR_HZ: f64 = 4.37e9;
/// Total erbium concentration, cm^-3.
pub const ER_CONCENTRATION_CM3: f64 = 2.26e17;
/// Total ytterbium concentration, cm^-3.
pub const YB_CONCENTRATION_CM3: f64 = 1.29e17;
/// 167Er fraction of all erbium.
pub const ER167_FRACTION: f64 = 1.0 / 4.37;
/// Nuclear-spin-free fraction of all erbium.
pub const ER_I0_FRACTION: f64 = 1.0 / 1.3;
pub const YB171_FRACTION: f64 = 0.143;
pub const YB173_FRACTION: f64 = 0.161;
pub const YB_I0_FRACTION: f64 = 0.70;
/// Er and Yb concentrations used for spectral-diffusion tying, ppm.
pub const ER_PPM: f64 = 22.88;
pub const YB_PPM: f64 = 14.17;
/// Operating field of the |+3/2> transition, T.
pub const OPERATING_FIELD: f64 = 0.0435;

const ER_G: [f64; 3] = [8.38, 8.38, 1.247];
const YB_G: [f64; 3] = [3.937, 3.937, 1.050];

pub fn er_i0() -> SpinSpecies {
    SpinSpecies::zeeman_only("Er", ER_G)
        .with_concentration(ER_CONCENTRATION_CM3 * ER_I0_FRACTION)
        .with_linewidth(36.2)
}

pub fn er167() -> SpinSpecies {
    SpinSpecies::zeeman_only("Er167", ER_G)
        .with_hyperfine(3.5, [-873.0, -873.0, -130.0])
        .with_concentration(ER_CONCENTRATION_CM3 * ER167_FRACTION)
        .with_linewidth(22.0)
}

pub fn yb_i0() -> SpinSpecies {
    SpinSpecies::zeeman_only("Yb", YB_G)
        .with_concentration(YB_CONCENTRATION_CM3 * YB_I0_FRACTION)
        .with_linewidth(5.6)
}

pub fn yb171() -> SpinSpecies {
    SpinSpecies::zeeman_only("Yb171", YB_G)
        .with_hyperfine(0.5, [-2950.0, -2950.0, -790.0])
        .with_concentration(YB_CONCENTRATION_CM3 * YB171_FRACTION)
        .with_linewidth(3.62)
}

pub fn yb173() -> SpinSpecies {
    SpinSpecies::zeeman_only("Yb173", YB_G)
        .with_hyperfine(2.5, [-812.0, -812.0, -218.0])
        .with_concentration(YB_CONCENTRATION_CM3 * YB173_FRACTION)
        .with_linewidth(5.9)
}

pub fn species() -> Vec<SpinSpecies> {
    vec![er_i0(), er167(), yb_i0(), yb171(), yb173()]
}

/// Resonator with loaded Q near 7.8e3 and a weak quadratic field pull.
pub fn resonator() -> Resonator {
    Resonator::new(2.0 * PI * RESONATOR_HZ, -2.0 * PI * 2e8, 3e6, 5e5)
}

/// One resonator-coupled transition with its measured coupling and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePreset {
    pub species: String,
    pub transition: TransitionLabel,
    /// Hz.
    pub gens: f64,
    /// FWHM, Hz.
    pub gamma: f64,
}

/// The five lines crossing the resonator between 30 and 50 mT.
pub fn coupled_lines() -> Vec<LinePreset> {
    let line = |species: &str, m_i: f64, gens_khz: f64, gamma_mhz: f64| LinePreset {
        species: species.into(),
        transition: TransitionLabel::nuclear(m_i),
        gens: gens_khz * 1e3,
        gamma: gamma_mhz * 1e6,
    };
    vec![
        line("Er167", 0.5, 2150.0, 16.3),
        line("Er", 0.0, 14135.0, 36.2),
        line("Yb173", -2.5, 1215.0, 5.9),
        line("Yb171", -0.5, 1465.0, 3.62),
        line("Er167", 1.5, 2105.0, 22.3),
    ]
}

/// Averaged gyromagnetic ratios in units of mu_B / hbar.
pub const GAMMA_TILDE_ER167_HALF: f64 = 4.75;
pub const GAMMA_TILDE_ER_I0: f64 = 5.71;
pub const GAMMA_TILDE_ER167_THREE_HALVES: f64 = 4.98;
pub const GAMMA_TILDE_YB_I0: f64 = 2.75;

/// Convert a gyromagnetic ratio in mu_B/hbar units to rad/s/T.
pub fn gamma_tilde(units: f64) -> f64 {
    units * MU_B_OVER_HBAR
}

/// Measured Yb I = 0 ensemble coupling used to infer the Yb concentration, Hz.
pub const GENS_YB_I0: f64 = 4.90e6;

pub fn budget_config() -> BudgetConfig {
    BudgetConfig {
        g_eff: 8.38,
        line_width: 22e6,
        bandwidth: 700e3,
        theta2: 1.9,
        rho167: 5.2e22,
        b0: OPERATING_FIELD,
        gamma_nsd: 12.0,
        species: vec![
            SpeciesSd { name: "Er".into(), g: 8.38, gamma_max: 400e3, rate_max: 1.4e3 },
            SpeciesSd { name: "Yb".into(), g: 3.937, gamma_max: 150e3, rate_max: 0.14e3 },
        ],
        level_species: er167(),
        transition: TransitionLabel::nuclear(1.5),
        convention: None,
    }
}

/// Er/Yb tying at bath temperature `t_bath`.
pub fn tie_config(t_bath: f64) -> TieConfig {
    TieConfig {
        g_er: 8.38,
        g_yb: 3.937,
        g_perp_er: 8.38,
        g_perp_yb: 3.937,
        n_er: ER_PPM,
        n_yb: YB_PPM,
        linewidth_er: 36.2e6,
        linewidth_yb: 5.6e6,
        b0: OPERATING_FIELD,
        t_bath,
    }
}

/// Resonance field of an Er167 nuclear-spin-conserving line at the resonator frequency, T.
pub fn er167_line_field(m_i: f64) -> Result<f64> {
    let omega = 2.0 * PI * RESONATOR_HZ;
    let dir = FieldVector::along_b(1.0).direction();
    Ok(find_transition(&er167(), omega, &dir, (0.005, 0.08), &TransitionLabel::nuclear(m_i), None)?.field)
}

/// Ensemble-coupling models of the three Er transitions whose couplings are
/// tracked versus temperature: `mI=+1/2`, `I=0`, `mI=+3/2`.
pub fn er_couplings() -> Result<Vec<TransitionCoupling>> {
    let omega0 = 2.0 * PI * RESONATOR_HZ;
    let hyperfine = |m_i: f64, gt: f64| -> Result<TransitionCoupling> {
        let label = TransitionLabel::nuclear(m_i);
        let field = FieldVector::along_b(er167_line_field(m_i)?);
        let levels = LevelPolarization::resolve(&er167(), &field, &label)?;
        Ok(TransitionCoupling {
            label: label.to_string(),
            gamma_tilde: gamma_tilde(gt),
            density_fraction: ER167_FRACTION,
            omega0,
            polarization: PolarizationModel::Levels(levels),
        })
    };
    Ok(vec![
        hyperfine(0.5, GAMMA_TILDE_ER167_HALF)?,
        TransitionCoupling {
            label: "I=0".into(),
            gamma_tilde: gamma_tilde(GAMMA_TILDE_ER_I0),
            density_fraction: ER_I0_FRACTION,
            omega0,
            polarization: PolarizationModel::TwoLevel { omega: omega0 },
        },
        hyperfine(1.5, GAMMA_TILDE_ER167_THREE_HALVES)?,
    ])
}
