use spinbath::constants::{MU_B_OVER_HBAR, PER_CM3, TWO_PI};
use spinbath::presets;
use spinbath::spinham::{FieldVector, TransitionLabel};
use spinbath::thermal::{
    boltzmann_populations, ensemble_coupling, fit_concentration, infer_bath_temperature, polarization_hyperfine,
    yb_concentration_from_couplings, EnsembleCouplingModel, GensPoint, LevelPolarization, PolarizationModel,
    PolarizationQuery, TransitionCoupling, TransitionSeries,
};

fn omega() -> f64 {
    TWO_PI * 4.37e9
}

fn couplings() -> Vec<TransitionCoupling> {
    let hyperfine = |m_i: f64, field: f64, gt: f64| {
        let lp = LevelPolarization::resolve(&presets::er167(), &FieldVector::along_b(field), &TransitionLabel::nuclear(m_i))
            .unwrap();
        TransitionCoupling {
            label: format!("mI={m_i:+}"),
            gamma_tilde: gt * MU_B_OVER_HBAR,
            density_fraction: presets::ER167_FRACTION,
            omega0: omega(),
            polarization: PolarizationModel::Levels(lp),
        }
    };
    vec![
        hyperfine(0.5, 0.0345, 4.75),
        TransitionCoupling {
            label: "I=0".into(),
            gamma_tilde: 5.71 * MU_B_OVER_HBAR,
            density_fraction: presets::ER_I0_FRACTION,
            omega0: omega(),
            polarization: PolarizationModel::TwoLevel { omega: omega() },
        },
        hyperfine(1.5, 0.0432, 4.98),
    ]
}

#[test]
fn hyperfine_polarization_limits() {
    let q = |t: f64, m_i: f64| PolarizationQuery {
        temperature: t,
        field: FieldVector::along_b(0.034),
        transition: TransitionLabel::nuclear(m_i),
        species: presets::er167(),
    };
    for m_i in [-3.5, -0.5, 0.5, 3.5] {
        assert!(polarization_hyperfine(&q(1e4, m_i)).unwrap().abs() < 1e-4);
    }
    // With A < 0 the global ground level is |-1/2, -7/2>.
    let lp = LevelPolarization::resolve(&presets::er167(), &FieldVector::along_b(0.0093), &TransitionLabel::nuclear(-3.5))
        .unwrap();
    assert!((lp.difference(1e-4).unwrap() - 1.0).abs() < 1e-9);
    let p = boltzmann_populations(&lp.energies, 0.05).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn ensemble_coupling_square_root_law() {
    let m = EnsembleCouplingModel { gamma_tilde: 5.71 * MU_B_OVER_HBAR, density: 1.739e23, omega0: omega() };
    assert_eq!(ensemble_coupling(&m, 0.0).unwrap(), 0.0);
    let g = ensemble_coupling(&m, 0.7815).unwrap();
    let g4 = ensemble_coupling(&EnsembleCouplingModel { density: 4.0 * m.density, ..m }, 0.7815).unwrap();
    assert!((g4 / g - 2.0).abs() < 1e-14);
    assert!(ensemble_coupling(&m, 1.5).is_err());
}

#[test]
fn concentration_round_trip_from_three_transitions() {
    let rho = 2.26e17 * PER_CM3;
    let temps = [0.03, 0.05, 0.1, 0.2, 0.4, 0.7];
    let mut noise = spinbath::synth::Noise::new(3);
    let series: Vec<TransitionSeries> = couplings()
        .into_iter()
        .map(|c| {
            let points = temps
                .iter()
                .map(|&t| {
                    let g = c.gens(rho, t).unwrap();
                    GensPoint { temperature: t, gens: noise.multiplicative(g, 0.002), sigma: 0.002 * g }
                })
                .collect();
            TransitionSeries { coupling: c, points }
        })
        .collect();
    let fit = fit_concentration(&series).unwrap();
    assert!((fit.concentration_cm3 / 2.26e17 - 1.0).abs() < 0.01, "{}", fit.concentration_cm3);
    assert!(fit.std_error_cm3 > 0.0);
}

#[test]
fn single_point_fit_inverts_coupling_exactly() {
    let c = couplings().remove(1);
    let rho = 1.7e23;
    let g = c.gens(rho, 0.1).unwrap();
    let series = [TransitionSeries { coupling: c, points: vec![GensPoint { temperature: 0.1, gens: g, sigma: 1e3 }] }];
    let fit = fit_concentration(&series).unwrap();
    assert!((fit.concentration_cm3 * PER_CM3 / rho - 1.0).abs() < 1e-8);
}

#[test]
fn bath_temperature_from_hyperfine_coupling() {
    let c = couplings().remove(2);
    let rho = 2.26e17 * PER_CM3;
    let g = c.gens(rho, 0.023).unwrap();
    let t = infer_bath_temperature(g, 1e-4 * g, &c, rho).unwrap();
    assert!((t.temperature - 0.023).abs() < 1e-4, "{}", t.temperature);
    assert!(t.lower < 0.023 && t.upper > 0.023 && !t.at_ground_limit);
    // This pair lies above the ground level, so below its peak the coupling grows on warming.
    let warmer = infer_bath_temperature(1.02 * g, 1e-4 * g, &c, rho).unwrap();
    assert!(warmer.temperature > t.temperature);
}

#[test]
fn yb_density_from_quoted_couplings() {
    let rho = yb_concentration_from_couplings(14_135e3, 4.90e6, 5.71, 2.75, 2.26e17, 0.77, 0.70).unwrap();
    assert!((rho / 1.29e17 - 1.0).abs() < 0.02);
    assert!(yb_concentration_from_couplings(0.0, 4.9e6, 5.71, 2.75, 2.26e17, 0.77, 0.70).is_err());
}
