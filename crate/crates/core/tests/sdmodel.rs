use std::f64::consts::PI;

use spinbath::constants::TWO_PI;
use spinbath::presets;
use spinbath::sdmodel::{
    echo_amplitude, eseem_envelope, fit_2pe, fit_3pe_family, flip_rate_of_t, gamma_eff, gamma_max_analytic,
    gamma_sd_of_t, tie_species, EchoConfig, EchoDataset, EchoKind, EchoPoint, Eseem, FamilyFitConfig, FlipRateLaw,
    SdProduct, SdTerm, TwoPulseCurve,
};
use spinbath::synth::Noise;

fn family(er: &SdTerm, taus: &[f64], t_w_max: f64, sigma: f64, seed: u64, t_bath: f64) -> EchoDataset {
    let tie = presets::tie_config(t_bath);
    let sd = [er.clone(), tie_species(er, &tie).unwrap()];
    let mut noise = Noise::new(seed);
    let mut points = Vec::new();
    for &tau in taus {
        for j in 0..=40 {
            let t_w = t_w_max * j as f64 / 40.0;
            let cfg = EchoConfig { kind: EchoKind::ThreePulse, tau, t_w, gamma0: 200.0, a0: 0.8, t1: None, eseem: vec![] };
            let a = echo_amplitude(&cfg, &sd).unwrap();
            points.push(EchoPoint { tau, t_w, amplitude: noise.additive(a, sigma), sigma: sigma.max(1e-3) });
        }
    }
    EchoDataset { kind: EchoKind::ThreePulse, points, t_bath, b0: presets::OPERATING_FIELD, tag: None }
}

fn taus() -> Vec<f64> {
    (1..=5).map(|k| 0.2e-6 * k as f64).collect()
}

#[test]
fn family_fit_with_one_percent_noise() {
    let er = SdTerm::new("Er", 3.794e5, 1328.0);
    let cfg = FamilyFitConfig { gamma0: 200.0, tie: Some(presets::tie_config(0.53)), ..Default::default() };
    for seed in [1, 2, 3] {
        let fit = fit_3pe_family(&family(&er, &taus(), 4e-3, 0.01, seed, 0.53), &cfg).unwrap();
        assert!((fit.gamma_sd_er / er.gamma_sd - 1.0).abs() < 0.05, "{seed}: {}", fit.gamma_sd_er);
        assert!((fit.rate_er / er.rate - 1.0).abs() < 0.05, "{seed}: {}", fit.rate_er);
        assert!(fit.amplitudes.iter().all(|a| (a / 0.8 - 1.0).abs() < 0.05));
        assert!(fit.warnings.is_empty(), "{:?}", fit.warnings);
        let (rg, rr) = presets::tie_config(0.53).ratios().unwrap();
        assert!((fit.gamma_sd_yb / fit.gamma_sd_er - rg).abs() < 1e-12 * rg);
        assert!((fit.rate_yb / fit.rate_er - rr).abs() < 1e-12 * rr);
    }
}

#[test]
fn slow_diffusion_triggers_degeneracy_warning() {
    let er = SdTerm::new("Er", 3.0e5, 5.0);
    let data = family(&er, &taus(), 4e-3, 0.0, 0, 0.53);
    let cfg = FamilyFitConfig { gamma0: 200.0, tie: Some(presets::tie_config(0.53)), ..Default::default() };
    match fit_3pe_family(&data, &cfg) {
        Ok(fit) => assert!(fit.warnings.iter().any(|w| w.contains("R")), "{:?}", fit.warnings),
        Err(e) => panic!("fit should report the degeneracy as a warning, got {e}"),
    }
}

#[test]
fn two_pulse_with_eseem_recovers_parameters() {
    let eseem = [Eseem { depth: 0.3, omega_alpha: TWO_PI * 1.1e6, omega_beta: TWO_PI * 1.7e6 }];
    let sd = [SdTerm::new("bath", 1e6, 1.0)];
    let mut noise = Noise::new(4);
    let points: Vec<EchoPoint> = (0..300)
        .map(|k| {
            let tau = 4e-6 * (k + 1) as f64;
            let cfg = EchoConfig { kind: EchoKind::TwoPulse, tau, t_w: 0.0, gamma0: 200.0, a0: 1.0, t1: None, eseem: eseem.to_vec() };
            EchoPoint { tau, t_w: 0.0, amplitude: noise.additive(echo_amplitude(&cfg, &sd).unwrap(), 0.003), sigma: 0.003 }
        })
        .collect();
    let fit = fit_2pe(&[TwoPulseCurve { tag: "p0".into(), points }], &eseem, SdProduct::Free).unwrap();
    assert!((fit.curves[0].gamma0 / 200.0 - 1.0).abs() < 0.03, "{}", fit.curves[0].gamma0);
    assert!((fit.sd_product / 1e6 - 1.0).abs() < 0.03, "{}", fit.sd_product);
}

#[test]
fn pure_exponential_gives_zero_product() {
    let points: Vec<EchoPoint> = (0..200)
        .map(|k| {
            let tau = 5e-6 * (k + 1) as f64;
            EchoPoint { tau, t_w: 0.0, amplitude: (-2.0 * PI * 300.0 * tau).exp(), sigma: 1e-3 }
        })
        .collect();
    let fit = fit_2pe(&[TwoPulseCurve { tag: String::new(), points }], &[], SdProduct::Free).unwrap();
    assert!((fit.curves[0].gamma0 / 300.0 - 1.0).abs() < 1e-3);
    assert!(fit.sd_product.abs() < 1e3, "{}", fit.sd_product);
}

#[test]
fn power_sweep_orders_instantaneous_diffusion() {
    let truth = [("low", 100.0), ("mid", 250.0), ("high", 600.0)];
    let sd = [SdTerm::new("bath", 5e5, 1.0)];
    let mut noise = Noise::new(9);
    let curves: Vec<TwoPulseCurve> = truth
        .iter()
        .map(|(tag, g0)| TwoPulseCurve {
            tag: tag.to_string(),
            points: (0..150)
                .map(|k| {
                    let tau = 8e-6 * (k + 1) as f64;
                    let cfg = EchoConfig { kind: EchoKind::TwoPulse, tau, t_w: 0.0, gamma0: *g0, a0: 1.0, t1: None, eseem: vec![] };
                    let a = echo_amplitude(&cfg, &sd).unwrap();
                    EchoPoint { tau, t_w: 0.0, amplitude: noise.additive(a, 0.005), sigma: 0.005 }
                })
                .collect(),
        })
        .collect();
    let fit = fit_2pe(&curves, &[], SdProduct::Free).unwrap();
    for (c, (tag, g0)) in fit.curves.iter().zip(&truth) {
        assert_eq!(&c.tag, tag);
        assert!((c.gamma0 / g0 - 1.0).abs() < 0.05, "{tag}: {}", c.gamma0);
    }
    assert!(fit.curves.windows(2).all(|w| w[1].gamma0 > w[0].gamma0));
    let fixed = fit_2pe(&curves, &[], SdProduct::Fixed(5e5)).unwrap();
    assert_eq!(fixed.sd_product, 5e5);
}

#[test]
fn spin_lattice_relaxation_composes_with_diffusion() {
    let sd = [SdTerm::new("Er", 3e5, 1.3e3)];
    let (tau, t1, t_w, dt) = (0.6e-6, 8e-3, 1e-3, 0.7e-3);
    let amp = |t_w: f64| {
        let cfg = EchoConfig { kind: EchoKind::ThreePulse, tau, t_w, gamma0: 100.0, a0: 1.0, t1: Some(t1), eseem: vec![] };
        echo_amplitude(&cfg, &sd).unwrap()
    };
    let dg = gamma_eff(tau, t_w + dt, 100.0, &sd).unwrap() - gamma_eff(tau, t_w, 100.0, &sd).unwrap();
    let expected = (-dt / t1).exp() * (-2.0 * PI * dg * tau).exp();
    assert!((amp(t_w + dt) / amp(t_w) / expected - 1.0).abs() < 1e-12);
}

/// Magnitude of the Fourier component at `omega` of the 3PE envelope over `t_w`.
fn component(tau: f64, e: &Eseem, omega: f64, window: f64) -> f64 {
    let n = 512;
    let (mut c, mut s) = (0.0, 0.0);
    for j in 0..n {
        let t = window * j as f64 / n as f64;
        let v = eseem_envelope(EchoKind::ThreePulse, tau, t, e).unwrap();
        c += v * (omega * t).cos();
        s += v * (omega * t).sin();
    }
    (c * c + s * s).sqrt() / n as f64
}

#[test]
fn three_pulse_modulation_node_blind_spot() {
    let e = Eseem { depth: 0.4, omega_alpha: TWO_PI * 1.0e6, omega_beta: TWO_PI * 1.5e6 };
    // The window spans whole periods of both frequencies.
    let window = 2e-6;
    // At a node of omega_alpha the T_W dependence oscillates only at omega_alpha.
    let tau_a = 1e-6;
    assert!(component(tau_a, &e, e.omega_beta, window) < 1e-10);
    assert!(component(tau_a, &e, e.omega_alpha, window) > 1e-2);
    // And symmetrically at a node of omega_beta.
    let tau_b = 2.0 / 3.0 * 1e-6;
    assert!(component(tau_b, &e, e.omega_alpha, window) < 1e-10);
    assert!(component(tau_b, &e, e.omega_beta, window) > 1e-2);
}

#[test]
fn yb_dominates_diffusion_at_base_temperature() {
    let (rg, _) = presets::tie_config(0.023).ratios().unwrap();
    assert!(rg > 10.0, "{rg}");
    let (rg_hot, _) = presets::tie_config(0.53).ratios().unwrap();
    assert!(rg_hot < 1.0, "{rg_hot}");
}

#[test]
fn linewidth_and_rate_temperature_laws() {
    let b0 = 0.0435;
    assert!((gamma_sd_of_t(1.0, 8.38, b0, 0.53).unwrap() - 0.9486).abs() < 1e-3);
    assert!((gamma_sd_of_t(1.0, 8.38, b0, 1e5).unwrap() - 1.0).abs() < 1e-6);
    let law = FlipRateLaw { alpha_ff: 2.0, alpha_ph: 0.0, g: 8.38, g_perp: 8.38, n: 3.0, linewidth: 5.0 };
    let hot = flip_rate_of_t(&law, b0, 1e5).unwrap();
    assert!((hot / (2.0 * 8.38f64.powi(4) * 9.0 / 5.0) - 1.0).abs() < 1e-6);
    let doubled = flip_rate_of_t(&FlipRateLaw { g_perp: 2.0 * 8.38, ..law }, b0, 0.3).unwrap();
    assert!((doubled / flip_rate_of_t(&law, b0, 0.3).unwrap() - 16.0).abs() < 1e-9);
    let phonon = FlipRateLaw { alpha_ff: 0.0, alpha_ph: 1e3, ..law };
    let cold = flip_rate_of_t(&phonon, b0, 1e-3).unwrap();
    assert!((cold / (1e3 * 8.38f64.powi(3) * b0.powi(5)) - 1.0).abs() < 1e-9);
}

#[test]
fn analytic_linewidth_scale() {
    assert_eq!(gamma_max_analytic(8.38, 8.38, 0.0).unwrap(), 0.0);
    let g = gamma_max_analytic(8.38, 8.38, 1.739e23).unwrap();
    assert!((g / 8.0e5 - 1.0).abs() < 0.01, "{g}");
    assert!((gamma_max_analytic(8.38, 8.38, 2.0 * 1.739e23).unwrap() / g - 2.0).abs() < 1e-14);
}
