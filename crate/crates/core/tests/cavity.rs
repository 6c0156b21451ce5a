use spinbath::cavity::{
    add_noise, fit_resonator_background, fit_spectrum_two_stage, simulate_spectrum, CoupledLine, Dispersion, Resonator,
    SpectrumFitOptions, SpectrumPoint,
};
use spinbath::constants::TWO_PI;
use spinbath::presets;
use spinbath::spinham::FieldVector;

fn truth_lines() -> Vec<CoupledLine> {
    let grid: Vec<f64> = (0..=80).map(|k| 0.028 + 0.024 * k as f64 / 80.0).collect();
    let dir = FieldVector::along_b(1.0).direction();
    presets::coupled_lines()
        .into_iter()
        .map(|l| {
            let species = presets::species().into_iter().find(|s| s.name == l.species).unwrap();
            CoupledLine {
                label: format!("{} {}", l.species, l.transition),
                gens: l.gens,
                gamma: l.gamma,
                dispersion: Dispersion::from_species(&species, &dir, &l.transition, &grid).unwrap(),
            }
        })
        .collect()
}

fn grid() -> (Vec<f64>, Vec<f64>) {
    let fields = (0..=160).map(|k| 0.030 + 0.020 * k as f64 / 160.0).collect();
    let freqs = (0..=120).map(|k| 4.33e9 + 0.08e9 * k as f64 / 120.0).collect();
    (fields, freqs)
}

fn detuned(lines: &[CoupledLine]) -> Vec<CoupledLine> {
    lines.iter().map(|l| CoupledLine { gens: 0.8 * l.gens, gamma: 1.3 * l.gamma, ..l.clone() }).collect()
}

#[test]
fn noise_free_spectrum_recovers_all_lines() {
    let truth = truth_lines();
    let (fields, freqs) = grid();
    let pts = simulate_spectrum(&presets::resonator(), &truth, &fields, &freqs).unwrap();
    let fit =
        fit_spectrum_two_stage(&pts, &presets::resonator(), &detuned(&truth), 1, &SpectrumFitOptions::default()).unwrap();
    for (est, t) in fit.lines.iter().zip(&truth) {
        assert!((est.gens / t.gens - 1.0).abs() < 1e-3, "{}: {} vs {}", t.label, est.gens, t.gens);
        assert!((est.gamma / t.gamma - 1.0).abs() < 1e-3, "{}: {} vs {}", t.label, est.gamma, t.gamma);
    }
    assert_eq!(fit.secondary(1).len(), 4);
}

#[test]
fn noisy_spectrum_recovers_lines_within_three_sigma() {
    let truth = truth_lines();
    let (fields, freqs) = grid();
    let mut pts = simulate_spectrum(&presets::resonator(), &truth, &fields, &freqs).unwrap();
    add_noise(&mut pts, 0.01, 21);
    let fit =
        fit_spectrum_two_stage(&pts, &presets::resonator(), &detuned(&truth), 1, &SpectrumFitOptions::default()).unwrap();
    for (est, t) in fit.lines.iter().zip(&truth) {
        assert!((est.gens - t.gens).abs() <= 3.0 * est.gens_err, "{}: {est:?}", t.label);
        assert!((est.gamma - t.gamma).abs() <= 3.0 * est.gamma_err, "{}: {est:?}", t.label);
    }
}

#[test]
fn dominant_line_alone_leaves_no_secondary_lines() {
    let truth: Vec<CoupledLine> = truth_lines().into_iter().skip(1).take(1).collect();
    let (fields, freqs) = grid();
    let pts = simulate_spectrum(&presets::resonator(), &truth, &fields, &freqs).unwrap();
    let fit = fit_spectrum_two_stage(&pts, &presets::resonator(), &detuned(&truth), 0, &SpectrumFitOptions::default())
        .unwrap();
    assert_eq!(fit.lines.len(), 1);
    assert!(fit.secondary(0).is_empty());
    assert!((fit.lines[0].gens / truth[0].gens - 1.0).abs() < 1e-3);
}

fn background(res: &Resonator) -> Vec<SpectrumPoint> {
    let fields: Vec<f64> = (0..8).map(|k| 0.1 + 0.03 * k as f64).collect();
    let freqs: Vec<f64> = (0..201).map(|k| 4.355e9 + 0.02e9 * k as f64 / 200.0).collect();
    simulate_spectrum(res, &[], &fields, &freqs).unwrap()
}

#[test]
fn background_quadratic_shift_under_noise() {
    let truth = Resonator::new(TWO_PI * 4.37e9, -TWO_PI * 2e7, 3e6, 5e5);
    let clean = background(&truth);
    for seed in 0..5 {
        let mut pts = clean.clone();
        add_noise(&mut pts, 0.01, seed);
        let fit = fit_resonator_background(&pts).unwrap();
        assert!((fit.resonator.field_shift / truth.field_shift - 1.0).abs() < 0.05, "{seed}: {:?}", fit.resonator);
    }
}

#[test]
fn background_without_shift_recovers_zero() {
    let truth = Resonator::new(TWO_PI * 4.37e9, 0.0, 3e6, 5e5);
    let fit = fit_resonator_background(&background(&truth)).unwrap();
    // Shift across the field window stays far below the linewidth.
    assert!((fit.resonator.field_shift * 0.31f64.powi(2)).abs() < 1e-6 * truth.kappa_t());
}

#[test]
fn bare_resonator_depth_and_far_detuning() {
    let res = Resonator::new(TWO_PI * 4.37e9, 0.0, 3e6, 5e5);
    let on = res.s21(TWO_PI * 4.37e9, 0.0, &[]);
    assert!((on.norm() - 0.142_857).abs() < 1e-4);
    assert!((res.s21(TWO_PI * 5.0e9, 0.0, &[]).norm() - 1.0).abs() < 1e-3);
}
