//! Independent reference computations and frozen high-precision values.

use nalgebra::DMatrix;
use spinbath::budget::{gamma_h, gamma_sd_combined};
use spinbath::constants::TWO_PI;
use spinbath::presets;
use spinbath::sdmodel::{gamma_max_analytic, gamma_sd_of_t};
use spinbath::spinham::{build_hamiltonian, resonance_fields, solve, FieldVector, Selection, SweepOptions, TransitionLabel};
use spinbath::thermal::{polarization_i0, yb_concentration_from_couplings};

/// Cyclic Jacobi rotations on a real symmetric matrix; returns sorted eigenvalues.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off.sqrt() <= 1e-15 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a Hermitian H via the real embedding [[Re, -Im], [Im, Re]],
/// whose spectrum is that of H with every value doubled.
fn embedded_eigenvalues(h: &spinbath::spinham::CMatrix) -> Vec<f64> {
    let n = h.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            m[(i, j)] = z.re;
            m[(i + n, j + n)] = z.re;
            m[(i, j + n)] = -z.im;
            m[(i + n, j)] = z.im;
        }
    }
    jacobi_eigenvalues(m).chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

#[test]
fn er167_levels_match_jacobi_oracle() {
    let er = presets::er167();
    for (b, theta, phi) in [(0.034, 90.0, 90.0), (0.0435, 90.0, 0.0), (0.2, 30.0, 45.0), (0.0, 0.0, 0.0)] {
        let field = FieldVector::new(b, f64::to_radians(theta), f64::to_radians(phi));
        let h = build_hamiltonian(&er, &field).unwrap();
        let oracle = embedded_eigenvalues(&h);
        let es = solve(&er, &field).unwrap();
        let scale = oracle.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        for (e, o) in es.energies.iter().zip(&oracle) {
            assert!((e - o).abs() <= 1e-10 * scale, "B={b} θ={theta}: {e} vs {o}");
        }
    }
}

#[test]
fn er167_resonance_fields_match_frozen_solve() {
    // Bisection on an independent 16x16 diagonalization, B along b, 4.37 GHz.
    let frozen_mt = [9.292, 13.845, 19.656, 26.610, 34.520, 43.197, 52.473, 62.217];
    let hits = resonance_fields(
        &presets::er167(),
        TWO_PI * 4.37e9,
        &FieldVector::along_b(1.0).direction(),
        (0.002, 0.1),
        Selection::NuclearConserving,
        &SweepOptions::default(),
    )
    .unwrap();
    assert_eq!(hits.len(), 8);
    for (k, f) in frozen_mt.iter().enumerate() {
        let m_i = -3.5 + k as f64;
        let hit = hits.iter().find(|h| h.label == TransitionLabel::nuclear(m_i)).unwrap();
        assert!((hit.field * 1e3 - f).abs() < 2e-3, "m_I={m_i}: {} mT vs {f}", hit.field * 1e3);
    }
}

#[test]
fn frozen_scalar_values() {
    let b0 = 0.0435;
    assert!((polarization_i0(0.1, TWO_PI * 4.37e9).unwrap() - 0.781_275).abs() < 1e-6);
    let ratio = gamma_sd_of_t(1.0, 8.38, b0, 0.023).unwrap() / gamma_sd_of_t(1.0, 8.38, b0, 0.53).unwrap();
    assert!((ratio / 1.003_406e-4 - 1.0).abs() < 1e-5, "{ratio}");
    let species = presets::budget_config().species;
    let high = gamma_sd_combined(&species, b0, 1e4).unwrap();
    assert!((high / 6_799.6 - 1.0).abs() < 1e-4, "{high}");
    let low = gamma_sd_combined(&species, b0, 0.023).unwrap();
    assert!((low / 34.327 - 1.0).abs() < 1e-4, "{low}");
    let gh = gamma_h(51.0, 34.4, 12.0).unwrap();
    assert!((gh / 69.970 - 1.0).abs() < 1e-4, "{gh}");
    let gmax = gamma_max_analytic(8.38, 8.38, 1.739e23).unwrap();
    assert!((gmax / 8.0288e5 - 1.0).abs() < 1e-4, "{gmax}");
    let rho = yb_concentration_from_couplings(14_135e3, 4.90e6, 5.71, 2.75, 2.26e17, 0.77, 0.70).unwrap();
    assert!((rho / 1.287_98e17 - 1.0).abs() < 1e-4, "{rho}");
}
