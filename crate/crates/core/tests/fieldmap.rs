use spinbath::constants::{MU_B_OVER_HBAR, TWO_PI};
use spinbath::fieldmap::{fock_target, gamma_tilde, normalize, toy_wire_map, FieldMap, ToyWire};

fn omega() -> f64 {
    TWO_PI * 4.37e9
}

fn uniform(n: usize) -> FieldMap {
    let x: Vec<f64> = (0..n).map(|k| -1e-4 + 1e-4 * k as f64 / n as f64).collect();
    let z: Vec<f64> = (0..n).map(|k| 1e-4 * k as f64 / n as f64).collect();
    FieldMap::new(x, z, vec![1e-9; n * n], vec![1e-9; n * n], 725e-6).unwrap()
}

#[test]
fn normalization_hits_fock_target() {
    let target = fock_target(omega(), 725e-6);
    assert!((target / 1.255e-27 - 1.0).abs() < 1e-3, "{target}");
    let n = normalize(&uniform(8), omega()).unwrap();
    assert!((n.energy_integral() / target - 1.0).abs() < 1e-12);
    let again = normalize(&n, omega()).unwrap();
    assert!((again.energy_integral() / n.energy_integral() - 1.0).abs() < 1e-12);
}

#[test]
fn isotropic_gyromagnetic_ratio_passes_through() {
    let g = 117e9 * TWO_PI;
    let toy = toy_wire_map(&ToyWire { nx: 40, nz: 80, ..Default::default() }, omega()).unwrap();
    for map in [uniform(6), toy] {
        assert!((gamma_tilde(&map, 0.5, 0.5, g, g).unwrap() / g - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_map_closed_form_for_kramers_doublet() {
    let (gp, ga) = (TWO_PI * 117e9, TWO_PI * 17.5e9);
    let gt = gamma_tilde(&uniform(5), 0.5, 0.5, gp, ga).unwrap() / MU_B_OVER_HBAR;
    assert!((gt - 5.98).abs() < 0.01, "{gt}");
}

#[test]
fn toy_wire_map_brackets_and_normalizes() {
    let map = toy_wire_map(&ToyWire::default(), omega()).unwrap();
    assert!((map.energy_integral() / fock_target(omega(), 725e-6) - 1.0).abs() < 1e-9);
    let (gp, ga) = (8.38 * MU_B_OVER_HBAR, 1.247 * MU_B_OVER_HBAR);
    let gt = gamma_tilde(&map, 0.5, 0.5, gp, ga).unwrap() / MU_B_OVER_HBAR;
    assert!((4.5..=6.5).contains(&gt), "{gt}");
    assert!(gt > 1.247 && gt < 8.38);
}

#[test]
fn malformed_maps_are_rejected() {
    assert!(FieldMap::new(vec![-1e-6, -2e-6], vec![0.0, 1e-6], vec![0.0; 4], vec![0.0; 4], 1e-3).is_err());
    assert!(FieldMap::new(vec![-2e-6, -1e-6], vec![0.0, 1e-6], vec![0.0; 3], vec![0.0; 4], 1e-3).is_err());
    let zero = FieldMap::new(vec![-2e-6, -1e-6], vec![0.0, 1e-6], vec![0.0; 4], vec![0.0; 4], 1e-3).unwrap();
    assert!(normalize(&zero, omega()).is_err());
}
