use spinbath::constants::TWO_PI;
use spinbath::presets;
use spinbath::spinham::{
    curves, rotation_pattern, solve, track_levels, FieldVector, Selection, SpinOperators, TransitionLabel,
};

fn omega() -> f64 {
    TWO_PI * 4.37e9
}

#[test]
fn er167_levels_split_into_two_electron_multiplets() {
    let er = presets::er167();
    let field = FieldVector::along_b(0.034);
    let es = solve(&er, &field).unwrap();
    assert_eq!(es.dimension(), 16);
    let sy = SpinOperators::for_species(&er).s_along(&field.direction());
    let ms: Vec<f64> = (0..16).map(|k| es.expectation(&sy, k)).collect();
    // At 34 mT the Zeeman term dominates: the lower eight are m_S = -1/2.
    assert!(ms[..8].iter().all(|m| *m < 0.0), "{ms:?}");
    assert!(ms[8..].iter().all(|m| *m > 0.0), "{ms:?}");
    let gap = es.energies[8] - es.energies[7];
    assert!(gap > 0.0);
}

#[test]
fn kramers_sweep_gives_two_linear_branches() {
    let fields: Vec<f64> = (0..=50).map(|k| 0.1 * k as f64 / 50.0).collect();
    let sweep = track_levels(&presets::er_i0(), &FieldVector::along_b(1.0).direction(), &fields).unwrap();
    assert_eq!(sweep.labels.len(), 2);
    let slope = 8.38 * spinbath::constants::MU_B_OVER_HBAR / 2.0;
    for (l, label) in sweep.labels.iter().enumerate() {
        for (k, b) in fields.iter().enumerate() {
            let e = sweep.energy(k, l);
            assert!((e - label.m_s * 2.0 * slope * b).abs() < 1e-6 * slope * 0.1, "{label} at {b}");
        }
    }
    let t = sweep.transitions(Selection::NuclearConserving);
    assert_eq!(t.len(), 1);
}

#[test]
fn er167_sweep_has_sixteen_branches_and_eight_crossings() {
    let fields: Vec<f64> = (0..=400).map(|k| 0.1 * k as f64 / 400.0).collect();
    let sweep = track_levels(&presets::er167(), &FieldVector::along_b(1.0).direction(), &fields).unwrap();
    assert_eq!(sweep.labels.len(), 16);
    let lines = sweep.transitions(Selection::NuclearConserving);
    assert_eq!(lines.len(), 8);
    let mut crossings = 0;
    for t in &lines {
        let curve = sweep.transition_curve(t).unwrap();
        crossings += curve.windows(2).filter(|w| (w[0] - omega()) * (w[1] - omega()) < 0.0).count();
    }
    assert_eq!(crossings, 8);
}

#[test]
fn rotation_pattern_endpoints() {
    let angles: Vec<f64> = (0..=34).map(|k| f64::to_radians(1.5 * k as f64)).collect();
    let pts = rotation_pattern(&[presets::er_i0()], omega(), &angles, (0.01, 0.4), Selection::Any).unwrap();
    let cs = curves(&pts);
    assert_eq!(cs.len(), 1);
    let curve = &cs[0].2;
    assert_eq!(curve.len(), 35);
    // g_par = 1.247 gives 250.4 mT along c; the perpendicular end is checked at 90°.
    assert!((curve[0].1 * 1e3 - 250.38).abs() < 0.05, "{}", curve[0].1);
    assert!(curve.windows(2).all(|w| w[1].1 < w[0].1));
    let perp = rotation_pattern(&[presets::er_i0()], omega(), &[f64::to_radians(90.0)], (0.01, 0.4), Selection::Any)
        .unwrap();
    assert!((perp[0].field * 1e3 - 37.26).abs() < 0.05);
}

#[test]
fn yb171_has_two_nuclear_conserving_curves() {
    let angles: Vec<f64> = (0..=6).map(|k| f64::to_radians(15.0 * k as f64)).collect();
    let pts =
        rotation_pattern(&[presets::yb171()], omega(), &angles, (0.005, 0.8), Selection::NuclearConserving).unwrap();
    let cs = curves(&pts);
    assert_eq!(cs.len(), 2, "{:?}", cs.iter().map(|c| c.1).collect::<Vec<_>>());
    assert!(cs.iter().all(|c| c.1 .lower.m_i == c.1 .upper.m_i));
    assert!(cs.iter().any(|c| c.1 == TransitionLabel::nuclear(0.5)));
}
