use rayon::prelude::*;
use serde::Serialize;

use super::resonance::{resonance_fields, Selection, SweepOptions, TransitionLabel};
use super::species::{FieldVector, SpinSpecies};
use crate::error::{Error, Result};

/// Resonance field of one transition at one rotation angle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationPoint {
    /// Angle from c in the a-c plane, radians.
    pub theta: f64,
    pub species: String,
    pub label: TransitionLabel,
    /// Tesla.
    pub field: f64,
}

/// Resonance fields versus field angle in the a-c plane for several species.
/// Angles are evaluated in parallel; output is ordered by species, then angle,
/// then field.
pub fn rotation_pattern(
    species: &[SpinSpecies],
    omega_target: f64,
    angles: &[f64],
    b_range: (f64, f64),
    selection: Selection,
) -> Result<Vec<RotationPoint>> {
    if angles.is_empty() {
        return Err(Error::Input("rotation pattern needs at least one angle".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..species.len()).flat_map(|s| (0..angles.len()).map(move |a| (s, a))).collect();
    let per_job: Vec<Result<Vec<RotationPoint>>> = jobs
        .par_iter()
        .map(|&(s, a)| {
            let sp = &species[s];
            let theta = angles[a];
            let dir = FieldVector::in_ac_plane(1.0, theta).direction();
            let hits = resonance_fields(sp, omega_target, &dir, b_range, selection, &SweepOptions::default())?;
            Ok(hits
                .into_iter()
                .map(|h| RotationPoint { theta, species: sp.name.clone(), label: h.label, field: h.field })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_job {
        out.extend(r?);
    }
    Ok(out)
}

/// Species name, transition and `(theta, field)` samples.
pub type RotationCurve = (String, TransitionLabel, Vec<(f64, f64)>);

/// Group rotation points into per-(species, transition) curves.
pub fn curves(points: &[RotationPoint]) -> Vec<RotationCurve> {
    let mut out: Vec<RotationCurve> = Vec::new();
    for p in points {
        match out.iter_mut().find(|(s, l, _)| *s == p.species && *l == p.label) {
            Some((_, _, c)) => c.push((p.theta, p.field)),
            None => out.push((p.species.clone(), p.label, vec![(p.theta, p.field)])),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;

    #[test]
    fn kramers_perpendicular_and_parallel() {
        let er = SpinSpecies::zeeman_only("Er", [8.38, 8.38, 1.247]);
        let angles = [0.0, std::f64::consts::FRAC_PI_2];
        let pts = rotation_pattern(&[er], TWO_PI * 4.37e9, &angles, (0.0, 0.4), Selection::NuclearConserving).unwrap();
        assert_eq!(pts.len(), 2);
        assert!((pts[0].field - 0.2504).abs() < 2e-4);
        assert!((pts[1].field - 0.03726).abs() < 1e-4);
    }

    #[test]
    fn empty_grid_rejected() {
        let er = SpinSpecies::zeeman_only("Er", [8.38, 8.38, 1.247]);
        assert!(rotation_pattern(&[er], 1e10, &[], (0.0, 0.1), Selection::Any).is_err());
    }
}
