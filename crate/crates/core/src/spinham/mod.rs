//! Effective spin Hamiltonians: construction, diagonalization, level
//! labelling, resonance search and rotation patterns.

mod eigen;
mod operators;
mod resonance;
mod rotation;
mod species;

pub use eigen::{eigensystem, solve, transition_elements, transition_frame, EigenSystem, HERMITICITY_TOL};
pub use operators::{build_hamiltonian, spin_matrices, CMatrix, SpinOperators};
pub use resonance::{
    find_transition, label_field, level_energies_hz, resolve_transition, resonance_fields, track_levels,
    transition_frequency_curve, LevelLabel, Resonance, Selection, SweepOptions, TrackedSweep, TransitionLabel,
};
pub use rotation::{curves, rotation_pattern, RotationCurve, RotationPoint};
pub use species::{FieldVector, SpinSpecies};
