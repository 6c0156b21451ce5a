use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use super::species::{FieldVector, SpinSpecies};
use crate::constants::{MU_B_OVER_HBAR, TWO_PI};
use crate::error::Result;

pub type CMatrix = DMatrix<Complex64>;

/// Cartesian spin matrices (Sx, Sy, Sz) for spin `two_s / 2`, basis ordered
/// m = s, s-1, ..., -s.
pub fn spin_matrices(two_s: usize) -> [CMatrix; 3] {
    let d = two_s + 1;
    let s = two_s as f64 / 2.0;
    let m = |k: usize| s - k as f64;
    let mut sx = CMatrix::zeros(d, d);
    let mut sy = CMatrix::zeros(d, d);
    let mut sz = CMatrix::zeros(d, d);
    for k in 0..d {
        sz[(k, k)] = Complex64::new(m(k), 0.0);
    }
    // <m+1|S+|m> lives at (k-1, k).
    for k in 1..d {
        let mk = m(k);
        let c = (s * (s + 1.0) - mk * (mk + 1.0)).sqrt();
        sx[(k - 1, k)] = Complex64::new(c / 2.0, 0.0);
        sx[(k, k - 1)] = Complex64::new(c / 2.0, 0.0);
        sy[(k - 1, k)] = Complex64::new(0.0, -c / 2.0);
        sy[(k, k - 1)] = Complex64::new(0.0, c / 2.0);
    }
    [sx, sy, sz]
}

/// Electron and nuclear spin operators embedded in the product space S ⊗ I.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub s: [CMatrix; 3],
    pub i: [CMatrix; 3],
    pub dim: usize,
}

impl SpinOperators {
    pub fn for_species(species: &SpinSpecies) -> Self {
        let (ts, ti) = (species.two_s(), species.two_i());
        let es = spin_matrices(ts);
        let ns = spin_matrices(ti);
        let id_s = CMatrix::identity(ts + 1, ts + 1);
        let id_i = CMatrix::identity(ti + 1, ti + 1);
        Self {
            s: es.map(|m| m.kronecker(&id_i)),
            i: ns.map(|m| id_s.kronecker(&m)),
            dim: (ts + 1) * (ti + 1),
        }
    }

    /// Electron spin projected on a crystal-frame direction.
    pub fn s_along(&self, n: &Vector3<f64>) -> CMatrix {
        &self.s[0] * Complex64::from(n.x) + &self.s[1] * Complex64::from(n.y) + &self.s[2] * Complex64::from(n.z)
    }

    pub fn i_along(&self, n: &Vector3<f64>) -> CMatrix {
        &self.i[0] * Complex64::from(n.x) + &self.i[1] * Complex64::from(n.y) + &self.i[2] * Complex64::from(n.z)
    }
}

/// Effective spin Hamiltonian `mu_B S.g.B0 + S.A.I` in angular-frequency
/// units (rad/s). Nuclear Zeeman and quadrupole terms are not included.
pub fn build_hamiltonian(species: &SpinSpecies, field: &FieldVector) -> Result<CMatrix> {
    species.validate()?;
    field.validate()?;
    let ops = SpinOperators::for_species(species);
    Ok(hamiltonian_with(&ops, species, field))
}

pub(crate) fn hamiltonian_with(ops: &SpinOperators, species: &SpinSpecies, field: &FieldVector) -> CMatrix {
    let zeeman = species.g_tensor() * field.vector() * MU_B_OVER_HBAR;
    let mut h = ops.s_along(&zeeman);
    if species.has_hyperfine() {
        let a = species.a_tensor_hz() * TWO_PI;
        for k in 0..3 {
            for l in 0..3 {
                if a[(k, l)] != 0.0 {
                    h += (&ops.s[k] * &ops.i[l]) * Complex64::from(a[(k, l)]);
                }
            }
        }
    }
    h
}
