use nalgebra::{DVector, SymmetricEigen, Vector3};
use num_complex::Complex64;

use super::operators::{CMatrix, SpinOperators};
use super::species::{FieldVector, SpinSpecies};
use crate::error::{Error, Result};

/// Relative anti-Hermitian part tolerated by [`eigensystem`].
pub const HERMITICITY_TOL: f64 = 1e-10;

/// Eigen-decomposition of a Hermitian Hamiltonian. Energies are angular
/// frequencies (rad/s) in ascending order; column `k` of `states` is the
/// eigenvector belonging to `energies[k]`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: DVector<f64>,
    pub states: CMatrix,
}

impl EigenSystem {
    pub fn dimension(&self) -> usize {
        self.energies.len()
    }

    /// Energies in Hz.
    pub fn energies_hz(&self) -> Vec<f64> {
        self.energies.iter().map(|e| e / crate::constants::TWO_PI).collect()
    }

    /// U diag(E) U†.
    pub fn reconstruct(&self) -> CMatrix {
        let d = CMatrix::from_diagonal(&self.energies.map(Complex64::from));
        &self.states * d * self.states.adjoint()
    }

    /// <k|op|k>, real part.
    pub fn expectation(&self, op: &CMatrix, k: usize) -> f64 {
        let v = self.states.column(k);
        (v.adjoint() * op * v)[(0, 0)].re
    }

    /// <i|op|j>.
    pub fn element(&self, op: &CMatrix, i: usize, j: usize) -> Complex64 {
        (self.states.column(i).adjoint() * op * self.states.column(j))[(0, 0)]
    }
}

/// Diagonalize a Hermitian matrix. Matrices whose anti-Hermitian part exceeds
/// [`HERMITICITY_TOL`] relative to the Frobenius norm are rejected.
pub fn eigensystem(h: &CMatrix) -> Result<EigenSystem> {
    let (r, c) = h.shape();
    if r != c || r == 0 {
        return Err(Error::Input(format!("eigensystem needs a non-empty square matrix, got {r}x{c}")));
    }
    if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Input("matrix contains non-finite entries".into()));
    }
    let norm = h.norm();
    let skew = (h - h.adjoint()).norm() / 2.0;
    if norm > 0.0 && skew > HERMITICITY_TOL * norm {
        return Err(Error::Input(format!("matrix is not Hermitian (relative skew {:.3e})", skew / norm)));
    }
    let sym = (h + h.adjoint()) * Complex64::from(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = DVector::from_iterator(r, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut states = CMatrix::zeros(r, r);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        states.set_column(dst, &(col / Complex64::from(col.norm())));
    }
    Ok(EigenSystem { energies, states })
}

/// Build and diagonalize in one call.
pub fn solve(species: &SpinSpecies, field: &FieldVector) -> Result<EigenSystem> {
    eigensystem(&super::operators::build_hamiltonian(species, field)?)
}

/// Laboratory frame used for transition matrix elements: B0 along y, z along
/// the component of the crystal c axis perpendicular to B0 (crystal a when
/// B0 is parallel to c), x = y × z.
pub fn transition_frame(field: &FieldVector) -> [Vector3<f64>; 3] {
    let y = field.direction();
    let c = Vector3::z();
    let mut z = c - y * y.dot(&c);
    if z.norm() < 1e-9 {
        z = Vector3::x() - y * y.x;
    }
    let z = z.normalize();
    let x = y.cross(&z);
    [x, y, z]
}

/// `(<i|Sx|j>, <i|Sz|j>)` in the frame of [`transition_frame`]. The
/// arbitrary relative phase of the two eigenvectors is fixed so that `<Sz>`
/// is real and non-negative (or, when it vanishes, `<Sx>` is real and
/// non-negative).
pub fn transition_elements(
    es: &EigenSystem,
    species: &SpinSpecies,
    field: &FieldVector,
    i: usize,
    j: usize,
) -> Result<(Complex64, Complex64)> {
    let n = es.dimension();
    if i == j {
        return Err(Error::Contract(format!("transition needs two distinct levels, got i = j = {i}")));
    }
    if i >= n || j >= n {
        return Err(Error::Contract(format!("level index out of range ({i}, {j}) for dimension {n}")));
    }
    if species.dimension() != n {
        return Err(Error::Contract(format!(
            "species dimension {} does not match eigensystem dimension {n}",
            species.dimension()
        )));
    }
    let ops = SpinOperators::for_species(species);
    let [x, _, z] = transition_frame(field);
    let sx = es.element(&ops.s_along(&x), i, j);
    let sz = es.element(&ops.s_along(&z), i, j);
    let reference = if sz.norm() > 1e-12 { sz } else { sx };
    if reference.norm() == 0.0 {
        return Ok((sx, sz));
    }
    let phase = reference.conj() / reference.norm();
    Ok((sx * phase, sz * phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{H, MU_B, TWO_PI};

    fn c(re: f64) -> Complex64 {
        Complex64::from(re)
    }

    #[test]
    fn diagonal_matrix() {
        let h = CMatrix::from_diagonal(&DVector::from_vec(vec![c(3.0), c(1.0), c(2.0)]));
        let es = eigensystem(&h).unwrap();
        assert_eq!(es.energies.as_slice(), &[1.0, 2.0, 3.0]);
        assert!((es.reconstruct() - h).norm() < 1e-14);
        for k in 0..3 {
            let col = es.states.column(k);
            assert!((col.norm() - 1.0).abs() < 1e-14);
            assert_eq!(col.iter().filter(|z| z.norm() > 1e-12).count(), 1);
        }
    }

    #[test]
    fn pauli_x() {
        let w = TWO_PI * 1e9;
        let h = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.5 * w), c(0.5 * w), c(0.0)]);
        let es = eigensystem(&h).unwrap();
        assert!((es.energies[0] + 0.5 * w).abs() < 1e-3);
        assert!((es.energies[1] - 0.5 * w).abs() < 1e-3);
    }

    #[test]
    fn rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(matches!(eigensystem(&h), Err(Error::Input(_))));
    }

    #[test]
    fn kramers_splitting_at_37_millitesla() {
        let er = SpinSpecies::zeeman_only("Er", [8.38, 8.38, 1.247]);
        let b = 4.37e9 * H / (8.38 * MU_B);
        let es = solve(&er, &FieldVector::along_b(b)).unwrap();
        let f = (es.energies[1] - es.energies[0]) / TWO_PI;
        assert!((f / 4.37e9 - 1.0).abs() < 1e-12);
        assert!((b - 0.03726).abs() < 5e-5);
    }

    #[test]
    fn kramers_matrix_elements() {
        let er = SpinSpecies::zeeman_only("Er", [8.38, 8.38, 1.247]);
        let f = FieldVector::along_b(0.037);
        let es = solve(&er, &f).unwrap();
        let (sx, sz) = transition_elements(&es, &er, &f, 1, 0).unwrap();
        assert!((sx - Complex64::new(0.0, -0.5)).norm() < 1e-12);
        assert!((sz - c(0.5)).norm() < 1e-12);
        assert!(matches!(transition_elements(&es, &er, &f, 1, 1), Err(Error::Contract(_))));
    }
}
