//! Dense complex linear algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices over `Complex64`;
//! dimensions in this crate are tiny (at most 27), so no sparsity or blocking
//! is attempted outside the time integrator.

use nalgebra::{DMatrix, DVector};

use crate::C64;

/// `dim`-dimensional identity matrix.
pub fn eye(dim: usize) -> DMatrix<C64> {
    DMatrix::identity(dim, dim)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Largest absolute entry of `m`.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest absolute entry-wise deviation between two equally sized matrices.
pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    max_abs(&(a - b))
}

/// Deviation of `u` from unitarity, as `max|U†U − I|`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let n = u.ncols();
    max_abs_diff(&(u.adjoint() * u), &eye(n))
}

/// Deviation of `m` from Hermiticity, as `max|M − M†|`.
pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// Global-phase-insensitive distance `min_θ max|U − e^{iθ}V|`.
///
/// The trace-alignment angle is a good starting point but does not minimize
/// the max-norm in general, so it is refined by a scan plus golden-section
/// polish.
pub fn phase_aligned_distance(u: &DMatrix<C64>, v: &DMatrix<C64>) -> f64 {
    let dist = |theta: f64| {
        let phase = C64::from_polar(1.0, theta);
        u.iter()
            .zip(v.iter())
            .map(|(a, b)| (a - phase * b).norm())
            .fold(0.0, f64::max)
    };
    let mut best_theta = (v.adjoint() * u).trace().arg();
    let mut best = dist(best_theta);
    let scan = 720;
    for k in 0..scan {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / scan as f64;
        let d = dist(theta);
        if d < best {
            best = d;
            best_theta = theta;
        }
    }
    // Golden-section refinement around the scan minimum.
    let gr = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut a = best_theta - 2.0 * std::f64::consts::PI / scan as f64;
    let mut b = best_theta + 2.0 * std::f64::consts::PI / scan as f64;
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    for _ in 0..80 {
        if dist(c) < dist(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - gr * (b - a);
        d = a + gr * (b - a);
    }
    let theta = 0.5 * (a + b);
    dist(theta).min(best)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order with the matching eigenvector
/// columns. Input Hermiticity is the caller's responsibility; only the lower
/// triangle view taken by `nalgebra` is used.
pub fn eigh(m: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let se = m.clone().symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &se.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Schmidt coefficients of a bipartite pure state with local dimensions
/// `(da, db)`, in descending order.
pub fn schmidt_coefficients(psi: &DVector<C64>, da: usize, db: usize) -> Vec<f64> {
    assert_eq!(psi.len(), da * db, "state dimension mismatch");
    // Row index = first subsystem (most significant digit).
    let m = DMatrix::from_fn(da, db, |i, j| psi[i * db + j]);
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn kron_dimensions_and_entries() {
        let a = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
        let b = eye(3);
        let k = kron(&a, &b);
        assert_eq!(k.nrows(), 6);
        assert_eq!(k[(0, 0)], c(1.0, 0.0));
        assert_eq!(k[(5, 5)], c(2.0, 0.0));
        assert_eq!(k[(0, 3)], c(0.0, 0.0));
    }

    #[test]
    fn eigh_recovers_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(3.0, 0.0), c(-1.0, 0.0), c(2.0, 0.0)]));
        let (vals, vecs) = eigh(&m);
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        // Reconstruction
        let d = DMatrix::from_diagonal(&vals.map(|x| C64::new(x, 0.0)));
        let rec = &vecs * d * vecs.adjoint();
        assert!(max_abs_diff(&rec, &m) < 1e-12);
    }

    #[test]
    fn eigh_hermitian_offdiagonal() {
        // 2x2 with complex off-diagonal, eigenvalues ±|g| around 0
        let g = c(0.3, 0.4);
        let m = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), g, g.conj(), c(0.0, 0.0)]);
        let (vals, vecs) = eigh(&m);
        assert!((vals[0] + 0.5).abs() < 1e-12);
        assert!((vals[1] - 0.5).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&vals.map(|x| C64::new(x, 0.0)));
        let rec = &vecs * d * vecs.adjoint();
        assert!(max_abs_diff(&rec, &m) < 1e-12);
    }

    #[test]
    fn phase_aligned_distance_ignores_global_phase() {
        let u = eye(4);
        let v = eye(4) * C64::from_polar(1.0, 1.234);
        assert!(phase_aligned_distance(&u, &v) < 1e-12);
        // and detects a real difference
        let mut w = eye(4);
        w[(3, 3)] = c(-1.0, 0.0);
        assert!(phase_aligned_distance(&u, &w) > 0.5);
    }

    #[test]
    fn schmidt_rank_of_product_and_bell() {
        let product = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let sv = schmidt_coefficients(&product, 2, 2);
        assert!(sv[1].abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DVector::from_vec(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]);
        let sv = schmidt_coefficients(&bell, 2, 2);
        assert!((sv[1] - s).abs() < 1e-12);
    }
}
