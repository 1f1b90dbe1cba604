//! Three-transmon Hamiltonian on the (levels)³ product space and the dressed
//! frames derived from it.
//!
//! Site order is (Q1, Q2, coupler) with Q1 the most significant digit; all
//! matrix elements are angular frequencies (rad/s).

use nalgebra::{DMatrix, DVector};

use super::{DeviceParams, DynamicsError};
use crate::linalg::{self, eye, kron};
use crate::C64;

/// Flux-tunable coupler frequency for a symmetric SQUID:
/// f_c(Φ) = f_c0·√|cos(πΦ)|, in Hz.
pub fn coupler_frequency(phi: f64, params: &DeviceParams) -> f64 {
    params.f_c0 * (std::f64::consts::PI * phi).cos().abs().sqrt()
}

fn lowering(levels: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(levels, levels);
    for n in 1..levels {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

fn embed_site(op: &DMatrix<C64>, site: usize, levels: usize) -> DMatrix<C64> {
    let mut out = eye(1);
    for s in 0..3 {
        let factor = if s == site { op.clone() } else { eye(levels) };
        out = kron(&out, &factor);
    }
    out
}

/// Full Hermitian H/ħ at coupler flux `phi`, in rad/s.
///
/// Terms: qubit and coupler number operators with their anharmonic
/// corrections, plus both transverse qubit–coupler couplings. The direct
/// qubit–qubit coupling is omitted (assumed small against g₁c, g₂c).
pub fn build_hamiltonian(params: &DeviceParams, phi: f64) -> Result<DMatrix<C64>, DynamicsError> {
    params.validate()?;
    let l = params.levels;
    let dim = l * l * l;
    let tau = std::f64::consts::TAU;

    let mut h = DMatrix::<C64>::zeros(dim, dim);
    let a = lowering(l);
    let n_op = a.adjoint() * &a;
    let x_op = a.adjoint() + &a;

    let freqs = [params.f01[0], params.f01[1], coupler_frequency(phi, params)];
    let anharms = [params.eta[0], params.eta[1], params.eta_c];
    for site in 0..3 {
        let n = embed_site(&n_op, site, l);
        let n2 = &n * &n - &n;
        h += &n * C64::new(tau * freqs[site], 0.0);
        h += n2 * C64::new(0.5 * tau * anharms[site], 0.0);
    }
    for (q, &g) in params.g.iter().enumerate() {
        let xq = embed_site(&x_op, q, l);
        let xc = embed_site(&x_op, 2, l);
        h += xq * xc * C64::new(tau * g, 0.0);
    }
    Ok(h)
}

/// Structured form of the Hamiltonian for the time integrator:
/// H(t) = diag(diag0 + δω_c(t)·n_c) + V with V static and off-diagonal.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    pub dim: usize,
    pub levels: usize,
    /// Static diagonal at the DC bias, rad/s.
    pub diag0: Vec<f64>,
    /// Coupler occupation of each product basis state.
    pub n_c: Vec<f64>,
    /// Off-diagonal coupling entries (row, col, value in rad/s), both
    /// triangles listed.
    pub coupling: Vec<(usize, usize, f64)>,
    /// Coupler frequency at the DC bias, rad/s.
    pub omega_c0: f64,
}

impl HamiltonianParts {
    pub fn new(params: &DeviceParams, phi_dc: f64) -> Result<Self, DynamicsError> {
        params.validate()?;
        let l = params.levels;
        let dim = l * l * l;
        let tau = std::f64::consts::TAU;
        let f_c = coupler_frequency(phi_dc, params);

        let digits = |idx: usize| -> [usize; 3] {
            [idx / (l * l), (idx / l) % l, idx % l]
        };

        let mut diag0 = vec![0.0; dim];
        let mut n_c = vec![0.0; dim];
        for idx in 0..dim {
            let d = digits(idx);
            let mut e = 0.0;
            for (site, &f) in [params.f01[0], params.f01[1], f_c].iter().enumerate() {
                let n = d[site] as f64;
                let eta = [params.eta[0], params.eta[1], params.eta_c][site];
                e += tau * f * n + 0.5 * tau * eta * n * (n - 1.0);
            }
            diag0[idx] = e;
            n_c[idx] = d[2] as f64;
        }

        // (a_q† + a_q)(b† + b) couples states differing by ±1 in one qubit and
        // ±1 in the coupler.
        let mut coupling = Vec::new();
        for idx in 0..dim {
            let d = digits(idx);
            for (q, &g) in params.g.iter().enumerate() {
                for dq in [-1isize, 1] {
                    for dc in [-1isize, 1] {
                        let nq = d[q] as isize + dq;
                        let nc = d[2] as isize + dc;
                        if nq < 0 || nq >= l as isize || nc < 0 || nc >= l as isize {
                            continue;
                        }
                        let mut to = d;
                        to[q] = nq as usize;
                        to[2] = nc as usize;
                        let row = (to[0] * l + to[1]) * l + to[2];
                        // ladder factors: √(n+1) raising, √n lowering
                        let fq = if dq > 0 { (d[q] as f64 + 1.0).sqrt() } else { (d[q] as f64).sqrt() };
                        let fc = if dc > 0 { (d[2] as f64 + 1.0).sqrt() } else { (d[2] as f64).sqrt() };
                        coupling.push((row, idx, tau * g * fq * fc));
                    }
                }
            }
        }

        Ok(HamiltonianParts {
            dim,
            levels: l,
            diag0,
            n_c,
            coupling,
            omega_c0: tau * f_c,
        })
    }

    /// Reassemble the dense Hamiltonian at flux `phi` (for cross-checks).
    pub fn dense_at(&self, params: &DeviceParams, phi: f64) -> DMatrix<C64> {
        let mut h = DMatrix::<C64>::zeros(self.dim, self.dim);
        let delta = std::f64::consts::TAU * coupler_frequency(phi, params) - self.omega_c0;
        for i in 0..self.dim {
            h[(i, i)] = C64::new(self.diag0[i] + delta * self.n_c[i], 0.0);
        }
        for &(r, c, v) in &self.coupling {
            h[(r, c)] += C64::new(v, 0.0);
        }
        h
    }
}

/// Product-basis index of a (q1, q2, coupler) occupation triple.
pub fn basis_index(levels: usize, d: [usize; 3]) -> usize {
    (d[0] * levels + d[1]) * levels + d[2]
}

/// Dressed transition frequencies at the operating bias, from exact
/// diagonalization. Each dressed level is identified by maximum overlap with
/// its product basis state.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DressedFrames {
    /// Dressed qubit |0⟩→|1⟩ frequencies, Hz.
    pub f01: [f64; 2],
    /// Dressed |10⟩–|01⟩ splitting, Hz (the two-qubit-frame frequency).
    pub f_10_01: f64,
    /// Dressed |11⟩→|20⟩ transition frequency, Hz.
    pub f_11_20: f64,
    /// Dressed coupler frequency, Hz.
    pub f_coupler: f64,
}

/// Energy (rad/s) of the dressed eigenstate with maximal overlap on the given
/// product state.
fn dressed_energy(evals: &DVector<f64>, evecs: &DMatrix<C64>, index: usize) -> f64 {
    let mut best = (0usize, 0.0f64);
    for k in 0..evals.len() {
        let w = evecs[(index, k)].norm_sqr();
        if w > best.1 {
            best = (k, w);
        }
    }
    evals[best.0]
}

pub fn dressed_frames(params: &DeviceParams) -> Result<DressedFrames, DynamicsError> {
    let h = build_hamiltonian(params, params.phi_bias)?;
    let (evals, evecs) = linalg::eigh(&h);
    let l = params.levels;
    let tau = std::f64::consts::TAU;
    let e = |d: [usize; 3]| dressed_energy(&evals, &evecs, basis_index(l, d));
    let e000 = e([0, 0, 0]);
    let e100 = e([1, 0, 0]);
    let e010 = e([0, 1, 0]);
    let e110 = e([1, 1, 0]);
    let e200 = e([2, 0, 0]);
    let e001 = e([0, 0, 1]);
    Ok(DressedFrames {
        f01: [(e100 - e000) / tau, (e010 - e000) / tau],
        f_10_01: (e100 - e010) / tau,
        f_11_20: (e200 - e110) / tau,
        f_coupler: (e001 - e000) / tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermiticity_defect, max_abs_diff};

    #[test]
    fn coupler_frequency_endpoints() {
        let p = DeviceParams::reference();
        assert_eq!(coupler_frequency(0.0, &p), 6.9373e9);
        // The √|cos| model pins the frustration point to zero; rounding in
        // cos(π/2) leaves tens of hertz.
        assert!(coupler_frequency(0.5, &p).abs() < 1e3);
        assert!(coupler_frequency(-0.5, &p).abs() < 1e3);
        // Operating point reproduced within 0.5%.
        let f = coupler_frequency(-0.336, &p);
        assert!(
            (f - 4.863e9).abs() / 4.863e9 < 5e-3,
            "f_c(-0.336) = {:.4} GHz",
            f / 1e9
        );
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let p = DeviceParams::reference();
        let h = build_hamiltonian(&p, p.phi_bias).unwrap();
        assert_eq!(h.nrows(), 27);
        assert_eq!(hermiticity_defect(&h), 0.0);
    }

    #[test]
    fn decoupled_hamiltonian_is_diagonal_with_additive_energies() {
        let mut p = DeviceParams::reference();
        p.g = [0.0, 0.0];
        let h = build_hamiltonian(&p, p.phi_bias).unwrap();
        for i in 0..27 {
            for j in 0..27 {
                if i != j {
                    assert_eq!(h[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
        // |110⟩ eigenvalue = 2π(f1 + f2)
        let idx = basis_index(3, [1, 1, 0]);
        let expected = std::f64::consts::TAU * (p.f01[0] + p.f01[1]);
        assert!((h[(idx, idx)].re - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn parts_reassemble_the_dense_hamiltonian() {
        let p = DeviceParams::reference();
        let parts = HamiltonianParts::new(&p, p.phi_bias).unwrap();
        for phi in [p.phi_bias, p.phi_bias + 0.02, -0.2] {
            let dense = build_hamiltonian(&p, phi).unwrap();
            let rebuilt = parts.dense_at(&p, phi);
            assert!(max_abs_diff(&dense, &rebuilt) < 1e-3, "phi = {phi}");
        }
    }

    #[test]
    fn dressed_splitting_is_near_bare_difference() {
        // Exact-diagonalization oracle: the dressed |10⟩–|01⟩ splitting sits
        // within a few MHz of the bare f1 − f2 = 462.70 MHz.
        let p = DeviceParams::reference();
        let frames = dressed_frames(&p).unwrap();
        let bare = p.f01[0] - p.f01[1];
        assert!((bare - 462.70e6).abs() < 1e4);
        assert!(
            (frames.f_10_01 - bare).abs() < 3e6,
            "dressed splitting {:.3} MHz",
            frames.f_10_01 / 1e6
        );
        // And the |11⟩→|20⟩ transition near f12,Q1 − f01,Q2 = 206.63 MHz.
        let bare_cz = (p.f01[0] + p.eta[0]) - p.f01[1];
        assert!((bare_cz - 206.63e6).abs() < 1e4);
        assert!(
            (frames.f_11_20 - bare_cz).abs() < 3e6,
            "dressed 11-20 {:.3} MHz",
            frames.f_11_20 / 1e6
        );
    }

    #[test]
    fn dressed_qubits_are_repelled_downward_by_the_coupler() {
        let p = DeviceParams::reference();
        let frames = dressed_frames(&p).unwrap();
        for q in 0..2 {
            let shift = frames.f01[q] - p.f01[q];
            assert!(shift < 0.0, "qubit {q} shifted {shift}");
            assert!(shift.abs() < 5e6);
        }
    }
}
