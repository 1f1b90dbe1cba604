//! Decoherence channels and coherence-limited fidelity estimates.
//!
//! Channels are applied gate-locally: a circuit op's ideal unitary followed by
//! per-site Kraus channels for the op's duration. Amplitude damping on a
//! multi-level transmon uses harmonic-oscillator rate scaling (level n decays
//! at n/T1) with the exact two-step cascade branching, so channels of
//! durations τ₁ and τ₂ compose to the τ₁+τ₂ channel.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gateset::{op_unitary, Circuit};
use crate::linalg::{self, eye, kron};
use crate::C64;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("T2 = {t2:.3e} s exceeds 2·T1 = {max:.3e} s")]
    UnphysicalT2 { t2: f64, max: f64 },
    #[error("durations and times must be positive (got {0:.3e})")]
    NonPositive(f64),
}

/// Density matrix over a register.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub dim: usize,
    pub entries: DMatrix<C64>,
}

impl DensityMatrix {
    /// Pure-state density matrix |ψ⟩⟨ψ|.
    pub fn pure(psi: &crate::gateset::StateVector) -> Self {
        let entries = &psi.amplitudes * psi.amplitudes.adjoint();
        DensityMatrix { dim: psi.dim, entries }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        Self::pure(&crate::gateset::StateVector::basis(dim, index))
    }

    pub fn population(&self, index: usize) -> f64 {
        self.entries[(index, index)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.population(i)).collect()
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// Check Hermiticity, unit trace, and eigenvalue positivity.
    pub fn validate(&self) -> bool {
        if linalg::hermiticity_defect(&self.entries) > 1e-12 {
            return false;
        }
        if (self.trace() - C64::new(1.0, 0.0)).norm() > 1e-12 {
            return false;
        }
        let (vals, _) = linalg::eigh(&self.entries);
        vals.iter().all(|&v| v >= -1e-10)
    }

    pub fn apply_unitary(&mut self, u: &DMatrix<C64>) {
        self.entries = u * &self.entries * u.adjoint();
    }

    pub fn apply_channel(&mut self, channel: &KrausChannel) {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for k in &channel.operators {
            out += k * &self.entries * k.adjoint();
        }
        self.entries = out;
    }
}

/// A completely positive trace-preserving map given by Kraus operators.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    pub operators: Vec<DMatrix<C64>>,
    pub duration: f64,
}

impl KrausChannel {
    pub fn identity(dim: usize) -> Self {
        KrausChannel { operators: vec![eye(dim)], duration: 0.0 }
    }

    /// `max|ΣK†K − I|`; zero for an exactly trace-preserving channel.
    pub fn completeness_defect(&self) -> f64 {
        let dim = self.operators[0].nrows();
        let mut sum = DMatrix::<C64>::zeros(dim, dim);
        for k in &self.operators {
            sum += k.adjoint() * k;
        }
        linalg::max_abs_diff(&sum, &eye(dim))
    }

    /// Lift a single-site channel onto `site` of a register with the given
    /// per-site level counts.
    pub fn embed(&self, site: usize, levels: &[usize]) -> KrausChannel {
        let before: usize = levels[..site].iter().product();
        let after: usize = levels[site + 1..].iter().product();
        let operators = self
            .operators
            .iter()
            .map(|k| kron(&kron(&eye(before), k), &eye(after)))
            .collect();
        KrausChannel { operators, duration: self.duration }
    }
}

/// Zero-temperature amplitude damping over `tau` for a `levels`-level ladder.
///
/// Level n decays at rate n/T1; the Kraus set carries the exact cascade
/// branching for a three-level ladder, including the |2⟩→|0⟩ double jump.
pub fn amplitude_damping(tau: f64, t1: f64, levels: usize) -> Result<KrausChannel, NoiseError> {
    if t1 <= 0.0 {
        return Err(NoiseError::NonPositive(t1));
    }
    if tau < 0.0 {
        return Err(NoiseError::NonPositive(tau));
    }
    assert!((2..=3).contains(&levels), "amplitude damping supports 2 or 3 levels");
    let g = (-tau / t1).exp(); // single-quantum amplitude survival over tau
    let zero = C64::new(0.0, 0.0);

    let mut operators = Vec::new();
    if levels == 2 {
        let mut k0 = DMatrix::zeros(2, 2);
        k0[(0, 0)] = C64::new(1.0, 0.0);
        k0[(1, 1)] = C64::new(g.sqrt(), 0.0);
        let mut k1 = DMatrix::from_element(2, 2, zero);
        k1[(0, 1)] = C64::new((1.0 - g).sqrt(), 0.0);
        operators.push(k0);
        operators.push(k1);
    } else {
        // Populations: p2 survives as g², p2→p1 with 2g(1−g), p2→p0 with
        // (1−g)²; p1 survives as g, p1→p0 with 1−g. These are the exact
        // solutions of the rate cascade, so the channel is a semigroup in tau.
        let mut k0 = DMatrix::from_element(3, 3, zero);
        k0[(0, 0)] = C64::new(1.0, 0.0);
        k0[(1, 1)] = C64::new(g.sqrt(), 0.0);
        k0[(2, 2)] = C64::new(g, 0.0);
        let mut k10 = DMatrix::from_element(3, 3, zero);
        k10[(0, 1)] = C64::new((1.0 - g).sqrt(), 0.0);
        let mut k21 = DMatrix::from_element(3, 3, zero);
        k21[(1, 2)] = C64::new((2.0 * g * (1.0 - g)).sqrt(), 0.0);
        let mut k20 = DMatrix::from_element(3, 3, zero);
        k20[(0, 2)] = C64::new(1.0 - g, 0.0);
        operators.extend([k0, k10, k21, k20]);
    }
    Ok(KrausChannel { operators, duration: tau })
}

/// Pure dephasing over `tau` at the rate 1/Tφ = 1/T2 − 1/(2·T1).
///
/// Off-diagonal elements ρ_mn damp by exp(−(m−n)²·τ/Tφ); for a qubit this is
/// the standard phase-flip channel with ρ01 → e^{−τ/Tφ}ρ01. T2 > 2·T1 is
/// rejected as unphysical.
pub fn pure_dephasing(tau: f64, t1: f64, t2: f64, levels: usize) -> Result<KrausChannel, NoiseError> {
    if t1 <= 0.0 || t2 <= 0.0 {
        return Err(NoiseError::NonPositive(t1.min(t2)));
    }
    if tau < 0.0 {
        return Err(NoiseError::NonPositive(tau));
    }
    if t2 > 2.0 * t1 {
        return Err(NoiseError::UnphysicalT2 { t2, max: 2.0 * t1 });
    }
    let gamma_phi = 1.0 / t2 - 0.5 / t1; // 1/Tφ; zero for damping-limited T2
    let lambda = tau * gamma_phi;
    // Damping kernel M_mn = exp(−(m−n)²·λ) is a Gaussian kernel, hence PSD;
    // its eigendecomposition gives diagonal Kraus operators.
    let m = DMatrix::from_fn(levels, levels, |r, c| {
        let d = r as f64 - c as f64;
        C64::new((-d * d * lambda).exp(), 0.0)
    });
    let (vals, vecs) = linalg::eigh(&m);
    let mut operators = Vec::new();
    for (k, &mu) in vals.iter().enumerate() {
        if mu <= 1e-15 {
            continue;
        }
        let col = vecs.column(k);
        let mut op = DMatrix::<C64>::zeros(levels, levels);
        for d in 0..levels {
            op[(d, d)] = col[d] * C64::new(mu.sqrt(), 0.0);
        }
        operators.push(op);
    }
    Ok(KrausChannel { operators, duration: tau })
}

/// Root-mean-square quasi-static frequency deviation (rad/s) implied by the
/// gap between free-induction and echo coherence times.
///
/// The free-induction decay is split into the damping part 1/(2T1), the
/// echo-surviving part 1/Tφe = 1/T2e − 1/(2T1), and a quasi-static Gaussian
/// remainder exp(−½σ²t²) that accounts for the rest of the 1/e point at
/// T2*. Noise slower than one sweep point dephases a fixed-delay Ramsey
/// sequence point by point rather than shot by shot.
pub fn quasi_static_sigma(t1: f64, t2_star: f64, t2_echo: f64) -> f64 {
    let gamma_damp = 0.5 / t1;
    let gamma_echo = (1.0 / t2_echo - gamma_damp).max(0.0);
    let remainder = 1.0 - t2_star * (gamma_damp + gamma_echo);
    (2.0 * remainder.max(0.0)).sqrt() / t2_star
}

/// Coherence-limited fidelity bound `1 − (τ/2)·Σ_k 1/T1_k`.
///
/// Equals the first-order mean survival probability of the computational
/// basis states of the participating qubits over duration τ.
pub fn coherence_limited_fidelity(tau: f64, t1_list: &[f64]) -> f64 {
    let rate: f64 = t1_list.iter().map(|t1| 1.0 / t1).sum();
    1.0 - 0.5 * tau * rate
}

/// Density-matrix route for the same bound: evolve every computational basis
/// state of `t1_list.len()` qubits through amplitude damping over `tau` and
/// average the survival probabilities.
pub fn basis_survival_fidelity(tau: f64, t1_list: &[f64]) -> f64 {
    let n = t1_list.len();
    let dim = 1 << n;
    let mut total = 0.0;
    for idx in 0..dim {
        let mut rho = DensityMatrix::basis(dim, idx);
        for (site, &t1) in t1_list.iter().enumerate() {
            let ch = amplitude_damping(tau, t1, 2).unwrap().embed(site, &vec![2; n]);
            rho.apply_channel(&ch);
        }
        total += rho.population(idx);
    }
    total / dim as f64
}

/// Evolve `rho` through the circuit, interleaving each op's ideal unitary with
/// per-site amplitude damping for the op's duration. `t1_per_site[k]` may be
/// infinite to disable damping on site k.
pub fn apply_circuit_noisy(
    rho: &mut DensityMatrix,
    circuit: &Circuit,
    t1_per_site: &[f64],
) -> Result<(), crate::gateset::GateError> {
    assert_eq!(t1_per_site.len(), circuit.register.sites());
    for op in &circuit.ops {
        let u = op_unitary(op, &circuit.register)?;
        rho.apply_unitary(&u.matrix);
        if op.duration > 0.0 {
            for (site, &t1) in t1_per_site.iter().enumerate() {
                if !t1.is_finite() {
                    continue;
                }
                let ch = amplitude_damping(op.duration, t1, circuit.register.levels[site])
                    .expect("valid damping parameters")
                    .embed(site, &circuit.register.levels);
                rho.apply_channel(&ch);
            }
        }
    }
    Ok(())
}

/// Populations of a swept-circuit family under T1 relaxation.
///
/// `build` maps a swept phase to a circuit; the returned rows are the basis
/// populations of the damped output state at each phase.
pub fn noisy_curve(
    build: impl Fn(f64) -> Circuit,
    phases: &[f64],
    t1_per_site: &[f64],
) -> Result<Vec<Vec<f64>>, crate::gateset::GateError> {
    let mut out = Vec::with_capacity(phases.len());
    for &phi in phases {
        let circuit = build(phi);
        let mut rho = DensityMatrix::basis(circuit.register.dim(), 0);
        apply_circuit_noisy(&mut rho, &circuit, t1_per_site)?;
        out.push(rho.populations());
    }
    Ok(out)
}
