//! Exact gate algebra: unitary definitions, qutrit-space embedding, circuit
//! composition, and verification of the composite-SWAP identities.
//!
//! Conventions. Rotations are right-handed with |0⟩ at the north pole of the
//! Bloch sphere; increasing a phase is a counter-clockwise Z rotation viewed
//! from |0⟩. Two-qubit matrices use the basis order [|00⟩, |01⟩, |10⟩, |11⟩]ᵀ
//! with the first site as the most significant digit; multi-level registers
//! extend this lexicographically (|00⟩ … |22⟩).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, eye, kron};
use crate::C64;

/// Sign of the virtual-Z convention: `Z(φ) = diag(1, e^{i·SIGN·φ})`.
///
/// Flipping this constant flips the handedness of every phase sweep in the
/// crate; fixtures in `ramsey` assume `+1.0`.
pub const Z_ROTATION_SIGN: f64 = 1.0;

/// Durations from the tuned-up device, in seconds. Virtual-Z and S† are
/// implemented as 0 ns phase-bookkeeping updates.
pub const TAU_SINGLE_QUBIT: f64 = 20e-9;
pub const TAU_CZ: f64 = 890e-9;
pub const TAU_ISWAP: f64 = 640e-9;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("gate {0:?} takes no phase parameter")]
    UnexpectedPhase(GateKind),
    #[error("gate {0:?} requires a phase parameter")]
    MissingPhase(GateKind),
    #[error("gate {kind:?} acts on {expected} site(s), got {got}")]
    TargetCount { kind: GateKind, expected: usize, got: usize },
    #[error("target indices {0:?} are not distinct or exceed register size {1}")]
    BadTargets(Vec<usize>, usize),
    #[error("dimension mismatch: gate is {gate_dim}-dimensional, targets span {target_dim}")]
    DimensionMismatch { gate_dim: usize, target_dim: usize },
    #[error("expected one phase per site: got {got}, register has {sites}")]
    PhaseCount { got: usize, sites: usize },
}

/// Named gates of the device's (extended) gate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum GateKind {
    CZ,
    ISwap,
    Swap,
    H,
    SqrtX,
    X,
    SDagger,
    VirtualZ,
    Delay,
    /// XX−YY exchange (two-photon |00⟩↔|11⟩). Kept as a gate constant only;
    /// nothing in the characterization pipeline exercises it.
    BSwap,
}

impl GateKind {
    /// Number of sites the gate acts on.
    pub fn arity(self) -> usize {
        match self {
            GateKind::CZ | GateKind::ISwap | GateKind::Swap | GateKind::BSwap => 2,
            _ => 1,
        }
    }

    /// Wall-clock duration of the implemented pulse, in seconds.
    pub fn duration(self) -> f64 {
        match self {
            GateKind::CZ => TAU_CZ,
            GateKind::ISwap => TAU_ISWAP,
            GateKind::Swap => TAU_CZ + TAU_ISWAP,
            GateKind::H | GateKind::SqrtX | GateKind::X => TAU_SINGLE_QUBIT,
            GateKind::SDagger | GateKind::VirtualZ => 0.0,
            GateKind::Delay => 0.0,
            GateKind::BSwap => 0.0,
        }
    }

    fn takes_phase(self) -> bool {
        matches!(self, GateKind::VirtualZ)
    }
}

/// A dense unitary with its dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    pub dim: usize,
    pub matrix: DMatrix<C64>,
}

impl Unitary {
    /// Wrap a matrix, checking unitarity to 1e-12.
    pub fn new(matrix: DMatrix<C64>) -> Self {
        let dim = matrix.nrows();
        assert_eq!(dim, matrix.ncols(), "unitary must be square");
        let defect = linalg::unitarity_defect(&matrix);
        assert!(defect <= 1e-12, "matrix is not unitary (defect {defect:.3e})");
        Unitary { dim, matrix }
    }

    pub fn identity(dim: usize) -> Self {
        Unitary { dim, matrix: eye(dim) }
    }

    /// Apply to a state vector.
    pub fn apply(&self, psi: &StateVector) -> StateVector {
        assert_eq!(self.dim, psi.dim, "unitary/state dimension mismatch");
        StateVector { dim: psi.dim, amplitudes: &self.matrix * &psi.amplitudes }
    }

    pub fn dagger(&self) -> Self {
        Unitary { dim: self.dim, matrix: self.matrix.adjoint() }
    }
}

/// Normalized complex amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub dim: usize,
    pub amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(amplitudes: DVector<C64>) -> Self {
        let norm = amplitudes.norm();
        assert!((norm - 1.0).abs() <= 1e-12, "state norm {norm} is not 1");
        StateVector { dim: amplitudes.len(), amplitudes }
    }

    /// Basis state |index⟩ of a `dim`-dimensional register.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim);
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        StateVector { dim, amplitudes: v }
    }

    /// Probability of basis outcome `index`.
    pub fn population(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    /// All basis populations.
    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }
}

/// Per-site level counts of a register, first site most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Register {
    pub levels: Vec<usize>,
}

impl Register {
    pub fn qubits(n: usize) -> Self {
        Register { levels: vec![2; n] }
    }

    pub fn qutrits(n: usize) -> Self {
        Register { levels: vec![3; n] }
    }

    pub fn dim(&self) -> usize {
        self.levels.iter().product()
    }

    pub fn sites(&self) -> usize {
        self.levels.len()
    }

    /// Decompose a flat index into per-site digits.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.sites()];
        for (site, &l) in self.levels.iter().enumerate().rev() {
            out[site] = index % l;
            index /= l;
        }
        out
    }

    /// Flatten per-site digits into an index.
    pub fn index(&self, digits: &[usize]) -> usize {
        assert_eq!(digits.len(), self.sites());
        let mut idx = 0;
        for (site, &d) in digits.iter().enumerate() {
            assert!(d < self.levels[site]);
            idx = idx * self.levels[site] + d;
        }
        idx
    }

    /// Basis state from per-site digits, e.g. `[1, 0]` for |10⟩.
    pub fn basis_state(&self, digits: &[usize]) -> StateVector {
        StateVector::basis(self.dim(), self.index(digits))
    }
}

/// One gate instance in a circuit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    /// Virtual-Z angle, or delay duration carrier for `Delay` (radians unused).
    pub phase: f64,
    pub duration: f64,
}

impl GateOp {
    pub fn new(kind: GateKind, targets: Vec<usize>) -> Self {
        assert!(!kind.takes_phase(), "use with_phase for {kind:?}");
        GateOp { kind, targets, phase: 0.0, duration: kind.duration() }
    }

    pub fn virtual_z(target: usize, phase: f64) -> Self {
        GateOp { kind: GateKind::VirtualZ, targets: vec![target], phase, duration: 0.0 }
    }

    pub fn delay(target: usize, duration: f64) -> Self {
        GateOp { kind: GateKind::Delay, targets: vec![target], phase: 0.0, duration }
    }
}

/// Ordered gate list over a register.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub register: Register,
    pub ops: Vec<GateOp>,
}

impl Circuit {
    pub fn new(register: Register) -> Self {
        Circuit { register, ops: Vec::new() }
    }

    pub fn push(&mut self, op: GateOp) -> &mut Self {
        self.ops.push(op);
        self
    }

    /// Total wall-clock duration: the sum of op durations.
    pub fn total_duration(&self) -> f64 {
        self.ops.iter().map(|op| op.duration).sum()
    }
}

/// Exact matrix of a named gate.
///
/// Single-qubit gates are 2×2; two-qubit gates are 4×4 in the basis order
/// [|00⟩, |01⟩, |10⟩, |11⟩]ᵀ. `phase` is accepted only for `VirtualZ`.
pub fn standard_gate(kind: GateKind, phase: Option<f64>) -> Result<Unitary, GateError> {
    if kind.takes_phase() && phase.is_none() {
        return Err(GateError::MissingPhase(kind));
    }
    if !kind.takes_phase() && phase.is_some() {
        return Err(GateError::UnexpectedPhase(kind));
    }
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let i = C64::i();
    let m = match kind {
        GateKind::CZ => DMatrix::from_row_slice(4, 4, &[
            l, o, o, o,
            o, l, o, o,
            o, o, l, o,
            o, o, o, -l,
        ]),
        GateKind::ISwap => DMatrix::from_row_slice(4, 4, &[
            l, o, o, o,
            o, o, i, o,
            o, i, o, o,
            o, o, o, l,
        ]),
        GateKind::Swap => DMatrix::from_row_slice(4, 4, &[
            l, o, o, o,
            o, o, l, o,
            o, l, o, o,
            o, o, o, l,
        ]),
        GateKind::BSwap => DMatrix::from_row_slice(4, 4, &[
            o, o, o, i,
            o, l, o, o,
            o, o, l, o,
            i, o, o, o,
        ]),
        GateKind::H => {
            let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            DMatrix::from_row_slice(2, 2, &[s, s, s, -s])
        }
        GateKind::SqrtX => {
            // Right-handed X rotation by π/2: exp(−iπX/4).
            let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            DMatrix::from_row_slice(2, 2, &[s, -s * i, -s * i, s])
        }
        GateKind::X => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        GateKind::SDagger => DMatrix::from_row_slice(2, 2, &[l, o, o, -i]),
        GateKind::VirtualZ => {
            let phi = phase.unwrap();
            DMatrix::from_row_slice(2, 2, &[l, o, o, C64::from_polar(1.0, Z_ROTATION_SIGN * phi)])
        }
        GateKind::Delay => eye(2),
    };
    Ok(Unitary::new(m))
}

/// Embed a gate acting on qubit subspaces into a multi-level register.
///
/// The gate acts on levels {0, 1} of each target site and as identity on
/// level 2 (and above) and on all other sites. Target order gives the gate's
/// digit significance: `targets[0]` is the gate's most significant digit.
pub fn embed(u: &Unitary, targets: &[usize], register: &Register) -> Result<Unitary, GateError> {
    let sites = register.sites();
    let mut seen = vec![false; sites];
    for &t in targets {
        if t >= sites || seen[t] {
            return Err(GateError::BadTargets(targets.to_vec(), sites));
        }
        seen[t] = true;
    }
    let gate_dim = 1usize << targets.len();
    if u.dim != gate_dim {
        return Err(GateError::DimensionMismatch { gate_dim: u.dim, target_dim: gate_dim });
    }

    let dim = register.dim();
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let digits = register.digits(col);
        let in_qubit_space = targets.iter().all(|&t| digits[t] < 2);
        if !in_qubit_space {
            out[(col, col)] = C64::new(1.0, 0.0);
            continue;
        }
        let gate_col: usize = targets.iter().fold(0, |acc, &t| (acc << 1) | digits[t]);
        for gate_row in 0..gate_dim {
            let amp = u.matrix[(gate_row, gate_col)];
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            let mut row_digits = digits.clone();
            for (k, &t) in targets.iter().enumerate() {
                row_digits[t] = (gate_row >> (targets.len() - 1 - k)) & 1;
            }
            out[(register.index(&row_digits), col)] += amp;
        }
    }
    Ok(Unitary::new(out))
}

/// Convenience wrapper for embedding into an all-qutrit register.
pub fn embed_qutrit(u: &Unitary, targets: &[usize], register: &Register) -> Result<Unitary, GateError> {
    embed(u, targets, register)
}

/// Matrix of one circuit op embedded in the circuit's register.
pub fn op_unitary(op: &GateOp, register: &Register) -> Result<Unitary, GateError> {
    let expected = op.kind.arity();
    if op.targets.len() != expected {
        return Err(GateError::TargetCount { kind: op.kind, expected, got: op.targets.len() });
    }
    let base = match op.kind {
        GateKind::VirtualZ => standard_gate(GateKind::VirtualZ, Some(op.phase))?,
        GateKind::Delay => Unitary::identity(2),
        k => standard_gate(k, None)?,
    };
    embed(&base, &op.targets, register)
}

/// Ordered matrix product of a circuit: later ops are left-multiplied.
pub fn compose(circuit: &Circuit) -> Result<Unitary, GateError> {
    let dim = circuit.register.dim();
    let mut u = eye(dim);
    for op in &circuit.ops {
        u = op_unitary(op, &circuit.register)?.matrix * u;
    }
    Ok(Unitary::new(u))
}

/// Insert virtual-Z compensation phases after every two-qubit gate.
///
/// `per_site_phases[k]` is applied to site `k`. Zero-phase entries still
/// produce the (zero-duration) ops so the compensated circuit's shape does not
/// depend on the phase values.
pub fn local_phase_frame(circuit: &Circuit, per_site_phases: &[f64]) -> Result<Circuit, GateError> {
    if per_site_phases.len() != circuit.register.sites() {
        return Err(GateError::PhaseCount { got: per_site_phases.len(), sites: circuit.register.sites() });
    }
    let mut out = Circuit::new(circuit.register.clone());
    for op in &circuit.ops {
        out.push(op.clone());
        if op.kind.arity() == 2 && op.kind != GateKind::BSwap {
            for (site, &phi) in per_site_phases.iter().enumerate() {
                out.push(GateOp::virtual_z(site, phi));
            }
        }
    }
    Ok(out)
}

/// Which expansion a compiled SWAP uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SwapForm {
    /// iSWAP; CZ; S†⊗S† — the short form with the Hadamards already cancelled.
    SDaggerShort,
    /// H(q0); iSWAP; S†⊗S†; CZ; H(q1) — the full derivation sequence.
    Hadamard,
}

/// Append a compiled SWAP between `a` and `b` to `circuit`.
pub fn push_swap_sequence(circuit: &mut Circuit, a: usize, b: usize, form: SwapForm) {
    match form {
        SwapForm::SDaggerShort => {
            circuit.push(GateOp::new(GateKind::ISwap, vec![a, b]));
            circuit.push(GateOp::new(GateKind::CZ, vec![a, b]));
            circuit.push(GateOp::new(GateKind::SDagger, vec![a]));
            circuit.push(GateOp::new(GateKind::SDagger, vec![b]));
        }
        SwapForm::Hadamard => {
            circuit.push(GateOp::new(GateKind::H, vec![a]));
            circuit.push(GateOp::new(GateKind::ISwap, vec![a, b]));
            circuit.push(GateOp::new(GateKind::SDagger, vec![a]));
            circuit.push(GateOp::new(GateKind::SDagger, vec![b]));
            circuit.push(GateOp::new(GateKind::CZ, vec![a, b]));
            circuit.push(GateOp::new(GateKind::H, vec![b]));
        }
    }
}

/// CNOT with `control` and `target` site indices, built from CZ and H.
fn cnot(control: usize, target: usize, register: &Register) -> Result<Unitary, GateError> {
    let h = standard_gate(GateKind::H, None)?;
    let cz = standard_gate(GateKind::CZ, None)?;
    let h_t = embed(&h, &[target], register)?;
    let cz_e = embed(&cz, &[control, target], register)?;
    Ok(Unitary::new(&h_t.matrix * &cz_e.matrix * &h_t.matrix))
}

/// Result of one decomposition identity check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Report from [`verify_swap_decomposition`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct DecompositionReport {
    pub checks: Vec<IdentityCheck>,
    pub tolerance: f64,
}

impl DecompositionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Verify every decomposition identity behind the composite SWAP, each as an
/// exact matrix identity (no global-phase allowance):
///
/// 1. (S†⊗S†)·U_CZ·U_iSWAP = U_SWAP
/// 2. U_CZ·U_iSWAP = U_iSWAP·U_CZ
/// 3. CNOT₀₁·CNOT₁₀·CNOT₀₁ = U_SWAP
/// 4. H·H = I
/// 5. CNOT₀₁ = (I⊗H)·U_CZ·(I⊗H)
pub fn verify_swap_decomposition() -> DecompositionReport {
    let tolerance = 1e-12;
    let reg2 = Register::qubits(2);
    let cz = standard_gate(GateKind::CZ, None).unwrap().matrix;
    let iswap = standard_gate(GateKind::ISwap, None).unwrap().matrix;
    let swap = standard_gate(GateKind::Swap, None).unwrap().matrix;
    let h = standard_gate(GateKind::H, None).unwrap().matrix;
    let sdg = standard_gate(GateKind::SDagger, None).unwrap().matrix;

    let sdg2 = kron(&sdg, &sdg);
    let mut checks = Vec::new();
    let mut check = |name: &str, dev: f64| {
        checks.push(IdentityCheck { name: name.to_string(), max_deviation: dev, pass: dev <= tolerance });
    };

    check(
        "sdagger_cz_iswap_equals_swap",
        linalg::max_abs_diff(&(&sdg2 * &cz * &iswap), &swap),
    );
    check(
        "cz_iswap_commute",
        linalg::max_abs_diff(&(&cz * &iswap), &(&iswap * &cz)),
    );
    let c01 = cnot(0, 1, &reg2).unwrap().matrix;
    let c10 = cnot(1, 0, &reg2).unwrap().matrix;
    check(
        "three_cnot_chain_equals_swap",
        linalg::max_abs_diff(&(&c01 * &c10 * &c01), &swap),
    );
    check("hadamard_involution", linalg::max_abs_diff(&(&h * &h), &eye(2)));
    let ih = kron(&eye(2), &h);
    check(
        "cnot_from_cz_and_hadamards",
        linalg::max_abs_diff(&(&ih * &cz * &ih), &c01),
    );

    DecompositionReport { checks, tolerance }
}
