//! Conditional-Ramsey and cross-Ramsey experiments: circuit builders, sweep
//! backends, sinusoid fitting, and the SWAP local-phase tune-up.
//!
//! Circuits use the |q_c q_t⟩ convention: the control qubit is optionally
//! prepared in |1⟩ with an X gate, the target is put on the −Y axis with a
//! √X gate, the gate under test runs, a virtual-Z sweeps the analysis phase,
//! and a final √X rotates back. For the CZ the analysis acts on the target;
//! for iSWAP and SWAP it acts on the control, which receives the swapped
//! superposition.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{simulate_circuit, CalibrationBundle, DeviceParams};
use crate::gateset::{
    compose, push_swap_sequence, Circuit, GateKind, GateOp, Register, StateVector, SwapForm,
};
use crate::noise::{amplitude_damping, pure_dephasing, DensityMatrix};
use crate::readout::ConfusionMatrix;
use crate::rng::stream_rng;
use rand::Rng as _;
use crate::nlfit;

#[derive(Debug, Error)]
pub enum RamseyError {
    #[error("unsupported gate {0:?} for this sequence")]
    UnsupportedGate(GateKind),
    #[error("phase grid is empty")]
    EmptyGrid,
    #[error("need ≥{need} points spanning ≥ one period, got {got} over {span:.3} rad")]
    InsufficientGrid { need: usize, got: usize, span: f64 },
    #[error("fit did not converge")]
    FitFailed,
    #[error("tune-up response is flat (swing {swing:.3})")]
    FlatResponse { swing: f64 },
    #[error("pulse backend: {0}")]
    Pulse(#[from] crate::dynamics::DynamicsError),
    #[error("gate error: {0}")]
    Gate(#[from] crate::gateset::GateError),
}

/// Which Ramsey sequence an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RamseyKind {
    ConditionalCz,
    CrossIswap,
    CrossSwap,
}

/// Full description of one swept experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExperimentSpec {
    pub kind: RamseyKind,
    /// Control qubit prepared in |1⟩?
    pub control_excited: bool,
    /// Site indices of (q_c, q_t).
    pub roles: (usize, usize),
    /// Expansion used when the gate under test is the composite SWAP.
    pub swap_form: SwapForm,
    /// SWAP-level local-phase trim (per site, radians), applied as virtual-Z
    /// ops right after the SWAP sequence; the tune-up measures it.
    pub swap_trim: [f64; 2],
}

impl ExperimentSpec {
    pub fn new(kind: RamseyKind, control_excited: bool, roles: (usize, usize)) -> Self {
        ExperimentSpec {
            kind,
            control_excited,
            roles,
            swap_form: SwapForm::SDaggerShort,
            swap_trim: [0.0; 2],
        }
    }

    /// The bright output state (q_c label, q_t label) whose population the
    /// fits track.
    pub fn tracked_state(&self) -> (usize, usize) {
        match (self.kind, self.control_excited) {
            (RamseyKind::ConditionalCz, false) => (0, 1),
            (RamseyKind::ConditionalCz, true) => (1, 1),
            (_, false) => (1, 0),
            (_, true) => (1, 1),
        }
    }

    /// Site-basis index (00, 01, …, 22 with site 0 most significant) of a
    /// role-basis label (q_c, q_t).
    pub fn site_index(&self, labels: (usize, usize)) -> usize {
        let mut digits = [0usize; 2];
        digits[self.roles.0] = labels.0;
        digits[self.roles.1] = labels.1;
        digits[0] * 3 + digits[1]
    }
}

/// Conditional-Ramsey circuit for the CZ gate.
pub fn build_conditional_ramsey(
    gate: GateKind,
    control_excited: bool,
    phi: f64,
    roles: (usize, usize),
) -> Result<Circuit, RamseyError> {
    if gate != GateKind::CZ {
        return Err(RamseyError::UnsupportedGate(gate));
    }
    let (q_c, q_t) = roles;
    let mut c = Circuit::new(Register::qubits(2));
    if control_excited {
        c.push(GateOp::new(GateKind::X, vec![q_c]));
    }
    c.push(GateOp::new(GateKind::SqrtX, vec![q_t]));
    c.push(GateOp::new(GateKind::CZ, vec![q_c, q_t]));
    c.push(GateOp::virtual_z(q_t, phi));
    c.push(GateOp::new(GateKind::SqrtX, vec![q_t]));
    Ok(c)
}

/// Cross-Ramsey circuit for the iSWAP gate or the composite SWAP.
pub fn build_cross_ramsey(
    gate: GateKind,
    control_excited: bool,
    phi: f64,
    roles: (usize, usize),
    swap_form: SwapForm,
) -> Result<Circuit, RamseyError> {
    let (q_c, q_t) = roles;
    let mut c = Circuit::new(Register::qubits(2));
    if control_excited {
        c.push(GateOp::new(GateKind::X, vec![q_c]));
    }
    c.push(GateOp::new(GateKind::SqrtX, vec![q_t]));
    match gate {
        GateKind::ISwap => {
            c.push(GateOp::new(GateKind::ISwap, vec![q_c, q_t]));
        }
        GateKind::Swap => {
            push_swap_sequence(&mut c, q_c, q_t, swap_form);
        }
        other => return Err(RamseyError::UnsupportedGate(other)),
    }
    c.push(GateOp::virtual_z(q_c, phi));
    c.push(GateOp::new(GateKind::SqrtX, vec![q_c]));
    Ok(c)
}

fn build(spec: &ExperimentSpec, phi: f64) -> Result<Circuit, RamseyError> {
    match spec.kind {
        RamseyKind::ConditionalCz => {
            build_conditional_ramsey(GateKind::CZ, spec.control_excited, phi, spec.roles)
        }
        RamseyKind::CrossIswap => {
            build_cross_ramsey(GateKind::ISwap, spec.control_excited, phi, spec.roles, spec.swap_form)
        }
        RamseyKind::CrossSwap => {
            let mut c = build_cross_ramsey(
                GateKind::Swap,
                spec.control_excited,
                phi,
                spec.roles,
                spec.swap_form,
            )?;
            if spec.swap_trim != [0.0; 2] {
                // Trim phases land after the SWAP sequence, before the
                // analysis ops (all diagonal, so the position among the
                // trailing virtual-Z ops is immaterial).
                let at = c.ops.len() - 2;
                c.ops.insert(at, GateOp::virtual_z(0, spec.swap_trim[0]));
                c.ops.insert(at + 1, GateOp::virtual_z(1, spec.swap_trim[1]));
            }
            Ok(c)
        }
    }
}

/// Gate-local decoherence applied between ideal unitaries.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoiseModel {
    pub t1: [f64; 2],
    /// Optional pure dephasing on top of T1 (e.g. T2* values).
    pub t2: Option<[f64; 2]>,
}

impl NoiseModel {
    pub fn t1_only(t1: [f64; 2]) -> Self {
        NoiseModel { t1, t2: None }
    }
}

/// Probability law the shot sampler draws from.
#[derive(Debug, Clone, Copy)]
pub enum BaseLaw {
    Exact,
    Noisy(NoiseModel),
}

/// Shot-sampling configuration: multinomial draws from the base law,
/// optionally distorted by a measured confusion matrix first.
pub struct ShotOptions<'a> {
    pub base: BaseLaw,
    pub shots: u64,
    pub confusion: Option<&'a ConfusionMatrix>,
    pub seed: u64,
    /// Per-point quasi-static phase scatter (rms radians per qubit). Noise
    /// slower than one sweep point reshuffles the accrued phase between
    /// points; see [`crate::noise::quasi_static_sigma`].
    pub slow_phase_sigma: Option<[f64; 2]>,
}

impl<'a> ShotOptions<'a> {
    pub fn new(base: BaseLaw, shots: u64, seed: u64) -> Self {
        ShotOptions { base, shots, confusion: None, seed, slow_phase_sigma: None }
    }
}

/// Pulse-level backend configuration.
pub struct PulseBackend<'a> {
    pub params: &'a DeviceParams,
    pub cal: &'a CalibrationBundle,
    pub dt: f64,
}

/// Simulation backend for a phase sweep.
pub enum Backend<'a> {
    Exact,
    Noisy(NoiseModel),
    Shots(ShotOptions<'a>),
    Pulse(PulseBackend<'a>),
}

impl Backend<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Noisy(_) => "noisy",
            Backend::Shots(_) => "shots",
            Backend::Pulse(_) => "pulse",
        }
    }

    pub fn shots(&self) -> Option<u64> {
        match self {
            Backend::Shots(s) => Some(s.shots),
            _ => None,
        }
    }
}

/// One swept experiment: phases, per-point two-qutrit populations in the
/// site basis (00, 01, …, 22), and provenance.
#[derive(Debug, Clone, Serialize)]
pub struct RamseyTrace {
    pub spec: ExperimentSpec,
    pub phi: Vec<f64>,
    pub populations: Vec<[f64; 9]>,
    pub backend: String,
    pub shots: Option<u64>,
}

impl RamseyTrace {
    /// Population of the tracked bright state per phase point.
    pub fn tracked_signal(&self) -> Vec<f64> {
        let idx = self.spec.site_index(self.spec.tracked_state());
        self.populations.iter().map(|p| p[idx]).collect()
    }

    /// Probability-sum defect against 1 across all points.
    pub fn normalization_defect(&self) -> f64 {
        self.populations
            .iter()
            .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn exact_populations(circuit: &Circuit) -> Result<[f64; 9], RamseyError> {
    let u = compose(circuit)?;
    let dim = circuit.register.dim();
    let out = u.apply(&StateVector::basis(dim, 0));
    let mut p9 = [0.0; 9];
    for (idx, amp) in out.amplitudes.iter().enumerate() {
        let digits = circuit.register.digits(idx);
        p9[digits[0] * 3 + digits[1]] += amp.norm_sqr();
    }
    Ok(p9)
}

fn noisy_populations(circuit: &Circuit, model: &NoiseModel) -> Result<[f64; 9], RamseyError> {
    let dim = circuit.register.dim();
    let mut rho = DensityMatrix::basis(dim, 0);
    for op in &circuit.ops {
        let u = crate::gateset::op_unitary(op, &circuit.register)?;
        rho.apply_unitary(&u.matrix);
        if op.duration > 0.0 {
            for site in 0..2 {
                let levels = circuit.register.levels[site];
                let ad = amplitude_damping(op.duration, model.t1[site], levels)
                    .expect("valid decay parameters")
                    .embed(site, &circuit.register.levels);
                rho.apply_channel(&ad);
                if let Some(t2) = model.t2 {
                    let deph = pure_dephasing(op.duration, model.t1[site], t2[site], levels)
                        .expect("valid dephasing parameters")
                        .embed(site, &circuit.register.levels);
                    rho.apply_channel(&deph);
                }
            }
        }
    }
    let mut p9 = [0.0; 9];
    for idx in 0..dim {
        let digits = circuit.register.digits(idx);
        p9[digits[0] * 3 + digits[1]] += rho.population(idx);
    }
    Ok(p9)
}

fn multinomial(p: &[f64; 9], shots: u64, rng: &mut impl rand::Rng) -> [f64; 9] {
    let mut counts = [0u64; 9];
    let total: f64 = p.iter().sum();
    for _ in 0..shots {
        let r: f64 = rng.gen_range(0.0..total.max(1.0));
        let mut acc = 0.0;
        let mut drawn = 8;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if r < acc {
                drawn = i;
                break;
            }
        }
        counts[drawn] += 1;
    }
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = counts[i] as f64 / shots as f64;
    }
    out
}

/// Populations of one circuit under a backend. `point_stream` keys the
/// counter-based RNG stream for shot sampling.
pub fn evaluate_backend(
    backend: &Backend,
    circuit: &Circuit,
    point_stream: u64,
) -> Result<[f64; 9], RamseyError> {
    match backend {
        Backend::Exact => exact_populations(circuit),
        Backend::Noisy(model) => noisy_populations(circuit, model),
        Backend::Shots(opts) => {
            let mut rng = stream_rng(opts.seed, point_stream);
            let circuit = match opts.slow_phase_sigma {
                None => circuit.clone(),
                Some(sigma) => {
                    // One slow-noise sample per point: an extra Z phase on
                    // each qubit, inserted before the analysis pulse.
                    let mut jittered = circuit.clone();
                    let at = jittered.ops.len().saturating_sub(1);
                    for (site, &sig) in sigma.iter().enumerate() {
                        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        let normal: f64 =
                            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                        jittered.ops.insert(at + site, GateOp::virtual_z(site, sig * normal));
                    }
                    jittered
                }
            };
            let circuit = &circuit;
            let clean = match opts.base {
                BaseLaw::Exact => exact_populations(circuit)?,
                BaseLaw::Noisy(model) => noisy_populations(circuit, &model)?,
            };
            let distorted = match opts.confusion {
                Some(t) => {
                    let y = t.entries.transpose() * DVector::from_row_slice(&clean);
                    let mut out = [0.0; 9];
                    for i in 0..9 {
                        out[i] = y[i].max(0.0);
                    }
                    out
                }
                None => clean,
            };
            Ok(multinomial(&distorted, opts.shots, &mut rng))
        }
        Backend::Pulse(p) => Ok(simulate_circuit(circuit, p.cal, p.params, p.dt)?),
    }
}

/// Sweep the virtual-Z phase over `phi_grid` under the given backend.
pub fn sweep(
    spec: &ExperimentSpec,
    phi_grid: &[f64],
    backend: &Backend,
) -> Result<RamseyTrace, RamseyError> {
    if phi_grid.is_empty() {
        return Err(RamseyError::EmptyGrid);
    }
    let mut populations = Vec::with_capacity(phi_grid.len());
    for (k, &phi) in phi_grid.iter().enumerate() {
        let circuit = build(spec, phi)?;
        populations.push(evaluate_backend(backend, &circuit, k as u64)?);
    }
    Ok(RamseyTrace {
        spec: *spec,
        phi: phi_grid.to_vec(),
        populations,
        backend: backend.label().to_string(),
        shots: backend.shots(),
    })
}

/// Least-squares sinusoid fit of a trace against its ideal curve.
#[derive(Debug, Clone, Serialize)]
pub struct SinusoidFit {
    /// Fitted population swing (ideal 1.0).
    pub swing: f64,
    pub swing_err: f64,
    /// 0.5 − fitted offset (ideal 0.0).
    pub delta_offset: f64,
    pub delta_offset_err: f64,
    /// Fitted phase minus the ideal phase, radians.
    pub delta_phase: f64,
    pub delta_phase_err: f64,
    /// Mean squared error against the ideal curve (not the fit).
    pub mse: f64,
    pub converged: bool,
}

/// Flat record for fit tables; the phase deviation is reported in mrad.
#[derive(Debug, Clone, Serialize)]
pub struct SinusoidFitRecord {
    pub operation: String,
    pub output_state: String,
    pub swing: f64,
    pub swing_err: f64,
    pub delta_offset: f64,
    pub delta_offset_err: f64,
    pub delta_phase_mrad: f64,
    pub delta_phase_err_mrad: f64,
    pub mse: f64,
}

impl SinusoidFit {
    pub fn record(&self, spec: &ExperimentSpec) -> SinusoidFitRecord {
        let (c, t) = spec.tracked_state();
        SinusoidFitRecord {
            operation: match spec.kind {
                RamseyKind::ConditionalCz => "CZ".into(),
                RamseyKind::CrossIswap => "iSWAP".into(),
                RamseyKind::CrossSwap => "SWAP".into(),
            },
            output_state: format!("{c}{t}"),
            swing: self.swing,
            swing_err: self.swing_err,
            delta_offset: self.delta_offset,
            delta_offset_err: self.delta_offset_err,
            delta_phase_mrad: self.delta_phase * 1e3,
            delta_phase_err_mrad: self.delta_phase_err * 1e3,
            mse: self.mse,
        }
    }
}

fn wrap_angle(phi: f64) -> f64 {
    let mut x = phi.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

/// Fit y ≈ A·cos(φ + δ) + m with A ≥ 0; returns (A, δ, m) and their
/// uncertainties.
fn fit_phase_sinusoid(phi: &[f64], y: &[f64]) -> Result<([f64; 3], [f64; 3]), RamseyError> {
    // Linear initialization through the cos/sin quadrature sums.
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut c_sum = 0.0;
    let mut s_sum = 0.0;
    for (&p, &v) in phi.iter().zip(y) {
        c_sum += (v - mean) * p.cos();
        s_sum += (v - mean) * p.sin();
    }
    let a0 = 2.0 * (c_sum * c_sum + s_sum * s_sum).sqrt() / n;
    let delta0 = (-s_sum).atan2(c_sum);
    let fit =
        nlfit::levenberg_marquardt(&nlfit::PhaseSinusoid, phi, y, &[a0.max(1e-6), delta0, mean], 400)
            .map_err(|_| RamseyError::FitFailed)?;
    let mut p = [fit.params[0], fit.params[1], fit.params[2]];
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[1] = wrap_angle(p[1] + std::f64::consts::PI);
    } else {
        p[1] = wrap_angle(p[1]);
    }
    Ok((p, [fit.uncertainties[0], fit.uncertainties[1], fit.uncertainties[2]]))
}

/// Fit the tracked-state signal of a trace and compare against the exact
/// ideal curve of the same experiment.
pub fn fit_trace(trace: &RamseyTrace) -> Result<SinusoidFit, RamseyError> {
    let span = trace.phi.iter().cloned().fold(f64::MIN, f64::max)
        - trace.phi.iter().cloned().fold(f64::MAX, f64::min);
    // A uniform n-point grid over [0, 2π) spans (n−1)/n of a period, so the
    // period-coverage floor sits at half a turn.
    if trace.phi.len() < 8 || span < std::f64::consts::PI {
        return Err(RamseyError::InsufficientGrid { need: 8, got: trace.phi.len(), span });
    }
    let y = trace.tracked_signal();
    let idx = trace.spec.site_index(trace.spec.tracked_state());

    // Ideal reference, computed analytically from the exact backend at the
    // same phase points. Backend-compensation trims do not belong in the
    // ideal experiment.
    let mut ideal_spec = trace.spec;
    ideal_spec.swap_trim = [0.0; 2];
    let mut ideal = Vec::with_capacity(trace.phi.len());
    for &phi in &trace.phi {
        let circuit = build(&ideal_spec, phi)?;
        ideal.push(exact_populations(&circuit)?[idx]);
    }
    let mse =
        y.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;

    let (p, errs) = fit_phase_sinusoid(&trace.phi, &y)?;
    let (ideal_p, _) = fit_phase_sinusoid(&trace.phi, &ideal)?;

    Ok(SinusoidFit {
        swing: 2.0 * p[0],
        swing_err: 2.0 * errs[0],
        delta_offset: 0.5 - p[2],
        delta_offset_err: errs[2],
        delta_phase: wrap_angle(p[1] - ideal_p[1]),
        delta_phase_err: errs[1],
        mse,
        converged: true,
    })
}

/// SWAP local-phase tune-up: for each qubit, sweep a virtual-Z phase after
/// an uncompensated SWAP sequence with the partner prepared in |1⟩, and
/// return the phase that maximizes the analyzed qubit's |1⟩ population
/// (parabola-refined around the grid maximum).
pub fn tune_swap_local_phase(
    law: &dyn Fn(&Circuit) -> Result<[f64; 9], RamseyError>,
    phi_grid: &[f64],
    swap_form: SwapForm,
) -> Result<[f64; 2], RamseyError> {
    if phi_grid.len() < 4 {
        return Err(RamseyError::EmptyGrid);
    }
    let mut out = [0.0; 2];
    for analyzed in 0..2 {
        let partner = 1 - analyzed;
        let mut response = Vec::with_capacity(phi_grid.len());
        for &phi in phi_grid {
            let circuit =
                build_cross_ramsey(GateKind::Swap, true, phi, (analyzed, partner), swap_form)?;
            let p9 = law(&circuit)?;
            // Marginal P(analyzed = |1⟩).
            let p1: f64 = (0..9)
                .filter(|idx| {
                    let digits = [idx / 3, idx % 3];
                    digits[analyzed] == 1
                })
                .map(|idx| p9[idx])
                .sum();
            response.push(p1);
        }
        let swing = response.iter().cloned().fold(f64::MIN, f64::max)
            - response.iter().cloned().fold(f64::MAX, f64::min);
        if swing < 0.05 {
            return Err(RamseyError::FlatResponse { swing });
        }
        let arg = response
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        // Cyclic parabola refinement assuming a uniform grid.
        let n = phi_grid.len();
        let step = phi_grid[1] - phi_grid[0];
        let y_l = response[(arg + n - 1) % n];
        let y_c = response[arg];
        let y_r = response[(arg + 1) % n];
        let denom = y_l - 2.0 * y_c + y_r;
        let shift = if denom.abs() > 1e-12 { 0.5 * (y_l - y_r) / denom } else { 0.0 };
        out[analyzed] = wrap_angle(phi_grid[arg] + shift.clamp(-1.0, 1.0) * step);
    }
    Ok(out)
}

/// Pulse-backend convenience wrapper for the tune-up.
pub fn tune_swap_local_phase_pulse(
    params: &DeviceParams,
    cal: &CalibrationBundle,
    phi_grid: &[f64],
    dt: f64,
) -> Result<[f64; 2], RamseyError> {
    let law = |circuit: &Circuit| -> Result<[f64; 9], RamseyError> {
        Ok(simulate_circuit(circuit, cal, params, dt)?)
    };
    tune_swap_local_phase(&law, phi_grid, SwapForm::SDaggerShort)
}

/// Per-qubit quasi-static phase scatter (rms radians) for a circuit of the
/// given duration, from the device coherence record.
pub fn quasi_static_phase_sigma(params: &DeviceParams, duration: f64) -> [f64; 2] {
    [
        crate::noise::quasi_static_sigma(params.t1[0], params.t2_star[0], params.t2_echo[0]) * duration,
        crate::noise::quasi_static_sigma(params.t1[1], params.t2_star[1], params.t2_echo[1]) * duration,
    ]
}

/// Uniform phase grid of `n` points over [0, 2π).
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| std::f64::consts::TAU * k as f64 / n as f64).collect()
}

/// Serialize a trace as CSV with columns phi_rad, p00..p22, backend, shots.
pub fn trace_to_csv(trace: &RamseyTrace) -> String {
    let mut out = String::from("phi_rad,p00,p01,p02,p10,p11,p12,p20,p21,p22,backend,shots\n");
    for (phi, pops) in trace.phi.iter().zip(&trace.populations) {
        out.push_str(&format!("{phi}"));
        for p in pops {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(",{},{}\n", trace.backend, trace.shots.unwrap_or(0)));
    }
    out
}

/// Raw columns of a trace CSV: phases, populations, backend tag, shots.
pub type TraceData = (Vec<f64>, Vec<[f64; 9]>, String, Option<u64>);

/// Parse the data columns of a trace CSV (the experiment description is not
/// part of the file format). Comment lines starting with `#` are skipped.
pub fn trace_data_from_csv(text: &str) -> Result<TraceData, RamseyError> {
    let mut phi = Vec::new();
    let mut populations = Vec::new();
    let mut backend = String::from("unknown");
    let mut shots = None;
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
    {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(RamseyError::FitFailed);
        }
        phi.push(fields[0].parse::<f64>().map_err(|_| RamseyError::FitFailed)?);
        let mut row = [0.0; 9];
        for (i, v) in row.iter_mut().enumerate() {
            *v = fields[i + 1].parse::<f64>().map_err(|_| RamseyError::FitFailed)?;
        }
        populations.push(row);
        backend = fields[10].to_string();
        shots = match fields[11].parse::<u64>() {
            Ok(0) => None,
            Ok(n) => Some(n),
            Err(_) => None,
        };
    }
    if phi.is_empty() {
        return Err(RamseyError::EmptyGrid);
    }
    Ok((phi, populations, backend, shots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::standard_gate;
    use crate::linalg::schmidt_coefficients;
    use crate::C64;
    use rand::Rng;

    fn exact_law(circuit: &Circuit) -> Result<[f64; 9], RamseyError> {
        exact_populations(circuit)
    }

    #[test]
    fn conditional_cz_traces_are_pi_shifted_full_swing() {
        let grid = phase_grid(32);
        let s0 = ExperimentSpec::new(RamseyKind::ConditionalCz, false, (0, 1));
        let s1 = ExperimentSpec::new(RamseyKind::ConditionalCz, true, (0, 1));
        let t0 = sweep(&s0, &grid, &Backend::Exact).unwrap();
        let t1 = sweep(&s1, &grid, &Backend::Exact).unwrap();
        let y0 = t0.tracked_signal();
        let y1 = t1.tracked_signal();
        for (k, &phi) in grid.iter().enumerate() {
            assert!((y0[k] - 0.5 * (1.0 + phi.cos())).abs() < 1e-12);
            assert!((y1[k] - 0.5 * (1.0 - phi.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn removing_the_cz_collapses_the_conditional_difference() {
        for phi in [0.3, 1.7, 4.4] {
            let mut c0 = build_conditional_ramsey(GateKind::CZ, false, phi, (0, 1)).unwrap();
            let mut c1 = build_conditional_ramsey(GateKind::CZ, true, phi, (0, 1)).unwrap();
            c0.ops.retain(|op| op.kind != GateKind::CZ);
            c1.ops.retain(|op| op.kind != GateKind::CZ);
            let p0 = exact_populations(&c0).unwrap();
            let p1 = exact_populations(&c1).unwrap();
            // Marginal P(q_t = 1) coincides between control preparations.
            let m0: f64 = p0[1] + p0[4] + p0[7];
            let m1: f64 = p1[1] + p1[4] + p1[7];
            assert!((m0 - m1).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_iswap_matches_expected_quadrature() {
        let grid = phase_grid(16);
        let s0 = ExperimentSpec::new(RamseyKind::CrossIswap, false, (0, 1));
        let trace = sweep(&s0, &grid, &Backend::Exact).unwrap();
        let y = trace.tracked_signal();
        for (k, &phi) in grid.iter().enumerate() {
            // P(q_c = 1, q_t = 0) = (1 − sin φ)/2; at φ = 0 exactly 0.5.
            assert!((y[k] - 0.5 * (1.0 - phi.sin())).abs() < 1e-12);
        }
        assert!((y[0] - 0.5).abs() < 1e-12);
        let s1 = ExperimentSpec::new(RamseyKind::CrossIswap, true, (0, 1));
        let trace = sweep(&s1, &grid, &Backend::Exact).unwrap();
        let y = trace.tracked_signal();
        for (k, &phi) in grid.iter().enumerate() {
            assert!((y[k] - 0.5 * (1.0 + phi.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_swap_reaches_unity_at_zero_phase() {
        for form in [SwapForm::SDaggerShort, SwapForm::Hadamard] {
            for prep in [false, true] {
                let mut spec = ExperimentSpec::new(RamseyKind::CrossSwap, prep, (0, 1));
                spec.swap_form = form;
                let grid = phase_grid(16);
                let trace = sweep(&spec, &grid, &Backend::Exact).unwrap();
                let y = trace.tracked_signal();
                assert!((y[0] - 1.0).abs() < 1e-12, "{form:?} prep {prep}: P = {}", y[0]);
                for (k, &phi) in grid.iter().enumerate() {
                    assert!((y[k] - 0.5 * (1.0 + phi.cos())).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn swap_cross_ramsey_keeps_separability() {
        // Schmidt-rank oracle over random product inputs through the
        // compiled SWAP portion of the sequence.
        let mut rng = crate::rng::stream_rng(19, 0);
        let mut c = Circuit::new(Register::qubits(2));
        push_swap_sequence(&mut c, 0, 1, SwapForm::SDaggerShort);
        let u = compose(&c).unwrap();
        for _ in 0..50 {
            let angles: Vec<f64> =
                (0..4).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            let q0 = [
                C64::new((angles[0] / 2.0).cos(), 0.0),
                C64::from_polar((angles[0] / 2.0).sin(), angles[1]),
            ];
            let q1 = [
                C64::new((angles[2] / 2.0).cos(), 0.0),
                C64::from_polar((angles[2] / 2.0).sin(), angles[3]),
            ];
            let amps = DVector::from_vec(vec![
                q0[0] * q1[0],
                q0[0] * q1[1],
                q0[1] * q1[0],
                q0[1] * q1[1],
            ]);
            let out = u.apply(&StateVector::new(amps));
            let sv = schmidt_coefficients(&out.amplitudes, 2, 2);
            assert!(sv[1] < 1e-10);
        }
    }

    #[test]
    fn traces_are_two_pi_periodic_not_pi_periodic() {
        let spec = ExperimentSpec::new(RamseyKind::CrossSwap, false, (0, 1));
        for &phi in &[0.4, 1.1, 2.0] {
            let a = exact_populations(&build(&spec, phi).unwrap()).unwrap();
            let b =
                exact_populations(&build(&spec, phi + std::f64::consts::TAU).unwrap()).unwrap();
            for i in 0..9 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
        // π-shifted phases give different populations: the sequence is not
        // π-periodic in the single applied virtual-Z.
        let a = exact_populations(&build(&spec, 0.0).unwrap()).unwrap();
        let b = exact_populations(&build(&spec, std::f64::consts::PI).unwrap()).unwrap();
        let idx = spec.site_index(spec.tracked_state());
        assert!((a[idx] - b[idx]).abs() > 0.9);
    }

    #[test]
    fn exact_fit_recovers_ideal_parameters() {
        let grid = phase_grid(32);
        let spec = ExperimentSpec::new(RamseyKind::ConditionalCz, true, (0, 1));
        let trace = sweep(&spec, &grid, &Backend::Exact).unwrap();
        let fit = fit_trace(&trace).unwrap();
        assert!((fit.swing - 1.0).abs() < 1e-10);
        assert!(fit.delta_offset.abs() < 1e-10);
        assert!(fit.delta_phase.abs() < 1e-10);
        assert!(fit.mse < 1e-12);
    }

    #[test]
    fn fit_is_invariant_under_full_period_shifts() {
        let grid = phase_grid(16);
        let spec = ExperimentSpec::new(RamseyKind::CrossIswap, false, (0, 1));
        let trace = sweep(&spec, &grid, &Backend::Exact).unwrap();
        let mut shifted = trace.clone();
        for (k, phi) in shifted.phi.iter_mut().enumerate() {
            *phi += std::f64::consts::TAU * ((k % 3) as f64);
        }
        let a = fit_trace(&trace).unwrap();
        let b = fit_trace(&shifted).unwrap();
        assert!((a.swing - b.swing).abs() < 1e-9);
        assert!((a.delta_phase - b.delta_phase).abs() < 1e-9);
    }

    #[test]
    fn regression_fixture_swing_and_offset_are_recovered() {
        // Synthetic trace carrying a reported dataset row's deviations:
        // swing 0.868 and offset error 0.150.
        let grid = phase_grid(32);
        let y: Vec<f64> = grid
            .iter()
            .map(|&phi| 0.434 * (phi + std::f64::consts::PI).cos() + 0.35)
            .collect();
        let (p, _) = fit_phase_sinusoid(&grid, &y).unwrap();
        assert!((2.0 * p[0] - 0.868).abs() < 1e-9);
        assert!((0.5 - p[2] - 0.150).abs() < 1e-9);
    }

    #[test]
    fn shot_sampling_converges_at_one_over_n() {
        let grid = phase_grid(16);
        let spec = ExperimentSpec::new(RamseyKind::CrossIswap, false, (0, 1));
        let exact = sweep(&spec, &grid, &Backend::Exact).unwrap();
        let ideal = exact.tracked_signal();
        let mut mses = Vec::new();
        for (i, shots) in [1_000u64, 10_000, 100_000].iter().enumerate() {
            let trace = sweep(
                &spec,
                &grid,
                &Backend::Shots(ShotOptions::new(BaseLaw::Exact, *shots, 100 + i as u64)),
            )
            .unwrap();
            let y = trace.tracked_signal();
            let mse: f64 = y
                .iter()
                .zip(&ideal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / y.len() as f64;
            mses.push(mse);
        }
        // Expected scale: mean p(1−p)/shots ≈ 0.125/shots.
        for (k, shots) in [1e3, 1e4, 1e5].iter().enumerate() {
            let expected = 0.125 / shots;
            assert!(
                mses[k] < 8.0 * expected && mses[k] > expected / 8.0,
                "shots {shots}: mse {} vs expected scale {expected}",
                mses[k]
            );
        }
        assert!(mses[2] < mses[0] / 10.0);
    }

    #[test]
    fn shot_noise_per_point_matches_binomial_scale() {
        let grid = phase_grid(16);
        let spec = ExperimentSpec::new(RamseyKind::CrossIswap, false, (0, 1));
        let shots = 15_000u64;
        let trace = sweep(
            &spec,
            &grid,
            &Backend::Shots(ShotOptions::new(BaseLaw::Exact, shots, 7)),
        )
        .unwrap();
        let exact = sweep(&spec, &grid, &Backend::Exact).unwrap();
        let se_bound = 0.5 / (shots as f64).sqrt(); // max √(p(1−p)/n)
        assert!(se_bound <= 0.0041);
        let y = trace.tracked_signal();
        let e = exact.tracked_signal();
        for k in 0..y.len() {
            assert!((y[k] - e[k]).abs() < 5.0 * se_bound, "point {k} deviates beyond 5σ");
        }
    }

    #[test]
    fn noisy_backend_shrinks_the_swing() {
        let grid = phase_grid(16);
        let spec = ExperimentSpec::new(RamseyKind::CrossSwap, false, (0, 1));
        let exact = fit_trace(&sweep(&spec, &grid, &Backend::Exact).unwrap()).unwrap();
        let noisy = fit_trace(
            &sweep(&spec, &grid, &Backend::Noisy(NoiseModel::t1_only([77e-6, 79e-6]))).unwrap(),
        )
        .unwrap();
        assert!(noisy.swing < exact.swing);
        assert!(noisy.swing > 0.9, "swing collapsed: {}", noisy.swing);
    }

    #[test]
    fn ideal_tuneup_recovers_zero_phase_and_tracks_injections() {
        let grid = phase_grid(64);
        let zeros = tune_swap_local_phase(&exact_law, &grid, SwapForm::SDaggerShort).unwrap();
        assert!(zeros[0].abs() < 1e-6);
        assert!(zeros[1].abs() < 1e-6);

        // Injected virtual-Z offsets shift the recovered phases by −β.
        let betas = [0.8, -1.3];
        let law = |circuit: &Circuit| -> Result<[f64; 9], RamseyError> {
            let mut c = circuit.clone();
            let insert_at = c.ops.len() - 1;
            c.ops.insert(insert_at, GateOp::virtual_z(0, betas[0]));
            c.ops.insert(insert_at + 1, GateOp::virtual_z(1, betas[1]));
            exact_populations(&c)
        };
        let recovered = tune_swap_local_phase(&law, &grid, SwapForm::SDaggerShort).unwrap();
        let step = std::f64::consts::TAU / 64.0;
        for k in 0..2 {
            assert!(
                (recovered[k] + betas[k]).abs() < step,
                "qubit {k}: recovered {} for β = {}",
                recovered[k],
                betas[k]
            );
        }
        // Applying the recovered compensation restores P(|1⟩) = 1 at φ = 0.
        let circuit =
            build_cross_ramsey(GateKind::Swap, true, 0.0, (0, 1), SwapForm::SDaggerShort).unwrap();
        let mut c = circuit.clone();
        let insert_at = c.ops.len() - 1;
        c.ops.insert(insert_at, GateOp::virtual_z(0, betas[0]));
        c.ops.insert(insert_at + 1, GateOp::virtual_z(1, betas[1]));
        c.ops.insert(insert_at + 2, GateOp::virtual_z(0, recovered[0]));
        c.ops.insert(insert_at + 3, GateOp::virtual_z(1, recovered[1]));
        let p9 = exact_populations(&c).unwrap();
        let p1: f64 = (3..6).map(|i| p9[i]).sum();
        assert!(p1 > 1.0 - 1e-6, "P(q0 = 1) = {p1}");
    }

    #[test]
    fn flat_tuneup_response_is_an_error() {
        let law = |_: &Circuit| -> Result<[f64; 9], RamseyError> {
            let mut p = [0.0; 9];
            p[0] = 1.0;
            Ok(p)
        };
        assert!(matches!(
            tune_swap_local_phase(&law, &phase_grid(16), SwapForm::SDaggerShort),
            Err(RamseyError::FlatResponse { .. })
        ));
    }

    #[test]
    fn trace_csv_layout() {
        let grid = phase_grid(8);
        let spec = ExperimentSpec::new(RamseyKind::ConditionalCz, false, (0, 1));
        let trace = sweep(&spec, &grid, &Backend::Exact).unwrap();
        let csv = trace_to_csv(&trace);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "phi_rad,p00,p01,p02,p10,p11,p12,p20,p21,p22,backend,shots"
        );
        assert_eq!(csv.lines().count(), 9);
        assert!(lines.next().unwrap().ends_with(",exact,0"));
    }

    #[test]
    fn slow_phase_jitter_scatters_points_without_killing_the_swing() {
        let grid = phase_grid(16);
        let spec = ExperimentSpec::new(RamseyKind::CrossSwap, false, (0, 1));
        let clean = sweep(
            &spec,
            &grid,
            &Backend::Shots(ShotOptions::new(BaseLaw::Exact, 200_000, 3)),
        )
        .unwrap();
        let jittered = sweep(
            &spec,
            &grid,
            &Backend::Shots(ShotOptions {
                base: BaseLaw::Exact,
                shots: 200_000,
                confusion: None,
                seed: 3,
                slow_phase_sigma: Some([0.1, 0.1]),
            }),
        )
        .unwrap();
        let exact = sweep(&spec, &grid, &Backend::Exact).unwrap().tracked_signal();
        let mse = |y: &[f64]| -> f64 {
            y.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
        };
        let mse_clean = mse(&clean.tracked_signal());
        let mse_jittered = mse(&jittered.tracked_signal());
        assert!(mse_jittered > 10.0 * mse_clean, "{mse_jittered} vs {mse_clean}");
        let fit = fit_trace(&jittered).unwrap();
        assert!(fit.swing > 0.9, "swing {}", fit.swing);
    }

    #[test]
    fn fit_rejects_a_half_period_grid() {
        let spec = ExperimentSpec::new(RamseyKind::ConditionalCz, false, (0, 1));
        let narrow: Vec<f64> = (0..12).map(|k| k as f64 * 0.2).collect();
        let trace = sweep(&spec, &narrow, &Backend::Exact).unwrap();
        assert!(matches!(fit_trace(&trace), Err(RamseyError::InsufficientGrid { .. })));
    }

    #[test]
    fn sweep_rejects_empty_grid_and_bad_gates() {
        let spec = ExperimentSpec::new(RamseyKind::ConditionalCz, false, (0, 1));
        assert!(matches!(sweep(&spec, &[], &Backend::Exact), Err(RamseyError::EmptyGrid)));
        assert!(matches!(
            build_conditional_ramsey(GateKind::ISwap, false, 0.0, (0, 1)),
            Err(RamseyError::UnsupportedGate(_))
        ));
        assert!(matches!(
            build_cross_ramsey(GateKind::CZ, false, 0.0, (0, 1), SwapForm::SDaggerShort),
            Err(RamseyError::UnsupportedGate(_))
        ));
    }

    #[test]
    fn role_reversal_moves_the_tracked_state() {
        let spec1 = ExperimentSpec::new(RamseyKind::CrossIswap, true, (1, 0));
        let spec0 = ExperimentSpec::new(RamseyKind::CrossIswap, false, (1, 0));
        // q_c on site 1: tracked (1, 0) lands on site state |01⟩.
        assert_eq!(spec0.site_index(spec0.tracked_state()), 1);
        assert_eq!(spec1.site_index(spec1.tracked_state()), 4);
        let trace = sweep(&spec0, &phase_grid(16), &Backend::Exact).unwrap();
        let fit = fit_trace(&trace).unwrap();
        assert!((fit.swing - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sqrt_x_convention_pins_the_bright_state() {
        // √X ; Z(0) ; √X maps |0⟩ to |1⟩ under the right-handed convention;
        // the fixtures in this module assume it.
        let sx = standard_gate(GateKind::SqrtX, None).unwrap();
        let psi = sx.apply(&sx.apply(&StateVector::basis(2, 0)));
        assert!((psi.population(1) - 1.0).abs() < 1e-12);
    }
}
