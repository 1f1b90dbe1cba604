//! Command-line driver: gate-identity verification, device calibration,
//! Ramsey experiments, fidelity bounds, readout confusion matrices, SPAM
//! mitigation, decoherence fits, and timing utilities.
//!
//! Exit codes: 0 success, 2 validation error, 3 calibration or experiment
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cziswap::dynamics::{
    self, calibrate_cz, calibrate_iswap, check_commensurability, measure_two_qubit_frame,
    residual_population, CalibrationBundle, CalibrationOptions, DeviceParams,
    TwoQubitFrameOptions, DEFAULT_DT,
};
use cziswap::fits::{
    detuning_presets, doane_bins, fit_decoherence, DecayModel, DetuningInputs,
};
use cziswap::gateset::{verify_swap_decomposition, TAU_CZ, TAU_ISWAP, TAU_SINGLE_QUBIT};
use cziswap::mitigation::{mitigate_rows, SolverOptions};
use cziswap::noise::{basis_survival_fidelity, coherence_limited_fidelity};
use cziswap::ramsey::{
    self, fit_trace, phase_grid, sweep, Backend, BaseLaw, ExperimentSpec, NoiseModel, RamseyKind,
    ShotOptions,
};
use cziswap::readout::{
    assignment_fidelity, build_confusion_joint, build_confusion_single, confusion_from_csv,
    confusion_to_csv, JointReadoutOptions, ReadoutModel,
};

#[derive(Parser)]
#[command(name = "cziswap", about = "Composite-SWAP gate-set compiler and device simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Device parameter file (TOML); the bundled reference device if omitted.
    #[arg(long, global = true)]
    device: Option<PathBuf>,
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Base seed; all stochastic outputs are reproducible from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker thread limit for internal sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Cz,
    Iswap,
    Swap,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Noisy,
    Pulse,
    Shots,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    T1,
    T2star,
    T2echo,
}

#[derive(Subcommand)]
enum Command {
    /// Check every composite-SWAP decomposition identity.
    Verify {
        /// Corrupt one matrix entry by this amount first (debug aid).
        #[arg(long)]
        perturb: Option<f64>,
    },
    /// Tune up CZ and iSWAP pulses, the two-qubit frame, and the SWAP local
    /// phases on the simulated device; writes a calibration record.
    Calibrate {
        /// Reduced sweep grids for a faster run.
        #[arg(long)]
        fast: bool,
    },
    /// Run conditional/cross-Ramsey sweeps for a gate (both control
    /// preparations and both qubit-role orderings).
    Ramsey {
        #[arg(long, value_enum)]
        gate: GateArg,
        #[arg(long, value_enum, default_value = "exact")]
        backend: BackendArg,
        /// Shots per point for the shot-sampled backend (per-gate defaults
        /// when omitted).
        #[arg(long)]
        shots: Option<u64>,
        /// Confusion-matrix CSV used to mitigate the traces.
        #[arg(long)]
        mitigate: Option<PathBuf>,
        /// Phase points per trace (per-gate defaults when omitted).
        #[arg(long)]
        points: Option<usize>,
        /// Calibration record (JSON) for the pulse backend.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Coherence-limited fidelity bounds and the duration comparison.
    Fidelity,
    /// Simulate readout and build confusion matrices.
    Confusion {
        /// Also build the joint two-qubit 9×9 matrix.
        #[arg(long)]
        joint: bool,
        #[arg(long, default_value_t = 25_000)]
        shots_per_state: usize,
        /// Extra per-shot |2⟩→|1⟩ transition in joint readout.
        #[arg(long, default_value_t = 0.0)]
        excess_two_one: f64,
    },
    /// Reconstruct a trace's populations through a measured confusion matrix.
    Mitigate {
        /// Trace CSV produced by the ramsey command.
        #[arg(long)]
        trace: PathBuf,
        /// Confusion-matrix CSV (9×9).
        #[arg(long = "matrix", visible_alias = "t")]
        matrix: PathBuf,
    },
    /// Fit decoherence time series (CSV with columns t_s, signal).
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
    },
    /// Doane histogram bin count for a sample file (one value per line).
    Doane {
        #[arg(long)]
        input: PathBuf,
    },
    /// Repetition-period / local-oscillator commensurability check.
    Commensurate {
        #[arg(long)]
        t_rep_s: f64,
        #[arg(long)]
        f_lo_hz: f64,
        /// Also report the residual qubit population for this T1.
        #[arg(long)]
        t1_s: Option<f64>,
    },
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_EXPERIMENT: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, message: message.into() }
    }
    fn experiment(message: impl Into<String>) -> Self {
        Failure { code: EXIT_EXPERIMENT, message: message.into() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_device(common: &Common) -> Result<DeviceParams, Failure> {
    match &common.device {
        None => Ok(DeviceParams::reference()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
            DeviceParams::from_toml_str(&text).map_err(|e| Failure::validation(e.to_string()))
        }
    }
}

fn ensure_out_dir(common: &Common) -> Result<(), Failure> {
    fs::create_dir_all(&common.out_dir)
        .map_err(|e| Failure::validation(format!("{}: {e}", common.out_dir.display())))
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Verify { perturb } => cmd_verify(&cli.common, *perturb),
        Command::Calibrate { fast } => cmd_calibrate(&cli.common, *fast),
        Command::Ramsey { gate, backend, shots, mitigate, points, calibration } => cmd_ramsey(
            &cli.common,
            *gate,
            *backend,
            *shots,
            mitigate.as_deref(),
            *points,
            calibration.as_deref(),
        ),
        Command::Fidelity => cmd_fidelity(&cli.common),
        Command::Confusion { joint, shots_per_state, excess_two_one } => {
            cmd_confusion(&cli.common, *joint, *shots_per_state, *excess_two_one)
        }
        Command::Mitigate { trace, matrix } => cmd_mitigate(&cli.common, trace, matrix),
        Command::Fit { input, model } => cmd_fit(&cli.common, input, *model),
        Command::Doane { input } => cmd_doane(&cli.common, input),
        Command::Commensurate { t_rep_s, f_lo_hz, t1_s } => {
            cmd_commensurate(&cli.common, *t_rep_s, *f_lo_hz, *t1_s)
        }
    }
}

fn cmd_verify(common: &Common, perturb: Option<f64>) -> Result<(), Failure> {
    let mut report = verify_swap_decomposition();
    if let Some(eps) = perturb {
        // Debug path: corrupt the first identity's deviation to prove the
        // failure reporting works end to end.
        report.checks[0].max_deviation += eps.abs();
        report.checks[0].pass = report.checks[0].max_deviation <= report.tolerance;
    }
    if common.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        for check in &report.checks {
            println!(
                "{:42} max deviation {:9.2e}  {}",
                check.name,
                check.max_deviation,
                if check.pass { "pass" } else { "FAIL" }
            );
        }
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::experiment("decomposition identities failed"))
    }
}

fn calibration_record(
    bundle: &CalibrationBundle,
    f_2qf: Option<f64>,
    params: &DeviceParams,
) -> serde_json::Value {
    let inputs = DetuningInputs {
        f12_q1: params.f01[0] + params.eta[0],
        f01_q1: params.f01[0],
        f01_q2: params.f01[1],
        f_cz: bundle.cz.f_cz_hz,
        f_iswap: bundle.iswap.f_iswap_hz,
    };
    let presets = detuning_presets(&inputs);
    json!({
        "cz": {
            "tau_ns": bundle.cz.tau_s * 1e9,
            "f_cz_mhz": bundle.cz.f_cz_hz / 1e6,
            "delta_f_cz_mhz": presets.delta_f_cz / 1e6,
            "phi_comp_q1_rad": bundle.cz.phi_comp[0],
            "phi_comp_q2_rad": bundle.cz.phi_comp[1],
            "phi_coupler_rad": 0.0,
            "amplitude_phi0": bundle.cz.amplitude,
            "conditional_phase_rad": bundle.cz.conditional_phase,
            "return_population": bundle.cz.return_population,
            "leakage": bundle.cz.leakage,
        },
        "iswap": {
            "tau_ns": bundle.iswap.tau_s * 1e9,
            "f_iswap_mhz": bundle.iswap.f_iswap_hz / 1e6,
            "delta_f_iswap_mhz": presets.delta_f_iswap / 1e6,
            "phi_comp_q1_rad": bundle.iswap.phi_comp[0],
            "phi_comp_q2_rad": bundle.iswap.phi_comp[1],
            "phi_coupler_rad": bundle.iswap.phi_coupler,
            "amplitude_phi0": bundle.iswap.amplitude,
            "transfer": bundle.iswap.transfer,
            "fidelity_local_z": bundle.iswap.fidelity_local_z,
        },
        "swap": {
            "phi_comp_q1_rad": bundle.swap_phi_comp[0],
            "phi_comp_q2_rad": bundle.swap_phi_comp[1],
        },
        "f_2qf_mhz": f_2qf.map(|f| f / 1e6),
    })
}

fn cmd_calibrate(common: &Common, fast: bool) -> Result<(), Failure> {
    let params = load_device(common)?;
    ensure_out_dir(common)?;
    for warning in params.warnings() {
        eprintln!("warning: {warning}");
    }
    let mut iswap_options = CalibrationOptions::iswap_defaults();
    let mut cz_options = CalibrationOptions::cz_defaults();
    if fast {
        for o in [&mut iswap_options, &mut cz_options] {
            o.f_span = 2.5e6;
            o.f_points = 11;
            o.dt = 2e-12;
        }
    }

    let dump_map = |name: &str, e: &dynamics::DynamicsError| {
        if let dynamics::DynamicsError::NoResonance { map, .. } = e {
            let _ = write_artifact(
                &common.out_dir,
                &format!("{name}_sweep_map.json"),
                &serde_json::to_string_pretty(&map).unwrap(),
            );
        }
    };

    let iswap = calibrate_iswap(&params, &iswap_options).map_err(|e| {
        dump_map("iswap", &e);
        Failure::experiment(format!("iSWAP calibration: {e}"))
    })?;
    let cz = calibrate_cz(&params, &cz_options).map_err(|e| {
        dump_map("cz", &e);
        Failure::experiment(format!("CZ calibration: {e}"))
    })?;

    let frame = measure_two_qubit_frame(
        &params,
        &iswap,
        &TwoQubitFrameOptions { f_points: 9, tau_points: 21, ..Default::default() },
        &iswap_options,
    )
    .map_err(|e| Failure::experiment(format!("two-qubit frame: {e}")))?;

    let mut bundle =
        CalibrationBundle { cz, iswap, swap_phi_comp: [0.0, 0.0], f_2qf_hz: Some(frame.f_2qf_hz) };
    let trim = ramsey::tune_swap_local_phase_pulse(
        &params,
        &bundle,
        &phase_grid(24),
        iswap_options.dt,
    )
    .map_err(|e| Failure::experiment(format!("SWAP phase tune-up: {e}")))?;
    bundle.swap_phi_comp = trim;

    let record = calibration_record(&bundle, Some(frame.f_2qf_hz), &params);
    let full = json!({
        "record": record,
        "bundle": &bundle,
    });
    let path = write_artifact(
        &common.out_dir,
        "calibration.json",
        &serde_json::to_string_pretty(&full).unwrap(),
    )?;
    if common.json {
        println!("{}", serde_json::to_string_pretty(&record).unwrap());
    } else {
        println!("calibration written to {}", path.display());
        println!(
            "iSWAP: f = {:.4} MHz (Δ {:+.2} MHz), τ = {:.0} ns, transfer {:.4}, local-Z fidelity {:.4}",
            bundle.iswap.f_iswap_hz / 1e6,
            bundle.iswap.detuning_hz / 1e6,
            bundle.iswap.tau_s * 1e9,
            bundle.iswap.transfer,
            bundle.iswap.fidelity_local_z
        );
        println!(
            "CZ:    f = {:.4} MHz (Δ {:+.2} MHz), τ = {:.0} ns, return {:.4}, leakage {:.4}, cond. phase {:+.4} rad",
            bundle.cz.f_cz_hz / 1e6,
            bundle.cz.detuning_hz / 1e6,
            bundle.cz.tau_s * 1e9,
            bundle.cz.return_population,
            bundle.cz.leakage,
            bundle.cz.conditional_phase
        );
        println!("f_2qf = {:.4} MHz", frame.f_2qf_hz / 1e6);
        println!(
            "SWAP local phase trim: {:+.1} mrad, {:+.1} mrad",
            trim[0] * 1e3,
            trim[1] * 1e3
        );
    }
    Ok(())
}

fn gate_defaults(gate: GateArg) -> (RamseyKind, usize, u64, [(usize, usize); 2]) {
    match gate {
        // Top row of the experiment set runs (q_c, q_t) = (Q2, Q1) for the
        // CZ and (Q1, Q2) for iSWAP/SWAP; the bottom row swaps the roles.
        GateArg::Cz => (RamseyKind::ConditionalCz, 32, 35_000, [(1, 0), (0, 1)]),
        GateArg::Iswap => (RamseyKind::CrossIswap, 16, 15_000, [(0, 1), (1, 0)]),
        GateArg::Swap => (RamseyKind::CrossSwap, 16, 250_000, [(0, 1), (1, 0)]),
    }
}

fn cmd_ramsey(
    common: &Common,
    gate: GateArg,
    backend_arg: BackendArg,
    shots: Option<u64>,
    mitigate: Option<&Path>,
    points: Option<usize>,
    calibration: Option<&Path>,
) -> Result<(), Failure> {
    let params = load_device(common)?;
    ensure_out_dir(common)?;
    let (kind, default_points, default_shots, orderings) = gate_defaults(gate);
    let n_points = points.unwrap_or(default_points);
    let n_shots = shots.unwrap_or(default_shots);
    let grid = phase_grid(n_points);

    let confusion = match mitigate {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
            let t = confusion_from_csv(&text).map_err(|e| Failure::validation(e.to_string()))?;
            if t.dim != 9 {
                return Err(Failure::validation("mitigation needs a 9×9 confusion matrix"));
            }
            Some((t, path.to_path_buf()))
        }
    };

    let bundle: Option<CalibrationBundle> = match (backend_arg, calibration) {
        (BackendArg::Pulse, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::validation(format!("calibration record: {e}")))?;
            let bundle = v
                .get("bundle")
                .cloned()
                .ok_or_else(|| Failure::validation("calibration record lacks a bundle section"))?;
            Some(
                serde_json::from_value(bundle)
                    .map_err(|e| Failure::validation(format!("calibration record: {e}")))?,
            )
        }
        (BackendArg::Pulse, None) => {
            return Err(Failure::validation("the pulse backend needs --calibration RECORD.json"))
        }
        _ => None,
    };

    let gate_name = match gate {
        GateArg::Cz => "cz",
        GateArg::Iswap => "iswap",
        GateArg::Swap => "swap",
    };
    let mut fits = Vec::new();
    let mut artifacts = Vec::new();
    for (row, roles) in orderings.iter().enumerate() {
        for prep in [false, true] {
            let mut spec = ExperimentSpec::new(kind, prep, *roles);
            if matches!(backend_arg, BackendArg::Pulse) && kind == RamseyKind::CrossSwap {
                if let Some(b) = bundle.as_ref() {
                    spec.swap_trim = b.swap_phi_comp;
                }
            }
            let backend = match backend_arg {
                BackendArg::Exact => Backend::Exact,
                BackendArg::Noisy => Backend::Noisy(NoiseModel::t1_only(params.t1)),
                BackendArg::Shots => Backend::Shots(ShotOptions::new(
                    BaseLaw::Noisy(NoiseModel::t1_only(params.t1)),
                    n_shots,
                    common.seed.wrapping_add((row * 2 + prep as usize) as u64),
                )),
                BackendArg::Pulse => Backend::Pulse(ramsey::PulseBackend {
                    params: &params,
                    cal: bundle.as_ref().unwrap(),
                    dt: DEFAULT_DT,
                }),
            };
            let trace = sweep(&spec, &grid, &backend)
                .map_err(|e| Failure::experiment(format!("sweep failed: {e}")))?;
            let trace = match &confusion {
                Some((t, path)) => {
                    let mitigated =
                        cziswap::mitigation::mitigate_trace(&trace, t, &SolverOptions::default())
                            .map_err(|e| Failure::experiment(format!("mitigation: {e}")))?;
                    artifacts.push(write_artifact(
                        &common.out_dir,
                        &format!("{gate_name}_row{row}_prep{}_mitigated.csv", prep as u8),
                        &format!(
                            "# mitigated with T from {}\n{}",
                            path.display(),
                            ramsey::trace_to_csv(&mitigated)
                        ),
                    )?);
                    mitigated
                }
                None => trace,
            };
            artifacts.push(write_artifact(
                &common.out_dir,
                &format!("{gate_name}_row{row}_prep{}.csv", prep as u8),
                &ramsey::trace_to_csv(&trace),
            )?);
            let fit = fit_trace(&trace)
                .map_err(|e| Failure::experiment(format!("trace fit failed: {e}")))?;
            fits.push(fit.record(&spec));
        }
    }
    let fits_json = serde_json::to_string_pretty(&fits).unwrap();
    artifacts.push(write_artifact(&common.out_dir, &format!("{gate_name}_fits.json"), &fits_json)?);
    if common.json {
        println!("{fits_json}");
    } else {
        println!("op     state  swing     Δoffset   Δphase[mrad]  MSE");
        for f in &fits {
            println!(
                "{:6} |{}⟩   {:.3}({:.0})  {:+.3}({:.0})  {:+7.1}({:.0})  {:.5}",
                f.operation,
                f.output_state,
                f.swing,
                f.swing_err * 1e3,
                f.delta_offset,
                f.delta_offset_err * 1e3,
                f.delta_phase_mrad,
                f.delta_phase_err_mrad,
                f.mse
            );
        }
        for a in &artifacts {
            println!("wrote {}", a.display());
        }
    }
    Ok(())
}

fn cmd_fidelity(common: &Common) -> Result<(), Failure> {
    let params = load_device(common)?;
    let t1 = params.t1;
    let single = coherence_limited_fidelity(TAU_SINGLE_QUBIT, &[t1[0]]);
    let cz = coherence_limited_fidelity(TAU_CZ, &t1);
    let iswap = coherence_limited_fidelity(TAU_ISWAP, &t1);
    let swap_circuit = dynamics::reference_record::SWAP_CIRCUIT_DURATION_S;
    let swap = coherence_limited_fidelity(swap_circuit, &t1);
    let three_cz = 3.0 * TAU_CZ;
    let report = json!({
        "single_qubit": { "duration_s": TAU_SINGLE_QUBIT, "fidelity": single,
                          "density_matrix_check": basis_survival_fidelity(TAU_SINGLE_QUBIT, &[t1[0]]) },
        "cz": { "duration_s": TAU_CZ, "fidelity": cz,
                "density_matrix_check": basis_survival_fidelity(TAU_CZ, &t1) },
        "iswap": { "duration_s": TAU_ISWAP, "fidelity": iswap,
                   "density_matrix_check": basis_survival_fidelity(TAU_ISWAP, &t1) },
        "swap_circuit": { "duration_s": swap_circuit, "fidelity": swap,
                          "density_matrix_check": basis_survival_fidelity(swap_circuit, &t1) },
        "three_cz_swap_duration_s": three_cz,
    });
    if common.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!("coherence-limited fidelity bounds (T1 = {:.0} µs / {:.0} µs):", t1[0] * 1e6, t1[1] * 1e6);
        println!("  single qubit ({:>6.0} ns): {:.4}%", TAU_SINGLE_QUBIT * 1e9, 100.0 * single);
        println!("  CZ           ({:>6.0} ns): {:.2}%", TAU_CZ * 1e9, 100.0 * cz);
        println!("  iSWAP        ({:>6.0} ns): {:.2}%", TAU_ISWAP * 1e9, 100.0 * iswap);
        println!("  SWAP circuit ({:>6.0} ns): {:.2}%", swap_circuit * 1e9, 100.0 * swap);
        println!(
            "  duration: {:.3} µs compiled here vs {:.2} µs for three CZ gates",
            swap_circuit * 1e6,
            three_cz * 1e6
        );
    }
    Ok(())
}

fn cmd_confusion(
    common: &Common,
    joint: bool,
    shots_per_state: usize,
    excess_two_one: f64,
) -> Result<(), Failure> {
    let params = load_device(common)?;
    ensure_out_dir(common)?;
    let models =
        [readout_model(&params, 0), readout_model(&params, 1)];
    let mut summary = Vec::new();
    for (q, model) in models.iter().enumerate() {
        let c = build_confusion_single(model, shots_per_state, common.seed.wrapping_add(q as u64))
            .map_err(|e| Failure::validation(e.to_string()))?;
        let f = assignment_fidelity(&c).map_err(|e| Failure::experiment(e.to_string()))?;
        write_artifact(&common.out_dir, &format!("confusion_q{}.csv", q + 1), &confusion_to_csv(&c))?;
        summary.push(json!({
            "qubit": q + 1,
            "assignment_fidelity": f.fidelity,
            "sem": f.sem,
        }));
    }
    if joint {
        let c = build_confusion_joint(
            &models,
            shots_per_state,
            JointReadoutOptions { excess_two_to_one: excess_two_one },
            common.seed.wrapping_add(17),
        )
        .map_err(|e| Failure::validation(e.to_string()))?;
        write_artifact(&common.out_dir, "confusion_joint.csv", &confusion_to_csv(&c))?;
        summary.push(json!({ "joint": true, "dim": 9, "shots_per_state": shots_per_state }));
    }
    if common.json {
        println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    } else {
        for item in &summary {
            println!("{item}");
        }
        println!("confusion matrices written to {}", common.out_dir.display());
    }
    Ok(())
}

fn readout_model(params: &DeviceParams, qubit: usize) -> ReadoutModel {
    let mut model = ReadoutModel::reference(qubit);
    model.t1 = params.t1[qubit];
    model
}

fn cmd_mitigate(common: &Common, trace_path: &Path, matrix_path: &Path) -> Result<(), Failure> {
    ensure_out_dir(common)?;
    let trace_text = fs::read_to_string(trace_path)
        .map_err(|e| Failure::validation(format!("{}: {e}", trace_path.display())))?;
    let matrix_text = fs::read_to_string(matrix_path)
        .map_err(|e| Failure::validation(format!("{}: {e}", matrix_path.display())))?;
    let (phi, populations, backend, shots) = cziswap::ramsey::trace_data_from_csv(&trace_text)
        .map_err(|e| Failure::validation(format!("trace: {e}")))?;
    let t = confusion_from_csv(&matrix_text).map_err(|e| Failure::validation(e.to_string()))?;
    if t.dim != 9 {
        return Err(Failure::validation("mitigation needs a 9×9 confusion matrix"));
    }
    let mitigated = mitigate_rows(&populations, &t, &SolverOptions::default())
        .map_err(|e| Failure::experiment(e.to_string()))?;
    let mut out = format!("# mitigated with T from {}\n", matrix_path.display());
    out.push_str("phi_rad,p00,p01,p02,p10,p11,p12,p20,p21,p22,backend,shots\n");
    for (k, pops) in mitigated.iter().enumerate() {
        out.push_str(&format!("{}", phi[k]));
        for p in pops {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(",{}+mitigated,{}\n", backend, shots.unwrap_or(0)));
    }
    let stem = trace_path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let path = write_artifact(&common.out_dir, &format!("{stem}_mitigated.csv"), &out)?;
    if common.json {
        println!("{}", json!({ "written": path.display().to_string(), "points": phi.len() }));
    } else {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_fit(common: &Common, input: &Path, model: ModelArg) -> Result<(), Failure> {
    ensure_out_dir(common)?;
    let text = fs::read_to_string(input)
        .map_err(|e| Failure::validation(format!("{}: {e}", input.display())))?;
    let mut t = Vec::new();
    let mut y = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Failure::validation("fit input needs columns t_s,signal"));
        }
        t.push(fields[0].parse::<f64>().map_err(|e| Failure::validation(e.to_string()))?);
        y.push(fields[1].parse::<f64>().map_err(|e| Failure::validation(e.to_string()))?);
    }
    let decay_model = match model {
        ModelArg::T1 => DecayModel::T1Exponential,
        ModelArg::T2star => DecayModel::T2StarDampedCosine,
        ModelArg::T2echo => DecayModel::T2EchoExponential,
    };
    let fit = fit_decoherence(&t, &y, decay_model)
        .map_err(|e| Failure::validation(e.to_string()))?;
    let model_name = match model {
        ModelArg::T1 => "t1",
        ModelArg::T2star => "t2star",
        ModelArg::T2echo => "t2echo",
    };
    let mut csv = String::from("model,A,T_s,f_hz,phi_rad,m,err_T_frac,accepted\n");
    csv.push_str(&format!(
        "{model_name},{},{},{},{},{},{},{}\n",
        fit.amplitude,
        fit.t_decay,
        fit.frequency.unwrap_or(f64::NAN),
        fit.phase.unwrap_or(f64::NAN),
        fit.offset,
        fit.t_decay_err / fit.t_decay.abs(),
        fit.accepted
    ));
    let path = write_artifact(&common.out_dir, "fit_results.csv", &csv)?;
    if common.json {
        println!("{}", serde_json::to_string_pretty(&fit).unwrap());
    } else {
        println!(
            "{model_name}: T = {:.3e} s ± {:.1}%, accepted = {}",
            fit.t_decay,
            100.0 * fit.t_decay_err / fit.t_decay.abs(),
            fit.accepted
        );
        println!("wrote {}", path.display());
    }
    if fit.accepted {
        Ok(())
    } else {
        Err(Failure::experiment("fit rejected by the 15% uncertainty rule"))
    }
}

fn cmd_doane(common: &Common, input: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(input)
        .map_err(|e| Failure::validation(format!("{}: {e}", input.display())))?;
    let samples: Result<Vec<f64>, _> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.trim().parse::<f64>())
        .collect();
    let samples = samples.map_err(|e| Failure::validation(e.to_string()))?;
    if samples.len() < 3 {
        return Err(Failure::validation("need at least 3 samples"));
    }
    let k = doane_bins(&samples);
    if common.json {
        println!("{}", json!({ "samples": samples.len(), "bins": k }));
    } else {
        println!("{} samples → {} bins", samples.len(), k);
    }
    Ok(())
}

fn cmd_commensurate(
    common: &Common,
    t_rep_s: f64,
    f_lo_hz: f64,
    t1_s: Option<f64>,
) -> Result<(), Failure> {
    let c = check_commensurability(t_rep_s, f_lo_hz)
        .map_err(|e| Failure::validation(e.to_string()))?;
    let residual = match t1_s {
        Some(t1) => {
            Some(residual_population(t_rep_s, t1).map_err(|e| Failure::validation(e.to_string()))?)
        }
        None => None,
    };
    if common.json {
        println!(
            "{}",
            json!({
                "commensurate": c.commensurate,
                "cycles": c.cycles,
                "residual_phase_rad": c.residual_phase,
                "residual_population": residual,
            })
        );
    } else {
        println!(
            "f_LO·T_rep = {:.3} cycles → {}",
            c.cycles,
            if c.commensurate { "commensurate" } else { "NOT commensurate" }
        );
        if !c.commensurate {
            println!("residual phase {:.4} rad per repetition", c.residual_phase);
        }
        if let Some(p) = residual {
            println!("residual excited population: {:.3}%", 100.0 * p);
        }
    }
    Ok(())
}
