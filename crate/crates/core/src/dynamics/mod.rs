//! Pulse-level simulation of the two-transmon + tunable-coupler device:
//! Hamiltonian construction, flux-drive integration, gate calibration, and
//! timing utilities.

mod calibrate;
mod device;
mod flux;
mod hamiltonian;
mod integrator;

pub use calibrate::{
    calibrate_cz, calibrate_iswap, compile_schedule, measure_two_qubit_frame, simulate_circuit,
    CalibrationBundle, CalibrationOptions, CzCalibration, IswapCalibration, SweepMap,
    TwoQubitFrameOptions, TwoQubitFrameResult,
};
pub use device::{reference_record, DeviceParams};
pub use flux::{FluxDrive, PulseSchedule, ScheduleEntry, EDGE_TIME};
pub use hamiltonian::{
    basis_index, build_hamiltonian, coupler_frequency, dressed_frames, DressedFrames,
    HamiltonianParts,
};
pub use integrator::{evolve, evolve_state, Engine, EvolveStats, DEFAULT_DT, NORM_ABORT};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-physical device parameters: {0}")]
    NonPhysical(String),
    #[error("device file: {0}")]
    DeviceFile(String),
    #[error("invalid pulse: {0}")]
    BadPulse(String),
    #[error("coupler pulses overlap (one ends at {first_end:.3e} s, next starts at {second_start:.3e} s)")]
    OverlappingPulses { first_end: f64, second_start: f64 },
    #[error("dt = {dt:.3e} s exceeds the sampling bound {dt_max:.3e} s")]
    StepTooLarge { dt: f64, dt_max: f64 },
    #[error("norm drift {drift:.3e} exceeds the abort threshold; retry with dt = {dt_suggested:.3e} s (was {dt:.3e} s)")]
    NormDrift { drift: f64, dt: f64, dt_suggested: f64 },
    #[error("no transfer ≥{required:.0}% found in the sweep window (best {best:.1}% at {f_best_mhz:.2} MHz)")]
    NoResonance { required: f64, best: f64, f_best_mhz: f64, map: Box<calibrate::SweepMap> },
    #[error("two-qubit frame not bracketed by the frequency grid")]
    FrameOutOfRange { map: Box<calibrate::SweepMap> },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Commensurability of the repetition period with a local-oscillator
/// frequency: commensurate iff f_LO·T_rep is integral within 1e-9 cycles.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Commensurability {
    pub commensurate: bool,
    pub cycles: f64,
    /// 2π · frac(f_LO · T_rep), radians.
    pub residual_phase: f64,
}

pub fn check_commensurability(t_rep: f64, f_lo: f64) -> Result<Commensurability, DynamicsError> {
    if t_rep <= 0.0 || f_lo <= 0.0 {
        return Err(DynamicsError::DegenerateInput(format!(
            "T_rep = {t_rep:.3e} s, f_LO = {f_lo:.3e} Hz"
        )));
    }
    let cycles = f_lo * t_rep;
    let frac = cycles - cycles.floor();
    let distance = frac.min(1.0 - frac);
    Ok(Commensurability {
        commensurate: distance <= 1e-9 * cycles.max(1.0),
        cycles,
        residual_phase: std::f64::consts::TAU * frac,
    })
}

/// Residual excited-state population after idling for `t_rep`:
/// exp(−T_rep/T1).
pub fn residual_population(t_rep: f64, t1: f64) -> Result<f64, DynamicsError> {
    if t_rep < 0.0 || t1 <= 0.0 {
        return Err(DynamicsError::DegenerateInput(format!("T_rep = {t_rep:.3e} s, T1 = {t1:.3e} s")));
    }
    Ok((-t_rep / t1).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repetition_rate_is_commensurate_with_the_xy_lo() {
        let c = check_commensurability(400e-6, 3.6e9).unwrap();
        assert!(c.commensurate);
        assert!((c.cycles - 1_440_000.0).abs() < 1e-3);
    }

    #[test]
    fn tenth_nanosecond_offset_breaks_commensurability() {
        let c = check_commensurability(400e-6 + 0.1e-9, 3.6e9).unwrap();
        assert!(!c.commensurate);
        let frac = c.residual_phase / std::f64::consts::TAU;
        assert!((frac - 0.36).abs() < 1e-6, "frac = {frac}");
    }

    #[test]
    fn degenerate_commensurability_inputs_are_rejected() {
        assert!(check_commensurability(400e-6, 0.0).is_err());
        assert!(check_commensurability(0.0, 3.6e9).is_err());
    }

    #[test]
    fn residual_population_matches_reported_value() {
        // exp(−400/78) ≈ 0.6%
        let p = residual_population(400e-6, 78e-6).unwrap();
        assert!((p - 0.006).abs() < 0.0005, "p = {p}");
        assert_eq!(residual_population(0.0, 78e-6).unwrap(), 1.0);
        let e = residual_population(78e-6, 78e-6).unwrap();
        assert!((e - (-1.0f64).exp()).abs() < 1e-12);
    }
}
