//! Flux drive pulses and pulse schedules.

use serde::Serialize;

use super::{DeviceParams, DynamicsError};
use crate::gateset::GateOp;

/// Default Gaussian rise/fall time of the flat-top envelope.
pub const EDGE_TIME: f64 = 10e-9;

/// Parametric flux modulation of the coupler:
/// Φ_c(t) = A(t)·cos(2π f t + φ) + Φ_DC, with a flat-top envelope and
/// truncated-Gaussian edges. The carrier phase is referenced to the start of
/// the schedule, not the pulse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxDrive {
    /// Peak envelope amplitude, Φ0.
    pub amplitude: f64,
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
    /// Carrier phase at schedule time zero, rad.
    pub phase: f64,
    /// Static flux offset, Φ0.
    pub dc_offset: f64,
    /// Total pulse duration including both edges, s.
    pub duration: f64,
    pub rise: f64,
    pub fall: f64,
}

impl FluxDrive {
    pub fn flat_top(amplitude: f64, carrier_hz: f64, phase: f64, dc_offset: f64, duration: f64) -> Self {
        FluxDrive { amplitude, carrier_hz, phase, dc_offset, duration, rise: EDGE_TIME, fall: EDGE_TIME }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.duration < self.rise + self.fall {
            return Err(DynamicsError::BadPulse(format!(
                "duration {:.1} ns shorter than its edges",
                self.duration * 1e9
            )));
        }
        if self.dc_offset.abs() + self.amplitude.abs() >= 0.5 {
            return Err(DynamicsError::BadPulse(format!(
                "|Φ_DC| + A = {:.3} Φ0 sweeps past the frustration point",
                self.dc_offset.abs() + self.amplitude.abs()
            )));
        }
        Ok(())
    }

    /// Envelope at time `u` past the pulse start, in [0, amplitude].
    /// Truncated-Gaussian edges reach exactly zero at the pulse boundaries.
    pub fn envelope_at(&self, u: f64) -> f64 {
        if u <= 0.0 || u >= self.duration {
            return 0.0;
        }
        let edge = |x: f64, width: f64| -> f64 {
            // x runs 0 → width over the edge; Gaussian with σ = width/2.5.
            let sigma = width / 2.5;
            let base = (-0.5 * (width / sigma).powi(2)).exp();
            let raw = (-0.5 * ((x - width) / sigma).powi(2)).exp();
            (raw - base) / (1.0 - base)
        };
        let shape = if u < self.rise {
            edge(u, self.rise)
        } else if u > self.duration - self.fall {
            edge(self.duration - u, self.fall)
        } else {
            1.0
        };
        self.amplitude * shape
    }

    /// Envelope sampled every `dt` from pulse start to end.
    pub fn envelope_samples(&self, dt: f64) -> Vec<f64> {
        let n = (self.duration / dt).ceil() as usize + 1;
        (0..n).map(|k| self.envelope_at(k as f64 * dt)).collect()
    }

    /// Total coupler flux at global time `t` for a pulse starting at `start`.
    pub fn flux_at(&self, t: f64, start: f64) -> f64 {
        self.envelope_at(t - start)
            * (std::f64::consts::TAU * self.carrier_hz * t + self.phase).cos()
            + self.dc_offset
    }
}

/// One schedule entry: a coupler flux pulse or an ideal instantaneous
/// single-qubit gate.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleEntry {
    Flux { start: f64, drive: FluxDrive },
    Gate { time: f64, op: GateOp },
}

impl ScheduleEntry {
    fn start(&self) -> f64 {
        match self {
            ScheduleEntry::Flux { start, .. } => *start,
            ScheduleEntry::Gate { time, .. } => *time,
        }
    }
}

/// Time-ordered schedule with the integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub dt: f64,
    /// Schedule clock at the end (wall-clock duration incl. gate windows).
    pub end_time: f64,
}

impl PulseSchedule {
    pub fn new(dt: f64) -> Self {
        PulseSchedule { entries: Vec::new(), dt, end_time: 0.0 }
    }

    pub fn push_flux(&mut self, start: f64, drive: FluxDrive) {
        self.end_time = self.end_time.max(start + drive.duration);
        self.entries.push(ScheduleEntry::Flux { start, drive });
    }

    pub fn push_gate(&mut self, time: f64, op: GateOp) {
        self.end_time = self.end_time.max(time + op.duration);
        self.entries.push(ScheduleEntry::Gate { time, op });
    }

    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| a.start().total_cmp(&b.start()));
    }

    /// Validate pulse shapes, coupler-channel exclusivity, and the sampling
    /// bound dt ≤ 1/(20·f_max).
    pub fn validate(&self, params: &DeviceParams) -> Result<(), DynamicsError> {
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for e in &self.entries {
            if let ScheduleEntry::Flux { start, drive } = e {
                drive.validate()?;
                for &(s, e) in &windows {
                    if *start < e && s < start + drive.duration {
                        return Err(DynamicsError::OverlappingPulses { first_end: e, second_start: *start });
                    }
                }
                windows.push((*start, start + drive.duration));
            }
        }
        // Largest transition frequency present: the coupler swings highest.
        let mut f_max = params.f_c0.max(params.f01[0]).max(params.f01[1]);
        for e in &self.entries {
            if let ScheduleEntry::Flux { drive, .. } = e {
                let phi_min = (drive.dc_offset.abs() - drive.amplitude.abs()).max(0.0);
                f_max = f_max.max(super::coupler_frequency(phi_min, params));
            }
        }
        let dt_max = 1.0 / (20.0 * f_max);
        if self.dt > dt_max {
            return Err(DynamicsError::StepTooLarge { dt: self.dt, dt_max });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_is_flat_top_with_smooth_edges() {
        let d = FluxDrive::flat_top(0.05, 460e6, 0.0, -0.336, 600e-9);
        assert_eq!(d.envelope_at(0.0), 0.0);
        assert_eq!(d.envelope_at(600e-9), 0.0);
        assert!((d.envelope_at(300e-9) - 0.05).abs() < 1e-15);
        assert!((d.envelope_at(10e-9) - 0.05).abs() < 1e-12);
        assert!((d.envelope_at(590e-9) - 0.05).abs() < 1e-12);
        // monotone rise
        let samples = d.envelope_samples(1e-9);
        for w in samples[..10].windows(2) {
            assert!(w[1] >= w[0]);
        }
        // symmetric edges
        assert!((d.envelope_at(4e-9) - d.envelope_at(596e-9)).abs() < 1e-12);
    }

    #[test]
    fn flux_never_crosses_frustration_for_valid_pulse() {
        let d = FluxDrive::flat_top(0.05, 460e6, 0.3, -0.336, 400e-9);
        d.validate().unwrap();
        for k in 0..4000 {
            let t = k as f64 * 1e-10;
            assert!(d.flux_at(t, 0.0).abs() < 0.5);
        }
        let bad = FluxDrive::flat_top(0.2, 460e6, 0.0, -0.336, 400e-9);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn overlapping_coupler_pulses_are_rejected() {
        let p = DeviceParams::reference();
        let mut s = PulseSchedule::new(1e-12);
        s.push_flux(0.0, FluxDrive::flat_top(0.05, 460e6, 0.0, p.phi_bias, 400e-9));
        s.push_flux(100e-9, FluxDrive::flat_top(0.05, 207e6, 0.0, p.phi_bias, 400e-9));
        assert!(matches!(s.validate(&p), Err(DynamicsError::OverlappingPulses { .. })));
    }

    #[test]
    fn step_size_bound_is_enforced() {
        let p = DeviceParams::reference();
        let mut s = PulseSchedule::new(8e-12);
        s.push_flux(0.0, FluxDrive::flat_top(0.05, 460e6, 0.0, p.phi_bias, 400e-9));
        assert!(matches!(s.validate(&p), Err(DynamicsError::StepTooLarge { .. })));
        let mut s = PulseSchedule::new(1e-12);
        s.push_flux(0.0, FluxDrive::flat_top(0.05, 460e6, 0.0, p.phi_bias, 400e-9));
        s.validate(&p).unwrap();
    }
}
