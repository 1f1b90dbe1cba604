//! Device parameters and the reference parameter record.

use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Physical parameters of the two-transmon + tunable-coupler system.
///
/// Frequencies are ordinary frequencies in Hz (not angular); times are in
/// seconds; the flux bias is in units of Φ0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceParams {
    /// Qubit |0⟩→|1⟩ transition frequencies.
    pub f01: [f64; 2],
    /// Qubit anharmonicities (negative).
    pub eta: [f64; 2],
    /// Coupler frequency at zero flux.
    pub f_c0: f64,
    /// Coupler anharmonicity (negative).
    pub eta_c: f64,
    /// Qubit–coupler coupling strengths.
    pub g: [f64; 2],
    /// Static coupler flux bias, in Φ0.
    pub phi_bias: f64,
    pub t1: [f64; 2],
    pub t2_star: [f64; 2],
    pub t2_echo: [f64; 2],
    /// Levels per site in the simulation (qubits and coupler alike).
    pub levels: usize,
}

/// Flat key-value device file, keys mirroring the parameter-record symbol
/// names. Unknown keys are rejected so typos in physics parameters fail fast.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    f01_q1_hz: f64,
    f01_q2_hz: f64,
    eta_q1_hz: f64,
    eta_q2_hz: f64,
    f_c0_hz: f64,
    eta_c_hz: f64,
    g_q1c_hz: f64,
    g_q2c_hz: f64,
    phi_bias: f64,
    t1_q1_s: f64,
    t1_q2_s: f64,
    t2star_q1_s: f64,
    t2star_q2_s: f64,
    t2echo_q1_s: f64,
    t2echo_q2_s: f64,
    #[serde(default = "default_levels")]
    levels: usize,
}

fn default_levels() -> usize {
    3
}

impl DeviceParams {
    /// The bundled reference device.
    pub fn reference() -> Self {
        DeviceParams {
            f01: [3.86011e9, 3.39741e9],
            eta: [-256.07e6, -207.49e6],
            f_c0: 6.9373e9,
            // Not reported for the coupler; a typical transmon value.
            eta_c: -230.0e6,
            g: [37.0e6, 35.0e6],
            phi_bias: -0.336,
            t1: [77e-6, 79e-6],
            t2_star: [37e-6, 33e-6],
            t2_echo: [93e-6, 105e-6],
            levels: 3,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DynamicsError> {
        let file: DeviceFile =
            toml::from_str(text).map_err(|e| DynamicsError::DeviceFile(e.to_string()))?;
        let params = DeviceParams {
            f01: [file.f01_q1_hz, file.f01_q2_hz],
            eta: [file.eta_q1_hz, file.eta_q2_hz],
            f_c0: file.f_c0_hz,
            eta_c: file.eta_c_hz,
            g: [file.g_q1c_hz, file.g_q2c_hz],
            phi_bias: file.phi_bias,
            t1: [file.t1_q1_s, file.t1_q2_s],
            t2_star: [file.t2star_q1_s, file.t2star_q2_s],
            t2_echo: [file.t2echo_q1_s, file.t2echo_q2_s],
            levels: file.levels,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        format!(
            "f01_q1_hz = {:e}\nf01_q2_hz = {:e}\neta_q1_hz = {:e}\neta_q2_hz = {:e}\n\
             f_c0_hz = {:e}\neta_c_hz = {:e}\ng_q1c_hz = {:e}\ng_q2c_hz = {:e}\n\
             phi_bias = {}\nt1_q1_s = {:e}\nt1_q2_s = {:e}\nt2star_q1_s = {:e}\n\
             t2star_q2_s = {:e}\nt2echo_q1_s = {:e}\nt2echo_q2_s = {:e}\nlevels = {}\n",
            self.f01[0],
            self.f01[1],
            self.eta[0],
            self.eta[1],
            self.f_c0,
            self.eta_c,
            self.g[0],
            self.g[1],
            self.phi_bias,
            self.t1[0],
            self.t1[1],
            self.t2_star[0],
            self.t2_star[1],
            self.t2_echo[0],
            self.t2_echo[1],
            self.levels,
        )
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.f01.iter().any(|&f| f <= 0.0) || self.f_c0 <= 0.0 {
            return Err(DynamicsError::NonPhysical("transition frequencies must be positive".into()));
        }
        if self.eta.iter().any(|&e| e >= 0.0) || self.eta_c >= 0.0 {
            return Err(DynamicsError::NonPhysical("anharmonicities must be negative".into()));
        }
        if self.phi_bias.abs() >= 0.5 {
            return Err(DynamicsError::NonPhysical(format!(
                "flux bias {} is at or past the frustration point",
                self.phi_bias
            )));
        }
        if self.t1.iter().chain(&self.t2_star).chain(&self.t2_echo).any(|&t| t <= 0.0) {
            return Err(DynamicsError::NonPhysical("coherence times must be positive".into()));
        }
        if self.levels < 3 {
            return Err(DynamicsError::NonPhysical("need at least 3 levels per site".into()));
        }
        Ok(())
    }

    /// Sanity warnings that do not block a run, notably the dispersive-regime
    /// check g ≪ |f_c(Φ_bias) − f01|.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let f_c = super::coupler_frequency(self.phi_bias, self);
        for q in 0..2 {
            let detuning = (f_c - self.f01[q]).abs();
            if self.g[q] * 10.0 > detuning {
                out.push(format!(
                    "qubit {} coupling {:.1} MHz is not small against its coupler detuning {:.1} MHz",
                    q + 1,
                    self.g[q] / 1e6,
                    detuning / 1e6
                ));
            }
        }
        out
    }
}

/// Measured reference values that are not Hamiltonian inputs: tuned-up gate
/// parameters, readout metadata, and control-chain settings. Held as
/// regression metadata and band targets, never asserted exactly.
pub mod reference_record {
    /// Tuned drive frequencies and durations.
    pub const F_CZ_HZ: f64 = 207.24e6;
    pub const F_ISWAP_HZ: f64 = 461.51e6;
    pub const TAU_CZ_S: f64 = 890e-9;
    pub const TAU_ISWAP_S: f64 = 640e-9;
    pub const TAU_SWAP_S: f64 = 1812e-9;
    /// Total duration of the compiled SWAP cross-Ramsey circuit.
    pub const SWAP_CIRCUIT_DURATION_S: f64 = 1.960e-6;

    /// Reported detunings from the bare transition differences.
    pub const DELTA_F_CZ_HZ: f64 = -0.61e6;
    pub const DELTA_F_ISWAP_HZ: f64 = 1.19e6;

    /// One-sigma frequency uncertainties.
    pub const ERR_F01_HZ: f64 = 156e3;
    pub const ERR_F12_HZ: f64 = 190e3;
    pub const ERR_F_CZ_HZ: f64 = 10e3;
    pub const ERR_F_ISWAP_HZ: f64 = 82e3;

    /// Local phase compensations after each gate, radians (Q1, Q2).
    pub const PHI_COMP_CZ_RAD: [f64; 2] = [0.61, 1.03];
    pub const PHI_COMP_ISWAP_RAD: [f64; 2] = [2.24, 3.36];
    pub const PHI_COUPLER_ISWAP_RAD: f64 = 4.86;
    pub const PHI_COMP_SWAP_RAD: [f64; 2] = [-1.0741, 1.2530];

    /// Three-state assignment fidelities with their S.E.M.
    pub const F_ASSIGN: [f64; 2] = [0.8793, 0.8873];
    pub const F_ASSIGN_SEM: [f64; 2] = [0.0494, 0.0528];

    /// Readout configuration.
    pub const TAU_RO_S: f64 = 2.3e-6;
    pub const F_RO_OPTIMAL_HZ: [f64; 2] = [6.48048e9, 6.25960e9];
    pub const CHI_01_HZ: [f64; 2] = [80e3, 110e3];
    pub const CHI_12_HZ: [f64; 2] = [60e3, 130e3];
    pub const READOUT_IF_AMPLITUDE_V: [f64; 2] = [82e-3, 45e-3];

    /// DRAG scaling parameters; single-qubit pulses are not simulated, the
    /// values are carried for completeness.
    pub const ALPHA_DRAG: [f64; 2] = [-770.5e-3, -221.4e-3];

    /// Control-chain frequencies and repetition period.
    pub const F_LO_XY_HZ: f64 = 3.6e9;
    pub const F_LO_RO_HZ: f64 = 6.6e9;
    pub const T_REP_S: f64 = 400e-6;

    /// Coupler operating point.
    pub const F_COUPLER_AT_BIAS_HZ: f64 = 4.863e9;
    pub const PHI_BIAS: f64 = -0.336;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips_through_toml() {
        let p = DeviceParams::reference();
        let text = p.to_toml_string();
        let q = DeviceParams::from_toml_str(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = DeviceParams::reference().to_toml_string();
        text.push_str("f01_q3_hz = 5.0e9\n");
        assert!(DeviceParams::from_toml_str(&text).is_err());
    }

    #[test]
    fn unphysical_values_are_rejected() {
        let mut p = DeviceParams::reference();
        p.eta[0] = 10e6;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::reference();
        p.phi_bias = 0.51;
        assert!(p.validate().is_err());
    }

    #[test]
    fn reference_device_raises_no_warnings() {
        assert!(DeviceParams::reference().warnings().is_empty());
    }
}
