//! Decoherence-curve fitting with uncertainty-based rejection, Doane histogram
//! binning, and frequency error propagation.

use serde::Serialize;
use thiserror::Error;

use crate::nlfit::{dft_peak_frequency, levenberg_marquardt, DampedCosine, ExpDecay};

#[derive(Debug, Error)]
pub enum FitsError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("time grid must be strictly increasing")]
    NonMonotonicGrid,
    #[error("coefficient/error lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Which decay law a dataset is fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayModel {
    /// A·exp(−t/T1) + m
    T1Exponential,
    /// A·exp(−t/T2*)·cos(2πft + φ) + m
    T2StarDampedCosine,
    /// A·exp(−t/T2e) + m
    T2EchoExponential,
}

/// Fitted decoherence parameters with uncertainties.
///
/// `accepted` is true iff the fit converged and uncertainty(T)/T ≤ 15%.
#[derive(Debug, Clone, Serialize)]
pub struct DecoherenceFit {
    pub model: DecayModel,
    pub amplitude: f64,
    pub t_decay: f64,
    pub frequency: Option<f64>,
    pub phase: Option<f64>,
    pub offset: f64,
    pub amplitude_err: f64,
    pub t_decay_err: f64,
    pub frequency_err: Option<f64>,
    pub phase_err: Option<f64>,
    pub offset_err: f64,
    pub accepted: bool,
    pub converged: bool,
}

/// Relative decay-time uncertainty above which a fit is discarded.
pub const REJECTION_THRESHOLD: f64 = 0.15;

fn validate_grid(t: &[f64], y: &[f64]) -> Result<(), FitsError> {
    if t.len() < 10 {
        return Err(FitsError::TooFewPoints { need: 10, got: t.len() });
    }
    if t.len() != y.len() {
        return Err(FitsError::LengthMismatch(t.len(), y.len()));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitsError::NonMonotonicGrid);
    }
    Ok(())
}

/// Initial decay-time guess: time at which the detrended signal crosses A/e.
fn initial_t_guess(t: &[f64], y: &[f64], offset: f64, amplitude: f64) -> f64 {
    let target = offset + amplitude / std::f64::consts::E;
    for (k, &yk) in y.iter().enumerate() {
        if (yk - target) * (amplitude.signum()) <= 0.0 && k > 0 {
            return t[k].max(t[1]);
        }
    }
    // No crossing: the decay is slower than the window.
    t[t.len() - 1]
}

fn rejected(model: DecayModel) -> DecoherenceFit {
    DecoherenceFit {
        model,
        amplitude: f64::NAN,
        t_decay: f64::NAN,
        frequency: None,
        phase: None,
        offset: f64::NAN,
        amplitude_err: f64::NAN,
        t_decay_err: f64::NAN,
        frequency_err: None,
        phase_err: None,
        offset_err: f64::NAN,
        accepted: false,
        converged: false,
    }
}

/// Nonlinear least-squares fit of a decoherence dataset.
///
/// Uncertainties come from the square root of the covariance diagonal;
/// non-convergence yields `accepted = false` instead of an error.
pub fn fit_decoherence(t: &[f64], y: &[f64], model: DecayModel) -> Result<DecoherenceFit, FitsError> {
    validate_grid(t, y)?;
    let offset0 = y.iter().sum::<f64>() / y.len() as f64;
    let y_max = y.iter().cloned().fold(f64::MIN, f64::max);
    let y_min = y.iter().cloned().fold(f64::MAX, f64::min);

    match model {
        DecayModel::T1Exponential | DecayModel::T2EchoExponential => {
            // Decay curves start high; amplitude estimated from the first point.
            let a0 = y[0] - offset0;
            let a0 = if a0.abs() < 1e-12 { y_max - y_min } else { a0 };
            let t0 = initial_t_guess(t, y, offset0, a0);
            let fit = levenberg_marquardt(&ExpDecay, t, y, &[a0, t0, offset0], 400);
            Ok(match fit {
                Ok(f) => {
                    let rel = f.uncertainties[1] / f.params[1].abs();
                    DecoherenceFit {
                        model,
                        amplitude: f.params[0],
                        t_decay: f.params[1],
                        frequency: None,
                        phase: None,
                        offset: f.params[2],
                        amplitude_err: f.uncertainties[0],
                        t_decay_err: f.uncertainties[1],
                        frequency_err: None,
                        phase_err: None,
                        offset_err: f.uncertainties[2],
                        accepted: f.params[1] > 0.0 && rel.is_finite() && rel <= REJECTION_THRESHOLD,
                        converged: true,
                    }
                }
                Err(_) => rejected(model),
            })
        }
        DecayModel::T2StarDampedCosine => {
            let a0 = 0.5 * (y_max - y_min);
            let f0 = dft_peak_frequency(t, y).max(1.0 / (t[t.len() - 1] - t[0]));
            let t0 = 0.5 * (t[t.len() - 1] - t[0]);
            let fit = levenberg_marquardt(&DampedCosine, t, y, &[a0, t0, f0, 0.0, offset0], 600);
            Ok(match fit {
                Ok(f) => {
                    let rel = f.uncertainties[1] / f.params[1].abs();
                    DecoherenceFit {
                        model,
                        amplitude: f.params[0],
                        t_decay: f.params[1],
                        frequency: Some(f.params[2]),
                        phase: Some(f.params[3]),
                        offset: f.params[4],
                        amplitude_err: f.uncertainties[0],
                        t_decay_err: f.uncertainties[1],
                        frequency_err: Some(f.uncertainties[2]),
                        phase_err: Some(f.uncertainties[3]),
                        offset_err: f.uncertainties[4],
                        accepted: f.params[1] > 0.0 && rel.is_finite() && rel <= REJECTION_THRESHOLD,
                        converged: true,
                    }
                }
                Err(_) => rejected(model),
            })
        }
    }
}

/// Doane's histogram bin count K = 1 + log₂(N) + |γ|/σ_γ, rounded to the
/// nearest integer (minimum 1). Degenerate samples give K = 1.
pub fn doane_bins(samples: &[f64]) -> usize {
    let n = samples.len();
    assert!(n >= 3, "Doane binning needs at least 3 samples");
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if m2 <= 0.0 {
        return 1;
    }
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    let skew = m3 / m2.powf(1.5);
    let sigma_skew = (6.0 * (nf - 2.0) / ((nf + 1.0) * (nf + 3.0))).sqrt();
    let k = 1.0 + nf.log2() + skew.abs() / sigma_skew;
    (k.round() as usize).max(1)
}

/// Root-sum-square error propagation Err = √(Σ cᵢ²·Errᵢ²), in the units of
/// the supplied errors.
pub fn propagate_frequency_error(coeffs: &[f64], errors: &[f64]) -> Result<f64, FitsError> {
    if coeffs.len() != errors.len() {
        return Err(FitsError::LengthMismatch(coeffs.len(), errors.len()));
    }
    Ok(coeffs
        .iter()
        .zip(errors)
        .map(|(c, e)| c * c * e * e)
        .sum::<f64>()
        .sqrt())
}

/// Frequency inputs for the tuned-gate detuning presets, all in Hz.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetuningInputs {
    pub f12_q1: f64,
    pub f01_q1: f64,
    pub f01_q2: f64,
    pub f_cz: f64,
    pub f_iswap: f64,
}

/// Drive detunings from the bare transition differences, in Hz:
/// Δf_CZ = f12,Q1 − f01,Q2 − f_CZ and Δf_iSWAP = (f01,Q1 − f01,Q2) − f_iSWAP.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetuningPresets {
    pub delta_f_cz: f64,
    pub delta_f_iswap: f64,
}

pub fn detuning_presets(inputs: &DetuningInputs) -> DetuningPresets {
    DetuningPresets {
        delta_f_cz: inputs.f12_q1 - inputs.f01_q2 - inputs.f_cz,
        delta_f_iswap: (inputs.f01_q1 - inputs.f01_q2) - inputs.f_iswap,
    }
}

/// Coefficients of the two error-propagation presets, in the order the
/// frequency errors are supplied: (f12,Q1 | f01,Q1), f01,Q2, tuned drive.
pub const DELTA_F_CZ_COEFFS: [f64; 3] = [-1.0, 1.0, -1.0];
pub const DELTA_F_ISWAP_COEFFS: [f64; 3] = [1.0, 1.0, -1.0];
