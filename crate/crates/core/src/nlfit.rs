//! Small Levenberg–Marquardt engine for the handful of nonlinear models the
//! analysis pipeline fits (exponential decays, damped cosines, sinusoids).
//!
//! Parameter covariance is the Gauss–Newton estimate (JᵀJ)⁻¹·s² with the
//! residual variance s² = SSR/(N−p).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("singular normal equations at iteration {0}")]
    Singular(usize),
}

/// A model y(t; p) with analytic partial derivatives ∂y/∂p.
pub trait Model {
    fn eval(&self, t: f64, p: &[f64]) -> f64;
    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]);
    fn param_count(&self) -> usize;
}

/// Converged fit output.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// One-sigma uncertainties from the covariance diagonal.
    pub uncertainties: Vec<f64>,
    /// Sum of squared residuals at the optimum.
    pub ssr: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt minimization of Σ(y − model(t;p))².
pub fn levenberg_marquardt(
    model: &dyn Model,
    t: &[f64],
    y: &[f64],
    initial: &[f64],
    max_iter: usize,
) -> Result<FitResult, FitError> {
    let n = t.len();
    let np = model.param_count();
    assert_eq!(initial.len(), np);
    if n < np + 1 {
        return Err(FitError::TooFewPoints { need: np + 1, got: n });
    }

    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(n, t.iter().zip(y).map(|(&ti, &yi)| yi - model.eval(ti, p)))
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(n, np);
        let mut g = vec![0.0; np];
        for (row, &ti) in t.iter().enumerate() {
            model.grad(ti, p, &mut g);
            for (col, &gk) in g.iter().enumerate() {
                // residual = y − f, so ∂r/∂p = −∂f/∂p
                j[(row, col)] = -gk;
            }
        }
        j
    };

    let mut p = initial.to_vec();
    let mut r = residuals(&p);
    let mut ssr = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let j = jacobian(&p);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut stepped = false;
        for _ in 0..24 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(pi, di)| pi + di).collect();
            let r_trial = residuals(&trial);
            let ssr_trial = r_trial.norm_squared();
            if ssr_trial < ssr {
                let rel = (ssr - ssr_trial) / ssr.max(1e-300);
                let step = delta.amax();
                p = trial;
                r = r_trial;
                ssr = ssr_trial;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if rel < 1e-12 || step < 1e-14 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // Cannot improve: treat the current point as the optimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence(max_iter));
    }

    let j = jacobian(&p);
    let jtj = j.transpose() * &j;
    let dof = (n.saturating_sub(np)).max(1) as f64;
    let s2 = ssr / dof;
    let uncertainties = match jtj.try_inverse() {
        Some(inv) => (0..np).map(|d| (inv[(d, d)] * s2).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; np],
    };

    Ok(FitResult { params: p, uncertainties, ssr, iterations })
}

/// y = A·exp(−t/T) + m, parameters [A, T, m].
pub struct ExpDecay;

impl Model for ExpDecay {
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }
    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * t / (p[1] * p[1]);
        out[2] = 1.0;
    }
    fn param_count(&self) -> usize {
        3
    }
}

/// y = A·exp(−t/T)·cos(2πft + φ) + m, parameters [A, T, f, φ, m].
pub struct DampedCosine;

impl Model for DampedCosine {
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        let w = 2.0 * std::f64::consts::PI * p[2];
        p[0] * (-t / p[1]).exp() * (w * t + p[3]).cos() + p[4]
    }
    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let w = 2.0 * std::f64::consts::PI * p[2];
        let e = (-t / p[1]).exp();
        let c = (w * t + p[3]).cos();
        let s = (w * t + p[3]).sin();
        out[0] = e * c;
        out[1] = p[0] * e * c * t / (p[1] * p[1]);
        out[2] = -p[0] * e * s * 2.0 * std::f64::consts::PI * t;
        out[3] = -p[0] * e * s;
        out[4] = 1.0;
    }
    fn param_count(&self) -> usize {
        5
    }
}

/// y = A·cos(2πft + φ) + m, parameters [A, f, φ, m]. Used for Ramsey-like
/// fringes where the oscillation frequency is the observable.
pub struct Sinusoid;

impl Model for Sinusoid {
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (2.0 * std::f64::consts::PI * p[1] * t + p[2]).cos() + p[3]
    }
    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let arg = 2.0 * std::f64::consts::PI * p[1] * t + p[2];
        out[0] = arg.cos();
        out[1] = -p[0] * arg.sin() * 2.0 * std::f64::consts::PI * t;
        out[2] = -p[0] * arg.sin();
        out[3] = 1.0;
    }
    fn param_count(&self) -> usize {
        4
    }
}

/// y = A·cos(φ + δ) + m over swept phase φ, parameters [A, δ, m].
pub struct PhaseSinusoid;

impl Model for PhaseSinusoid {
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (t + p[1]).cos() + p[2]
    }
    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        out[0] = (t + p[1]).cos();
        out[1] = -p[0] * (t + p[1]).sin();
        out[2] = 1.0;
    }
    fn param_count(&self) -> usize {
        3
    }
}

/// Dominant nonzero frequency of uniformly sampled data, from the discrete
/// Fourier fundamental. Returns frequency in cycles per unit of `t`.
pub fn dft_peak_frequency(t: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    if n < 4 {
        return 0.0;
    }
    let span = t[n - 1] - t[0];
    if span <= 0.0 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut best = (0usize, 0.0f64);
    for k in 1..=(n / 2) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            let arg = 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += (yj - mean) * arg.cos();
            im -= (yj - mean) * arg.sin();
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (k, power);
        }
    }
    best.0 as f64 / (span * n as f64 / (n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_parameters_exactly_without_noise() {
        let t: Vec<f64> = (0..60).map(|k| k as f64 * 5e-6).collect();
        let y: Vec<f64> = t.iter().map(|&ti| 0.95 * (-ti / 77e-6).exp() + 0.03).collect();
        let fit = levenberg_marquardt(&ExpDecay, &t, &y, &[0.8, 50e-6, 0.0], 200).unwrap();
        assert!((fit.params[0] - 0.95).abs() < 1e-6);
        assert!((fit.params[1] - 77e-6).abs() / 77e-6 < 1e-6);
        assert!((fit.params[2] - 0.03).abs() < 1e-6);
    }

    #[test]
    fn recovers_damped_cosine() {
        let t: Vec<f64> = (0..120).map(|k| k as f64 * 0.4e-6).collect();
        let p_true = [0.5, 37e-6, 1.0e5, 0.3, 0.5];
        let y: Vec<f64> = t.iter().map(|&ti| DampedCosine.eval(ti, &p_true)).collect();
        let fit =
            levenberg_marquardt(&DampedCosine, &t, &y, &[0.4, 30e-6, 0.9e5, 0.0, 0.45], 400).unwrap();
        assert!((fit.params[1] - 37e-6).abs() / 37e-6 < 1e-4);
        assert!((fit.params[2] - 1.0e5).abs() / 1.0e5 < 1e-6);
    }

    #[test]
    fn dft_peak_finds_fundamental() {
        let t: Vec<f64> = (0..64).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&ti| (2.0 * std::f64::consts::PI * 1.25 * ti).cos()).collect();
        let f = dft_peak_frequency(&t, &y);
        assert!((f - 1.25).abs() < 0.2, "got {f}");
    }

    #[test]
    fn too_few_points_is_an_error() {
        let t = [0.0, 1.0];
        let y = [1.0, 0.5];
        assert!(matches!(
            levenberg_marquardt(&ExpDecay, &t, &y, &[1.0, 1.0, 0.0], 50),
            Err(FitError::TooFewPoints { .. })
        ));
    }
}
