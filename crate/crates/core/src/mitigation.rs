//! SPAM-error mitigation by bounded least-squares inversion of a measured
//! confusion matrix.
//!
//! Matrix orientation: the confusion matrix stores `T[(i, j)] = P(measured j |
//! prepared i)` (rows = prepared states), so the forward distortion of a true
//! population vector x is `y = Tᵀ·x`. The transpose happens here, at the
//! ingestion boundary; everything downstream works with the forward map
//! `A = Tᵀ`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::readout::ConfusionMatrix;

#[derive(Debug, Error)]
pub enum MitigationError {
    #[error("confusion matrix row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("population vector entry {index} = {value} outside [0, 1]")]
    BadPopulation { index: usize, value: f64 },
    #[error("dimension mismatch: y is {y_dim}, T is {t_dim}×{t_dim}")]
    DimensionMismatch { y_dim: usize, t_dim: usize },
    #[error("solver did not converge: projected gradient {pg:.3e} after {iterations} iterations")]
    NoConvergence { pg: f64, iterations: usize },
    #[error("trace carries no 9-state populations")]
    MissingPopulations,
}

/// Probabilities of the nine two-qutrit states, ordered 00, 01, 02, 10, …, 22.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector(pub [f64; 9]);

impl PopulationVector {
    pub fn from_slice(v: &[f64]) -> Result<Self, MitigationError> {
        assert_eq!(v.len(), 9);
        let mut out = [0.0; 9];
        for (i, &x) in v.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-9).contains(&x) {
                return Err(MitigationError::BadPopulation { index: i, value: x });
            }
            out[i] = x;
        }
        Ok(PopulationVector(out))
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Termination and reporting knobs for [`reconstruct`].
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Projected-gradient infinity norm at which the KKT point is accepted.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Renormalize the solution onto the simplex afterwards. Off by default:
    /// only the box bounds are part of the reconstruction problem.
    pub post_normalize: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-10, max_iterations: 10_000, post_normalize: false }
    }
}

/// Diagnostics from one bounded least-squares solve.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub x: PopulationVector,
    /// ½‖y − Tᵀx‖² at the solution.
    pub objective: f64,
    /// Objective after every accepted iterate, for monotonicity checks.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// Condition number of T; above 10³ the reconstruction is flagged.
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

fn check_stochastic(t: &ConfusionMatrix) -> Result<(), MitigationError> {
    for row in 0..t.dim {
        let sum: f64 = t.entries.row(row).iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MitigationError::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// Minimize ½‖b − Ax‖² subject to 0 ≤ x ≤ 1 with an active-set method
/// (bounded-variable least squares). Returns the iterate trace for the
/// monotone-descent invariant.
pub fn bounded_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    options: &SolverOptions,
) -> Result<(DVector<f64>, Vec<f64>, usize, f64), MitigationError> {
    let n = a.ncols();
    let objective = |x: &DVector<f64>| -> f64 { 0.5 * (b - a * x).norm_squared() };

    #[derive(Clone, Copy, PartialEq)]
    enum Bound {
        Lower,
        Upper,
        Free,
    }

    let mut state = vec![Bound::Lower; n];
    let mut x = DVector::zeros(n);
    let mut trace = vec![objective(&x)];
    let mut iterations = 0;

    let projected_gradient = |x: &DVector<f64>, state: &[Bound]| -> (DVector<f64>, f64) {
        let g = a.transpose() * (a * x - b);
        let mut pg = DVector::zeros(n);
        for i in 0..n {
            pg[i] = match state[i] {
                Bound::Free => g[i],
                Bound::Lower => g[i].min(0.0),
                Bound::Upper => g[i].max(0.0),
            };
        }
        let norm = pg.amax();
        (g, norm)
    };

    while iterations < options.max_iterations {
        iterations += 1;
        let (g, pg_norm) = projected_gradient(&x, &state);
        if pg_norm <= options.tolerance {
            return Ok((x, trace, iterations, pg_norm));
        }
        // Free the most violating bound variable.
        let mut candidate: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower if g[i] < 0.0 => -g[i],
                Bound::Upper if g[i] > 0.0 => g[i],
                _ => 0.0,
            };
            if violation > candidate.map_or(0.0, |c| c.1) {
                candidate = Some((i, violation));
            }
        }
        match candidate {
            Some((i, _)) => state[i] = Bound::Free,
            None => {
                // All bound variables satisfy KKT but a free-set residual
                // remains; fall through to re-solve the free set.
            }
        }

        // Inner loop: solve the unconstrained problem on the free set and
        // clip along the segment toward it until feasible.
        for _ in 0..n + 1 {
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
            if free.is_empty() {
                break;
            }
            // Residual with bound variables pinned.
            let mut b_eff = b.clone();
            for i in 0..n {
                if state[i] != Bound::Free {
                    b_eff -= a.column(i) * x[i];
                }
            }
            let a_free = DMatrix::from_fn(a.nrows(), free.len(), |r, c| a[(r, free[c])]);
            let z = a_free
                .clone()
                .svd(true, true)
                .solve(&b_eff, 1e-13)
                .map_err(|_| MitigationError::NoConvergence { pg: pg_norm, iterations })?;

            let feasible = z.iter().all(|&v| (-1e-14..=1.0 + 1e-14).contains(&v));
            if feasible {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = z[k].clamp(0.0, 1.0);
                }
                break;
            }
            // Step from x_free toward z until the first variable hits a bound.
            let mut alpha = 1.0f64;
            let mut blocker: Option<(usize, Bound)> = None;
            for (k, &i) in free.iter().enumerate() {
                let delta = z[k] - x[i];
                if delta < 0.0 && z[k] < 0.0 {
                    let step = (0.0 - x[i]) / delta;
                    if step < alpha {
                        alpha = step;
                        blocker = Some((i, Bound::Lower));
                    }
                } else if delta > 0.0 && z[k] > 1.0 {
                    let step = (1.0 - x[i]) / delta;
                    if step < alpha {
                        alpha = step;
                        blocker = Some((i, Bound::Upper));
                    }
                }
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] = (x[i] + alpha * (z[k] - x[i])).clamp(0.0, 1.0);
            }
            if let Some((i, bound)) = blocker {
                x[i] = if bound == Bound::Lower { 0.0 } else { 1.0 };
                state[i] = bound;
            } else {
                break;
            }
        }
        trace.push(objective(&x));
    }

    let (_, pg_norm) = projected_gradient(&x, &state);
    if pg_norm <= options.tolerance.max(1e-8) {
        // Accept a near-KKT point at the iteration cap.
        return Ok((x, trace, iterations, pg_norm));
    }
    Err(MitigationError::NoConvergence { pg: pg_norm, iterations })
}

/// Reconstruct the undistorted populations x from measured populations y and
/// confusion matrix T by minimizing ½‖y − Tᵀx‖² subject to 0 ≤ x ≤ 1.
pub fn reconstruct(
    y: &PopulationVector,
    t: &ConfusionMatrix,
    options: &SolverOptions,
) -> Result<Reconstruction, MitigationError> {
    if t.dim != 9 {
        return Err(MitigationError::DimensionMismatch { y_dim: 9, t_dim: t.dim });
    }
    check_stochastic(t)?;
    let a = t.entries.transpose();
    let b = DVector::from_row_slice(&y.0);
    let (x, objective_trace, iterations, pg) = bounded_least_squares(&a, &b, options)?;
    let objective = 0.5 * (&b - &a * &x).norm_squared();
    let condition_number = t.condition_number();
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = x[i];
    }
    if options.post_normalize {
        let sum: f64 = out.iter().sum();
        if sum > 0.0 {
            for v in &mut out {
                *v /= sum;
            }
        }
    }
    Ok(Reconstruction {
        x: PopulationVector(out),
        objective,
        objective_trace,
        iterations,
        projected_gradient_norm: pg,
        condition_number,
        ill_conditioned: condition_number > 1e3,
    })
}

/// Apply [`reconstruct`] point-wise to a trace of 9-state population rows.
pub fn mitigate_rows(
    rows: &[[f64; 9]],
    t: &ConfusionMatrix,
    options: &SolverOptions,
) -> Result<Vec<[f64; 9]>, MitigationError> {
    rows.iter()
        .map(|row| {
            let y = PopulationVector::from_slice(row)?;
            Ok(reconstruct(&y, t, options)?.x.0)
        })
        .collect()
}

/// Mitigate a full Ramsey trace point by point, returning a trace carrying
/// the reconstructed populations.
pub fn mitigate_trace(
    trace: &crate::ramsey::RamseyTrace,
    t: &ConfusionMatrix,
    options: &SolverOptions,
) -> Result<crate::ramsey::RamseyTrace, MitigationError> {
    if trace.populations.is_empty() {
        return Err(MitigationError::MissingPopulations);
    }
    let populations = mitigate_rows(&trace.populations, t, options)?;
    Ok(crate::ramsey::RamseyTrace {
        spec: trace.spec,
        phi: trace.phi.clone(),
        populations,
        backend: format!("{}+mitigated", trace.backend),
        shots: trace.shots,
    })
}
