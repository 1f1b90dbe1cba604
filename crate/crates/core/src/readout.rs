//! Dispersive three-state IQ readout: shot sampling, nearest-centroid state
//! assignment, confusion matrices, and assignment-fidelity optimization.
//!
//! IQ blobs are isotropic Gaussians around per-state population centers. If
//! decay during readout is enabled, each shot first relocates down the
//! |2⟩→|1⟩→|0⟩ ladder with the exact cascade probabilities for the readout
//! duration before the blob is sampled.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("confusion matrix must be {0}-dimensional")]
    WrongDim(usize),
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("amplitude grid is empty")]
    EmptyGrid,
    #[error("need at least {need} shots per state, got {got}")]
    TooFewShots { need: usize, got: usize },
}

/// Per-qubit readout model.
#[derive(Debug, Clone)]
pub struct ReadoutModel {
    /// IQ centroids for |0⟩, |1⟩, |2⟩, arbitrary units.
    pub centroids: [[f64; 2]; 3],
    /// Isotropic blob standard deviation, same units as the centroids.
    pub sigma: f64,
    /// Readout duration in seconds.
    pub tau_ro: f64,
    /// Qubit T1 used for decay during readout, in seconds.
    pub t1: f64,
    /// Whether shots relocate down the ladder before sampling.
    pub decay_during_readout: bool,
    /// Readout tone amplitude, arbitrary units; metadata for sweeps.
    pub amplitude: f64,
}

/// Frozen reference models: equilateral centroid triangles whose separation
/// over sigma was calibrated once against the device's single-qubit
/// assignment fidelities (0.8793 and 0.8873) and then fixed.
pub const SEPARATION_OVER_SIGMA_Q1: f64 = 3.20;
pub const SEPARATION_OVER_SIGMA_Q2: f64 = 3.29;

impl ReadoutModel {
    /// Equilateral-triangle model with separation `d` and blob width `sigma`.
    pub fn equilateral(d: f64, sigma: f64, tau_ro: f64, t1: f64) -> Self {
        ReadoutModel {
            centroids: [[0.0, 0.0], [d, 0.0], [0.5 * d, 0.75f64.sqrt() * d]],
            sigma,
            tau_ro,
            t1,
            decay_during_readout: true,
            amplitude: 1.0,
        }
    }

    /// Reference model for qubit `index` (0 or 1) of the two-qubit device.
    pub fn reference(index: usize) -> Self {
        let (sep, t1) = match index {
            0 => (SEPARATION_OVER_SIGMA_Q1, 77e-6),
            1 => (SEPARATION_OVER_SIGMA_Q2, 79e-6),
            _ => panic!("two-qubit device"),
        };
        Self::equilateral(sep, 1.0, 2.3e-6, t1)
    }

    /// Probabilities of ending in level 0/1/2 after decay during readout.
    fn relocation(&self, state: usize) -> [f64; 3] {
        if !self.decay_during_readout {
            let mut p = [0.0; 3];
            p[state] = 1.0;
            return p;
        }
        let g = (-self.tau_ro / self.t1).exp();
        match state {
            0 => [1.0, 0.0, 0.0],
            1 => [1.0 - g, g, 0.0],
            2 => [(1.0 - g) * (1.0 - g), 2.0 * g * (1.0 - g), g * g],
            _ => panic!("three-state readout"),
        }
    }

    /// Nearest-centroid assignment; ties break toward the lower state index.
    pub fn assign(&self, iq: [f64; 2]) -> usize {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in self.centroids.iter().enumerate() {
            let d2 = (iq[0] - c[0]).powi(2) + (iq[1] - c[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        best
    }

    fn sample_gaussian(&self, center: [f64; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt() * self.sigma;
        let theta = std::f64::consts::TAU * u2;
        [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
    }
}

/// Draw `n` IQ shots for a prepared state and assign each to a label.
pub fn sample_shots(
    model: &ReadoutModel,
    true_state: usize,
    n: usize,
    seed: u64,
    stream: u64,
) -> (Vec<[f64; 2]>, Vec<usize>) {
    assert!(n >= 1);
    let mut rng = stream_rng(seed, stream);
    let reloc = model.relocation(true_state);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.gen();
        let level = if r < reloc[0] {
            0
        } else if r < reloc[0] + reloc[1] {
            1
        } else {
            2
        };
        let iq = model.sample_gaussian(model.centroids[level], &mut rng);
        labels.push(model.assign(iq));
        points.push(iq);
    }
    (points, labels)
}

/// Right-stochastic assignment statistics: rows index prepared states,
/// columns measured states, `entries[(i, j)] = P(measured j | prepared i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub dim: usize,
    pub entries: DMatrix<f64>,
    pub shots_per_row: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn identity(dim: usize) -> Self {
        ConfusionMatrix { dim, entries: DMatrix::identity(dim, dim), shots_per_row: vec![0; dim] }
    }

    pub fn from_rows(entries: DMatrix<f64>, shots_per_row: Vec<u64>) -> Result<Self, ReadoutError> {
        let dim = entries.nrows();
        for row in 0..dim {
            let sum: f64 = entries.row(row).iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ReadoutError::NotStochastic { row, sum });
            }
        }
        Ok(ConfusionMatrix { dim, entries, shots_per_row })
    }

    /// Largest row-sum deviation from 1.
    pub fn stochasticity_defect(&self) -> f64 {
        (0..self.dim)
            .map(|r| (self.entries.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Tensor product: prepared/measured labels combine lexicographically,
    /// first factor most significant.
    pub fn tensor(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let entries = self.entries.kronecker(&other.entries);
        let shots = self
            .shots_per_row
            .iter()
            .flat_map(|&a| other.shots_per_row.iter().map(move |&b| a.min(b)))
            .collect();
        ConfusionMatrix { dim: self.dim * other.dim, entries, shots_per_row: shots }
    }

    pub fn condition_number(&self) -> f64 {
        let m = self.entries.map(|x| x);
        let svd = m.svd(false, false);
        let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Joint-readout knobs for the two-qubit confusion measurement.
#[derive(Debug, Clone, Copy, Default)]
pub struct JointReadoutOptions {
    /// Extra per-shot |2⟩→|1⟩ transition probability present only in joint
    /// readout; stands in for measurement-induced transition errors.
    pub excess_two_to_one: f64,
}

/// Single-qubit confusion matrix from `n_per_state` shots per prepared state.
pub fn build_confusion_single(
    model: &ReadoutModel,
    n_per_state: usize,
    seed: u64,
) -> Result<ConfusionMatrix, ReadoutError> {
    if n_per_state < 100 {
        return Err(ReadoutError::TooFewShots { need: 100, got: n_per_state });
    }
    let mut entries = DMatrix::zeros(3, 3);
    for prepared in 0..3 {
        let (_, labels) = sample_shots(model, prepared, n_per_state, seed, prepared as u64);
        for l in labels {
            entries[(prepared, l)] += 1.0;
        }
        for j in 0..3 {
            entries[(prepared, j)] /= n_per_state as f64;
        }
    }
    ConfusionMatrix::from_rows(entries, vec![n_per_state as u64; 3])
}

/// Two-qubit (9-state) confusion matrix, sampling both qubits per shot.
///
/// Labels are ordered 00, 01, 02, 10, …, 22 with the first qubit most
/// significant. `options.excess_two_to_one` injects a correlated error.
pub fn build_confusion_joint(
    models: &[ReadoutModel; 2],
    n_per_state: usize,
    options: JointReadoutOptions,
    seed: u64,
) -> Result<ConfusionMatrix, ReadoutError> {
    if n_per_state < 100 {
        return Err(ReadoutError::TooFewShots { need: 100, got: n_per_state });
    }
    let mut entries = DMatrix::zeros(9, 9);
    for prepared in 0..9 {
        let prep = [prepared / 3, prepared % 3];
        let mut rng = stream_rng(seed, 100 + prepared as u64);
        for _ in 0..n_per_state {
            let mut measured = [0usize; 2];
            for q in 0..2 {
                let mut state = prep[q];
                if state == 2 && rng.gen::<f64>() < options.excess_two_to_one {
                    state = 1;
                }
                let reloc = models[q].relocation(state);
                let r: f64 = rng.gen();
                let level = if r < reloc[0] {
                    0
                } else if r < reloc[0] + reloc[1] {
                    1
                } else {
                    2
                };
                let iq = models[q].sample_gaussian(models[q].centroids[level], &mut rng);
                measured[q] = models[q].assign(iq);
            }
            entries[(prepared, measured[0] * 3 + measured[1])] += 1.0;
        }
        for j in 0..9 {
            entries[(prepared, j)] /= n_per_state as f64;
        }
    }
    ConfusionMatrix::from_rows(entries, vec![n_per_state as u64; 9])
}

/// Mean of the three diagonal entries with its standard error of the mean
/// (sample standard deviation over √3).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AssignmentFidelity {
    pub fidelity: f64,
    pub sem: f64,
}

pub fn assignment_fidelity(c: &ConfusionMatrix) -> Result<AssignmentFidelity, ReadoutError> {
    if c.dim != 3 {
        return Err(ReadoutError::WrongDim(3));
    }
    let diag = [c.entries[(0, 0)], c.entries[(1, 1)], c.entries[(2, 2)]];
    let mean = diag.iter().sum::<f64>() / 3.0;
    let var = diag.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 2.0;
    Ok(AssignmentFidelity { fidelity: mean, sem: var.sqrt() / 3.0_f64.sqrt() })
}

/// Readout amplitude → model mapping for the amplitude sweep: centroid
/// separation grows linearly with amplitude while an excess-transition
/// penalty grows quadratically above a threshold.
#[derive(Debug, Clone)]
pub struct AmplitudeFamily {
    pub gain: f64,
    pub sigma: f64,
    pub tau_ro: f64,
    pub t1: f64,
    /// Amplitude above which readout-induced transitions set in.
    pub transition_threshold: f64,
    /// Quadratic coefficient of the excess |1⟩→|2⟩ transition probability.
    pub transition_coeff: f64,
}

impl AmplitudeFamily {
    pub fn model_at(&self, amplitude: f64) -> ReadoutModel {
        let mut m = ReadoutModel::equilateral(self.gain * amplitude, self.sigma, self.tau_ro, self.t1);
        m.amplitude = amplitude;
        m
    }

    fn excess_transition(&self, amplitude: f64) -> f64 {
        let over = (amplitude - self.transition_threshold).max(0.0);
        (self.transition_coeff * over * over).min(1.0)
    }

    /// Confusion matrix at one amplitude, including the excess-transition
    /// penalty (each shot hops |0⟩→|1⟩ or |1⟩→|2⟩ with that probability
    /// before decay and sampling).
    pub fn confusion_at(
        &self,
        amplitude: f64,
        n_per_state: usize,
        seed: u64,
    ) -> Result<ConfusionMatrix, ReadoutError> {
        if n_per_state < 100 {
            return Err(ReadoutError::TooFewShots { need: 100, got: n_per_state });
        }
        let model = self.model_at(amplitude);
        let p_exc = self.excess_transition(amplitude);
        let mut entries = DMatrix::zeros(3, 3);
        for prepared in 0..3 {
            let mut rng = stream_rng(seed, prepared as u64);
            for _ in 0..n_per_state {
                let mut state = prepared;
                if state < 2 && rng.gen::<f64>() < p_exc {
                    state += 1;
                }
                let reloc = model.relocation(state);
                let r: f64 = rng.gen();
                let level = if r < reloc[0] {
                    0
                } else if r < reloc[0] + reloc[1] {
                    1
                } else {
                    2
                };
                let iq = model.sample_gaussian(model.centroids[level], &mut rng);
                entries[(prepared, model.assign(iq))] += 1.0;
            }
            for j in 0..3 {
                entries[(prepared, j)] /= n_per_state as f64;
            }
        }
        ConfusionMatrix::from_rows(entries, vec![n_per_state as u64; 3])
    }
}

/// Sweep assignment fidelity over an amplitude grid and return the best
/// amplitude (ties break toward the lower amplitude) with the per-amplitude
/// fidelities.
pub fn optimize_amplitude(
    family: &AmplitudeFamily,
    amplitudes: &[f64],
    n_per_state: usize,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>), ReadoutError> {
    if amplitudes.is_empty() {
        return Err(ReadoutError::EmptyGrid);
    }
    let mut curve = Vec::with_capacity(amplitudes.len());
    for (k, &a) in amplitudes.iter().enumerate() {
        let c = family.confusion_at(a, n_per_state, seed.wrapping_add(k as u64))?;
        let f = assignment_fidelity(&c)?.fidelity;
        curve.push((a, f));
    }
    let mut best = curve[0];
    for &(a, f) in &curve[1..] {
        if f > best.1 + 1e-12 {
            best = (a, f);
        }
    }
    Ok((best.0, curve))
}

/// Element-wise difference between a measured two-qubit confusion matrix and
/// the tensor product of single-qubit matrices, with the largest positive
/// deviations labelled.
#[derive(Debug, Clone)]
pub struct ConfusionDifference {
    pub difference: DMatrix<f64>,
    /// (prepared label, measured label, deviation), sorted descending.
    pub largest_positive: Vec<(String, String, f64)>,
}

pub fn confusion_difference(
    measured: &ConfusionMatrix,
    q1: &ConfusionMatrix,
    q2: &ConfusionMatrix,
) -> Result<ConfusionDifference, ReadoutError> {
    if measured.dim != 9 {
        return Err(ReadoutError::WrongDim(9));
    }
    if q1.dim != 3 || q2.dim != 3 {
        return Err(ReadoutError::WrongDim(3));
    }
    let constructed = q1.tensor(q2);
    let difference = &measured.entries - &constructed.entries;
    let label = |k: usize| format!("{}{}", k / 3, k % 3);
    let mut positive: Vec<(String, String, f64)> = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            if difference[(i, j)] > 0.0 {
                positive.push((label(i), label(j), difference[(i, j)]));
            }
        }
    }
    positive.sort_by(|a, b| b.2.total_cmp(&a.2));
    positive.truncate(8);
    Ok(ConfusionDifference { difference, largest_positive: positive })
}

/// Label of a prepared/measured state: "0".."2" for single-qubit matrices,
/// "00".."22" for joint ones, ordered 00, 01, 02, 10, …, 22.
fn state_label(dim: usize, index: usize) -> String {
    if dim == 9 {
        format!("{}{}", index / 3, index % 3)
    } else {
        format!("{index}")
    }
}

/// Serialize a confusion matrix as CSV: row = prepared state, columns =
/// measured-state probabilities, trailing column = shots.
pub fn confusion_to_csv(c: &ConfusionMatrix) -> String {
    let mut out = String::from("prepared");
    for j in 0..c.dim {
        out.push_str(&format!(",m{}", state_label(c.dim, j)));
    }
    out.push_str(",shots\n");
    for i in 0..c.dim {
        out.push_str(&state_label(c.dim, i));
        for j in 0..c.dim {
            out.push_str(&format!(",{}", c.entries[(i, j)]));
        }
        out.push_str(&format!(",{}\n", c.shots_per_row[i]));
    }
    out
}

/// Parse a confusion matrix written by [`confusion_to_csv`]. Comment lines
/// starting with `#` are skipped.
pub fn confusion_from_csv(text: &str) -> Result<ConfusionMatrix, ReadoutError> {
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .collect();
    let dim = rows.len();
    if dim != 3 && dim != 9 {
        return Err(ReadoutError::WrongDim(dim));
    }
    let mut entries = DMatrix::zeros(dim, dim);
    let mut shots = vec![0u64; dim];
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(ReadoutError::WrongDim(dim));
        }
        for j in 0..dim {
            entries[(i, j)] = fields[j + 1].parse::<f64>().map_err(|_| ReadoutError::WrongDim(dim))?;
        }
        shots[i] = fields[dim + 1].parse::<u64>().unwrap_or(0);
    }
    ConfusionMatrix::from_rows(entries, shots)
}

/// Pick the candidate frequency whose three population centers span the
/// largest triangle perimeter.
pub fn best_frequency_by_perimeter(candidates: &[(f64, [[f64; 2]; 3])]) -> Option<f64> {
    let perimeter = |c: &[[f64; 2]; 3]| {
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        d(c[0], c[1]) + d(c[1], c[2]) + d(c[2], c[0])
    };
    candidates
        .iter()
        .max_by(|a, b| perimeter(&a.1).total_cmp(&perimeter(&b.1)))
        .map(|(f, _)| *f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_width_blobs_assign_perfectly() {
        let mut model = ReadoutModel::equilateral(3.0, 1e-12, 2.3e-6, 77e-6);
        model.decay_during_readout = false;
        let (_, labels) = sample_shots(&model, 2, 500, 1, 0);
        assert!(labels.iter().all(|&l| l == 2));
        let c = build_confusion_single(&model, 500, 1).unwrap();
        assert!((c.entries[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c.entries[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((c.entries[(2, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_point_breaks_tie_to_lower_state() {
        let model = ReadoutModel::equilateral(2.0, 1.0, 2.3e-6, 77e-6);
        // Midpoint between centroid 0 at (0,0) and centroid 1 at (2,0).
        assert_eq!(model.assign([1.0, 0.0]), 0);
    }

    #[test]
    fn decay_fraction_matches_relaxation_during_readout() {
        // T1 = 77 µs, τ_RO = 2.3 µs → ≈2.9% relaxation of |1⟩ into |0⟩.
        let model = ReadoutModel::reference(0);
        let reloc = model.relocation(1);
        assert!((reloc[0] - 0.0294).abs() < 0.0005, "decay fraction {}", reloc[0]);
        let (_, labels) = sample_shots(&model, 1, 200_000, 3, 1);
        let assigned_zero = labels.iter().filter(|&&l| l == 0).count() as f64 / 200_000.0;
        // Gaussian overlap adds to the decay floor.
        assert!(assigned_zero > 0.029 && assigned_zero < 0.12, "P(0|1) = {assigned_zero}");
    }

    #[test]
    fn reference_models_hit_reported_assignment_fidelities() {
        for (idx, target) in [(0usize, 0.8793), (1usize, 0.8873)] {
            let c = build_confusion_single(&ReadoutModel::reference(idx), 200_000, 42).unwrap();
            let f = assignment_fidelity(&c).unwrap();
            assert!(
                (f.fidelity - target).abs() < 0.01,
                "qubit {idx}: F = {} vs target {target}",
                f.fidelity
            );
        }
    }

    #[test]
    fn rows_sum_to_one_by_construction() {
        let c = build_confusion_single(&ReadoutModel::reference(0), 1000, 7).unwrap();
        assert!(c.stochasticity_defect() < 1e-12);
        let joint = build_confusion_joint(
            &[ReadoutModel::reference(0), ReadoutModel::reference(1)],
            500,
            JointReadoutOptions::default(),
            7,
        )
        .unwrap();
        assert!(joint.stochasticity_defect() < 1e-12);
    }

    #[test]
    fn assignment_fidelity_of_identity_and_permutation() {
        let f = assignment_fidelity(&ConfusionMatrix::identity(3)).unwrap();
        assert_eq!(f.fidelity, 1.0);
        assert_eq!(f.sem, 0.0);
        // Worst-case label swap: no diagonal survives.
        let mut p = DMatrix::zeros(3, 3);
        p[(0, 1)] = 1.0;
        p[(1, 2)] = 1.0;
        p[(2, 0)] = 1.0;
        let c = ConfusionMatrix::from_rows(p, vec![1; 3]).unwrap();
        assert_eq!(assignment_fidelity(&c).unwrap().fidelity, 0.0);
    }

    #[test]
    fn assignment_fidelity_arithmetic_matches_hand_value() {
        let mut e = DMatrix::zeros(3, 3);
        for (i, d) in [0.9093, 0.9393, 0.7893].iter().enumerate() {
            e[(i, i)] = *d;
            e[(i, (i + 1) % 3)] = 1.0 - d;
        }
        let c = ConfusionMatrix::from_rows(e, vec![1; 3]).unwrap();
        let f = assignment_fidelity(&c).unwrap();
        assert!((f.fidelity - 0.8793).abs() < 1e-12);
    }

    #[test]
    fn shot_labels_converge_to_gaussian_partition() {
        // Two-centroid 1D oracle: P(cross) = Q(d/2σ) for points centered on
        // one of two centroids, plus the wedge correction for the third.
        let d = 3.35;
        let mut model = ReadoutModel::equilateral(d, 1.0, 2.3e-6, 77e-6);
        model.decay_during_readout = false;
        let n = 100_000;
        let (_, labels) = sample_shots(&model, 0, n, 9, 0);
        let p01 = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let q = 0.5 * erfc_approx(d / 2.0 / std::f64::consts::SQRT_2);
        // 3σ binomial bound around the oracle value.
        let bound = 3.0 * (q * (1.0 - q) / n as f64).sqrt() + 0.1 * q;
        assert!((p01 - q).abs() < bound.max(2e-3), "P(1|0) = {p01}, oracle {q}");
    }

    // Abramowitz–Stegun 7.1.26-style erfc for the test oracle.
    fn erfc_approx(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t
            * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        poly * (-x * x).exp()
    }

    #[test]
    fn joint_confusion_without_correlation_matches_tensor_product() {
        let models = [ReadoutModel::reference(0), ReadoutModel::reference(1)];
        let n = 20_000;
        let joint = build_confusion_joint(&models, n, JointReadoutOptions::default(), 21).unwrap();
        let q1 = build_confusion_single(&models[0], 200_000, 22).unwrap();
        let q2 = build_confusion_single(&models[1], 200_000, 23).unwrap();
        let tensor = q1.tensor(&q2);
        // 4σ multinomial bounds per entry.
        for i in 0..9 {
            for j in 0..9 {
                let p = tensor.entries[(i, j)];
                let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 4.0 / n as f64;
                assert!(
                    (joint.entries[(i, j)] - p).abs() <= bound,
                    "entry ({i},{j}): {} vs {p}",
                    joint.entries[(i, j)]
                );
            }
        }
    }

    #[test]
    fn injected_decay_error_shows_up_below_the_diagonal() {
        let models = [ReadoutModel::reference(0), ReadoutModel::reference(1)];
        let joint = build_confusion_joint(
            &models,
            20_000,
            JointReadoutOptions { excess_two_to_one: 0.25 },
            31,
        )
        .unwrap();
        let q1 = build_confusion_single(&models[0], 100_000, 32).unwrap();
        let q2 = build_confusion_single(&models[1], 100_000, 33).unwrap();
        let diff = confusion_difference(&joint, &q1, &q2).unwrap();
        // Prepared |12⟩ (row 5) must show extra population measured at |11⟩
        // (column 4): the injected |2⟩→|1⟩ channel on qubit 2.
        assert!(diff.difference[(5, 4)] > 0.1, "got {}", diff.difference[(5, 4)]);
        // And the top deviations should be 2→1-compatible entries.
        assert!(!diff.largest_positive.is_empty());
        let (prep, meas, dev) = &diff.largest_positive[0];
        assert!(dev > &0.1);
        let decayed = prep
            .chars()
            .zip(meas.chars())
            .any(|(p, m)| p == '2' && m == '1');
        assert!(decayed, "top deviation {prep}→{meas} is not a 2→1 decay pattern");
    }

    #[test]
    fn measured_equals_tensor_gives_zero_difference() {
        let q1 = build_confusion_single(&ReadoutModel::reference(0), 1000, 41).unwrap();
        let q2 = build_confusion_single(&ReadoutModel::reference(1), 1000, 42).unwrap();
        let measured = q1.tensor(&q2);
        let diff = confusion_difference(&measured, &q1, &q2).unwrap();
        assert!(diff.difference.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn monotone_separation_prefers_largest_amplitude() {
        let family = AmplitudeFamily {
            gain: 60.0,
            sigma: 1.0,
            tau_ro: 2.3e-6,
            t1: 77e-6,
            transition_threshold: f64::INFINITY,
            transition_coeff: 0.0,
        };
        let grid: Vec<f64> = (1..=8).map(|k| 0.01 * k as f64).collect();
        let (best, _) = optimize_amplitude(&family, &grid, 4000, 5).unwrap();
        assert!((best - 0.08).abs() < 1e-12);
    }

    #[test]
    fn transition_penalty_creates_interior_maximum() {
        let family = AmplitudeFamily {
            gain: 80.0,
            sigma: 1.0,
            tau_ro: 2.3e-6,
            t1: 77e-6,
            transition_threshold: 0.045,
            transition_coeff: 300.0,
        };
        let grid: Vec<f64> = (1..=18).map(|k| 0.005 * k as f64).collect();
        let (best, curve) = optimize_amplitude(&family, &grid, 20_000, 6).unwrap();
        assert!(best > grid[0] && best < grid[grid.len() - 1], "best = {best}");
        // Oracle: the argmax of the evaluated curve is what must be returned.
        let oracle = curve
            .iter()
            .fold((f64::NAN, f64::MIN), |acc, &(a, f)| if f > acc.1 + 1e-12 { (a, f) } else { acc });
        assert_eq!(best, oracle.0);
    }

    #[test]
    fn empty_amplitude_grid_is_rejected() {
        let family = AmplitudeFamily {
            gain: 1.0,
            sigma: 1.0,
            tau_ro: 2.3e-6,
            t1: 77e-6,
            transition_threshold: 1.0,
            transition_coeff: 0.0,
        };
        assert!(matches!(optimize_amplitude(&family, &[], 1000, 0), Err(ReadoutError::EmptyGrid)));
    }

    #[test]
    fn perimeter_picks_widest_triangle() {
        let tight = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]];
        let wide = [[0.0, 0.0], [2.0, 0.0], [1.0, 1.7]];
        let best = best_frequency_by_perimeter(&[(6.4804e9, tight), (6.48048e9, wide)]).unwrap();
        assert_eq!(best, 6.48048e9);
    }
}
