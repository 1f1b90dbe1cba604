//! Gate-set algebra and device-level simulation for a two-transmon system with
//! a parametrically modulated tunable coupler.
//!
//! The crate is organized around the stages of a two-qubit gate experiment:
//!
//! - [`gateset`] — exact unitary definitions, qutrit embedding, circuit
//!   composition, and the composite-SWAP identity checks.
//! - [`dynamics`] — pulse-level Schrödinger integration of the three-transmon
//!   Hamiltonian under flux modulation, plus CZ/iSWAP calibration.
//! - [`noise`] — amplitude-damping and dephasing channels and
//!   coherence-limited fidelity estimates.
//! - [`ramsey`] — conditional- and cross-Ramsey experiment builders, sweep
//!   backends, and sinusoid fitting.
//! - [`readout`] — dispersive three-state IQ readout simulation and confusion
//!   matrices.
//! - [`mitigation`] — SPAM mitigation by bounded least-squares inversion of a
//!   measured confusion matrix.
//! - [`fits`] — decoherence-curve fitting, Doane binning, and frequency error
//!   propagation.

pub mod fits;
pub mod gateset;
pub mod linalg;
pub mod mitigation;
pub mod nlfit;
pub mod noise;
pub mod ramsey;
pub mod readout;
pub mod rng;

pub mod dynamics;

pub use gateset::{Circuit, GateKind, GateOp, Register, StateVector, Unitary};
pub use noise::{DensityMatrix, KrausChannel};
pub use readout::ConfusionMatrix;

/// Crate-wide complex scalar.
pub type C64 = num_complex::Complex64;
