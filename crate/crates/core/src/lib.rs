//! Simulation of continuous collective-spin measurement on an ensemble of
//! identically prepared qubits, and maximum-likelihood reconstruction of the
//! initial single-qubit state from one diffusive measurement record.
//!
//! The crate is organized around five pieces:
//!
//! * [`spin`] — exact finite-dimensional collective-spin algebra on the
//!   exchange-symmetric subspace (dimension `N+1`): operators, spin coherent
//!   states, fidelities, the squeezing parameter and the spin-Husimi
//!   Q-function.
//! * [`trajectory`] — randomized control waveforms, synthesis of measurement
//!   records from a known initial state via the conditional Schrödinger
//!   equation, and filter propagation against a given record (exact
//!   many-body, coherent-state Bloch vector, and rotation-only models).
//! * [`likelihood`] — log-likelihood ratios of candidate initial conditions
//!   against a record, for the general diffusion model and its spin
//!   specializations.
//! * [`estimator`] — the two-step maximum-likelihood reconstruction of the
//!   initial qubit state, plus a backaction-free baseline estimator.
//! * [`campaign`] — Monte Carlo experiment orchestration: estimator scaling
//!   campaigns with power-law fits, approximation-quality studies, squeezing
//!   demos, and plot-ready data export via [`io`].

pub mod bloch;
pub mod campaign;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod seed;
pub mod spin;
pub mod trajectory;

pub use bloch::BlochVector;
pub use spin::{CollectiveOps, SymmetricState};

