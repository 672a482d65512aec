//! Radiative decay of a two-level emitter in front of a mirror, with time-delayed
//! coherent feedback and white-noise fluctuations of the transition energy.
//!
//! The vacuum-sector coherence amplitude obeys the stochastic delay equation
//!
//! ```text
//! dP/dt = (iF_t − Γ) P(t) + Γ e^{−iφ} P(t−τ) θ(t−τ),   ⟨F_t F_s⟩ = γ δ(t−s)
//! ```
//!
//! and `|P|²` is the excited-state population. The crate provides closed-form
//! reference curves ([`analytic`]), exact Gaussian noise averages ([`moments`]),
//! a per-realisation integrator ([`integrator`]), Monte Carlo ensembles
//! ([`ensemble`]) and the experiment drivers behind the `feedback-sim` CLI
//! ([`experiments`]).

pub mod analytic;
pub mod ensemble;
pub mod error;
pub mod experiments;
mod grid;
pub mod integrator;
pub mod moments;
pub mod noise;
pub mod params;
pub mod quadrature;
pub mod stats;

pub use error::{Error, Result};
pub use params::{OUReference, SystemParams};
