//! Time-optimal bang-bang control of harmonic-trap expansion.
//!
//! The trap frequency is steered from `ω₀` to `ω_T = ω₀/γ²` while keeping all
//! level populations invariant. In rescaled time the scaled trap width obeys the
//! Ermakov phase-plane system
//!
//! ```text
//! ẋ₁ = x₂,    ẋ₂ = −u·x₁ + 1/x₁³,    u ∈ [−u₁, u₂]
//! ```
//!
//! and the transfer `(1, 0) → (γ, 0)` is done in minimum time by a bang-bang
//! schedule. The crate is organised as:
//!
//! - [`phase`]: exact dynamics under constant control, first integrals and
//!   inter-switching times,
//! - [`synthesis`]: candidate transfer times and the optimal schedule,
//! - [`verify`]: independent RK4 re-integration and structural checks,
//! - [`schrodinger`]: split-operator propagation of the oscillator wavefunction,
//! - [`cli`]: the `trapcool` command-line front end.

pub mod cli;
pub mod error;
pub mod phase;
pub mod schrodinger;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
pub use phase::{BangControl, ControlBounds, ControlKind, PhaseState};
pub use synthesis::{synthesize, Schedule, Segment, SynthesisSolution};
