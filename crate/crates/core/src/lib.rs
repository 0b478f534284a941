//! Sharp Eyring–Kramers asymptotics for the underdamped Langevin process
//!
//! ```text
//! dq = p dt
//! dp = -∇U(q) dt - γ p dt + √(2γε) dB
//! ```
//!
//! The crate locates the double-well structure of a potential, evaluates the
//! closed-form prefactor of the mean transition time, and cross-checks it by
//! Monte Carlo hitting times, by quadrature of the capacity integrals around
//! the saddle, and by pointwise Lyapunov inequalities.

pub mod capacity;
pub mod dynamics;
pub mod error;
pub mod hitting;
pub mod landscape;
pub mod linalg;
pub mod lyapunov;
pub mod potential;
pub mod quadrature;
pub mod rates;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use potential::{Family, PhaseState, PotentialModel};
