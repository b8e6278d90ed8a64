//! Adaptive regularization solver of degree `p` for smooth unconstrained
//! minimization, tolerating inexact function values (with deterministically
//! controlled error) and randomly perturbed derivatives.
//!
//! The crate is organized around the pieces a run needs:
//!
//! * [`tensor`] — dense symmetric tensors, Taylor polynomials and their
//!   decrements, shifted derivatives, and the regularizer `‖s‖^{p+1}`.
//! * [`criticality`] — order-`j` optimality measures over a `δ`-ball
//!   (gradient norm at order one, a trust-region subproblem at order two),
//!   a brute-force sampling oracle, and the stopping test.
//! * [`model`] — the regularized local model, its shifted truncations, and
//!   the inner solver that produces an acceptable step.
//! * [`oracle`] / [`problems`] — test problems with analytic derivatives,
//!   controllable-accuracy function estimates, and noise models with a
//!   tunable per-iteration accuracy probability.
//! * [`driver`] — the outer loop, per-iteration trace records, accuracy
//!   event detection, and iteration-category accounting.
//! * [`sweep`] — multi-seed tolerance sweeps, slope fitting of the
//!   empirical iteration counts, and CSV/JSON emission.
//!
//! The `arp` binary exposes `run`, `sweep`, and `slope` subcommands on top
//! of this library; see the repository README for usage.

// Validation sites deliberately negate comparisons (`!(x > 0.0)`) so that
// NaN inputs fail the checks instead of slipping through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config_text;
pub mod criticality;
pub mod driver;
pub mod error;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod sweep;
pub mod tensor;

pub use error::{ArpError, Result};
