//! Error types shared across the solver.

use thiserror::Error;

/// Errors produced by configuration validation and the solvers.
#[derive(Debug, Clone, Error)]
pub enum GameError {
    /// A parameter violates its domain (non-positive valuation, discount
    /// outside [0, 1), zero iteration count, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Client index outside the roster.
    #[error("client index {index} out of range for {len} clients")]
    IndexOutOfRange { index: usize, len: usize },

    /// The closed-form stage equilibrium needs at least one client.
    #[error("empty client roster")]
    EmptyRoster,

    /// The closed-form stage equilibrium assumes every client has the same
    /// data cap; best-response dynamics still work on heterogeneous caps.
    #[error("non-uniform data caps: client {index} has cap {cap}, expected {expected}")]
    NonUniformCaps {
        index: usize,
        cap: f64,
        expected: f64,
    },

    /// Best-response dynamics exhausted the round budget. Carries the last
    /// profile so callers can inspect how far the process got.
    #[error("best-response dynamics did not converge in {rounds} rounds (last round moved {last_change:e})")]
    NoConvergence {
        rounds: usize,
        last_change: f64,
        last_profile: Vec<f64>,
    },

    /// Bisection found no sign change on the bracket. Signals a
    /// misclassified bound pair; cannot occur for B_l < rho_l/E_l <= O_l.
    #[error("no root bracketed in ({lo:e}, {hi:e}]")]
    NoRoot { lo: f64, hi: f64 },

    /// A requested cooperative level exceeds the admissible cap.
    #[error("cooperative level {level} exceeds the cap {cap}")]
    LevelAboveCap { level: f64, cap: f64 },

    /// Punishment cost does not strictly exceed the one-shot deviation cost;
    /// the threshold discount factor is undefined. Signals an inconsistent
    /// cooperative profile.
    #[error("degenerate threshold denominator for client {index}")]
    DegenerateDenominator { index: usize },

    /// I/O failure with the offending path attached.
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, GameError>;
