use thiserror::Error;

use crate::sequence::parser::ProgramError;

/// Errors raised by the simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The spin system cannot support the requested operation.
    #[error("physics: {0}")]
    Physics(String),

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("simulation: {0}")]
    Simulation(String),

    /// Step-halving did not settle below tolerance.
    #[error("integrator did not converge after {halvings} halvings (step {step:.3e} s, change {change:.3e})")]
    NonConvergence { halvings: u32, step: f64, change: f64 },

    #[error("fit: {0}")]
    Fit(String),

    #[error("infeasible calibration targets: {reason}; achievable T_LLS range [{min_t_lls:.4}, {max_t_lls:.4}] s at T1 = {t1:.4} s")]
    Infeasible {
        reason: String,
        t1: f64,
        min_t_lls: f64,
        max_t_lls: f64,
    },

    #[error(transparent)]
    Program(#[from] ProgramError),
}

pub type Result<T> = std::result::Result<T, Error>;
