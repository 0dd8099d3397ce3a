//! Case enumeration and a laminar finite-volume generator for the single-phase problems.

mod linear;
mod mask;
mod params;
mod solver;

pub use linear::{red_black_gauss_seidel, scaled_residual, BandCholesky, LinearSystem};
pub use mask::build_geometry_mask;
pub use params::{case_id, enumerate_cases, Geometry, OperatingParams, Problem, Subset, DAM_DOMAIN_M, DAM_OBSTACLE_X_M};
pub use solver::{
    advance_timestep, simulate, solve_case, FieldState, LinearSolver, ResidualReport, Simulation, SolverConfig, Stepper,
};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("linear solve did not converge in {iterations} iterations (scaled residual {residual:e}){}", step_suffix(*.step))]
    IterationLimit { step: Option<usize>, iterations: usize, residual: f64 },
    #[error("solver blew up at step {step}")]
    Blowup { step: usize },
    #[error("discrete divergence {divergence:e} above tolerance at step {step}")]
    MassConservation { step: usize, divergence: f64 },
}

fn step_suffix(step: Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

impl FlowError {
    pub(crate) fn at_step(self, at: usize) -> Self {
        match self {
            FlowError::IterationLimit { iterations, residual, .. } => {
                FlowError::IterationLimit { step: Some(at), iterations, residual }
            }
            other => other,
        }
    }
}
