//! Deterministic numerical kernels shared by the model modules.

mod cubic;
mod minimize;
pub mod ode;
mod quad;
mod roots;

pub use cubic::solve_cubic_real;
pub use minimize::{golden_section, minimize_scalar};
pub use ode::{
    ode_solve_with_events, Direction, EventRecord, EventSpec, OdeMethod, OdeOptions, OdeSolution,
    OdeStatus,
};
pub use quad::{integrate_adaptive, Quadrature};
pub use roots::{expand_bracket, find_root_bracketed};

/// Tolerances and iteration limits shared by the kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Growth factor used when searching outward for a sign change.
    pub bracket_expansion: f64,
    /// Coarse grid size used by [`minimize_scalar`] before golden-section refinement.
    pub grid_points: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_iterations: 200,
            bracket_expansion: 1.6,
            grid_points: 256,
        }
    }
}

impl SolverSettings {
    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(crate::Error::domain("solver tolerances must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(crate::Error::domain("max_iterations must be at least 1"));
        }
        Ok(())
    }
}
