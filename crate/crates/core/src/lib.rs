//! Monte Carlo solvers for backward doubly stochastic differential
//! equations with zero, one or two reflecting barriers.
//!
//! A [`Scenario`] describes the problem data. [`generate_paths`] draws the
//! forward and backward Brownian increments. [`solve`] runs the backward
//! regression scheme and, when barriers are present, the penalization
//! ladder. Reference values live in [`oracles`] and structural checks in
//! [`diagnostics`].
//!
//! ```
//! use rbdsde::{catalog, generate_paths, solve, SolverSettings};
//!
//! let s = catalog::constant(10, 200, 1).unwrap();
//! let p = generate_paths(&s).unwrap();
//! let out = solve(&s, &p, &SolverSettings::defaults_for(&s)).unwrap();
//! assert!((out.ensemble.y_mean(0) - 5.0).abs() < 1e-10);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdsde_solver;
pub mod catalog;
pub mod condexp;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod oracles;
pub mod paths;
pub mod reflect_one;
pub mod reflect_two;
pub mod solve;

pub use bdsde_solver::solve_bdsde;
pub use condexp::RegressionConfig;
pub use config::{load_config, RunConfig};
pub use error::{Error, Result};
pub use model::{
    validate_scenario, Barrier, CoefficientKind, CoefficientSpec, Dimensions, PenaltySchedule,
    Scenario, SolutionEnsemble, TimeGrid, ValidationReport,
};
pub use paths::{generate_paths, obstacle_on_grid, NoisePaths};
pub use reflect_one::{solve_penalized, solve_projected, solve_reflected};
pub use reflect_two::solve_double;
pub use solve::{solve, SolveOutcome, SolverSettings, Trace};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RBDSDE_THREADS";

/// Thread cap requested through [`THREADS_ENV`], if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Configuration(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Installs the global worker pool sized by [`THREADS_ENV`]. Results do
/// not depend on the pool size.
pub fn init_thread_pool() -> Result<()> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Resource(e.to_string()))?;
    }
    Ok(())
}
