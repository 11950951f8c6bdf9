//! Picks the solver that matches a scenario's barriers.

use serde::{Deserialize, Serialize};

use crate::bdsde_solver::{solve_bdsde, DEFAULT_PICARD_ITERS};
use crate::condexp::RegressionConfig;
use crate::error::Result;
use crate::model::{PenaltySchedule, Scenario, SolutionEnsemble};
use crate::paths::{obstacle_on_grid, NoisePaths, ObstacleGrid};
use crate::reflect_one::{solve_reflected, PenalizationTrace};
use crate::reflect_two::{solve_double, DoubleTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub regression: RegressionConfig,
    pub picard_iters: usize,
    pub schedule: PenaltySchedule,
}

impl SolverSettings {
    pub fn defaults_for(s: &Scenario) -> Self {
        Self {
            regression: RegressionConfig::default(),
            picard_iters: DEFAULT_PICARD_ITERS,
            schedule: PenaltySchedule::default_for(&s.grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trace {
    None,
    Lower(PenalizationTrace),
    Double(DoubleTrace),
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub ensemble: SolutionEnsemble,
    pub trace: Trace,
    pub converged: bool,
    pub grid: ObstacleGrid,
}

/// No barrier: plain backward sweep. Lower barrier only: penalty ladder.
/// Any upper barrier: joint double-penalty ladder on the same schedule.
pub fn solve(s: &Scenario, p: &NoisePaths, settings: &SolverSettings) -> Result<SolveOutcome> {
    let grid = obstacle_on_grid(s, p)?;
    let cfg = &settings.regression;
    let picard = settings.picard_iters;
    let (ensemble, trace, converged) = match (grid.lower.is_some(), grid.upper.is_some()) {
        (false, false) => (solve_bdsde(s, p, cfg, picard)?, Trace::None, true),
        (true, false) => {
            let (sol, trace) = solve_reflected(s, p, cfg, picard, &settings.schedule)?;
            let converged = trace.converged;
            (sol, Trace::Lower(trace), converged)
        }
        _ => {
            let (sol, trace) =
                solve_double(s, p, cfg, picard, &settings.schedule, &settings.schedule)?;
            let converged = trace.converged;
            (sol, Trace::Double(trace), converged)
        }
    };
    Ok(SolveOutcome {
        ensemble,
        trace,
        converged,
        grid,
    })
}
