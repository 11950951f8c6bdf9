//! Two-barrier reflection by double penalization. The lower penalty `m` and
//! the upper penalty `n` advance together along one geometric ladder.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bdsde_solver::{backward_sweep, Reflection};
use crate::condexp::RegressionConfig;
use crate::error::{Error, Result};
use crate::model::{PenaltyLevel, PenaltySchedule, Scenario, SolutionEnsemble};
use crate::paths::{obstacle_on_grid, NoisePaths};
use crate::reflect_one::{increments_residual, penetration, upper_penetration};

/// Solves `y = a + m_dt·(l - y)⁺ - n_dt·(y - u)⁺`, returning
/// `(y, dK⁺, dK⁻)`. At most one of the increments is nonzero.
pub fn implicit_double_step(
    a: f64,
    l_val: f64,
    u_val: f64,
    m_dt: f64,
    n_dt: f64,
) -> Result<(f64, f64, f64)> {
    if !(l_val < u_val) {
        return Err(Error::BarrierCrossing {
            lower: l_val,
            upper: u_val,
        });
    }
    Ok(reflect_between(a, Some(l_val), Some(u_val), m_dt, n_dt))
}

/// Penalty step against whichever barriers are present.
#[inline]
pub(crate) fn reflect_between(
    a: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    m_dt: f64,
    n_dt: f64,
) -> (f64, f64, f64) {
    if let Some(l) = lower {
        if a < l {
            let y = (a + m_dt * l) / (1.0 + m_dt);
            return (y, m_dt * (l - y).max(0.0), 0.0);
        }
    }
    if let Some(u) = upper {
        if a > u {
            let y = (a + n_dt * u) / (1.0 + n_dt);
            return (y, 0.0, n_dt * (y - u).max(0.0));
        }
    }
    (a, 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleTraceLevel {
    pub m: f64,
    pub n: f64,
    pub lower_penetration: f64,
    pub lower_penetration_se: f64,
    pub upper_penetration: f64,
    pub upper_penetration_se: f64,
    pub mean_k_plus_terminal: f64,
    pub mean_k_minus_terminal: f64,
    pub y0_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleTrace {
    pub levels: Vec<DoubleTraceLevel>,
    pub converged: bool,
}

/// Doubly reflected solution. Levels `(m_k, n_k)` are taken pairwise from
/// the two schedules; the ladder stops once both penetration statistics
/// are within their tolerances.
pub fn solve_double(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
    sched_m: &PenaltySchedule,
    sched_n: &PenaltySchedule,
) -> Result<(SolutionEnsemble, DoubleTrace)> {
    let grid = obstacle_on_grid(s, p)?;
    if grid.lower.is_none() && grid.upper.is_none() {
        return Err(Error::Configuration(
            "at least one barrier is required".into(),
        ));
    }
    if let (Some(lo), Some(up)) = (&grid.lower, &grid.upper) {
        let n = p.steps();
        for (row_l, row_u) in lo.rows().into_iter().zip(up.rows()) {
            for i in 0..n {
                if row_l[i] >= row_u[i] {
                    return Err(Error::BarrierCrossing {
                        lower: row_l[i],
                        upper: row_u[i],
                    });
                }
            }
        }
    }

    let dt = s.grid.dt();
    let mut levels = Vec::new();
    let mut last = None;
    let mut converged = false;
    for (&m, &n) in sched_m.levels().iter().zip(sched_n.levels()) {
        let reflection = Reflection::Double {
            lower: grid.lower.as_ref(),
            upper: grid.upper.as_ref(),
            m_dt: m * dt,
            n_dt: n * dt,
        };
        let mut sol = backward_sweep(s, p, &grid.terminal, cfg, picard_iters, reflection)?;
        sol.meta.penalty = PenaltyLevel::Double { m, n };
        let (lp, lp_se) = grid
            .lower
            .as_ref()
            .map_or((0.0, 0.0), |lo| penetration(&sol.y, lo));
        let (up, up_se) = grid
            .upper
            .as_ref()
            .map_or((0.0, 0.0), |u| upper_penetration(&sol.y, u));
        levels.push(DoubleTraceLevel {
            m,
            n,
            lower_penetration: lp,
            lower_penetration_se: lp_se,
            upper_penetration: up,
            upper_penetration_se: up_se,
            mean_k_plus_terminal: sol.mean_k_plus_terminal(),
            mean_k_minus_terminal: sol.mean_k_minus_terminal(),
            y0_mean: sol.y_mean(0),
        });
        last = Some(sol);
        if lp <= sched_m.penetration_tol && up <= sched_n.penetration_tol {
            converged = true;
            break;
        }
    }
    let sol = last.expect("schedules have at least one level");
    Ok((sol, DoubleTrace { levels, converged }))
}

/// Per-path `(Σ (Y - L) dK⁺, Σ (U - Y) dK⁻)`.
pub fn double_skorohod_residuals(
    sol: &SolutionEnsemble,
    lower: &Array2<f64>,
    upper: &Array2<f64>,
) -> Vec<(f64, f64)> {
    let lo = increments_residual(&sol.y, lower, &sol.k_plus, 1.0);
    let up = increments_residual(&sol.y, upper, &sol.k_minus, -1.0);
    lo.into_iter().zip(up).collect()
}
