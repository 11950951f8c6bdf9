//! Pass/fail statistics for the structural properties of solutions:
//! comparison, a priori size, stability under terminal perturbations,
//! obstacle domination and discrete continuity.
//!
//! Thresholds derive from the pooled regression standard errors of the
//! ensembles being compared.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Scenario, SolutionEnsemble};
use crate::paths::{obstacle_on_grid, NoisePaths};
use crate::solve::{solve, SolverSettings};

/// Largest admissible share of violating grid points.
pub const VIOLATION_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub violation_fraction: f64,
    pub epsilon: f64,
    pub pass: bool,
}

impl Verdict {
    fn from_count(violations: usize, total: usize, epsilon: f64) -> Self {
        let violation_fraction = violations as f64 / total.max(1) as f64;
        Self {
            violation_fraction,
            epsilon,
            pass: violation_fraction <= VIOLATION_BUDGET,
        }
    }
}

/// `3·√((SE_A² + SE_B²)/2)`.
pub fn pooled_epsilon(a: &SolutionEnsemble, b: &SolutionEnsemble) -> f64 {
    3.0 * ((a.pooled_se().powi(2) + b.pooled_se().powi(2)) / 2.0).sqrt()
}

fn same_shape(a: &SolutionEnsemble, b: &SolutionEnsemble) -> Result<()> {
    if a.y.dim() != b.y.dim() {
        return Err(Error::DimensionMismatch {
            what: "ensemble paths",
            expected: a.y.nrows(),
            found: b.y.nrows(),
        });
    }
    if a.z.dim() != b.z.dim() {
        return Err(Error::DimensionMismatch {
            what: "ensemble d",
            expected: a.z.dim().2,
            found: b.z.dim().2,
        });
    }
    Ok(())
}

/// Share of `(p, i)` with `Y_A > Y_B + ε`.
pub fn check_comparison(
    a: &SolutionEnsemble,
    b: &SolutionEnsemble,
    epsilon: f64,
) -> Result<Verdict> {
    same_shape(a, b)?;
    let violations =
        a.y.iter()
            .zip(b.y.iter())
            .filter(|(ya, yb)| **ya > **yb + epsilon)
            .count();
    Ok(Verdict::from_count(violations, a.y.len(), epsilon))
}

/// Share of `(p, i)` with `ΔK_A < ΔK_B - ε`, for ensembles sharing the obstacle.
pub fn check_dk_comparison(
    a: &SolutionEnsemble,
    b: &SolutionEnsemble,
    epsilon: f64,
) -> Result<Verdict> {
    same_shape(a, b)?;
    let n = a.steps();
    let mut violations = 0;
    for (ka, kb) in a.k_plus.axis_iter(Axis(0)).zip(b.k_plus.axis_iter(Axis(0))) {
        for i in 0..n {
            if ka[i + 1] - ka[i] < kb[i + 1] - kb[i] - epsilon {
                violations += 1;
            }
        }
    }
    Ok(Verdict::from_count(violations, a.paths() * n, epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriStatistic {
    /// `E[sup Y² + Σ|Z|² dt + K_T²]`.
    pub lhs: f64,
    /// `E[ξ² + Σ f(t,w,0,0)² dt + Σ |g(t,w,0,0)|² dt + sup (S⁺)²]`.
    pub rhs_data: f64,
}

pub fn apriori_statistic(
    sol: &SolutionEnsemble,
    s: &Scenario,
    p: &NoisePaths,
) -> Result<AprioriStatistic> {
    let grid = obstacle_on_grid(s, p)?;
    let m = p.paths();
    let n = p.steps();
    let d = p.d();
    let dt = s.grid.dt();
    let zeros = vec![0.0; d];
    let mut gv = vec![0.0; p.l()];

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for q in 0..m {
        let sup_y2 = sol.y.row(q).iter().map(|y| y * y).fold(0.0, f64::max);
        let z2: f64 = sol
            .z
            .slice(s![q, .., ..])
            .iter()
            .map(|z| z * z)
            .sum::<f64>()
            * dt;
        let kt = sol.k_plus[[q, n]] + sol.k_minus[[q, n]];
        lhs += sup_y2 + z2 + kt * kt;

        let xi = grid.terminal[q];
        let mut data = xi * xi;
        for i in 0..n {
            let w = p.w_state.slice(s![q, i, ..]);
            let w = w.as_slice().unwrap();
            let t = s.grid.time(i);
            data += s.driver.kind.eval(t, w, 0.0, &zeros).powi(2) * dt;
            s.noise.kind.eval_into(t, w, 0.0, &zeros, &mut gv);
            data += gv.iter().map(|g| g * g).sum::<f64>() * dt;
        }
        if let Some(lo) = &grid.lower {
            data += lo
                .row(q)
                .iter()
                .map(|v| v.max(0.0).powi(2))
                .fold(0.0, f64::max);
        }
        rhs += data;
    }
    Ok(AprioriStatistic {
        lhs: lhs / m as f64,
        rhs_data: rhs / m as f64,
    })
}

/// `E[sup_i (Y'_i - Y_i)²]` where `Y'` solves the problem with `ξ + δ` on
/// the same paths.
pub fn stability_statistic(
    s: &Scenario,
    delta: f64,
    p: &NoisePaths,
    settings: &SolverSettings,
) -> Result<f64> {
    let base = solve(s, p, settings)?.ensemble;
    let mut shifted = s.clone();
    shifted.terminal = s.terminal.clone().shifted(delta);
    let moved = solve(&shifted, p, settings)?.ensemble;
    Ok(sup_sq_gap(&base.y, &moved.y))
}

pub(crate) fn sup_sq_gap(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let m = a.nrows();
    a.axis_iter(Axis(0))
        .zip(b.axis_iter(Axis(0)))
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y).powi(2))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / m as f64
}

/// Share of `(p, i)` with `Y < S - ε`.
pub fn obstacle_violation_fraction(y: &Array2<f64>, lower: &Array2<f64>, epsilon: f64) -> f64 {
    let v = y
        .iter()
        .zip(lower.iter())
        .filter(|(y, s)| **y < **s - epsilon)
        .count();
    v as f64 / y.len().max(1) as f64
}

/// Share of `(p, i)` outside `[L - ε, U + ε]`.
pub fn band_violation_fraction(
    y: &Array2<f64>,
    lower: &Array2<f64>,
    upper: &Array2<f64>,
    epsilon: f64,
) -> f64 {
    let v = y
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .filter(|(y, (l, u))| **y < **l - epsilon || **y > **u + epsilon)
        .count();
    v as f64 / y.len().max(1) as f64
}

/// Median over paths of `max_i |Y_{i+1} - Y_i|`.
pub fn continuity_statistic(sol: &SolutionEnsemble) -> f64 {
    let mut jumps: Vec<f64> = sol
        .y
        .axis_iter(Axis(0))
        .map(|row| {
            row.windows(2)
                .into_iter()
                .map(|w| (w[1] - w[0]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    jumps.sort_by(|a, b| a.total_cmp(b));
    let k = jumps.len();
    if k == 0 {
        0.0
    } else if k % 2 == 1 {
        jumps[k / 2]
    } else {
        0.5 * (jumps[k / 2 - 1] + jumps[k / 2])
    }
}
