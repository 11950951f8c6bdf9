//! One-barrier reflection by penalization: an implicit penalty per step, the
//! penalty ladder with its penetration trace, the projection limit, and the
//! Skorohod-condition checks.

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdsde_solver::{backward_sweep, Reflection};
use crate::condexp::RegressionConfig;
use crate::error::{Error, Result};
use crate::model::{sample_se, PenaltyLevel, PenaltySchedule, Scenario, SolutionEnsemble};
use crate::paths::{obstacle_on_grid, NoisePaths};

/// Solves `y = a + n_dt·(s - y)⁺` and returns `(y, n_dt·(s - y)⁺)`.
#[inline]
pub fn implicit_penalty_step(a: f64, s_val: f64, n_dt: f64) -> (f64, f64) {
    if a >= s_val {
        (a, 0.0)
    } else {
        let y = (a + n_dt * s_val) / (1.0 + n_dt);
        (y, n_dt * (s_val - y).max(0.0))
    }
}

fn lower_grid(s: &Scenario, p: &NoisePaths) -> Result<(ndarray::Array1<f64>, Array2<f64>)> {
    let grid = obstacle_on_grid(s, p)?;
    let lower = grid
        .lower
        .ok_or_else(|| Error::Configuration("a lower obstacle is required".into()))?;
    Ok((grid.terminal, lower))
}

/// Penalized solution at penalty level `n`.
pub fn solve_penalized(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
    n: f64,
) -> Result<SolutionEnsemble> {
    let (terminal, lower) = lower_grid(s, p)?;
    penalized_on(s, p, &terminal, &lower, cfg, picard_iters, n)
}

fn penalized_on(
    s: &Scenario,
    p: &NoisePaths,
    terminal: &ndarray::Array1<f64>,
    lower: &Array2<f64>,
    cfg: &RegressionConfig,
    picard_iters: usize,
    n: f64,
) -> Result<SolutionEnsemble> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::Configuration(format!(
            "penalty level must be finite and >= 0, got {n}"
        )));
    }
    let n_dt = n * s.grid.dt();
    let mut sol = backward_sweep(
        s,
        p,
        terminal,
        cfg,
        picard_iters,
        Reflection::Penalized { lower, n_dt },
    )?;
    sol.meta.penalty = PenaltyLevel::Lower { n };
    Ok(sol)
}

/// Limit scheme `Y_i = max(a, S_i)`.
pub fn solve_projected(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
) -> Result<SolutionEnsemble> {
    let (terminal, lower) = lower_grid(s, p)?;
    backward_sweep(
        s,
        p,
        &terminal,
        cfg,
        picard_iters,
        Reflection::Projected { lower: &lower },
    )
}

/// `E sup_i ((Y_i - S_i)⁻)²` and its standard error.
pub fn penetration(y: &Array2<f64>, lower: &Array2<f64>) -> (f64, f64) {
    let sups: Vec<f64> = y
        .axis_iter(Axis(0))
        .zip(lower.axis_iter(Axis(0)))
        .map(|(yr, sr)| {
            yr.iter()
                .zip(sr.iter())
                .map(|(y, s)| (s - y).max(0.0).powi(2))
                .fold(0.0, f64::max)
        })
        .collect();
    mean_and_se(&sups)
}

/// `E sup_i ((Y_i - U_i)⁺)²` and its standard error.
pub fn upper_penetration(y: &Array2<f64>, upper: &Array2<f64>) -> (f64, f64) {
    let sups: Vec<f64> = y
        .axis_iter(Axis(0))
        .zip(upper.axis_iter(Axis(0)))
        .map(|(yr, ur)| {
            yr.iter()
                .zip(ur.iter())
                .map(|(y, u)| (y - u).max(0.0).powi(2))
                .fold(0.0, f64::max)
        })
        .collect();
    mean_and_se(&sups)
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, sample_se(v.iter().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLevel {
    pub n: f64,
    pub penetration: f64,
    pub penetration_se: f64,
    pub mean_k_terminal: f64,
    pub y0_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizationTrace {
    pub levels: Vec<TraceLevel>,
    pub converged: bool,
}

/// Runs the penalty ladder until the penetration statistic drops to the
/// schedule's tolerance. Exhausting the ladder is reported through
/// `converged = false`, not as an error.
pub fn solve_reflected(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
    sched: &PenaltySchedule,
) -> Result<(SolutionEnsemble, PenalizationTrace)> {
    solve_reflected_with(s, p, cfg, picard_iters, sched, |_, _| {})
}

/// As [`solve_reflected`], handing every level's ensemble to `visit`.
pub fn solve_reflected_with<F>(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
    sched: &PenaltySchedule,
    mut visit: F,
) -> Result<(SolutionEnsemble, PenalizationTrace)>
where
    F: FnMut(usize, &SolutionEnsemble),
{
    let (terminal, lower) = lower_grid(s, p)?;
    let mut levels = Vec::new();
    let mut last = None;
    let mut converged = false;
    for (k, &n) in sched.levels().iter().enumerate() {
        let sol = penalized_on(s, p, &terminal, &lower, cfg, picard_iters, n)?;
        let (pen, pen_se) = penetration(&sol.y, &lower);
        levels.push(TraceLevel {
            n,
            penetration: pen,
            penetration_se: pen_se,
            mean_k_terminal: sol.mean_k_plus_terminal(),
            y0_mean: sol.y_mean(0),
        });
        visit(k, &sol);
        last = Some(sol);
        if pen <= sched.penetration_tol {
            converged = true;
            break;
        }
    }
    let sol = last.expect("schedule has at least one level");
    Ok((sol, PenalizationTrace { levels, converged }))
}

/// Per-path `Σ_i (Y_i - S_i)·dK_i` over paired entries.
pub fn skorohod_sum(y: &[f64], s: &[f64], dk: &[f64]) -> f64 {
    y.iter().zip(s).zip(dk).map(|((y, s), k)| (y - s) * k).sum()
}

/// `Σ_i (Y_i - S_i)(K_{i+1} - K_i)` per path.
pub fn skorohod_residual(sol: &SolutionEnsemble, lower: &Array2<f64>) -> Vec<f64> {
    increments_residual(&sol.y, lower, &sol.k_plus, 1.0)
}

/// `sign·Σ_i (Y_i - B_i)(K_{i+1} - K_i)` per path for any barrier `B` and
/// its reflecting process.
pub fn increments_residual(
    y: &Array2<f64>,
    barrier: &Array2<f64>,
    k: &Array2<f64>,
    sign: f64,
) -> Vec<f64> {
    let n = y.ncols() - 1;
    (0..y.nrows())
        .into_par_iter()
        .map(|q| {
            (0..n)
                .map(|i| sign * (y[[q, i]] - barrier[[q, i]]) * (k[[q, i + 1]] - k[[q, i]]))
                .sum()
        })
        .collect()
}

/// `K_T - K_{t_i}` per path from the stored reflecting process.
pub fn k_tail(k: &Array2<f64>) -> Array2<f64> {
    let n = k.ncols() - 1;
    let last = k.column(n).to_owned();
    let mut out = k.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        col.zip_mut_with(&last, |c, l| *c = l - *c);
    }
    out
}

/// Discrete `sup_{u ≥ t_i} (ξ + Σ_{j≥u} [f_j dt + g_{j+1}·dB_j - Z_j·dW_j] - S_u)⁻`
/// per path, built from the stored `Y`, `Z` and the increments.
pub fn skorohod_sup_formula(
    sol: &SolutionEnsemble,
    s: &Scenario,
    p: &NoisePaths,
) -> Result<Array2<f64>> {
    let (terminal, lower) = lower_grid(s, p)?;
    let m = p.paths();
    let n = p.steps();
    let d = p.d();
    let l = p.l();
    let dt = s.grid.dt();
    let zero_z = vec![0.0; d];

    let mut out = Array2::<f64>::zeros((m, n + 1));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(q, mut row)| {
            let mut x = terminal[q];
            let mut best = (lower[[q, n]] - x).max(0.0);
            row[n] = best;
            let mut gv = vec![0.0; l];
            for j in (0..n).rev() {
                let wj = p.w_state.slice(s![q, j, ..]);
                let zj = sol.z.slice(s![q, j, ..]);
                let zj = zj.as_slice().unwrap();
                let w1 = p.w_state.slice(s![q, j + 1, ..]);
                let z1_view;
                let z1: &[f64] = if j + 1 < n {
                    z1_view = sol.z.slice(s![q, j + 1, ..]);
                    z1_view.as_slice().unwrap()
                } else {
                    &zero_z
                };
                let fj =
                    s.driver
                        .kind
                        .eval(s.grid.time(j), wj.as_slice().unwrap(), sol.y[[q, j]], zj);
                s.noise.kind.eval_into(
                    s.grid.time(j + 1),
                    w1.as_slice().unwrap(),
                    sol.y[[q, j + 1]],
                    z1,
                    &mut gv,
                );
                let gdb: f64 = gv
                    .iter()
                    .zip(p.db.slice(s![q, j, ..]).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let zdw: f64 = zj
                    .iter()
                    .zip(p.dw.slice(s![q, j, ..]).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                x += fj * dt + gdb - zdw;
                best = best.max((lower[[q, j]] - x).max(0.0));
                row[j] = best;
            }
        });
    Ok(out)
}

/// Deviation of the path-averaged curves:
/// `Σ_i |mean(formula_i) - mean(tail_i)| / Σ_i mean(tail_i)`.
pub fn mean_tail_deviation(formula: &Array2<f64>, tail: &Array2<f64>) -> f64 {
    let means = |a: &Array2<f64>| a.mean_axis(Axis(0)).expect("non-empty ensemble");
    let (mf, mt) = (means(formula), means(tail));
    let num: f64 = mf.iter().zip(mt.iter()).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = mt.sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Pathwise `Σ |formula - tail| / Σ tail` over all grid points.
pub fn relative_deviation(formula: &Array2<f64>, tail: &Array2<f64>) -> f64 {
    let num: f64 = formula
        .iter()
        .zip(tail.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let den: f64 = tail.iter().sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}
