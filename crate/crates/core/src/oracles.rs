//! Independent reference values: a binomial-lattice optimal stopping value
//! for problems without backward noise, Monte Carlo values of explicit
//! stopping rules, and closed forms for the shipped catalog.

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Barrier, CoefficientKind, Scenario, SolutionEnsemble};
use crate::paths::{obstacle_on_grid, NoisePaths};
use crate::reflect_one::mean_and_se;

pub const DEFAULT_LATTICE_STEPS: usize = 2000;
/// Largest relative move between `L` and `2L` lattice steps for the value
/// to count as reliable.
pub const LATTICE_RELIABILITY: f64 = 0.002;

fn check_lattice_support(s: &Scenario) -> Result<()> {
    if !s.noise.kind.is_zero() {
        return Err(Error::Unsupported("lattice oracle requires g = 0".into()));
    }
    if s.dims.d != 1 {
        return Err(Error::Unsupported("lattice oracle requires d = 1".into()));
    }
    match s.driver.kind.yz_sensitivity() {
        Some((_, 0.0)) => Ok(()),
        _ => Err(Error::Unsupported(
            "lattice oracle requires a driver independent of z and at most linear in y".into(),
        )),
    }
}

/// Value at `(0, W_0 = 0)` of the stopping problem by backward induction on
/// a recombining binomial lattice for W:
/// `V_k(w) = max(S(t_k, w), E[V_{k+1}] + f(t_k, w, ·)·h)`, clamped below
/// an upper barrier when one is present.
pub fn dp_stopping_value(s: &Scenario, lattice_steps: usize) -> Result<f64> {
    check_lattice_support(s)?;
    if lattice_steps == 0 {
        return Err(Error::Configuration(
            "lattice needs at least one step".into(),
        ));
    }
    let horizon = s.grid.horizon();
    let h = horizon / lattice_steps as f64;
    let dx = h.sqrt();
    let node = |k: usize, j: usize| [(2.0 * j as f64 - k as f64) * dx];
    let nz = [0.0];

    let mut values: Vec<f64> = (0..=lattice_steps)
        .map(|j| s.terminal.eval(horizon, &node(lattice_steps, j), 0.0, &nz))
        .collect();

    for k in (0..lattice_steps).rev() {
        let t = k as f64 * h;
        for j in 0..=k {
            let w = node(k, j);
            let cont = 0.5 * (values[j] + values[j + 1]);
            let mut v = cont + s.driver.kind.eval(t, &w, cont, &nz) * h;
            if let Barrier::Present(up) = &s.obstacles.upper {
                v = v.min(up.eval(t, &w, 0.0, &nz));
            }
            if let Barrier::Present(lo) = &s.obstacles.lower {
                v = v.max(lo.eval(t, &w, 0.0, &nz));
            }
            values[j] = v;
        }
        values.pop();
    }
    Ok(values[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeOracle {
    pub value: f64,
    pub refined: f64,
    pub relative_move: f64,
    pub reliable: bool,
}

/// Lattice value at `lattice_steps` and `2·lattice_steps` with the
/// self-consistency verdict.
pub fn dp_stopping_check(s: &Scenario, lattice_steps: usize) -> Result<LatticeOracle> {
    let value = dp_stopping_value(s, lattice_steps)?;
    let refined = dp_stopping_value(s, 2 * lattice_steps)?;
    let relative_move = if refined == 0.0 {
        (value - refined).abs()
    } else {
        ((value - refined) / refined).abs()
    };
    Ok(LatticeOracle {
        value,
        refined,
        relative_move,
        reliable: relative_move < LATTICE_RELIABILITY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StoppingRule {
    /// First grid index with `Y ≤ S + ε`, or `N`.
    Hitting(f64),
    /// Fixed grid index.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleValue {
    pub mean: f64,
    pub se: f64,
}

/// Monte Carlo value of stopping by `rule`:
/// `Σ_{i<ν} (f_i dt + g_{i+1}·dB_i) + S_ν 1{ν<N} + ξ 1{ν=N}`.
pub fn stopping_rule_value(
    sol: &SolutionEnsemble,
    s: &Scenario,
    p: &NoisePaths,
    rule: StoppingRule,
) -> Result<RuleValue> {
    let grid = obstacle_on_grid(s, p)?;
    let m = p.paths();
    let n = p.steps();
    let d = p.d();
    let l = p.l();
    let dt = s.grid.dt();
    let lower = grid.lower.as_ref();
    if lower.is_none() && rule != StoppingRule::Fixed(n) {
        return Err(Error::Configuration(
            "stopping before T needs a lower obstacle".into(),
        ));
    }
    if let StoppingRule::Fixed(i) = rule {
        if i > n {
            return Err(Error::Configuration(format!(
                "stopping index {i} beyond N = {n}"
            )));
        }
    }
    let zero_z = vec![0.0; d];

    let payoffs: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|q| {
            let nu = match rule {
                StoppingRule::Fixed(i) => i,
                StoppingRule::Hitting(eps) => {
                    let lo = lower.expect("checked above");
                    (0..n)
                        .find(|&i| sol.y[[q, i]] <= lo[[q, i]] + eps)
                        .unwrap_or(n)
                }
            };
            let mut acc = 0.0;
            let mut gv = vec![0.0; l];
            for i in 0..nu {
                let wi = p.w_state.slice(s![q, i, ..]);
                let zi = sol.z.slice(s![q, i, ..]);
                acc += s.driver.kind.eval(
                    s.grid.time(i),
                    wi.as_slice().unwrap(),
                    sol.y[[q, i]],
                    zi.as_slice().unwrap(),
                ) * dt;
                let w1 = p.w_state.slice(s![q, i + 1, ..]);
                let z1_view;
                let z1: &[f64] = if i + 1 < n {
                    z1_view = sol.z.slice(s![q, i + 1, ..]);
                    z1_view.as_slice().unwrap()
                } else {
                    &zero_z
                };
                s.noise.kind.eval_into(
                    s.grid.time(i + 1),
                    w1.as_slice().unwrap(),
                    sol.y[[q, i + 1]],
                    z1,
                    &mut gv,
                );
                acc += gv
                    .iter()
                    .zip(p.db.slice(s![q, i, ..]).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            if nu < n {
                acc + lower.expect("checked above")[[q, nu]]
            } else {
                acc + grid.terminal[q]
            }
        })
        .collect();
    let (mean, se) = mean_and_se(&payoffs);
    Ok(RuleValue { mean, se })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub y0_mean: f64,
    /// Variance of `Y_0` across the backward noise, when random.
    pub y0_variance: f64,
}

/// `E[Y_0]` for `ξ = 1`, `f = a·y`: `e^{aT}`.
pub fn linear_drift_reference(a: f64, horizon: f64) -> ClosedForm {
    ClosedForm {
        y0_mean: (a * horizon).exp(),
        y0_variance: 0.0,
    }
}

/// `Y_0 = β(B_T - B_0)` for `ξ = 0`, `f = 0`, `g = β`.
pub fn constant_g_reference(beta: f64, horizon: f64) -> ClosedForm {
    ClosedForm {
        y0_mean: 0.0,
        y0_variance: beta * beta * horizon,
    }
}

/// Analytic targets for the shipped catalog cases (`T = 1`).
pub fn closed_form_reference(case_id: &str) -> Result<ClosedForm> {
    match case_id {
        "constant" => Ok(ClosedForm {
            y0_mean: 5.0,
            y0_variance: 0.0,
        }),
        "linear_drift" => Ok(linear_drift_reference(0.5, 1.0)),
        "constant_g" => Ok(constant_g_reference(0.3, 1.0)),
        // (-W)⁺ is a submartingale, so stopping early never helps:
        // Y_0 = E[(-W_1)⁺] = 1/√(2π).
        "stopping_put" => Ok(ClosedForm {
            y0_mean: (2.0 * std::f64::consts::PI).sqrt().recip(),
            y0_variance: 0.0,
        }),
        other => Err(Error::UnknownCase(other.to_string())),
    }
}

/// Whether the lattice oracle accepts the driver kind at all.
pub fn lattice_supports(kind: &CoefficientKind) -> bool {
    matches!(kind.yz_sensitivity(), Some((_, az2)) if az2 == 0.0)
}
