//! Backward time stepping for the (possibly reflected) doubly stochastic
//! equation. The unreflected solver and both penalization schemes share one
//! sweep and differ only in how the per-step value is reflected.
//!
//! At step `i` the regression target is `X = Y_{i+1} + g_{i+1}·dB_i`, with
//! the backward integral sampled at the right endpoint; `Z_i` is the
//! regression of `(X - Ê[X])·dW_i / dt` and the driver enters explicitly at `t_{i+1}`
//! before a few Picard sweeps at `t_i`.
//!
//! When a barrier is active the step basis also carries the barrier value
//! at `t_i`, its one-step Gaussian smoothing and its smoothing to maturity.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::condexp::{build_basis, Projector, RegressionConfig};
use crate::error::{Error, Result};
use crate::model::{CoefficientKind, PenaltyLevel, Scenario, SolutionEnsemble, SolutionMeta};
use crate::paths::{obstacle_on_grid, NoisePaths};
use crate::reflect_two::reflect_between;

pub const DEFAULT_PICARD_ITERS: usize = 2;

/// How the unreflected value `a` is turned into `(Y_i, dK⁺, dK⁻)`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Reflection<'a> {
    Free,
    Penalized {
        lower: &'a Array2<f64>,
        n_dt: f64,
    },
    Projected {
        lower: &'a Array2<f64>,
    },
    Double {
        lower: Option<&'a Array2<f64>>,
        upper: Option<&'a Array2<f64>>,
        m_dt: f64,
        n_dt: f64,
    },
}

impl Reflection<'_> {
    #[inline]
    fn apply(&self, a: f64, q: usize, i: usize) -> (f64, f64, f64) {
        match *self {
            Reflection::Free => (a, 0.0, 0.0),
            Reflection::Penalized { lower, n_dt } => {
                let (y, dk) = crate::reflect_one::implicit_penalty_step(a, lower[[q, i]], n_dt);
                (y, dk, 0.0)
            }
            Reflection::Projected { lower } => {
                let s = lower[[q, i]];
                if a >= s {
                    (a, 0.0, 0.0)
                } else {
                    (s, s - a, 0.0)
                }
            }
            Reflection::Double {
                lower,
                upper,
                m_dt,
                n_dt,
            } => reflect_between(
                a,
                lower.map(|l| l[[q, i]]),
                upper.map(|u| u[[q, i]]),
                m_dt,
                n_dt,
            ),
        }
    }

    fn barriers(&self) -> [Option<(&'static str, &Array2<f64>)>; 2] {
        match *self {
            Reflection::Free => [None, None],
            Reflection::Penalized { lower, .. } | Reflection::Projected { lower } => {
                [Some(("lower", lower)), None]
            }
            Reflection::Double { lower, upper, .. } => {
                [lower.map(|l| ("lower", l)), upper.map(|u| ("upper", u))]
            }
        }
    }

    fn level(&self) -> PenaltyLevel {
        match *self {
            Reflection::Free => PenaltyLevel::None,
            Reflection::Penalized { n_dt, .. } => PenaltyLevel::Lower { n: n_dt },
            Reflection::Projected { .. } => PenaltyLevel::Projected,
            Reflection::Double { m_dt, n_dt, .. } => PenaltyLevel::Double { m: m_dt, n: n_dt },
        }
    }
}

/// Tensor Gauss–Hermite rule for the standard normal in `d` dimensions.
struct GaussHermite {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl GaussHermite {
    const POINTS_1D: usize = 16;
    const MAX_POINTS: usize = 512;

    /// Golub–Welsch on the probabilists' Hermite recurrence.
    fn one_dim(k: usize) -> (Vec<f64>, Vec<f64>) {
        let jacobi = DMatrix::from_fn(k, k, |r, c| {
            if r.abs_diff(c) == 1 {
                (r.max(c) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..k)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    }

    fn tensor(d: usize) -> Option<Self> {
        let k = (1..=Self::POINTS_1D).rev().find(|k| {
            k.checked_pow(d as u32)
                .is_some_and(|n| n <= Self::MAX_POINTS)
        })?;
        if k < 4 {
            return None;
        }
        let (x, w) = Self::one_dim(k);
        let mut nodes = vec![Vec::new()];
        let mut weights = vec![1.0];
        for _ in 0..d {
            let mut next_nodes = Vec::with_capacity(nodes.len() * k);
            let mut next_weights = Vec::with_capacity(nodes.len() * k);
            for (node, weight) in nodes.iter().zip(&weights) {
                for j in 0..k {
                    let mut extended = node.clone();
                    extended.push(x[j]);
                    next_nodes.push(extended);
                    next_weights.push(weight * w[j]);
                }
            }
            nodes = next_nodes;
            weights = next_weights;
        }
        Some(Self { nodes, weights })
    }

    /// `E[h(t, w + √dt·ξ)]` per row of `w_state`.
    fn smooth(
        &self,
        h: &CoefficientKind,
        t: f64,
        w_state: ArrayView2<f64>,
        dt: f64,
    ) -> Array1<f64> {
        let d = w_state.ncols();
        let scale = dt.sqrt();
        let zero = vec![0.0; d];
        let rows: Vec<f64> = (0..w_state.nrows())
            .into_par_iter()
            .map(|q| {
                let w = w_state.row(q);
                let mut point = vec![0.0; d];
                self.nodes
                    .iter()
                    .zip(&self.weights)
                    .map(|(node, weight)| {
                        for k in 0..d {
                            point[k] = w[k] + scale * node[k];
                        }
                        weight * h.eval(t, &point, 0.0, &zero)
                    })
                    .sum()
            })
            .collect();
        Array1::from(rows)
    }
}

/// Basis configuration at step `i`. The W-state at `t_0` is deterministic,
/// so only the constant W-monomial is kept there. Backward-noise features
/// are dropped when the noise coefficient vanishes identically.
pub(crate) fn step_config(s: &Scenario, cfg: &RegressionConfig, i: usize) -> RegressionConfig {
    RegressionConfig {
        degree_w: if i == 0 { 0 } else { cfg.degree_w },
        include_db: cfg.include_db && !s.noise.kind.is_zero(),
        ridge: cfg.ridge,
    }
}

pub(crate) fn backward_sweep(
    s: &Scenario,
    p: &NoisePaths,
    terminal: &Array1<f64>,
    cfg: &RegressionConfig,
    picard_iters: usize,
    reflection: Reflection<'_>,
) -> Result<SolutionEnsemble> {
    p.check_matches(s)?;
    let m = p.paths();
    let n = p.steps();
    let d = p.d();
    let l = p.l();
    let dt = s.grid.dt();
    let f = &s.driver.kind;
    let g = &s.noise.kind;
    let zero_z = vec![0.0; d];

    let smoothing = GaussHermite::tensor(d);

    let mut y = Array2::<f64>::zeros((m, n + 1));
    let mut z = Array3::<f64>::zeros((m, n, d));
    let mut dkp = Array2::<f64>::zeros((m, n));
    let mut dkm = Array2::<f64>::zeros((m, n));
    y.column_mut(n).assign(terminal);

    let mut regression_se = vec![0.0; n];
    let mut basis_size = 0;

    for i in (0..n).rev() {
        let t0 = s.grid.time(i);
        let t1 = s.grid.time(i + 1);

        // X = Y_{i+1} + g_{i+1}·dB_i and F_{i+1}·dt, per path.
        let (x, fdt): (Vec<f64>, Vec<f64>) = (0..m)
            .into_par_iter()
            .map(|q| {
                let w1 = p.w_state.slice(s![q, i + 1, ..]);
                let w1 = w1.as_slice().unwrap();
                let y1 = y[[q, i + 1]];
                let z1_view;
                let z1: &[f64] = if i + 1 < n {
                    z1_view = z.slice(s![q, i + 1, ..]);
                    z1_view.as_slice().unwrap()
                } else {
                    &zero_z
                };
                let mut gv = vec![0.0; l];
                g.eval_into(t1, w1, y1, z1, &mut gv);
                let db = p.db.slice(s![q, i, ..]);
                let noise: f64 = gv.iter().zip(db.iter()).map(|(a, b)| a * b).sum();
                (y1 + noise, f.eval(t1, w1, y1, z1) * dt)
            })
            .unzip();

        let step_cfg = step_config(s, cfg, i);
        let tail = (step_cfg.include_db && i + 1 < n).then(|| p.b_tail(i));
        let mut basis = build_basis(
            &step_cfg,
            p.w_state.slice(s![.., i, ..]),
            p.db.slice(s![.., i, ..]),
            tail.as_ref().map(|t| t.view()),
        )?;
        if i > 0 {
            for (name, barrier) in reflection.barriers().into_iter().flatten() {
                basis.push_feature(name, barrier.column(i))?;
                let kind = if name == "lower" {
                    s.obstacles.lower.kind()
                } else {
                    s.obstacles.upper.kind()
                };
                if let (Some(kind), Some(rule)) = (kind, smoothing.as_ref()) {
                    let smoothed = rule.smooth(kind, t1, p.w_state.slice(s![.., i, ..]), dt);
                    basis.push_feature(format!("E[{name}+]"), smoothed.view())?;
                    let horizon = s.grid.horizon();
                    if i + 1 < n {
                        let terminal = rule.smooth(
                            kind,
                            horizon,
                            p.w_state.slice(s![.., i, ..]),
                            horizon - t0,
                        );
                        basis.push_feature(format!("E[{name}_T]"), terminal.view())?;
                    }
                }
            }
        }
        basis_size = basis_size.max(basis.len());
        let proj = Projector::new(&basis, cfg.ridge)?;

        let (base, _) = proj.fit(&x)?;
        let (drift, _) = proj.fit(&fdt)?;
        let first: Vec<f64> = base.iter().zip(&drift).map(|(a, b)| a + b).collect();
        let y0_target: Vec<f64> = x.iter().zip(&fdt).map(|(a, b)| a + b).collect();
        let resid = first
            .iter()
            .zip(&y0_target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let dof = m.saturating_sub(basis.len()).max(1) as f64;
        regression_se[i] = resid / (m as f64 * dof).sqrt();

        for k in 0..d {
            let target: Vec<f64> = (0..m)
                .map(|q| (x[q] - base[q]) * p.dw[[q, i, k]] / dt)
                .collect();
            let (zk, _) = proj.fit(&target)?;
            z.slice_mut(s![.., i, k]).assign(&ArrayView1::from(&zk[..]));
        }

        // Picard refinement of the driver at t_i, then reflection.
        let z_ref = &z;
        let rows: Vec<(f64, f64, f64)> = (0..m)
            .into_par_iter()
            .map(|q| {
                let w0 = p.w_state.slice(s![q, i, ..]);
                let w0 = w0.as_slice().unwrap();
                let zi = z_ref.slice(s![q, i, ..]);
                let zi = zi.as_slice().unwrap();
                let mut a = first[q];
                for _ in 0..picard_iters {
                    a = base[q] + f.eval(t0, w0, a, zi) * dt;
                }
                reflection.apply(a, q, i)
            })
            .collect();

        for (q, (yi, kp, km)) in rows.into_iter().enumerate() {
            if !yi.is_finite() || !kp.is_finite() || !km.is_finite() {
                return Err(Error::NonFinite { step: i });
            }
            y[[q, i]] = yi;
            dkp[[q, i]] = kp;
            dkm[[q, i]] = km;
        }
        if z.slice(s![.., i, ..]).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: i });
        }
    }

    let k_plus = accumulate(&dkp);
    let k_minus = accumulate(&dkm);
    Ok(SolutionEnsemble {
        y,
        z,
        k_plus,
        k_minus,
        meta: SolutionMeta {
            penalty: reflection.level(),
            regression: *cfg,
            picard_iters,
            seed: p.seed,
            basis_size,
            regression_se,
        },
    })
}

/// Running sums `K_0 = 0`, `K_{i+1} = K_i + dK_i`.
fn accumulate(increments: &Array2<f64>) -> Array2<f64> {
    let (m, n) = increments.dim();
    let mut k = Array2::<f64>::zeros((m, n + 1));
    for (mut row, inc) in k.axis_iter_mut(Axis(0)).zip(increments.axis_iter(Axis(0))) {
        for i in 0..n {
            row[i + 1] = row[i] + inc[i];
        }
    }
    k
}

/// Solves the unreflected equation; obstacles on the scenario are ignored.
pub fn solve_bdsde(
    s: &Scenario,
    p: &NoisePaths,
    cfg: &RegressionConfig,
    picard_iters: usize,
) -> Result<SolutionEnsemble> {
    let grid = obstacle_on_grid(s, p)?;
    backward_sweep(s, p, &grid.terminal, cfg, picard_iters, Reflection::Free)
}
