//! Seeded Brownian increment ensembles for the forward noise W and the
//! backward noise B, and evaluation of terminal values and obstacles on them.
//!
//! Every path owns two ChaCha sub-streams of the scenario seed (`2p` for W,
//! `2p + 1` for B), so the ensemble is the same whether paths are generated
//! sequentially or in parallel.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Barrier, Scenario};

#[derive(Debug, Clone)]
pub struct NoisePaths {
    /// `M × N × d` increments of W.
    pub dw: Array3<f64>,
    /// `M × N × l` increments of B.
    pub db: Array3<f64>,
    /// `M × (N+1) × d`, `W_0 = 0`.
    pub w_state: Array3<f64>,
    /// `M × (N+1) × l`, `B_0 = 0`.
    pub b_state: Array3<f64>,
    pub seed: u64,
    pub dt: f64,
}

impl NoisePaths {
    pub fn paths(&self) -> usize {
        self.dw.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.dw.shape()[1]
    }

    pub fn d(&self) -> usize {
        self.dw.shape()[2]
    }

    pub fn l(&self) -> usize {
        self.db.shape()[2]
    }

    /// `B_T - B_{t_i}` for every path, `M × l`.
    pub fn b_tail(&self, i: usize) -> Array2<f64> {
        let n = self.steps();
        &self.b_state.slice(s![.., n, ..]) - &self.b_state.slice(s![.., i, ..])
    }

    /// The mirrored ensemble `(-W, -B)`.
    pub fn negated(&self) -> Self {
        Self {
            dw: -&self.dw,
            db: -&self.db,
            w_state: -&self.w_state,
            b_state: -&self.b_state,
            seed: self.seed,
            dt: self.dt,
        }
    }

    pub(crate) fn check_matches(&self, s: &Scenario) -> Result<()> {
        let checks = [
            ("paths", s.mc_paths, self.paths()),
            ("steps", s.grid.steps(), self.steps()),
            ("d", s.dims.d, self.d()),
            ("l", s.dims.l, self.l()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Draws the two independent increment ensembles for a scenario.
pub fn generate_paths(s: &Scenario) -> Result<NoisePaths> {
    let m = s.mc_paths;
    let n = s.grid.steps();
    let (d, l) = (s.dims.d, s.dims.l);
    let dt = s.grid.dt();
    let sd = dt.sqrt();

    m.checked_mul(n)
        .and_then(|mn| mn.checked_mul(2 * (d + l) + 2))
        .and_then(|cells| cells.checked_mul(std::mem::size_of::<f64>()))
        .filter(|bytes| *bytes < isize::MAX as usize)
        .ok_or_else(|| Error::Resource(format!("ensemble of {m} x {n} paths is too large")))?;

    let mut dw = Array3::<f64>::zeros((m, n, d));
    let mut db = Array3::<f64>::zeros((m, n, l));

    dw.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(db.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(p, (mut w_row, mut b_row))| {
            let mut rng_w = ChaCha8Rng::seed_from_u64(s.seed);
            rng_w.set_stream(2 * p as u64);
            for v in w_row.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng_w);
                *v = sd * x;
            }
            let mut rng_b = ChaCha8Rng::seed_from_u64(s.seed);
            rng_b.set_stream(2 * p as u64 + 1);
            for v in b_row.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng_b);
                *v = sd * x;
            }
        });

    let w_state = cumulate(&dw);
    let b_state = cumulate(&db);
    Ok(NoisePaths {
        dw,
        db,
        w_state,
        b_state,
        seed: s.seed,
        dt,
    })
}

fn cumulate(inc: &Array3<f64>) -> Array3<f64> {
    let (m, n, k) = inc.dim();
    let mut state = Array3::<f64>::zeros((m, n + 1, k));
    state
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(inc.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut st, di)| {
            for i in 0..n {
                for c in 0..k {
                    st[[i + 1, c]] = st[[i, c]] + di[[i, c]];
                }
            }
        });
    state
}

/// Per-path violation counts of the conditions that depend on the sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct GridFlags {
    /// Paths with `S_T > ξ`.
    pub terminal_below_lower: usize,
    /// Paths with `ξ > U_T`.
    pub terminal_above_upper: usize,
    /// Grid points `(p, i)`, `i < N`, with `L ≥ U`.
    pub barrier_crossings: usize,
}

impl GridFlags {
    pub fn any(&self) -> bool {
        self.terminal_below_lower + self.terminal_above_upper + self.barrier_crossings > 0
    }
}

/// Terminal values and obstacles evaluated along the simulated W-states.
#[derive(Debug, Clone)]
pub struct ObstacleGrid {
    /// `ξ` per path.
    pub terminal: Array1<f64>,
    /// `M × (N+1)` lower obstacle, if present.
    pub lower: Option<Array2<f64>>,
    /// `M × (N+1)` upper obstacle, if present.
    pub upper: Option<Array2<f64>>,
    pub flags: GridFlags,
}

pub fn obstacle_on_grid(s: &Scenario, p: &NoisePaths) -> Result<ObstacleGrid> {
    p.check_matches(s)?;
    let m = p.paths();
    let n = p.steps();
    let t_end = s.grid.time(n);
    let zero_z = vec![0.0; s.dims.d];

    let terminal: Array1<f64> = (0..m)
        .into_par_iter()
        .map(|path| {
            let w = p.w_state.slice(s![path, n, ..]);
            s.terminal.eval(t_end, w.as_slice().unwrap(), 0.0, &zero_z)
        })
        .collect::<Vec<_>>()
        .into();

    let eval_barrier = |b: &Barrier| -> Option<Array2<f64>> {
        let kind = b.kind()?;
        let mut out = Array2::<f64>::zeros((m, n + 1));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(path, mut row)| {
                for i in 0..=n {
                    let w = p.w_state.slice(s![path, i, ..]);
                    row[i] = kind.eval(s.grid.time(i), w.as_slice().unwrap(), 0.0, &zero_z);
                }
            });
        Some(out)
    };
    let lower = eval_barrier(&s.obstacles.lower);
    let upper = eval_barrier(&s.obstacles.upper);

    let mut flags = GridFlags::default();
    if let Some(lo) = &lower {
        flags.terminal_below_lower = (0..m).filter(|&q| lo[[q, n]] > terminal[q]).count();
    }
    if let Some(up) = &upper {
        flags.terminal_above_upper = (0..m).filter(|&q| terminal[q] > up[[q, n]]).count();
    }
    if let (Some(lo), Some(up)) = (&lower, &upper) {
        flags.barrier_crossings = lo
            .slice(s![.., ..n])
            .iter()
            .zip(up.slice(s![.., ..n]).iter())
            .filter(|(a, b)| a >= b)
            .count();
    }

    Ok(ObstacleGrid {
        terminal,
        lower,
        upper,
        flags,
    })
}
