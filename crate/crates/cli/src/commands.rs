use std::fs;
use std::path::Path;

use rbdsde::diagnostics::{
    apriori_statistic, band_violation_fraction, check_comparison, check_dk_comparison,
    continuity_statistic, obstacle_violation_fraction, pooled_epsilon, AprioriStatistic, Verdict,
};
use rbdsde::model::PenaltyLevel;
use rbdsde::oracles::dp_stopping_check;
use rbdsde::paths::GridFlags;
use rbdsde::reflect_one::{increments_residual, penetration, upper_penetration};
use rbdsde::{
    generate_paths, load_config, solve, validate_scenario, Error, NoisePaths, PenaltySchedule,
    RegressionConfig, Scenario, SolveOutcome, SolverSettings, Trace,
};
use serde::Serialize;

use crate::output::{float, write_json, Csv};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_UNSUPPORTED: u8 = 4;

/// Relative tolerance of the oracle check.
pub const ORACLE_TOLERANCE: f64 = 0.02;

fn fail(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    EXIT_INVALID
}

/// Loads and validates a config, reporting every violation with its path.
fn prepare(config: &Path) -> Result<(Scenario, SolverSettings), u8> {
    let (s, settings) = load_config(config).map_err(fail)?;
    let report = validate_scenario(&s);
    for note in &report.deferred {
        eprintln!("note: checked on the simulated paths: {note}");
    }
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("error: {v}");
        }
        return Err(EXIT_INVALID);
    }
    Ok((s, settings))
}

fn out_dir(out: &Path) -> Result<(), u8> {
    fs::create_dir_all(out).map_err(|e| fail(format!("cannot create {}: {e}", out.display())))
}

#[derive(Debug, Serialize)]
struct Meta {
    horizon: f64,
    steps: usize,
    paths: usize,
    seed: u64,
    d: usize,
    l: usize,
    penalty: PenaltyLevel,
    regression: RegressionConfig,
    picard_iters: usize,
    basis_size: usize,
    pooled_se: f64,
}

#[derive(Debug, Serialize)]
struct SkorohodCheck {
    /// Mean over paths of `|Σ (Y - S)·ΔK|`.
    residual: f64,
    /// `5·dt·mean K_T`.
    budget: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    epsilon: f64,
    barrier_violation_fraction: Option<f64>,
    lower_penetration: Option<f64>,
    upper_penetration: Option<f64>,
    skorohod_lower: Option<SkorohodCheck>,
    skorohod_upper: Option<SkorohodCheck>,
    k_monotone_from_zero: bool,
    apriori: AprioriStatistic,
    grid_flags: GridFlags,
}

#[derive(Debug, Serialize)]
struct Summary {
    y0_mean: f64,
    y0_se: f64,
    mean_k_plus_terminal: f64,
    mean_k_minus_terminal: f64,
    converged: bool,
    trace: Trace,
    diagnostics: Diagnostics,
    meta: Meta,
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len().max(1) as f64
}

fn skorohod(res_mean: f64, mean_kt: f64, dt: f64) -> SkorohodCheck {
    let budget = 5.0 * dt * mean_kt;
    SkorohodCheck {
        residual: res_mean,
        budget,
        pass: res_mean <= budget,
    }
}

fn diagnostics(s: &Scenario, p: &NoisePaths, out: &SolveOutcome) -> Result<Diagnostics, Error> {
    let e = &out.ensemble;
    let dt = s.grid.dt();
    let epsilon = 3.0 * e.pooled_se();
    let (lo, up) = (out.grid.lower.as_ref(), out.grid.upper.as_ref());
    let barrier_violation_fraction = match (lo, up) {
        (Some(l), Some(u)) => Some(band_violation_fraction(&e.y, l, u, epsilon)),
        (Some(l), None) => Some(obstacle_violation_fraction(&e.y, l, epsilon)),
        (None, Some(u)) => Some(obstacle_violation_fraction(
            &u.mapv(|v| -v),
            &e.y.mapv(|v| -v),
            epsilon,
        )),
        (None, None) => None,
    };
    let monotone = |k: &ndarray::Array2<f64>| {
        k.rows()
            .into_iter()
            .all(|r| r[0] == 0.0 && r.windows(2).into_iter().all(|w| w[1] >= w[0]))
    };
    Ok(Diagnostics {
        epsilon,
        barrier_violation_fraction,
        lower_penetration: lo.map(|l| penetration(&e.y, l).0),
        upper_penetration: up.map(|u| upper_penetration(&e.y, u).0),
        skorohod_lower: lo.map(|l| {
            skorohod(
                mean_abs(&increments_residual(&e.y, l, &e.k_plus, 1.0)),
                e.mean_k_plus_terminal(),
                dt,
            )
        }),
        skorohod_upper: up.map(|u| {
            skorohod(
                mean_abs(&increments_residual(&e.y, u, &e.k_minus, -1.0)),
                e.mean_k_minus_terminal(),
                dt,
            )
        }),
        k_monotone_from_zero: monotone(&e.k_plus) && monotone(&e.k_minus),
        apriori: apriori_statistic(e, s, p)?,
        grid_flags: out.grid.flags.clone(),
    })
}

fn timeseries(s: &Scenario, out: &SolveOutcome) -> Csv {
    let e = &out.ensemble;
    let d = s.dims.d;
    let n = s.grid.steps();
    let mut header: Vec<String> = ["t", "Y_mean", "Y_se"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    header.extend((0..d).map(|k| format!("Z_mean_{k}")));
    header.extend(
        ["K_plus_mean", "K_minus_mean", "penetration"]
            .iter()
            .map(|h| h.to_string()),
    );
    let mut csv = Csv::new(&header);
    let m = e.paths() as f64;
    for i in 0..=n {
        let mut row = vec![float(s.grid.time(i)), float(e.y_mean(i)), float(e.y_se(i))];
        for k in 0..d {
            row.push(if i < n {
                float(e.z.slice(ndarray::s![.., i, k]).sum() / m)
            } else {
                String::new()
            });
        }
        row.push(float(e.k_plus.column(i).sum() / m));
        row.push(float(e.k_minus.column(i).sum() / m));
        let mut pen = 0.0;
        for q in 0..e.paths() {
            let y = e.y[[q, i]];
            if let Some(l) = &out.grid.lower {
                pen += (l[[q, i]] - y).max(0.0).powi(2);
            }
            if let Some(u) = &out.grid.upper {
                pen += (y - u[[q, i]]).max(0.0).powi(2);
            }
        }
        row.push(float(pen / m));
        csv.row(&row);
    }
    csv
}

pub fn run(config: &Path, out: &Path) -> u8 {
    let (s, settings) = match prepare(config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    if let Err(code) = out_dir(out) {
        return code;
    }
    let result = (|| -> Result<(Summary, Csv), Error> {
        let p = generate_paths(&s)?;
        let outcome = solve(&s, &p, &settings)?;
        let e = &outcome.ensemble;
        let summary = Summary {
            y0_mean: e.y_mean(0),
            y0_se: e
                .meta
                .regression_se
                .first()
                .copied()
                .unwrap_or(0.0)
                .max(e.y_se(0)),
            mean_k_plus_terminal: e.mean_k_plus_terminal(),
            mean_k_minus_terminal: e.mean_k_minus_terminal(),
            converged: outcome.converged,
            trace: outcome.trace.clone(),
            diagnostics: diagnostics(&s, &p, &outcome)?,
            meta: Meta {
                horizon: s.grid.horizon(),
                steps: s.grid.steps(),
                paths: s.mc_paths,
                seed: s.seed,
                d: s.dims.d,
                l: s.dims.l,
                penalty: e.meta.penalty.clone(),
                regression: e.meta.regression,
                picard_iters: e.meta.picard_iters,
                basis_size: e.meta.basis_size,
                pooled_se: e.pooled_se(),
            },
        };
        Ok((summary, timeseries(&s, &outcome)))
    })();
    let (summary, csv) = match result {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_json(&out.join("summary.json"), &summary)
        .and_then(|_| csv.write(&out.join("timeseries.csv")))
    {
        return fail(e);
    }
    if summary.converged {
        EXIT_OK
    } else {
        eprintln!("warning: penalty schedule exhausted before the penetration tolerance was met");
        EXIT_NOT_CONVERGED
    }
}

#[derive(Debug, Serialize)]
struct Comparison {
    epsilon: f64,
    y: Verdict,
    dk: Option<Verdict>,
    pass: bool,
}

pub fn compare(config_a: &Path, config_b: &Path, out: &Path) -> u8 {
    let (sa, set_a) = match prepare(config_a) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let (sb, set_b) = match prepare(config_b) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let shape = |s: &Scenario| {
        (
            s.seed,
            s.mc_paths,
            s.grid.steps(),
            s.dims,
            s.grid.horizon().to_bits(),
        )
    };
    if shape(&sa) != shape(&sb) {
        return fail("configs must share seed, paths, steps, horizon and dims");
    }
    if let Err(code) = out_dir(out) {
        return code;
    }
    let result = (|| -> Result<Comparison, Error> {
        let p = generate_paths(&sa)?;
        let a = solve(&sa, &p, &set_a)?;
        let b = solve(&sb, &p, &set_b)?;
        let epsilon = pooled_epsilon(&a.ensemble, &b.ensemble);
        let y = check_comparison(&a.ensemble, &b.ensemble, epsilon)?;
        let same_obstacle = matches!((&a.grid.lower, &b.grid.lower), (Some(x), Some(z)) if x == z);
        let dk = if same_obstacle {
            Some(check_dk_comparison(&a.ensemble, &b.ensemble, epsilon)?)
        } else {
            None
        };
        let pass = y.pass && dk.is_none_or(|v| v.pass);
        Ok(Comparison {
            epsilon,
            y,
            dk,
            pass,
        })
    })();
    let cmp = match result {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_json(&out.join("comparison.json"), &cmp) {
        return fail(e);
    }
    if cmp.pass {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn rescaled(schedule: &PenaltySchedule, factor: f64) -> Result<PenaltySchedule, Error> {
    PenaltySchedule::new(
        schedule.levels().iter().map(|n| n * factor).collect(),
        schedule.penetration_tol,
    )
}

const CONVERGENCE_HEADER: [&str; 13] = [
    "section",
    "level",
    "steps",
    "m",
    "n",
    "lower_penetration",
    "lower_penetration_se",
    "upper_penetration",
    "upper_penetration_se",
    "y0_mean",
    "mean_k_plus_terminal",
    "mean_k_minus_terminal",
    "continuity",
];

fn ladder_rows(csv: &mut Csv, steps: usize, outcome: &SolveOutcome) {
    let e = &outcome.ensemble;
    let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
    match &outcome.trace {
        Trace::None => csv.row(&[
            "penalty".into(),
            "0".into(),
            steps.to_string(),
            String::new(),
            String::new(),
            float(0.0),
            float(0.0),
            float(0.0),
            float(0.0),
            float(e.y_mean(0)),
            float(e.mean_k_plus_terminal()),
            float(e.mean_k_minus_terminal()),
            String::new(),
        ]),
        Trace::Lower(t) => {
            for (k, l) in t.levels.iter().enumerate() {
                csv.row(&[
                    "penalty".into(),
                    k.to_string(),
                    steps.to_string(),
                    String::new(),
                    float(l.n),
                    float(l.penetration),
                    float(l.penetration_se),
                    opt(None),
                    opt(None),
                    float(l.y0_mean),
                    float(l.mean_k_terminal),
                    float(0.0),
                    String::new(),
                ]);
            }
        }
        Trace::Double(t) => {
            for (k, l) in t.levels.iter().enumerate() {
                csv.row(&[
                    "penalty".into(),
                    k.to_string(),
                    steps.to_string(),
                    float(l.m),
                    float(l.n),
                    float(l.lower_penetration),
                    float(l.lower_penetration_se),
                    float(l.upper_penetration),
                    float(l.upper_penetration_se),
                    float(l.y0_mean),
                    float(l.mean_k_plus_terminal),
                    float(l.mean_k_minus_terminal),
                    String::new(),
                ]);
            }
        }
    }
}

pub fn convergence(config: &Path, out: &Path, grid: bool) -> u8 {
    let (s, settings) = match prepare(config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    if let Err(code) = out_dir(out) {
        return code;
    }
    let result = (|| -> Result<(Csv, bool), Error> {
        let mut csv = Csv::new(&CONVERGENCE_HEADER.map(String::from));
        let p = generate_paths(&s)?;
        let outcome = solve(&s, &p, &settings)?;
        ladder_rows(&mut csv, s.grid.steps(), &outcome);
        if grid {
            let n = s.grid.steps();
            let mut sizes: Vec<usize> = [n / 4, n / 2, n].into_iter().filter(|k| *k >= 1).collect();
            sizes.dedup();
            for k in sizes {
                let sk = s.clone().with_steps(k)?;
                let mut set = settings.clone();
                set.schedule = rescaled(&settings.schedule, k as f64 / n as f64)?;
                let pk = generate_paths(&sk)?;
                let o = solve(&sk, &pk, &set)?;
                let e = &o.ensemble;
                let (lp, lp_se) = o
                    .grid
                    .lower
                    .as_ref()
                    .map_or((0.0, 0.0), |l| penetration(&e.y, l));
                let (up, up_se) = o
                    .grid
                    .upper
                    .as_ref()
                    .map_or((0.0, 0.0), |u| upper_penetration(&e.y, u));
                csv.row(&[
                    "grid".into(),
                    String::new(),
                    k.to_string(),
                    String::new(),
                    String::new(),
                    float(lp),
                    float(lp_se),
                    float(up),
                    float(up_se),
                    float(e.y_mean(0)),
                    float(e.mean_k_plus_terminal()),
                    float(e.mean_k_minus_terminal()),
                    float(continuity_statistic(e)),
                ]);
            }
        }
        Ok((csv, outcome.converged))
    })();
    let (csv, converged) = match result {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    if let Err(e) = csv.write(&out.join("convergence.csv")) {
        return fail(e);
    }
    if converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

#[derive(Debug, Serialize)]
struct OracleReport {
    y0_mean: f64,
    lattice_value: f64,
    lattice_refined: f64,
    lattice_relative_move: f64,
    lattice_reliable: bool,
    relative_gap: f64,
    tolerance: f64,
    pass: bool,
}

pub fn oracle_check(config: &Path, out: &Path, lattice_steps: usize) -> u8 {
    let (s, settings) = match prepare(config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let oracle = match dp_stopping_check(&s, lattice_steps) {
        Ok(o) => o,
        Err(Error::Unsupported(why)) => {
            eprintln!("oracle unsupported: {why}");
            return EXIT_UNSUPPORTED;
        }
        Err(e) => return fail(e),
    };
    if let Err(code) = out_dir(out) {
        return code;
    }
    let result = (|| -> Result<OracleReport, Error> {
        let p = generate_paths(&s)?;
        let y0 = solve(&s, &p, &settings)?.ensemble.y_mean(0);
        let gap = if oracle.value == 0.0 {
            (y0 - oracle.value).abs()
        } else {
            ((y0 - oracle.value) / oracle.value).abs()
        };
        Ok(OracleReport {
            y0_mean: y0,
            lattice_value: oracle.value,
            lattice_refined: oracle.refined,
            lattice_relative_move: oracle.relative_move,
            lattice_reliable: oracle.reliable,
            relative_gap: gap,
            tolerance: ORACLE_TOLERANCE,
            pass: oracle.reliable && gap <= ORACLE_TOLERANCE,
        })
    })();
    let report = match result {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_json(&out.join("oracle.json"), &report) {
        return fail(e);
    }
    if report.pass {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}
