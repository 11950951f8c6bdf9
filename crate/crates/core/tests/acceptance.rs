//! End-to-end acceptance suite. Criteria 1 to 9 run once in a four-thread
//! pool and once in a single-thread pool; criterion 10 compares the two
//! passes bit for bit. Runs without the libtest harness so that the
//! per-criterion lines always reach the output.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rbdsde::diagnostics::{
    band_violation_fraction, check_comparison, check_dk_comparison, obstacle_violation_fraction,
    pooled_epsilon, stability_statistic,
};
use rbdsde::oracles::{dp_stopping_check, DEFAULT_LATTICE_STEPS};
use rbdsde::reflect_one::{
    k_tail, mean_tail_deviation, relative_deviation, skorohod_residual, skorohod_sup_formula,
    solve_reflected_with,
};
use rbdsde::reflect_two::double_skorohod_residuals;
use rbdsde::{
    catalog, generate_paths, obstacle_on_grid, solve, solve_double, solve_penalized,
    solve_projected, solve_reflected, CoefficientKind, PenaltySchedule, RegressionConfig, Scenario,
    SolutionEnsemble, SolverSettings,
};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    fingerprint: u64,
}

#[derive(Default)]
struct Print(DefaultHasher);

impl Print {
    fn arr<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            v.to_bits().hash(&mut self.0);
        }
    }
    fn ens(&mut self, e: &SolutionEnsemble) {
        self.arr(e.y.iter());
        self.arr(e.z.iter());
        self.arr(e.k_plus.iter());
        self.arr(e.k_minus.iter());
    }
    fn val(&mut self, v: f64) {
        v.to_bits().hash(&mut self.0);
    }
    fn finish(self) -> u64 {
        self.0.finish()
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let s = catalog::constant(50, 10_000, 101).unwrap();
    let p = generate_paths(&s).unwrap();
    let out = solve(&s, &p, &SolverSettings::defaults_for(&s))
        .unwrap()
        .ensemble;
    let elapsed = start.elapsed();
    let err = max_abs((0..=50).map(|i| out.y_mean(i) - 5.0));
    let k_zero = out
        .k_plus
        .iter()
        .chain(out.k_minus.iter())
        .all(|k| *k == 0.0);
    let mut fp = Print::default();
    fp.ens(&out);
    Outcome {
        id: 1,
        name: "constant exactness",
        pass: err <= 1e-10 && k_zero && elapsed < Duration::from_secs(5),
        detail: format!("max|Y_mean - 5| = {err:.3e}, K = 0: {k_zero}"),
        elapsed,
        fingerprint: fp.finish(),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let s = catalog::linear_drift(64, 20_000, 102).unwrap();
    let p = generate_paths(&s).unwrap();
    let out = solve(&s, &p, &SolverSettings::defaults_for(&s))
        .unwrap()
        .ensemble;
    let elapsed = start.elapsed();
    let y0 = out.y_mean(0);
    let mut fp = Print::default();
    fp.ens(&out);
    Outcome {
        id: 2,
        name: "linear drift",
        pass: (y0 - 1.64872).abs() <= 0.0165 && elapsed < Duration::from_secs(10),
        detail: format!("Y0 = {y0:.6} vs 1.64872"),
        elapsed,
        fingerprint: fp.finish(),
    }
}

/// `(corr(Y_0, 0.3 (B_T - B_0)), var(Y_0))`.
fn backward_fidelity(s: &Scenario, include_db: bool, fp: &mut Print) -> (f64, f64) {
    let p = generate_paths(s).unwrap();
    let mut set = SolverSettings::defaults_for(s);
    set.regression.include_db = include_db;
    let out = solve(s, &p, &set).unwrap().ensemble;
    fp.ens(&out);
    let n = s.grid.steps();
    let y0: Vec<f64> = out.y.column(0).to_vec();
    let target: Vec<f64> = (0..s.mc_paths)
        .map(|q| 0.3 * (p.b_state[[q, n, 0]] - p.b_state[[q, 0, 0]]))
        .collect();
    let (my, mt) = (mean(&y0), mean(&target));
    let cov: f64 = y0
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - my) * (b - mt))
        .sum();
    let vy: f64 = y0.iter().map(|a| (a - my).powi(2)).sum();
    let vt: f64 = target.iter().map(|b| (b - mt).powi(2)).sum();
    let corr = if vy == 0.0 {
        0.0
    } else {
        cov / (vy * vt).sqrt()
    };
    (corr, vy / (y0.len() - 1) as f64)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let s = catalog::constant_g(50, 10_000, 103).unwrap();
    let mut fp = Print::default();
    let (corr, var) = backward_fidelity(&s, true, &mut fp);
    let (corr_off, var_off) = backward_fidelity(&s, false, &mut fp);
    let pass_on = corr >= 0.99 && (var - 0.09).abs() <= 0.009;
    let pass_off = corr_off >= 0.99 && (var_off - 0.09).abs() <= 0.009;
    Outcome {
        id: 3,
        name: "backward-integral fidelity",
        pass: pass_on && !pass_off,
        detail: format!(
            "with dB: corr {corr:.5}, var {var:.5}; without dB: corr {corr_off:.5}, var {var_off:.5} (control fails: {})",
            !pass_off
        ),
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let s = catalog::stopping_put(50, 100_000, 104).unwrap();
    let p = generate_paths(&s).unwrap();
    let cfg = RegressionConfig::default();
    let projected = solve_projected(&s, &p, &cfg, 2).unwrap();
    let penalized = solve_penalized(&s, &p, &cfg, 2, 1e6 / s.grid.dt()).unwrap();
    let elapsed = start.elapsed();
    let oracle = dp_stopping_check(&s, DEFAULT_LATTICE_STEPS).unwrap();
    let gap = |v: f64| ((v - oracle.value) / oracle.value).abs();
    let (g_proj, g_pen) = (gap(projected.y_mean(0)), gap(penalized.y_mean(0)));
    let pathwise = max_abs(
        projected
            .y
            .iter()
            .zip(penalized.y.iter())
            .map(|(a, b)| a - b),
    );
    let mut fp = Print::default();
    fp.ens(&projected);
    fp.ens(&penalized);
    Outcome {
        id: 4,
        name: "optimal-stopping oracle",
        pass: oracle.reliable && g_proj <= 0.02 && g_pen <= 0.02 && pathwise <= 1e-5 && elapsed < Duration::from_secs(60),
        detail: format!(
            "lattice {:.5}, projected {:.5} ({:.2}%), penalized {:.5} ({:.2}%), pathwise gap {pathwise:.2e}",
            oracle.value,
            projected.y_mean(0),
            100.0 * g_proj,
            penalized.y_mean(0),
            100.0 * g_pen
        ),
        elapsed,
        fingerprint: fp.finish(),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let s = catalog::american_put(50, 20_000, 105).unwrap();
    let p = generate_paths(&s).unwrap();
    let sched = PenaltySchedule::default_for(&s.grid);
    let mut ladder: Vec<SolutionEnsemble> = Vec::new();
    let (_, trace) =
        solve_reflected_with(&s, &p, &RegressionConfig::default(), 2, &sched, |_, e| {
            ladder.push(e.clone())
        })
        .unwrap();
    let decreasing = trace
        .levels
        .windows(2)
        .all(|w| w[1].penetration < w[0].penetration);
    let last = trace.levels.last().unwrap().penetration;
    let mut worst_share: f64 = 1.0;
    for w in ladder.windows(2) {
        let eps = pooled_epsilon(&w[0], &w[1]);
        let total = w[0].y.len() as f64;
        let ok = w[1]
            .y
            .iter()
            .zip(w[0].y.iter())
            .filter(|(hi, lo)| **hi >= **lo - eps)
            .count() as f64;
        worst_share = worst_share.min(ok / total);
    }
    let mut fp = Print::default();
    ladder.iter().for_each(|e| fp.ens(e));
    trace.levels.iter().for_each(|l| fp.val(l.penetration));
    let pens: Vec<String> = trace
        .levels
        .iter()
        .map(|l| format!("{:.2e}", l.penetration))
        .collect();
    Outcome {
        id: 5,
        name: "penalization structure",
        pass: trace.levels.len() >= 2 && decreasing && last <= 1e-4 && worst_share >= 0.99,
        detail: format!(
            "P(n) = [{}], monotone share {worst_share:.4}",
            pens.join(", ")
        ),
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

/// `(mean |Σ(Y - S)ΔK|, 5·dt·mean K_T)`.
fn skorohod_budget(residuals: &[f64], mean_kt: f64, dt: f64) -> (f64, f64) {
    (
        residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64,
        5.0 * dt * mean_kt,
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let s = catalog::american_put(200, 10_000, 106).unwrap();
    let p = generate_paths(&s).unwrap();
    let set = SolverSettings::defaults_for(&s);
    let out = solve(&s, &p, &set).unwrap();
    let sol = &out.ensemble;
    let lower = out.grid.lower.as_ref().unwrap();
    let (resid, budget) = skorohod_budget(
        &skorohod_residual(sol, lower),
        sol.mean_k_plus_terminal(),
        s.grid.dt(),
    );
    let k_ok = sol
        .k_plus
        .axis_iter(Axis(0))
        .all(|r| r[0] == 0.0 && r.windows(2).into_iter().all(|w| w[1] >= w[0]));
    let formula = skorohod_sup_formula(sol, &s, &p).unwrap();
    let tail = k_tail(&sol.k_plus);
    let dev = mean_tail_deviation(&formula, &tail);
    let pathwise = relative_deviation(&formula, &tail);
    let mut fp = Print::default();
    fp.ens(sol);
    fp.arr(formula.iter());
    Outcome {
        id: 6,
        name: "Skorohod condition",
        pass: out.converged && resid <= budget && k_ok && dev <= 0.10,
        detail: format!(
            "converged {}, residual {resid:.3e} <= {budget:.3e}, K monotone from 0: {k_ok}, sup-formula deviation {:.2}% (pathwise L1 {:.2}%)",
            out.converged,
            100.0 * dev,
            100.0 * pathwise
        ),
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (n, m, seed) = (25, 10_000, 107);
    let put = |k: f64| CoefficientKind::PayoffPut { strike: k };
    let base = catalog::american_put(n, m, seed).unwrap();
    let xi_hi = base.clone().with_terminal(put(1.0).shifted(0.1));
    let f_hi = base.clone().with_driver(
        CoefficientKind::Linear {
            a_y: -0.5,
            a_z: vec![0.0],
            a_w: 0.0,
            c: 0.1,
        },
        0.25,
    );
    let s_hi = xi_hi.clone().with_lower(put(1.0).shifted(0.1));

    let p = generate_paths(&base).unwrap();
    let run = |s: &Scenario| {
        solve(s, &p, &SolverSettings::defaults_for(s))
            .unwrap()
            .ensemble
    };
    let (y_base, y_xi) = (run(&base), run(&xi_hi));
    let pairs = [
        ("xi", y_base.clone(), y_xi.clone()),
        ("f", y_base, run(&f_hi)),
        ("S", y_xi, run(&s_hi)),
    ];

    let mut fp = Print::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, lo, hi) in &pairs {
        let eps = pooled_epsilon(lo, hi);
        let forward = check_comparison(lo, hi, eps).unwrap();
        let control = check_comparison(hi, lo, eps).unwrap();
        pass &= forward.pass && !control.pass;
        parts.push(format!(
            "{label}: {:.4} (control {:.3})",
            forward.violation_fraction, control.violation_fraction
        ));
        fp.ens(lo);
        fp.ens(hi);
    }
    let (_, lo, hi) = &pairs[1];
    let dk = check_dk_comparison(lo, hi, pooled_epsilon(lo, hi)).unwrap();
    pass &= dk.pass;
    parts.push(format!("dK: {:.4}", dk.violation_fraction));
    Outcome {
        id: 7,
        name: "comparison theorems",
        pass,
        detail: parts.join(", "),
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

fn exclusive_increments(e: &SolutionEnsemble) -> bool {
    let n = e.steps();
    e.k_plus
        .axis_iter(Axis(0))
        .zip(e.k_minus.axis_iter(Axis(0)))
        .all(|(kp, km)| (0..n).all(|i| (kp[i + 1] - kp[i]) * (km[i + 1] - km[i]) == 0.0))
}

/// Default levels with the early exit disabled.
fn full_ladder(s: &Scenario) -> PenaltySchedule {
    PenaltySchedule::new(PenaltySchedule::default_for(&s.grid).levels().to_vec(), 0.0).unwrap()
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut fp = Print::default();
    let mut pass = true;
    let mut parts = Vec::new();

    for s in [
        catalog::two_barrier(50, 10_000, 108).unwrap(),
        catalog::symmetric_band(50, 10_000, 108).unwrap(),
    ] {
        let p = generate_paths(&s).unwrap();
        let mut set = SolverSettings::defaults_for(&s);
        set.schedule = full_ladder(&s);
        let out = solve(&s, &p, &set).unwrap();
        let e = &out.ensemble;
        let (lo, up) = (
            out.grid.lower.as_ref().unwrap(),
            out.grid.upper.as_ref().unwrap(),
        );
        let eps = 3.0 * e.pooled_se();
        let outside = band_violation_fraction(&e.y, lo, up, eps);
        let res = double_skorohod_residuals(e, lo, up);
        let (rl, bl) = skorohod_budget(
            &res.iter().map(|r| r.0).collect::<Vec<_>>(),
            e.mean_k_plus_terminal(),
            s.grid.dt(),
        );
        let (ru, bu) = skorohod_budget(
            &res.iter().map(|r| r.1).collect::<Vec<_>>(),
            e.mean_k_minus_terminal(),
            s.grid.dt(),
        );
        let exclusive = exclusive_increments(e);
        pass &= outside == 0.0 && rl <= bl && ru <= bu && exclusive;
        parts.push(format!(
            "band share outside {outside}, residuals {rl:.1e}/{bl:.1e} and {ru:.1e}/{bu:.1e}, exclusive {exclusive}"
        ));
        fp.ens(e);
    }

    let s = catalog::american_put(50, 10_000, 108).unwrap();
    let p = generate_paths(&s).unwrap();
    let sched = PenaltySchedule::default_for(&s.grid);
    let cfg = RegressionConfig::default();
    let (one, _) = solve_reflected(&s, &p, &cfg, 2, &sched).unwrap();
    let far = s.clone().with_upper(CoefficientKind::constant(1e3));
    let (two, _) = solve_double(&far, &p, &cfg, 2, &sched, &sched).unwrap();
    let eps = 3.0 * one.pooled_se();
    let far_gap = max_abs(one.y.iter().zip(two.y.iter()).map(|(a, b)| a - b));
    pass &= far_gap <= eps && exclusive_increments(&two);
    parts.push(format!("far-U gap {far_gap:.1e} <= {eps:.1e}"));
    fp.ens(&two);

    Outcome {
        id: 8,
        name: "two barriers",
        pass,
        detail: parts.join("; "),
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut fp = Print::default();
    let mut ratios = Vec::new();
    for (s, band) in [
        (catalog::american_put(50, 10_000, 109).unwrap(), (2.5, 6.0)),
        (catalog::linear_drift(50, 10_000, 109).unwrap(), (3.5, 4.5)),
    ] {
        let p = generate_paths(&s).unwrap();
        let set = SolverSettings::defaults_for(&s);
        let stats: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|d| stability_statistic(&s, *d, &p, &set).unwrap())
            .collect();
        stats.iter().for_each(|v| fp.val(*v));
        ratios.push((stats[0] / stats[1], stats[1] / stats[2], band));
    }
    let pass = ratios
        .iter()
        .all(|(a, b, (lo, hi))| (*lo..=*hi).contains(a) && (*lo..=*hi).contains(b));
    let detail = format!(
        "binding ratios {:.3}, {:.3}; non-binding ratios {:.3}, {:.3}",
        ratios[0].0, ratios[0].1, ratios[1].0, ratios[1].1
    );
    Outcome {
        id: 9,
        name: "stability",
        pass,
        detail,
        elapsed: start.elapsed(),
        fingerprint: fp.finish(),
    }
}

fn run_suite() -> Vec<Outcome> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ]
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn acceptance() -> bool {
    let four = in_pool(4, run_suite);
    let one = in_pool(1, run_suite);

    let mut all = true;
    for o in &four {
        all &= o.pass;
        println!(
            "[{}] criterion {:>2} {}: {} ({:.2} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        );
    }
    let identical = four
        .iter()
        .zip(&one)
        .all(|(a, b)| a.fingerprint == b.fingerprint && a.pass == b.pass);
    let mismatched: Vec<usize> = four
        .iter()
        .zip(&one)
        .filter(|(a, b)| a.fingerprint != b.fingerprint)
        .map(|(a, _)| a.id)
        .collect();
    println!(
        "[{}] criterion 10 determinism: outputs of criteria 1-9 bitwise identical with 4 and 1 threads{}",
        if identical { "PASS" } else { "FAIL" },
        if mismatched.is_empty() { String::new() } else { format!(" (differs: {mismatched:?})") }
    );
    all & identical
}

fn projected_limit_dominates_the_obstacle() -> bool {
    let s = catalog::american_put(25, 5_000, 110).unwrap();
    let p = generate_paths(&s).unwrap();
    let sol = solve_projected(&s, &p, &RegressionConfig::default(), 2).unwrap();
    let lower = obstacle_on_grid(&s, &p).unwrap().lower.unwrap();
    let raised: Array2<f64> = lower.mapv(|v| v + 1.0);
    let pass = obstacle_violation_fraction(&sol.y, &lower, 0.0) == 0.0
        && obstacle_violation_fraction(&sol.y, &raised, 3.0 * sol.pooled_se()) > 0.5;
    println!(
        "[{}] extra: projected limit stays on or above the obstacle",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() -> ExitCode {
    let ok = acceptance() & projected_limit_dominates_the_obstacle();
    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
