//! Problem and solution data: time grid, coefficient catalog, obstacles,
//! scenarios, solution ensembles and penalty schedules.
//!
//! Coefficients are Markovian: every catalog function reads the current
//! W-state only. Scalar kinds see the W-state through the sum of its
//! components, so `payoff_put { strike }` is `(strike - Σ w_k)⁺`.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::condexp::RegressionConfig;
use crate::error::{Error, Result};

/// Uniform partition `0 = t_0 < … < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i = i·dt`, with `t_N` pinned to the horizon.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Dimension of the forward Brownian motion W.
    pub d: usize,
    /// Dimension of the backward Brownian motion B.
    pub l: usize,
}

impl Dimensions {
    pub fn new(d: usize, l: usize) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(Error::InvalidDimensions(format!(
                "d = {d}, l = {l}; both must be >= 1"
            )));
        }
        Ok(Self { d, l })
    }
}

/// Signature of an in-library coefficient hook: `(t, w, y, z) -> value`.
pub type CoefficientFn = dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync;

/// User-supplied coefficient. The declared Lipschitz data on the owning
/// [`CoefficientSpec`] is trusted as-is.
#[derive(Clone)]
pub struct CustomCoefficient {
    pub name: String,
    pub func: Arc<CoefficientFn>,
}

impl CustomCoefficient {
    pub fn new<F>(name: impl Into<String>, func: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for CustomCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCoefficient")
            .field("name", &self.name)
            .finish()
    }
}

/// Closed catalog of coefficient functions of `(t, w, y, z)`.
#[derive(Debug, Clone)]
pub enum CoefficientKind {
    Zero,
    /// Constant value; vector-valued for the noise coefficient.
    Constant(Vec<f64>),
    /// `a_y·y + a_z·z + a_w·Σw + c`.
    Linear {
        a_y: f64,
        a_z: Vec<f64>,
        a_w: f64,
        c: f64,
    },
    /// `(strike - Σw)⁺`.
    PayoffPut {
        strike: f64,
    },
    /// `(Σw)⁻ = max(0, -Σw)`.
    NegPart,
    /// `scale·exp(Σw)`.
    Exponential {
        scale: f64,
    },
    /// `min(max(Σw, lo), hi)`.
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `base + offset`, used to build ordered pairs of problem data.
    Shifted {
        base: Box<CoefficientKind>,
        offset: f64,
    },
    Custom(CustomCoefficient),
}

impl CoefficientKind {
    pub fn constant(value: f64) -> Self {
        CoefficientKind::Constant(vec![value])
    }

    pub fn linear_y(a_y: f64, d: usize) -> Self {
        CoefficientKind::Linear {
            a_y,
            a_z: vec![0.0; d],
            a_w: 0.0,
            c: 0.0,
        }
    }

    pub fn shifted(self, offset: f64) -> Self {
        CoefficientKind::Shifted {
            base: Box::new(self),
            offset,
        }
    }

    pub fn eval(&self, t: f64, w: &[f64], y: f64, z: &[f64]) -> f64 {
        match self {
            CoefficientKind::Zero => 0.0,
            CoefficientKind::Constant(v) => v.first().copied().unwrap_or(0.0),
            CoefficientKind::Linear { a_y, a_z, a_w, c } => {
                let az: f64 = a_z.iter().zip(z).map(|(a, z)| a * z).sum();
                a_y * y + az + a_w * w_sum(w) + c
            }
            CoefficientKind::PayoffPut { strike } => (strike - w_sum(w)).max(0.0),
            CoefficientKind::NegPart => (-w_sum(w)).max(0.0),
            CoefficientKind::Exponential { scale } => scale * w_sum(w).exp(),
            CoefficientKind::Clamp { lo, hi } => w_sum(w).max(*lo).min(*hi),
            CoefficientKind::Shifted { base, offset } => base.eval(t, w, y, z) + offset,
            CoefficientKind::Custom(c) => (c.func)(t, w, y, z),
        }
    }

    /// Vector evaluation: constant vectors fill component-wise, every other
    /// kind broadcasts its scalar value.
    pub fn eval_into(&self, t: f64, w: &[f64], y: f64, z: &[f64], out: &mut [f64]) {
        match self {
            CoefficientKind::Constant(v) if v.len() == out.len() => out.copy_from_slice(v),
            CoefficientKind::Shifted { base, offset } => {
                base.eval_into(t, w, y, z, out);
                out.iter_mut().for_each(|o| *o += offset);
            }
            _ => out.fill(self.eval(t, w, y, z)),
        }
    }

    /// True when the function vanishes identically.
    pub fn is_zero(&self) -> bool {
        match self {
            CoefficientKind::Zero => true,
            CoefficientKind::Constant(v) => v.iter().all(|x| *x == 0.0),
            CoefficientKind::Linear { a_y, a_z, a_w, c } => {
                *a_y == 0.0 && a_z.iter().all(|x| *x == 0.0) && *a_w == 0.0 && *c == 0.0
            }
            CoefficientKind::Exponential { scale } => *scale == 0.0,
            CoefficientKind::Clamp { lo, hi } => *lo == 0.0 && *hi == 0.0,
            _ => false,
        }
    }

    /// True when the value does not depend on `(y, z)`. Custom hooks are
    /// assumed to be so when used as terminal or obstacle.
    pub fn is_state_only(&self) -> bool {
        match self {
            CoefficientKind::Linear { a_y, a_z, .. } => {
                *a_y == 0.0 && a_z.iter().all(|x| *x == 0.0)
            }
            CoefficientKind::Shifted { base, .. } => base.is_state_only(),
            _ => true,
        }
    }

    /// Squared sensitivities `(a², |b|²)` of a function affine in `(y, z)`,
    /// or `None` when unknown (custom hooks).
    pub fn yz_sensitivity(&self) -> Option<(f64, f64)> {
        match self {
            CoefficientKind::Linear { a_y, a_z, .. } => {
                Some((a_y * a_y, a_z.iter().map(|a| a * a).sum()))
            }
            CoefficientKind::Shifted { base, .. } => base.yz_sensitivity(),
            CoefficientKind::Custom(_) => None,
            _ => Some((0.0, 0.0)),
        }
    }

    fn params_finite(&self) -> bool {
        match self {
            CoefficientKind::Zero | CoefficientKind::NegPart | CoefficientKind::Custom(_) => true,
            CoefficientKind::Constant(v) => v.iter().all(|x| x.is_finite()),
            CoefficientKind::Linear { a_y, a_z, a_w, c } => {
                a_y.is_finite()
                    && a_w.is_finite()
                    && c.is_finite()
                    && a_z.iter().all(|x| x.is_finite())
            }
            CoefficientKind::PayoffPut { strike } => strike.is_finite(),
            CoefficientKind::Exponential { scale } => scale.is_finite(),
            CoefficientKind::Clamp { lo, hi } => lo.is_finite() && hi.is_finite(),
            CoefficientKind::Shifted { base, offset } => offset.is_finite() && base.params_finite(),
        }
    }

    fn linear_z_len(&self) -> Option<usize> {
        match self {
            CoefficientKind::Linear { a_z, .. } => Some(a_z.len()),
            CoefficientKind::Shifted { base, .. } => base.linear_z_len(),
            _ => None,
        }
    }

    fn constant_len(&self) -> Option<usize> {
        match self {
            CoefficientKind::Constant(v) => Some(v.len()),
            CoefficientKind::Shifted { base, .. } => base.constant_len(),
            _ => None,
        }
    }
}

#[inline]
fn w_sum(w: &[f64]) -> f64 {
    w.iter().sum()
}

/// A driver or noise coefficient together with its declared Lipschitz data.
///
/// For the driver `|f(y,z) - f(y',z')|² ≤ lip_const·(|Δy|² + |Δz|²)`; for the
/// noise coefficient `|g(y,z) - g(y',z')|² ≤ lip_const·|Δy|² + alpha·|Δz|²`
/// with `0 < alpha < 1`.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    pub kind: CoefficientKind,
    pub lip_const: f64,
    pub alpha: Option<f64>,
}

impl CoefficientSpec {
    pub fn new(kind: CoefficientKind, lip_const: f64) -> Self {
        Self {
            kind,
            lip_const,
            alpha: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn zero() -> Self {
        Self::new(CoefficientKind::Zero, 0.0)
    }
}

/// A lower or upper barrier. Absent barriers are their own variant.
#[derive(Debug, Clone, Default)]
pub enum Barrier {
    #[default]
    Absent,
    Present(CoefficientKind),
}

impl Barrier {
    pub fn is_present(&self) -> bool {
        matches!(self, Barrier::Present(_))
    }

    pub fn kind(&self) -> Option<&CoefficientKind> {
        match self {
            Barrier::Absent => None,
            Barrier::Present(k) => Some(k),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ObstacleSpec {
    /// Lower obstacle `S` (or `L` with two barriers).
    pub lower: Barrier,
    /// Upper obstacle `U`.
    pub upper: Barrier,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub dims: Dimensions,
    /// Terminal value `ξ = φ(T, W_T)`.
    pub terminal: CoefficientKind,
    pub driver: CoefficientSpec,
    pub noise: CoefficientSpec,
    pub obstacles: ObstacleSpec,
    pub mc_paths: usize,
    pub seed: u64,
}

impl Scenario {
    /// Zero data everywhere, no obstacles, 1000 paths, seed 0.
    pub fn new(grid: TimeGrid, dims: Dimensions) -> Self {
        Self {
            grid,
            dims,
            terminal: CoefficientKind::Zero,
            driver: CoefficientSpec::zero(),
            noise: CoefficientSpec::zero().with_alpha(0.5),
            obstacles: ObstacleSpec::default(),
            mc_paths: 1000,
            seed: 0,
        }
    }

    pub fn with_terminal(mut self, terminal: CoefficientKind) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn with_driver(mut self, kind: CoefficientKind, lip_const: f64) -> Self {
        self.driver = CoefficientSpec::new(kind, lip_const);
        self
    }

    pub fn with_noise(mut self, kind: CoefficientKind, lip_const: f64, alpha: f64) -> Self {
        self.noise = CoefficientSpec::new(kind, lip_const).with_alpha(alpha);
        self
    }

    pub fn with_lower(mut self, lower: CoefficientKind) -> Self {
        self.obstacles.lower = Barrier::Present(lower);
        self
    }

    pub fn with_upper(mut self, upper: CoefficientKind) -> Self {
        self.obstacles.upper = Barrier::Present(upper);
        self
    }

    pub fn without_obstacles(mut self) -> Self {
        self.obstacles = ObstacleSpec::default();
        self
    }

    pub fn with_paths(mut self, mc_paths: usize) -> Self {
        self.mc_paths = mc_paths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.grid = TimeGrid::new(self.grid.horizon(), steps)?;
        Ok(self)
    }
}

/// Per-path solution arrays.
#[derive(Debug, Clone)]
pub struct SolutionEnsemble {
    /// `M × (N+1)`.
    pub y: Array2<f64>,
    /// `M × N × d`.
    pub z: Array3<f64>,
    /// `M × (N+1)`, nondecreasing from 0.
    pub k_plus: Array2<f64>,
    /// `M × (N+1)`, nondecreasing from 0.
    pub k_minus: Array2<f64>,
    pub meta: SolutionMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyLevel {
    None,
    Lower { n: f64 },
    Projected,
    Double { m: f64, n: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub penalty: PenaltyLevel,
    pub regression: RegressionConfig,
    pub picard_iters: usize,
    pub seed: u64,
    /// Number of basis functions used at interior steps.
    pub basis_size: usize,
    /// Standard error of the fitted conditional mean of the Y-target, per step.
    pub regression_se: Vec<f64>,
}

impl SolutionEnsemble {
    pub fn paths(&self) -> usize {
        self.y.nrows()
    }

    pub fn steps(&self) -> usize {
        self.y.ncols() - 1
    }

    /// Root mean square of the per-step regression standard errors.
    pub fn pooled_se(&self) -> f64 {
        let se = &self.meta.regression_se;
        if se.is_empty() {
            return 0.0;
        }
        (se.iter().map(|s| s * s).sum::<f64>() / se.len() as f64).sqrt()
    }

    pub fn y_mean(&self, i: usize) -> f64 {
        self.y.column(i).mean().unwrap_or(0.0)
    }

    /// Sample standard error of the mean of `Y[·][i]`.
    pub fn y_se(&self, i: usize) -> f64 {
        sample_se(self.y.column(i).iter().copied())
    }

    pub fn mean_k_plus_terminal(&self) -> f64 {
        self.k_plus.column(self.steps()).mean().unwrap_or(0.0)
    }

    pub fn mean_k_minus_terminal(&self) -> f64 {
        self.k_minus.column(self.steps()).mean().unwrap_or(0.0)
    }
}

/// Standard error of the sample mean.
pub(crate) fn sample_se(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Increasing penalty parameters with a stopping tolerance on the
/// penetration statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    levels: Vec<f64>,
    pub penetration_tol: f64,
    pub max_levels: usize,
}

impl PenaltySchedule {
    pub fn new(levels: Vec<f64>, penetration_tol: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Configuration(
                "penalty schedule has no levels".into(),
            ));
        }
        if levels.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(Error::Configuration(
                "penalty levels must be positive".into(),
            ));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Configuration(
                "penalty levels must be strictly increasing".into(),
            ));
        }
        if !(penetration_tol >= 0.0) {
            return Err(Error::Configuration(
                "penetration tolerance must be >= 0".into(),
            ));
        }
        let max_levels = levels.len();
        Ok(Self {
            levels,
            penetration_tol,
            max_levels,
        })
    }

    /// `n_k = base^k / dt` for `k = 0..count`.
    pub fn geometric(base: f64, count: usize, dt: f64, penetration_tol: f64) -> Result<Self> {
        if !(base > 1.0) {
            return Err(Error::Configuration("geometric base must exceed 1".into()));
        }
        let levels = (0..count).map(|k| base.powi(k as i32) / dt).collect();
        Self::new(levels, penetration_tol)
    }

    /// Levels `4^k / dt`, `k = 0..=6`, tolerance `1e-4`.
    pub fn default_for(grid: &TimeGrid) -> Self {
        Self::geometric(4.0, 7, grid.dt(), 1e-4).expect("default schedule is valid")
    }

    pub fn levels(&self) -> &[f64] {
        let k = self.max_levels.min(self.levels.len());
        &self.levels[..k]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Location in the configuration tree, e.g. `noise.alpha`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Per-path conditions that can only be checked on a generated ensemble.
    pub deferred: Vec<&'static str>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, path: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.to_string(),
            message: message.into(),
        });
    }
}

const LIPSCHITZ_SLACK: f64 = 1e-12;

/// Checks the structural conditions on the problem data. Never aborts.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = s.dims.d;
    let l = s.dims.l;

    if s.mc_paths < 2 {
        report.push("paths", "at least 2 Monte Carlo paths are required");
    }

    if !s.terminal.params_finite() {
        report.push("terminal.params", "non-finite parameter");
    }
    if !s.terminal.is_state_only() {
        report.push("terminal", "terminal value must depend on (t, w) only");
    }

    // driver
    check_coefficient_shape(&mut report, "driver", &s.driver.kind, d, 1);
    if !(s.driver.lip_const.is_finite() && s.driver.lip_const >= 0.0) {
        report.push(
            "driver.lip_const",
            "Lipschitz constant must be finite and >= 0",
        );
    } else if let Some((ay2, az2)) = s.driver.kind.yz_sensitivity() {
        let lc = s.driver.lip_const;
        if !quadratic_bound_holds(lc, lc, ay2, az2) {
            report.push(
                "driver.lip_const",
                format!(
                    "declared Lipschitz constant {lc} is below the coefficient's bound {}",
                    ay2 + az2
                ),
            );
        }
    }

    // noise
    check_coefficient_shape(&mut report, "noise", &s.noise.kind, d, l);
    match s.noise.alpha {
        None => report.push("noise.alpha", "alpha missing"),
        Some(a) if !(a > 0.0 && a < 1.0) => report.push("noise.alpha", "alpha out of (0,1)"),
        Some(_) => {}
    }
    if !(s.noise.lip_const.is_finite() && s.noise.lip_const >= 0.0) {
        report.push(
            "noise.lip_const",
            "Lipschitz constant must be finite and >= 0",
        );
    } else if let (Some((ay2, az2)), Some(alpha)) = (s.noise.kind.yz_sensitivity(), s.noise.alpha) {
        if !quadratic_bound_holds(s.noise.lip_const, alpha, ay2, az2) {
            report.push(
                "noise",
                "declared (lip_const, alpha) do not bound the coefficient's (y, z) sensitivity",
            );
        }
    }

    for (path, barrier) in [
        ("obstacle.lower", &s.obstacles.lower),
        ("obstacle.upper", &s.obstacles.upper),
    ] {
        if let Barrier::Present(kind) = barrier {
            if !kind.params_finite() {
                report.push(&format!("{path}.params"), "non-finite parameter");
            }
            if !kind.is_state_only() {
                report.push(path, "obstacle must depend on (t, w) only");
            }
        }
    }

    if let (Barrier::Present(lo), Barrier::Present(up)) = (&s.obstacles.lower, &s.obstacles.upper) {
        // Exact for barriers that do not vary with w; the per-path check covers the rest.
        let origin = vec![0.0; d];
        let zero_z = vec![0.0; d];
        let crossed = (0..s.grid.steps()).any(|i| {
            let t = s.grid.time(i);
            lo.eval(t, &origin, 0.0, &zero_z) >= up.eval(t, &origin, 0.0, &zero_z)
        });
        if crossed {
            report.push("obstacle", "L<U violated");
        }
        report
            .deferred
            .push("L < U on every sampled (t_i, W_i), i < N");
    }
    if s.obstacles.lower.is_present() {
        report.deferred.push("S_T <= xi on every path");
    }
    if s.obstacles.upper.is_present() {
        report.deferred.push("xi <= U_T on every path");
    }

    report
}

fn check_coefficient_shape(
    report: &mut ValidationReport,
    path: &str,
    kind: &CoefficientKind,
    d: usize,
    width: usize,
) {
    if !kind.params_finite() {
        report.push(&format!("{path}.params"), "non-finite parameter");
    }
    if let Some(n) = kind.linear_z_len() {
        if n != d {
            report.push(
                &format!("{path}.params.a_z"),
                format!("expected {d} components, found {n}"),
            );
        }
    }
    if let Some(n) = kind.constant_len() {
        if n != width && n != 1 {
            report.push(
                &format!("{path}.params.value"),
                format!("expected {width} components, found {n}"),
            );
        }
    }
}

/// Whether `ky·Δy² + kz·|Δz|² - (a·Δy + b·Δz)² ≥ 0` for all increments, given
/// `a² = ay2` and `|b|² = az2`.
fn quadratic_bound_holds(ky: f64, kz: f64, ay2: f64, az2: f64) -> bool {
    let tol = LIPSCHITZ_SLACK * (1.0 + ay2 + az2);
    ky + tol >= ay2 && kz + tol >= az2 && (ky - ay2) * (kz - az2) + tol >= ay2 * az2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> Scenario {
        Scenario::new(
            TimeGrid::new(1.0, 10).unwrap(),
            Dimensions::new(1, 1).unwrap(),
        )
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::new(0.7, 3).unwrap();
        let t = g.times();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[3], 0.7);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(Dimensions::new(0, 1).is_err());
    }

    #[test]
    fn trivially_valid_scenario_has_empty_report() {
        let s = base()
            .with_terminal(CoefficientKind::constant(5.0))
            .with_lower(CoefficientKind::constant(-10.0));
        let r = validate_scenario(&s);
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn alpha_out_of_range_is_reported() {
        let s = base().with_noise(CoefficientKind::Zero, 0.0, 1.2);
        let r = validate_scenario(&s);
        assert!(r.contains("alpha out of (0,1)"));
        assert_eq!(r.violations[0].path, "noise.alpha");
    }

    #[test]
    fn crossed_constant_barriers_are_reported() {
        let s = base()
            .with_lower(CoefficientKind::constant(2.0))
            .with_upper(CoefficientKind::constant(1.0));
        assert!(validate_scenario(&s).contains("L<U violated"));
    }

    #[test]
    fn understated_lipschitz_constant_is_reported() {
        let s = base().with_driver(CoefficientKind::linear_y(0.5, 1), 0.1);
        assert!(!validate_scenario(&s).is_valid());
        let s = base().with_driver(CoefficientKind::linear_y(0.5, 1), 0.25);
        assert!(validate_scenario(&s).is_valid());
    }

    #[test]
    fn noise_z_sensitivity_needs_alpha() {
        let g = CoefficientKind::Linear {
            a_y: 0.0,
            a_z: vec![0.9],
            a_w: 0.0,
            c: 0.0,
        };
        let s = base().with_noise(g.clone(), 0.0, 0.5);
        assert!(!validate_scenario(&s).is_valid());
        let s = base().with_noise(g, 0.0, 0.85);
        assert!(validate_scenario(&s).is_valid());
    }

    #[test]
    fn terminal_must_not_depend_on_y() {
        let s = base().with_terminal(CoefficientKind::linear_y(1.0, 1));
        assert!(!validate_scenario(&s).is_valid());
    }

    #[test]
    fn validation_is_pure() {
        let s = base()
            .with_noise(CoefficientKind::Zero, 0.0, 1.2)
            .with_lower(CoefficientKind::constant(2.0))
            .with_upper(CoefficientKind::constant(1.0));
        assert_eq!(validate_scenario(&s), validate_scenario(&s));
    }

    #[test]
    fn schedule_rejects_non_increasing_levels() {
        assert!(PenaltySchedule::new(vec![1.0, 1.0], 0.0).is_err());
        assert!(PenaltySchedule::new(vec![1.0, 2.0], -1.0).is_err());
        let g = TimeGrid::new(1.0, 50).unwrap();
        let s = PenaltySchedule::default_for(&g);
        assert_eq!(s.levels().len(), 7);
        assert_eq!(s.levels()[0], 50.0);
        assert_eq!(s.levels()[6], 4096.0 * 50.0);
    }

    #[test]
    fn vector_evaluation_broadcasts_scalars() {
        let mut out = [0.0; 3];
        CoefficientKind::Constant(vec![1.0, 2.0, 3.0]).eval_into(
            0.0,
            &[0.0],
            0.0,
            &[0.0],
            &mut out,
        );
        assert_eq!(out, [1.0, 2.0, 3.0]);
        CoefficientKind::constant(0.3)
            .shifted(0.1)
            .eval_into(0.0, &[0.0], 0.0, &[0.0], &mut out);
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    fn catalog(d: usize) -> Vec<(CoefficientKind, f64)> {
        vec![
            (CoefficientKind::Zero, 0.0),
            (CoefficientKind::constant(2.5), 0.0),
            (
                CoefficientKind::Linear {
                    a_y: 0.5,
                    a_z: vec![0.3; d],
                    a_w: 1.0,
                    c: -1.0,
                },
                0.25 + 0.09 * d as f64,
            ),
            (CoefficientKind::PayoffPut { strike: 1.0 }, 0.0),
            (CoefficientKind::NegPart, 0.0),
            (CoefficientKind::Exponential { scale: 0.2 }, 0.0),
            (CoefficientKind::Clamp { lo: -2.0, hi: 2.0 }, 0.0),
            (CoefficientKind::linear_y(-0.7, d).shifted(0.4), 0.49),
        ]
    }

    proptest! {
        #[test]
        fn catalog_respects_declared_lipschitz_bound(
            t in 0.0f64..1.0,
            w in prop::collection::vec(-3.0f64..3.0, 2),
            y in -10.0f64..10.0,
            y2 in -10.0f64..10.0,
            z in prop::collection::vec(-10.0f64..10.0, 2),
            z2 in prop::collection::vec(-10.0f64..10.0, 2),
        ) {
            for (kind, lip) in catalog(2) {
                let lhs = (kind.eval(t, &w, y, &z) - kind.eval(t, &w, y2, &z2)).powi(2);
                let dz2: f64 = z.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum();
                let rhs = lip * ((y - y2).powi(2) + dz2);
                prop_assert!(lhs <= rhs + 1e-9, "{kind:?}: {lhs} > {rhs}");
            }
        }
    }
}
