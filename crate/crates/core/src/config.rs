//! JSON run configuration.
//!
//! ```json
//! {
//!   "horizon": 1.0, "steps": 50, "paths": 10000, "seed": 7,
//!   "dims": {"d": 1, "l": 1},
//!   "terminal": {"kind": "payoff_put", "params": {"strike": 1.0}},
//!   "driver": {"kind": "linear", "params": {"a_y": -0.5}, "lip_const": 0.25},
//!   "noise": {"kind": "zero", "alpha": 0.5},
//!   "obstacle": {"lower": {"kind": "payoff_put", "params": {"strike": 1.0}}, "upper": "absent"},
//!   "penalty": {"geometric": {"base": 4.0, "count": 7}, "tol": 1e-4},
//!   "regression": {"degree_w": 3, "include_dB": true, "ridge": 1e-10},
//!   "picard_iters": 2
//! }
//! ```
//!
//! Every coefficient accepts an optional `offset` parameter that is added
//! to its value. Unknown keys anywhere are rejected.

use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::condexp::RegressionConfig;
use crate::error::{Error, Result};
use crate::model::{
    Barrier, CoefficientKind, CoefficientSpec, Dimensions, PenaltySchedule, Scenario, TimeGrid,
};
use crate::solve::SolverSettings;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub dims: DimsConfig,
    pub terminal: CoefficientConfig,
    #[serde(default)]
    pub driver: Option<CoefficientConfig>,
    #[serde(default)]
    pub noise: Option<CoefficientConfig>,
    #[serde(default)]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default)]
    pub penalty: Option<PenaltyConfig>,
    #[serde(default)]
    pub regression: Option<RegressionConfig>,
    #[serde(default)]
    pub picard_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    pub d: usize,
    pub l: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub lip_const: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    #[serde(default)]
    pub lower: Option<Value>,
    #[serde(default)]
    pub upper: Option<Value>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricConfig {
    pub base: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
    #[serde(default)]
    pub geometric: Option<GeometricConfig>,
    #[serde(default)]
    pub tol: Option<f64>,
}

fn at(path: &str, err: impl std::fmt::Display) -> Error {
    Error::Configuration(format!("{path}: {err}"))
}

fn take_f64(params: &mut Map<String, Value>, key: &str, path: &str) -> Result<Option<f64>> {
    match params.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) => n
            .as_f64()
            .map(Some)
            .ok_or_else(|| at(&format!("{path}.{key}"), "not a number")),
        Some(_) => Err(at(&format!("{path}.{key}"), "expected a number")),
    }
}

fn need_f64(params: &mut Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    take_f64(params, key, path)?.ok_or_else(|| at(&format!("{path}.{key}"), "missing"))
}

fn take_vec(params: &mut Map<String, Value>, key: &str, path: &str) -> Result<Option<Vec<f64>>> {
    match params.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) => Ok(Some(vec![n
            .as_f64()
            .ok_or_else(|| at(&format!("{path}.{key}"), "not a number"))?])),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .ok_or_else(|| at(&format!("{path}.{key}[{i}]"), "expected a number"))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(at(
            &format!("{path}.{key}"),
            "expected a number or an array of numbers",
        )),
    }
}

/// Builds a catalog coefficient from a kind name and its parameters.
pub fn coefficient_from_params(
    kind: &str,
    params: &Map<String, Value>,
    d: usize,
    path: &str,
) -> Result<CoefficientKind> {
    let mut p = params.clone();
    let pp = format!("{path}.params");
    let offset = take_f64(&mut p, "offset", &pp)?;
    let base = match kind {
        "zero" => CoefficientKind::Zero,
        "constant" => CoefficientKind::Constant(
            take_vec(&mut p, "value", &pp)?.ok_or_else(|| at(&format!("{pp}.value"), "missing"))?,
        ),
        "linear" => CoefficientKind::Linear {
            a_y: take_f64(&mut p, "a_y", &pp)?.unwrap_or(0.0),
            a_z: take_vec(&mut p, "a_z", &pp)?.unwrap_or_else(|| vec![0.0; d]),
            a_w: take_f64(&mut p, "a_w", &pp)?.unwrap_or(0.0),
            c: take_f64(&mut p, "c", &pp)?.unwrap_or(0.0),
        },
        "payoff_put" => CoefficientKind::PayoffPut {
            strike: need_f64(&mut p, "strike", &pp)?,
        },
        "neg_part" => CoefficientKind::NegPart,
        "exponential" => CoefficientKind::Exponential {
            scale: take_f64(&mut p, "scale", &pp)?.unwrap_or(1.0),
        },
        "clamp" => CoefficientKind::Clamp {
            lo: need_f64(&mut p, "lo", &pp)?,
            hi: need_f64(&mut p, "hi", &pp)?,
        },
        other => {
            return Err(at(
                &format!("{path}.kind"),
                format!("unknown coefficient kind `{other}`"),
            ))
        }
    };
    if let Some(key) = p.keys().next() {
        return Err(at(&format!("{pp}.{key}"), "unknown parameter"));
    }
    Ok(match offset {
        Some(o) => base.shifted(o),
        None => base,
    })
}

fn coefficient(
    c: &CoefficientConfig,
    d: usize,
    path: &str,
    allow_lip: bool,
    allow_alpha: bool,
) -> Result<CoefficientKind> {
    if !allow_lip && c.lip_const.is_some() {
        return Err(at(&format!("{path}.lip_const"), "not accepted here"));
    }
    if !allow_alpha && c.alpha.is_some() {
        return Err(at(&format!("{path}.alpha"), "not accepted here"));
    }
    coefficient_from_params(&c.kind, &c.params, d, path)
}

fn barrier(v: &Option<Value>, d: usize, path: &str) -> Result<Barrier> {
    match v {
        None => Ok(Barrier::Absent),
        Some(Value::String(s)) if s == "absent" => Ok(Barrier::Absent),
        Some(Value::String(s)) => Err(at(
            path,
            format!("expected \"absent\" or a coefficient, found \"{s}\""),
        )),
        Some(other) => {
            let c: CoefficientConfig =
                serde_json::from_value(other.clone()).map_err(|e| at(path, e))?;
            Ok(Barrier::Present(coefficient(&c, d, path, false, false)?))
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Configuration(format!("malformed config: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Converts into a scenario and solver settings. Structural problems
    /// are reported here; model assumptions are left to
    /// [`validate_scenario`](crate::model::validate_scenario).
    pub fn build(&self) -> Result<(Scenario, SolverSettings)> {
        let grid = TimeGrid::new(self.horizon, self.steps).map_err(|e| at("horizon/steps", e))?;
        let dims = Dimensions::new(self.dims.d, self.dims.l).map_err(|e| at("dims", e))?;
        let d = dims.d;
        let mut s = Scenario::new(grid, dims)
            .with_paths(self.paths)
            .with_seed(self.seed);
        s.terminal = coefficient(&self.terminal, d, "terminal", false, false)?;
        if let Some(c) = &self.driver {
            if c.alpha.is_some() {
                return Err(at("driver.alpha", "not accepted here"));
            }
            s.driver = CoefficientSpec::new(
                coefficient(c, d, "driver", true, false)?,
                c.lip_const.unwrap_or(0.0),
            );
        }
        if let Some(c) = &self.noise {
            s.noise = CoefficientSpec {
                kind: coefficient(c, d, "noise", true, true)?,
                lip_const: c.lip_const.unwrap_or(0.0),
                alpha: c.alpha,
            };
        }
        if let Some(o) = &self.obstacle {
            s.obstacles.lower = barrier(&o.lower, d, "obstacle.lower")?;
            s.obstacles.upper = barrier(&o.upper, d, "obstacle.upper")?;
        }

        let mut settings = SolverSettings::defaults_for(&s);
        if let Some(r) = &self.regression {
            settings.regression = *r;
        }
        if let Some(k) = self.picard_iters {
            settings.picard_iters = k;
        }
        if let Some(pc) = &self.penalty {
            let tol = pc.tol.unwrap_or(settings.schedule.penetration_tol);
            settings.schedule = match (&pc.levels, &pc.geometric) {
                (Some(_), Some(_)) => {
                    return Err(at("penalty", "give either levels or geometric, not both"))
                }
                (Some(levels), None) => PenaltySchedule::new(levels.clone(), tol)
                    .map_err(|e| at("penalty.levels", e))?,
                (None, Some(g)) => PenaltySchedule::geometric(g.base, g.count, s.grid.dt(), tol)
                    .map_err(|e| at("penalty.geometric", e))?,
                (None, None) => {
                    let default = PenaltySchedule::default_for(&s.grid);
                    PenaltySchedule::new(default.levels().to_vec(), tol)
                        .map_err(|e| at("penalty.tol", e))?
                }
            };
        }
        Ok((s, settings))
    }
}

/// Reads and converts a config file in one go.
pub fn load_config(path: impl AsRef<Path>) -> Result<(Scenario, SolverSettings)> {
    RunConfig::from_path(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    const PUT: &str = r#"{
      "horizon": 1.0, "steps": 20, "paths": 500, "seed": 3,
      "dims": {"d": 1, "l": 1},
      "terminal": {"kind": "payoff_put", "params": {"strike": 1.0}},
      "driver": {"kind": "linear", "params": {"a_y": -0.5}, "lip_const": 0.25},
      "noise": {"kind": "zero", "alpha": 0.5},
      "obstacle": {"lower": {"kind": "payoff_put", "params": {"strike": 1.0}}, "upper": "absent"},
      "penalty": {"geometric": {"base": 4.0, "count": 3}, "tol": 1e-3},
      "regression": {"degree_w": 2, "include_dB": false, "ridge": 0.0},
      "picard_iters": 1
    }"#;

    #[test]
    fn full_config_round_trips_into_a_scenario() {
        let (s, set) = RunConfig::from_json_str(PUT).unwrap().build().unwrap();
        assert_eq!(s.grid.steps(), 20);
        assert_eq!(s.mc_paths, 500);
        assert!(s.obstacles.lower.is_present());
        assert!(!s.obstacles.upper.is_present());
        assert_eq!(set.schedule.levels(), &[20.0, 80.0, 320.0]);
        assert_eq!(set.schedule.penetration_tol, 1e-3);
        assert_eq!(set.regression.degree_w, 2);
        assert!(!set.regression.include_db);
        assert_eq!(set.picard_iters, 1);
        assert!(validate_scenario(&s).is_valid());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = PUT.replace("\"seed\"", "\"sead\"");
        assert!(RunConfig::from_json_str(&typo).is_err());
        let typo = PUT.replace("\"degree_w\"", "\"degree\"");
        assert!(RunConfig::from_json_str(&typo).is_err());
        let bad_param = PUT.replace(
            "\"strike\": 1.0}}, \"upper\"",
            "\"strik\": 1.0}}, \"upper\"",
        );
        let err = RunConfig::from_json_str(&bad_param)
            .unwrap()
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("obstacle.lower.params"), "{err}");
    }

    #[test]
    fn alpha_errors_carry_the_config_path() {
        let text = PUT.replace("\"alpha\": 0.5", "\"alpha\": 1.2");
        let (s, _) = RunConfig::from_json_str(&text).unwrap().build().unwrap();
        let report = validate_scenario(&s);
        assert!(report.contains("alpha out of (0,1)"));
        assert!(report.violations.iter().any(|v| v.path == "noise.alpha"));
    }

    #[test]
    fn offsets_and_vector_constants() {
        let mut params = Map::new();
        params.insert("value".into(), serde_json::json!([0.1, 0.2]));
        params.insert("offset".into(), serde_json::json!(1.0));
        let k = coefficient_from_params("constant", &params, 1, "noise").unwrap();
        let mut out = [0.0; 2];
        k.eval_into(0.0, &[0.0], 0.0, &[0.0], &mut out);
        assert_eq!(out, [1.1, 1.2]);
        assert!(coefficient_from_params("cubic", &Map::new(), 1, "terminal").is_err());
    }
}
