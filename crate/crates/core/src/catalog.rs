//! Ready-made scenarios with known answers, on `T = 1`, `d = l = 1`.

use crate::error::Result;
use crate::model::{CoefficientKind, Dimensions, Scenario, TimeGrid};

fn unit(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(
        Scenario::new(TimeGrid::new(1.0, steps)?, Dimensions::new(1, 1)?)
            .with_paths(paths)
            .with_seed(seed),
    )
}

/// `ξ = 5`, `f = g = 0`, non-binding `S = -10`.
pub fn constant(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::constant(5.0))
        .with_lower(CoefficientKind::constant(-10.0)))
}

/// `ξ = 1`, `f = 0.5·y`, no obstacle.
pub fn linear_drift(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::constant(1.0))
        .with_driver(CoefficientKind::linear_y(0.5, 1), 0.25))
}

/// `ξ = 0`, `f = 0`, `g = 0.3`, no obstacle.
pub fn constant_g(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?.with_noise(CoefficientKind::constant(0.3), 0.0, 0.5))
}

/// `ξ = (-W_T)⁺`, `S_t = (-W_t)⁺`, `f = g = 0`.
pub fn stopping_put(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::NegPart)
        .with_lower(CoefficientKind::NegPart))
}

/// `ξ = S_T = (1 - W_T)⁺` with `f = -0.5·y`: discounting makes early
/// stopping optimal deep below the strike, so the obstacle binds.
pub fn american_put(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::PayoffPut { strike: 1.0 })
        .with_driver(CoefficientKind::linear_y(-0.5, 1), 0.25)
        .with_lower(CoefficientKind::PayoffPut { strike: 1.0 }))
}

/// `L = -2`, `U = 2`, `ξ = clamp(W_T, -2, 2)`, `f = g = 0`.
pub fn two_barrier(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::Clamp { lo: -2.0, hi: 2.0 })
        .with_lower(CoefficientKind::constant(-2.0))
        .with_upper(CoefficientKind::constant(2.0)))
}

/// Odd data between `L = -0.5` and `U = 0.5` with `f = 0.8·y`, which pushes
/// the solution into both barriers.
pub fn symmetric_band(steps: usize, paths: usize, seed: u64) -> Result<Scenario> {
    Ok(unit(steps, paths, seed)?
        .with_terminal(CoefficientKind::Clamp { lo: -0.5, hi: 0.5 })
        .with_driver(CoefficientKind::linear_y(0.8, 1), 0.64)
        .with_lower(CoefficientKind::constant(-0.5))
        .with_upper(CoefficientKind::constant(0.5)))
}
