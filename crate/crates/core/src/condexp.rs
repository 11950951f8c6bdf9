//! Least-squares regression estimate of conditional expectations given the
//! time-`t_i` information, which is generated by the W-path up to `t_i` and
//! the B-increments after `t_i`.
//!
//! The regression state is the current W-state plus, when `include_db` is
//! set, the backward noise features: the current increment `dB_i`, its
//! products with W-monomials, and optionally the tail `B_T - B_{t_i}`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// Total polynomial degree in the W-state.
    pub degree_w: usize,
    /// Augment the basis with backward-noise features.
    #[serde(rename = "include_dB")]
    pub include_db: bool,
    /// Tikhonov regularizer added to the least-squares objective.
    pub ridge: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree_w: 3,
            include_db: true,
            ridge: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisTerm {
    /// `Π_k w_k^{e_k}`.
    Monomial(Vec<u32>),
    /// Component `k` of `dB_i`.
    Increment(usize),
    /// `Π w^e · dB_i^{(k)}`.
    MonomialIncrement(Vec<u32>, usize),
    /// Component `k` of `B_T - B_{t_i}`.
    Tail(usize),
    /// Caller-supplied column, such as an obstacle evaluated on the paths.
    Feature(String),
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn mono(e: &[u32]) -> String {
            let parts: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0)
                .map(|(k, p)| {
                    if *p == 1 {
                        format!("w{k}")
                    } else {
                        format!("w{k}^{p}")
                    }
                })
                .collect();
            if parts.is_empty() {
                "1".into()
            } else {
                parts.join("*")
            }
        }
        match self {
            BasisTerm::Monomial(e) => write!(f, "{}", mono(e)),
            BasisTerm::Increment(k) => write!(f, "dB{k}"),
            BasisTerm::MonomialIncrement(e, k) => write!(f, "{}*dB{k}", mono(e)),
            BasisTerm::Tail(k) => write!(f, "tailB{k}"),
            BasisTerm::Feature(name) => write!(f, "{name}"),
        }
    }
}

/// Exponent vectors of all monomials in `d` variables of total degree
/// `<= degree`, ordered by degree. The first entry is the constant.
pub fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut current = vec![0u32; d];
        push_compositions(total as u32, 0, &mut current, &mut out);
    }
    out
}

fn push_compositions(remaining: u32, k: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let d = current.len();
    if k + 1 == d {
        current[k] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[k] = e;
        push_compositions(remaining - e, k + 1, current, out);
    }
    current[k] = 0;
}

/// Design matrix (column-major, `M × B`) with its column description.
#[derive(Debug, Clone)]
pub struct Basis {
    pub terms: Vec<BasisTerm>,
    pub design: DMatrix<f64>,
}

impl Basis {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.design.nrows()
    }

    /// Appends a column unless it already lies in the span of the existing
    /// columns (constants, or a barrier that is affine in W on the sample).
    /// The return value tells whether the column was added.
    pub fn push_feature(
        &mut self,
        name: impl Into<String>,
        values: ArrayView1<f64>,
    ) -> Result<bool> {
        let m = self.samples();
        if values.len() != m {
            return Err(Error::DimensionMismatch {
                what: "feature rows",
                expected: m,
                found: values.len(),
            });
        }
        let v = DVector::from_iterator(m, values.iter().copied());
        let q = self.design.clone().qr().q();
        let residual = &v - &q * (q.transpose() * &v);
        let scale = self
            .design
            .column_iter()
            .map(|c| c.norm())
            .fold(v.norm(), f64::max);
        if residual.norm() <= FEATURE_SPAN_TOL * scale {
            return Ok(false);
        }
        if self.len() + 1 > m {
            return Err(Error::UnderdeterminedBasis {
                basis: self.len() + 1,
                samples: m,
            });
        }
        let b = self.len();
        let design = std::mem::replace(&mut self.design, DMatrix::zeros(0, 0));
        let mut design = design.insert_column(b, 0.0);
        for (r, v) in values.iter().enumerate() {
            design[(r, b)] = *v;
        }
        self.design = design;
        self.terms.push(BasisTerm::Feature(name.into()));
        Ok(true)
    }
}

/// Builds the regression design from the W-state (`M × d`), the current
/// backward increment (`M × l`) and optionally the backward tail (`M × l`).
pub fn build_basis(
    cfg: &RegressionConfig,
    w_state: ArrayView2<f64>,
    db_increment: ArrayView2<f64>,
    db_tail: Option<ArrayView2<f64>>,
) -> Result<Basis> {
    let m = w_state.nrows();
    let d = w_state.ncols();
    let l = db_increment.ncols();
    if db_increment.nrows() != m {
        return Err(Error::DimensionMismatch {
            what: "dB rows",
            expected: m,
            found: db_increment.nrows(),
        });
    }
    if let Some(tail) = &db_tail {
        if tail.nrows() != m || tail.ncols() != l {
            return Err(Error::DimensionMismatch {
                what: "dB tail rows",
                expected: m,
                found: tail.nrows(),
            });
        }
    }

    let monos = monomial_exponents(d, cfg.degree_w);
    let mut terms: Vec<BasisTerm> = monos.iter().cloned().map(BasisTerm::Monomial).collect();
    if cfg.include_db {
        for k in 0..l {
            terms.push(BasisTerm::Increment(k));
        }
        for k in 0..l {
            for e in monos.iter().skip(1) {
                terms.push(BasisTerm::MonomialIncrement(e.clone(), k));
            }
        }
        if db_tail.is_some() {
            for k in 0..l {
                terms.push(BasisTerm::Tail(k));
            }
        }
    }
    let b = terms.len();
    if b > m {
        return Err(Error::UnderdeterminedBasis {
            basis: b,
            samples: m,
        });
    }

    let mut design = DMatrix::<f64>::zeros(m, b);
    // Monomial columns first; products reuse them.
    for (j, e) in monos.iter().enumerate() {
        let mut col = design.column_mut(j);
        for r in 0..m {
            let mut v = 1.0;
            for (k, p) in e.iter().enumerate() {
                if *p > 0 {
                    v *= w_state[[r, k]].powi(*p as i32);
                }
            }
            col[r] = v;
        }
    }
    for j in monos.len()..b {
        match &terms[j] {
            BasisTerm::Increment(k) => {
                for r in 0..m {
                    design[(r, j)] = db_increment[[r, *k]];
                }
            }
            BasisTerm::MonomialIncrement(e, k) => {
                let src = monos.iter().position(|x| x == e).expect("monomial present");
                for r in 0..m {
                    design[(r, j)] = design[(r, src)] * db_increment[[r, *k]];
                }
            }
            BasisTerm::Tail(k) => {
                let tail = db_tail.as_ref().expect("tail present");
                for r in 0..m {
                    design[(r, j)] = tail[[r, *k]];
                }
            }
            BasisTerm::Monomial(_) | BasisTerm::Feature(_) => unreachable!(),
        }
    }

    Ok(Basis { terms, design })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub terms: Vec<String>,
    pub residual_norm: f64,
    pub ridge: f64,
    pub samples: usize,
}

impl RegressionFit {
    /// Standard error of the fitted conditional mean, `σ̂ / √M`.
    pub fn standard_error(&self) -> f64 {
        let m = self.samples as f64;
        let dof = (self.samples.saturating_sub(self.coefficients.len())).max(1) as f64;
        self.residual_norm / (m * dof).sqrt()
    }
}

const RANK_TOL: f64 = 1e-10;
/// Relative residual below which a feature is treated as lying in the span
/// of the existing columns.
const FEATURE_SPAN_TOL: f64 = 1e-8;

/// Householder QR factorization of a design, reusable across targets.
pub struct Projector {
    design: DMatrix<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    ridge: f64,
    terms: Vec<String>,
}

impl Projector {
    pub fn new(basis: &Basis, ridge: f64) -> Result<Self> {
        let m = basis.samples();
        let b = basis.len();
        if b > m {
            return Err(Error::UnderdeterminedBasis {
                basis: b,
                samples: m,
            });
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Configuration(format!(
                "ridge must be finite and >= 0, got {ridge}"
            )));
        }
        // Ridge as b extra rows sqrt(ridge)·I keeps the solve orthogonal.
        let system = if ridge > 0.0 {
            let mut aug = DMatrix::<f64>::zeros(m + b, b);
            aug.view_mut((0, 0), (m, b)).copy_from(&basis.design);
            let root = ridge.sqrt();
            for j in 0..b {
                aug[(m + j, j)] = root;
            }
            aug
        } else {
            basis.design.clone()
        };
        let qr = system.qr();
        let r = qr.r();
        if ridge == 0.0 {
            let rmax = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if let Some(column) = r
                .diagonal()
                .iter()
                .position(|v| v.abs() <= RANK_TOL * rmax || rmax == 0.0)
            {
                return Err(Error::SingularDesign { column });
            }
        }
        Ok(Self {
            design: basis.design.clone(),
            qr,
            r,
            ridge,
            terms: basis.terms.iter().map(|t| t.to_string()).collect(),
        })
    }

    pub fn basis_size(&self) -> usize {
        self.design.ncols()
    }

    /// Least-squares coefficients for one target.
    pub fn coefficients(&self, target: &[f64]) -> Result<DVector<f64>> {
        let m = self.design.nrows();
        let b = self.design.ncols();
        if target.len() != m {
            return Err(Error::DimensionMismatch {
                what: "regression target",
                expected: m,
                found: target.len(),
            });
        }
        let rows = if self.ridge > 0.0 { m + b } else { m };
        let mut rhs = DVector::<f64>::zeros(rows);
        rhs.rows_mut(0, m).copy_from_slice(target);
        self.qr.q_tr_mul(&mut rhs);
        let head = rhs.rows(0, b).into_owned();
        self.r
            .solve_upper_triangular(&head)
            .ok_or(Error::SingularDesign { column: 0 })
    }

    /// Fitted values `design·β` together with the fit record.
    pub fn fit(&self, target: &[f64]) -> Result<(Vec<f64>, RegressionFit)> {
        let beta = self.coefficients(target)?;
        let fitted = &self.design * &beta;
        let residual_norm = fitted
            .iter()
            .zip(target)
            .map(|(f, t)| (f - t) * (f - t))
            .sum::<f64>()
            .sqrt();
        let fit = RegressionFit {
            coefficients: beta.iter().copied().collect(),
            terms: self.terms.clone(),
            residual_norm,
            ridge: self.ridge,
            samples: target.len(),
        };
        Ok((fitted.iter().copied().collect(), fit))
    }
}

/// Regression estimate of `E[target | basis state]` evaluated on the sample.
pub fn condexp_fit_eval(
    targets: &[f64],
    basis: &Basis,
    ridge: f64,
) -> Result<(Vec<f64>, RegressionFit)> {
    Projector::new(basis, ridge)?.fit(targets)
}
