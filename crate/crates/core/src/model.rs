//! Factor dynamics, quadratic short rate, exponential-quadratic payoff and
//! the time grid everything is solved on.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{QtsmError, Result};
use crate::linalg::{sym_part, tol_psd};

/// Largest exponent whose exponential is a finite `f64`.
pub(crate) const MAX_EXPONENT: f64 = 709.78;
/// Below this the exponential underflows to a subnormal or zero.
pub(crate) const MIN_EXPONENT: f64 = -708.39;

fn check_finite_matrix(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(QtsmError::NonFinite(name.into()))
    }
}

fn check_finite_vector(name: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(QtsmError::NonFinite(name.into()))
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() == n && m.ncols() == n {
        Ok(())
    } else {
        Err(QtsmError::dims(
            name,
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

fn check_len(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(QtsmError::dims(name, n, v.len()))
    }
}

/// Gaussian factor process `dX = (A X + B) dt + σ dW`, `X_0 = x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    sigma: DMatrix<f64>,
    x0: DVector<f64>,
    sigma_sigma_t: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, sigma: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(QtsmError::dims("factor model", "n >= 1", 0));
        }
        check_square("A", &a, n)?;
        check_len("B", &b, n)?;
        check_square("sigma", &sigma, n)?;
        check_len("x0", &x0, n)?;
        check_finite_matrix("A", &a)?;
        check_finite_vector("B", &b)?;
        check_finite_matrix("sigma", &sigma)?;
        check_finite_vector("x0", &x0)?;
        let sigma_sigma_t = &sigma * sigma.transpose();
        Ok(Self {
            a,
            b,
            sigma,
            x0,
            sigma_sigma_t,
        })
    }

    /// One-factor Ornstein–Uhlenbeck model `dX = β(α − X) dt + σ dW`.
    pub fn one_factor(alpha: f64, beta: f64, sigma: f64, x0: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, -beta),
            DVector::from_element(1, beta * alpha),
            DMatrix::from_element(1, 1, sigma),
            DVector::from_element(1, x0),
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// `σσᵀ`
    pub fn sigma_sigma_t(&self) -> &DMatrix<f64> {
        &self.sigma_sigma_t
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.sigma.clone(), x0)
    }
}

/// Short rate `r(x) = xᵀΓx + R x + k`.
///
/// With `strict` set, validation additionally requires `r(x) ≥ 0` for every
/// state, checked through the pseudoinverse of the symmetric part of `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRate {
    gamma: DMatrix<f64>,
    r: DVector<f64>,
    k: f64,
    strict: bool,
}

impl QuadraticRate {
    pub fn new(gamma: DMatrix<f64>, r: DVector<f64>, k: f64, strict: bool) -> Result<Self> {
        let n = gamma.nrows();
        if n == 0 {
            return Err(QtsmError::dims("Gamma", "n >= 1", 0));
        }
        check_square("Gamma", &gamma, n)?;
        check_len("R", &r, n)?;
        check_finite_matrix("Gamma", &gamma)?;
        check_finite_vector("R", &r)?;
        if !k.is_finite() {
            return Err(QtsmError::NonFinite("k".into()));
        }
        Ok(Self { gamma, r, k, strict })
    }

    /// Deterministic rate `r ≡ k` in dimension `n`.
    pub fn constant(n: usize, k: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(n, n), DVector::zeros(n), k, false)
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Linear coefficient `R`, a row vector stored as a column.
    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn strict(&self) -> bool {
        self.strict
    }

    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Copy with `Γ` replaced by its symmetric part.
    pub fn symmetrized(&self) -> Self {
        Self {
            gamma: sym_part(&self.gamma),
            ..self.clone()
        }
    }

    /// Lower bound of `r` over all states, `k − ¼ R S⁺ Rᵀ` with `S` the
    /// symmetric part of `Γ`, together with the norm of the component of `R`
    /// outside the range of `S`. The bound is only meaningful when that
    /// residual vanishes; otherwise `r` is unbounded below.
    pub fn nonnegativity_bound(&self) -> (f64, f64) {
        let s = sym_part(&self.gamma);
        let tol = tol_psd(&s);
        let eig = s.symmetric_eigen();
        let mut quad = 0.0;
        let mut residual_sq = 0.0;
        for (i, lambda) in eig.eigenvalues.iter().enumerate() {
            let proj = eig.eigenvectors.column(i).dot(&self.r);
            if lambda.abs() > tol {
                quad += proj * proj / lambda;
            } else {
                residual_sq += proj * proj;
            }
        }
        (self.k - 0.25 * quad, residual_sq.sqrt())
    }
}

/// Terminal asset value `S(T, x) = exp(xᵀ a_T x + b_T x + c_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPayoff {
    a_t: DMatrix<f64>,
    b_t: DVector<f64>,
    c_t: f64,
}

impl QuadraticPayoff {
    pub fn new(a_t: DMatrix<f64>, b_t: DVector<f64>, c_t: f64) -> Result<Self> {
        let n = a_t.nrows();
        if n == 0 {
            return Err(QtsmError::dims("aT", "n >= 1", 0));
        }
        check_square("aT", &a_t, n)?;
        check_len("bT", &b_t, n)?;
        check_finite_matrix("aT", &a_t)?;
        check_finite_vector("bT", &b_t)?;
        if !c_t.is_finite() {
            return Err(QtsmError::NonFinite("cT".into()));
        }
        Ok(Self { a_t, b_t, c_t })
    }

    /// The payoff identically equal to one.
    pub fn unit(n: usize) -> Self {
        Self {
            a_t: DMatrix::zeros(n, n),
            b_t: DVector::zeros(n),
            c_t: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.a_t.nrows()
    }

    pub fn a_t(&self) -> &DMatrix<f64> {
        &self.a_t
    }

    pub fn b_t(&self) -> &DVector<f64> {
        &self.b_t
    }

    pub fn c_t(&self) -> f64 {
        self.c_t
    }

    pub fn symmetrized(&self) -> Self {
        Self {
            a_t: sym_part(&self.a_t),
            ..self.clone()
        }
    }
}

/// Uniform grid `t_i = i·h`, `i = 0..=N`, with `N` even.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    maturity: f64,
    steps: usize,
}

impl TimeGrid {
    /// Smallest step count used by [`TimeGrid::with_max_step`].
    pub const MIN_DEFAULT_STEPS: usize = 200;
    pub const DEFAULT_MAX_STEP: f64 = 0.005;

    pub fn new(maturity: f64, steps: usize) -> Result<Self> {
        if !maturity.is_finite() || maturity <= 0.0 {
            return Err(QtsmError::InvalidGrid(format!(
                "maturity must be positive and finite, got {maturity}"
            )));
        }
        if steps < 2 || !steps.is_multiple_of(2) {
            return Err(QtsmError::InvalidGrid(format!(
                "step count must be even and at least 2, got {steps}"
            )));
        }
        Ok(Self { maturity, steps })
    }

    /// `N = max(200, ⌈T / h_max⌉)`, rounded up to even.
    pub fn with_max_step(maturity: f64, max_step: f64) -> Result<Self> {
        if !max_step.is_finite() || max_step <= 0.0 {
            return Err(QtsmError::InvalidGrid(format!(
                "maximum step must be positive, got {max_step}"
            )));
        }
        let raw = (maturity / max_step).ceil();
        if !raw.is_finite() || raw > 1e8 {
            return Err(QtsmError::InvalidGrid(format!(
                "maturity {maturity} with step {max_step} needs too many nodes"
            )));
        }
        let steps = make_even((raw as usize).max(Self::MIN_DEFAULT_STEPS)).0;
        Self::new(maturity, steps)
    }

    pub fn for_maturity(maturity: f64) -> Result<Self> {
        Self::with_max_step(maturity, Self::DEFAULT_MAX_STEP)
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.maturity
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Bracketing node index and linear weight of the upper node for `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !t.is_finite() || t < 0.0 || t > self.maturity {
            return Err(QtsmError::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.maturity
            )));
        }
        let h = self.step();
        let pos = t / h;
        let i = (pos.floor() as usize).min(self.steps - 1);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        Ok((i, w))
    }
}

/// Rounds an odd step count up; the flag reports whether it changed.
pub fn make_even(steps: usize) -> (usize, bool) {
    if steps % 2 == 1 {
        (steps + 1, true)
    } else {
        (steps, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(ValidationCheck {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Checks the hypotheses the pricing results rely on. Dimension mismatches
/// are hard errors; everything else is reported item by item.
pub fn validate_model(
    model: &FactorModel,
    rate: &QuadraticRate,
    payoff: Option<&QuadraticPayoff>,
) -> Result<ValidationReport> {
    let n = model.dim();
    if rate.dim() != n {
        return Err(QtsmError::dims("rate", n, rate.dim()));
    }
    if let Some(p) = payoff {
        if p.dim() != n {
            return Err(QtsmError::dims("payoff", n, p.dim()));
        }
    }

    let mut report = ValidationReport::default();
    let s = sym_part(rate.gamma());
    let tol = tol_psd(&s);
    let min_eig = s.symmetric_eigenvalues().min();
    report.push(
        "rate.gamma_psd",
        min_eig >= -tol,
        format!("min eigenvalue of sym(Gamma) = {min_eig:.6e}, tolerance {tol:.3e}"),
    );

    if rate.strict() {
        let (bound, residual) = rate.nonnegativity_bound();
        report.push(
            "rate.r_in_range",
            residual <= tol,
            format!("component of R outside range(sym(Gamma)) = {residual:.6e}, tolerance {tol:.3e}"),
        );
        let slack = 1e-12 * (1.0 + rate.k().abs());
        report.push(
            "rate.nonnegative",
            residual <= tol && bound >= -slack,
            format!("min r(x) = k - R Gamma^+ R^T / 4 = {bound:.6e}"),
        );
    }

    if let Some(p) = payoff {
        let a = sym_part(p.a_t());
        let tol = tol_psd(&a);
        let max_eig = a.symmetric_eigenvalues().max();
        report.push(
            "payoff.a_t_nsd",
            max_eig <= tol,
            format!("max eigenvalue of sym(aT) = {max_eig:.6e}, tolerance {tol:.3e}"),
        );
    }
    Ok(report)
}

pub fn eval_short_rate(rate: &QuadraticRate, x: &DVector<f64>) -> Result<f64> {
    check_len("state", x, rate.dim())?;
    Ok(quadratic_form(rate.gamma(), x) + rate.r().dot(x) + rate.k())
}

pub fn eval_payoff(payoff: &QuadraticPayoff, x: &DVector<f64>) -> Result<f64> {
    check_len("state", x, payoff.dim())?;
    let exponent = quadratic_form(payoff.a_t(), x) + payoff.b_t().dot(x) + payoff.c_t();
    checked_exp("payoff", exponent)
}

/// `xᵀ M x`
pub fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub(crate) fn checked_exp(what: &str, exponent: f64) -> Result<f64> {
    if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&exponent) {
        return Err(QtsmError::Overflow {
            what: what.into(),
            exponent,
        });
    }
    Ok(exponent.exp())
}
