//! Closed-form one-factor bond price from the stochastic-flow argument.
//!
//! Factor `dX = β(α − X) dt + σ dW`, short rate `r(x) = c x² + b x + a`.
//! The bond price is `P(t, T, x) = exp(½A(τ)x² + B(τ)x + C(τ))`,
//! `τ = T − t`, with `η = √(β² + 2cσ²)`. Under the map `A ↦ −β`,
//! `B ↦ βα`, `Γ ↦ c`, `R ↦ b`, `k ↦ a` these are the Riccati coefficients
//! `R₂ = ½A`, `R₁ = B`, `R₀ = C`, which is how the two routes check each
//! other.

use serde::Serialize;

use crate::error::{QtsmError, Result};
use crate::model::{checked_exp, FactorModel, QuadraticRate};

/// Largest `ητ` for which the exponentials are evaluated.
pub const MAX_ETA_TAU: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowParams {
    alpha: f64,
    beta: f64,
    sigma: f64,
    a: f64,
    b: f64,
    c: f64,
    eta: f64,
}

impl FlowParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        if [alpha, beta, sigma, a, b, c].iter().any(|v| !v.is_finite()) {
            return Err(QtsmError::NonFinite("flow parameters".into()));
        }
        if beta <= 0.0 {
            return Err(QtsmError::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        if c < 0.0 {
            return Err(QtsmError::InvalidArgument(format!("c must be nonnegative, got {c}")));
        }
        let eta = (beta * beta + 2.0 * c * sigma * sigma).sqrt();
        Ok(Self {
            alpha,
            beta,
            sigma,
            a,
            b,
            c,
            eta,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// The same model in matrix form, for the Riccati pipeline.
    pub fn to_model(&self, x0: f64) -> Result<(FactorModel, QuadraticRate)> {
        let model = FactorModel::one_factor(self.alpha, self.beta, self.sigma, x0)?;
        let rate = QuadraticRate::new(
            nalgebra::DMatrix::from_element(1, 1, self.c),
            nalgebra::DVector::from_element(1, self.b),
            self.a,
            false,
        )?;
        Ok((model, rate))
    }

    /// `b σ² − α β²`, a recurring combination.
    fn kappa(&self) -> f64 {
        self.b * self.sigma * self.sigma - self.alpha * self.beta * self.beta
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(QtsmError::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
        }
        if self.eta * tau > MAX_ETA_TAU {
            return Err(QtsmError::Overflow {
                what: "flow coefficients (rescale time or parameters)".into(),
                exponent: 2.0 * self.eta * tau,
            });
        }
        Ok(())
    }
}

/// `A(τ) = 2c(e^{2ητ} − 1) / (β − η − (β + η)e^{2ητ})`, evaluated with
/// `e^{−2ητ}` so that it stays finite for every `τ`.
pub fn coeff_a(tau: f64, p: &FlowParams) -> Result<f64> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(QtsmError::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    if p.c == 0.0 {
        return Ok(0.0);
    }
    let (beta, eta) = (p.beta, p.eta);
    let em = (-2.0 * eta * tau).exp();
    Ok(-2.0 * p.c * (-(-2.0 * eta * tau).exp_m1()) / ((beta + eta) - (beta - eta) * em))
}

/// `B(τ)`. The published expression carries an overall `σ²` in every
/// numerator term and in the denominator; it is evaluated here with that
/// factor cancelled, which makes `σ = 0` an ordinary point.
pub fn coeff_b(tau: f64, p: &FlowParams) -> Result<f64> {
    p.check_tau(tau)?;
    let (alpha, beta, eta, b, c) = (p.alpha, p.beta, p.eta, p.b, p.c);
    let kappa = p.kappa();
    let e2 = (2.0 * eta * tau).exp_m1();
    let e1 = (eta * tau).exp();
    let lin = b + 2.0 * c * alpha;
    let num = beta * lin * (-(beta + eta) * e2 - 2.0 * eta) - 2.0 * c * kappa * e2
        + 2.0 * eta * e1 * (b * eta * eta - 2.0 * c * kappa) / beta;
    let den = eta * eta * ((beta + eta) * e2 + 2.0 * eta);
    Ok(num / den)
}

/// `C(τ)`, the constant term, with `C(0) = 0`.
pub fn coeff_c(tau: f64, p: &FlowParams) -> Result<f64> {
    p.check_tau(tau)?;
    let (alpha, beta, sigma, eta, a, b, c) = (p.alpha, p.beta, p.sigma, p.eta, p.a, p.b, p.c);
    let s2 = sigma * sigma;
    let kappa = p.kappa();
    let lin = b + 2.0 * c * alpha;
    let (eta2, eta3) = (eta * eta, eta * eta * eta);

    let drift = (b * b * s2 - 2.0 * alpha * beta * beta * b - 2.0 * alpha * alpha * beta * beta * c)
        / (2.0 * eta2)
        * tau;
    // ½ log(2η e^{(η+β)τ} / ((β+η)e^{2ητ} + η − β)), scaled by e^{−2ητ}
    let log_term = 0.5
        * ((2.0 * eta).ln() + (beta - eta) * tau
            - ((beta + eta) + (eta - beta) * (-2.0 * eta * tau).exp()).ln());
    let e1 = (eta * tau).exp();
    let e2 = (2.0 * eta * tau).exp();
    let cross = 2.0 * beta * lin * kappa * (beta + eta);
    let quad = 2.0 * c * kappa * kappa;
    let vol = beta * beta * s2 * lin * lin;
    let transient = (quad + cross * e1 - vol) / (eta3 * (beta + eta) * ((beta + eta) * e2 + eta - beta));
    let offset = (vol - quad - cross) / (2.0 * eta2 * eta2 * (beta + eta));
    Ok(drift + log_term + transient + offset - a * tau)
}

/// `P(t, T, x) = exp(½A(τ)x² + B(τ)x + C(τ))`.
pub fn bond_price_1d(t: f64, maturity: f64, x: f64, p: &FlowParams) -> Result<f64> {
    let tau = maturity - t;
    if tau.is_nan() || tau < 0.0 {
        return Err(QtsmError::InvalidArgument(format!("need t <= T, got t = {t}, T = {maturity}")));
    }
    let exponent = 0.5 * coeff_a(tau, p)? * x * x + coeff_b(tau, p)? * x + coeff_c(tau, p)?;
    checked_exp("bond price", exponent)
}

/// `g(t, s, x) = E_T[X_s^{t,x} D_{ts}]`, the forward-measure expectation of
/// the flow times its derivative, for `t ≤ s ≤ T`.
pub fn flow_g(t: f64, s: f64, x: f64, maturity: f64, p: &FlowParams) -> Result<f64> {
    if !(t <= s && s <= maturity) {
        return Err(QtsmError::InvalidArgument(format!(
            "need t <= s <= T, got t = {t}, s = {s}, T = {maturity}"
        )));
    }
    let tau = maturity - t;
    p.check_tau(tau)?;
    let (alpha, beta, sigma, eta, b, c) = (p.alpha, p.beta, p.sigma, p.eta, p.b, p.c);
    let s2 = sigma * sigma;
    let eta2 = eta * eta;
    let kappa = p.kappa();

    let common = alpha * beta
        + (s2 * b * eta2 - 2.0 * c * s2 * kappa) / (beta * eta2) * (-beta * tau).exp_m1()
        + kappa * beta / eta2;
    let plus = (-beta - eta) * tau;
    let minus = (-beta + eta) * tau;
    let num1 = common + x * (eta - beta) * plus.exp() + kappa * (eta - beta) / eta2 * plus.exp();
    let num2 = common - x * (beta + eta) * minus.exp() - kappa * (beta + eta) / eta2 * minus.exp();

    // c₁e^{(η−β)s} and c₂e^{(−β−η)s} with the absolute-time factors folded
    // into exponents of s − T
    let term1 = num1 * ((eta - beta) * (s - maturity)).exp()
        / (beta + eta + (eta - beta) * (-2.0 * eta * tau).exp());
    let term2 = num2 * ((-beta - eta) * (s - maturity)).exp()
        / (beta - eta - (beta + eta) * (2.0 * eta * tau).exp());
    let particular = kappa / (-beta * beta - 2.0 * c * s2) * (-beta * (s - t)).exp();
    Ok(term1 + term2 + particular)
}

/// Residual of the bond-pricing PDE
/// `∂ₜP + β(α − x)∂ₓP + ½σ²∂ₓₓP − r(x)P` at `(t, x)` by finite differences
/// of step `h` on [`bond_price_1d`]. The time derivative is centered when
/// `t ± h` stays in `[0, T]` and one-sided second order otherwise.
pub fn pde_residual(p: &FlowParams, t: f64, maturity: f64, x: f64, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 || 2.0 * h > maturity {
        return Err(QtsmError::InvalidArgument(format!("step {h} too large for T = {maturity}")));
    }
    if !(0.0..=maturity).contains(&t) {
        return Err(QtsmError::InvalidArgument(format!("t = {t} outside [0, {maturity}]")));
    }
    let price = |t: f64, x: f64| bond_price_1d(t, maturity, x, p);
    let p0 = price(t, x)?;
    let dt = if t - h >= 0.0 && t + h <= maturity {
        (price(t + h, x)? - price(t - h, x)?) / (2.0 * h)
    } else if t + h > maturity {
        (3.0 * p0 - 4.0 * price(t - h, x)? + price(t - 2.0 * h, x)?) / (2.0 * h)
    } else {
        (-3.0 * p0 + 4.0 * price(t + h, x)? - price(t + 2.0 * h, x)?) / (2.0 * h)
    };
    let (up, down) = (price(t, x + h)?, price(t, x - h)?);
    let dx = (up - down) / (2.0 * h);
    let dxx = (up - 2.0 * p0 + down) / (h * h);
    let rate = p.c * x * x + p.b * x + p.a;
    Ok(dt + p.beta * (p.alpha - x) * dx + 0.5 * p.sigma * p.sigma * dxx - rate * p0)
}
