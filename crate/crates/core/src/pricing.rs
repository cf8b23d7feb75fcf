//! Bond, futures and forward prices as exponential-quadratic functions of
//! the factor state.
//!
//! | product | Υ | Θ   | Ψ | θ   | k | c_T |
//! |---------|---|-----|---|-----|---|-----|
//! | bond    | Γ | 0   | R | 0   | k | 0   |
//! | futures | 0 | a_T | 0 | b_T | 0 | c_T |
//! | forward | Γ | a_T | R | b_T | k | c_T |
//!
//! The forward row is the numerator `E[e^{−∫r} S(T, X_T)]`; the forward
//! price divides it by the bond price.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QtsmError, Result};
use crate::model::{checked_exp, quadratic_form, FactorModel, QuadraticPayoff, QuadraticRate, TimeGrid};
use crate::riccati::{self, CoefficientPath, RiccatiProblem};

pub use crate::riccati::ProductTag;

/// A solved product system, ready to price at any `(t, x)`.
#[derive(Debug, Clone)]
pub struct PricedSystem {
    product: ProductTag,
    path: CoefficientPath,
    model: FactorModel,
    rate: Option<QuadraticRate>,
    payoff: Option<QuadraticPayoff>,
    /// Denominator of the forward-price ratio.
    bond_path: Option<CoefficientPath>,
}

fn check_dim(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(QtsmError::dims(what, expected, found))
    }
}

pub fn bond_problem(model: &FactorModel, rate: &QuadraticRate, grid: TimeGrid) -> Result<RiccatiProblem> {
    let n = model.dim();
    check_dim("rate", n, rate.dim())?;
    Ok(RiccatiProblem::new(
        model.clone(),
        rate.gamma().clone(),
        DMatrix::zeros(n, n),
        rate.r().clone(),
        DVector::zeros(n),
        rate.k(),
        0.0,
        grid,
    )?
    .with_product(ProductTag::Bond))
}

pub fn futures_problem(model: &FactorModel, payoff: &QuadraticPayoff, grid: TimeGrid) -> Result<RiccatiProblem> {
    let n = model.dim();
    check_dim("payoff", n, payoff.dim())?;
    Ok(RiccatiProblem::new(
        model.clone(),
        DMatrix::zeros(n, n),
        payoff.a_t().clone(),
        DVector::zeros(n),
        payoff.b_t().clone(),
        0.0,
        payoff.c_t(),
        grid,
    )?
    .with_product(ProductTag::Futures))
}

pub fn forward_problem(
    model: &FactorModel,
    rate: &QuadraticRate,
    payoff: &QuadraticPayoff,
    grid: TimeGrid,
) -> Result<RiccatiProblem> {
    let n = model.dim();
    check_dim("rate", n, rate.dim())?;
    check_dim("payoff", n, payoff.dim())?;
    Ok(RiccatiProblem::new(
        model.clone(),
        rate.gamma().clone(),
        payoff.a_t().clone(),
        rate.r().clone(),
        payoff.b_t().clone(),
        rate.k(),
        payoff.c_t(),
        grid,
    )?
    .with_product(ProductTag::Forward))
}

pub fn bond_system(model: &FactorModel, rate: &QuadraticRate, grid: TimeGrid) -> Result<PricedSystem> {
    let (_, path) = riccati::solve(&bond_problem(model, rate, grid)?)?;
    Ok(PricedSystem {
        product: ProductTag::Bond,
        path,
        model: model.clone(),
        rate: Some(rate.clone()),
        payoff: None,
        bond_path: None,
    })
}

pub fn futures_system(model: &FactorModel, payoff: &QuadraticPayoff, grid: TimeGrid) -> Result<PricedSystem> {
    let (_, path) = riccati::solve(&futures_problem(model, payoff, grid)?)?;
    Ok(PricedSystem {
        product: ProductTag::Futures,
        path,
        model: model.clone(),
        rate: None,
        payoff: Some(payoff.clone()),
        bond_path: None,
    })
}

/// Solves the forward numerator system and the bond system on `grid`.
pub fn forward_system(
    model: &FactorModel,
    rate: &QuadraticRate,
    payoff: &QuadraticPayoff,
    grid: TimeGrid,
) -> Result<PricedSystem> {
    let (_, path) = riccati::solve(&forward_problem(model, rate, payoff, grid)?)?;
    let (_, bond) = riccati::solve(&bond_problem(model, rate, grid)?)?;
    Ok(PricedSystem {
        product: ProductTag::Forward,
        path,
        model: model.clone(),
        rate: Some(rate.clone()),
        payoff: Some(payoff.clone()),
        bond_path: Some(bond),
    })
}

impl PricedSystem {
    pub fn product(&self) -> ProductTag {
        self.product
    }

    /// Coefficients of the product system (the numerator for forwards).
    pub fn path(&self) -> &CoefficientPath {
        &self.path
    }

    pub fn bond_path(&self) -> Option<&CoefficientPath> {
        self.bond_path.as_ref()
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn rate(&self) -> Option<&QuadraticRate> {
        self.rate.as_ref()
    }

    pub fn payoff(&self) -> Option<&QuadraticPayoff> {
        self.payoff.as_ref()
    }

    pub fn maturity(&self) -> f64 {
        self.path.grid.maturity()
    }

    /// Log-price at `(t, x)`; for forwards the log of the ratio.
    pub fn log_price(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        let num = self.path.exponent(t, x)?;
        match &self.bond_path {
            Some(bond) => Ok(num - bond.exponent(t, x)?),
            None => Ok(num),
        }
    }

    pub fn price(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        if let Some(bond) = &self.bond_path {
            let b = bond.exponent(t, x)?;
            checked_exp("bond price", b)?;
            let num = self.path.exponent(t, x)?;
            return checked_exp("forward price", num - b);
        }
        let what = match self.product {
            ProductTag::Bond => "bond price",
            ProductTag::Futures => "futures price",
            _ => "price",
        };
        checked_exp(what, self.path.exponent(t, x)?)
    }
}

/// Price of a product at its own maturity, where no Riccati solve is needed.
pub fn terminal_price(product: ProductTag, payoff: Option<&QuadraticPayoff>, x: &DVector<f64>) -> Result<f64> {
    match product {
        ProductTag::Bond => Ok(1.0),
        ProductTag::Futures | ProductTag::Forward => {
            let p = payoff.ok_or_else(|| QtsmError::InvalidArgument("payoff required".into()))?;
            if p.dim() != x.len() {
                return Err(QtsmError::dims("state", p.dim(), x.len()));
            }
            checked_exp("payoff", quadratic_form(p.a_t(), x) + p.b_t().dot(x) + p.c_t())
        }
        ProductTag::Custom => Err(QtsmError::InvalidArgument("custom systems have no terminal price".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub maturity: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub price: f64,
}

/// Zero-coupon yields `−log P(0, T, x) / T`, one bond solve per maturity
/// on a grid with step at most `max_step`.
pub fn yield_curve(
    model: &FactorModel,
    rate: &QuadraticRate,
    x: &DVector<f64>,
    maturities: &[f64],
    max_step: f64,
) -> Result<Vec<CurvePoint>> {
    if maturities.is_empty() {
        return Err(QtsmError::InvalidArgument("no maturities given".into()));
    }
    if maturities.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(QtsmError::InvalidArgument("maturities must be positive".into()));
    }
    if maturities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QtsmError::InvalidArgument("maturities must be strictly increasing".into()));
    }
    maturities
        .par_iter()
        .map(|&t| {
            let grid = TimeGrid::with_max_step(t, max_step)?;
            let sys = bond_system(model, rate, grid)?;
            let log_p = sys.log_price(0.0, x)?;
            Ok(CurvePoint {
                maturity: t,
                yield_: -log_p / t,
                price: checked_exp("bond price", log_p)?,
            })
        })
        .collect()
}
