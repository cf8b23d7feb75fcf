//! Monte Carlo oracles for the closed-form prices and the FBSDE solution.
//!
//! Paths are Euler–Maruyama discretizations of the factor SDE, either
//! under the risk-neutral measure (`dX = (AX + B)dt + σ dW`) or under the
//! forward measure with the bond-implied drift
//! `(A + σσᵀ(R₂ + R₂ᵀ))X + B + σσᵀR₁ᵀ`.
//!
//! Path `p` draws its normals from ChaCha8 seeded with `seed` on stream
//! `p`, through the ziggurat sampler of `rand_distr::StandardNormal`, in
//! the order (step, sub-step, component). Every path is therefore fixed by
//! `(seed, p)` alone; paths run in parallel and are reduced in index
//! order, so results do not depend on the thread count. `QTSM_THREADS`
//! caps the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QtsmError, Result};
use crate::model::{FactorModel, QuadraticPayoff, QuadraticRate, TimeGrid};
use crate::riccati::CoefficientPath;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "QTSM_THREADS";

/// Resolution of the Brownian family shared by [`fbsde_check`] grids.
pub const BROWNIAN_BASE_STEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    RiskNeutral,
    Forward,
}

/// Mean and standard error of a Monte Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl McEstimate {
    /// Sample mean and `sample-std / √n`. Sums are shifted by the first
    /// sample, so a constant sample returns that constant and zero error.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(QtsmError::InvalidArgument("no samples".into()));
        }
        let shift = samples[0];
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &v in samples {
            let d = v - shift;
            s1 += d;
            s2 += d * d;
        }
        let nf = n as f64;
        let mean_shift = s1 / nf;
        let var = if n > 1 {
            ((s2 - s1 * mean_shift) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Ok(Self {
            mean: shift + mean_shift,
            stderr: (var / nf).sqrt(),
            n_paths: n,
        })
    }

    /// Whether `value` lies within `mean ± k·stderr`.
    pub fn brackets(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.stderr
    }
}

/// Monte Carlo forward price: the discounted-payoff estimate divided by the
/// bond estimate on the same paths. `ratio.stderr` is the delta-method
/// error of the ratio of means, computed from the per-path residuals
/// `Dᵢ Sᵢ − F̂ Dᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForwardEstimate {
    pub ratio: McEstimate,
    pub numerator: McEstimate,
    pub bond: McEstimate,
}

/// Terminal and increment statistics of the simulated FBSDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FbsdeReport {
    /// Mean of `|Ŷ_N − 1|`, `Ŷ` integrated forward from the closed-form `Y₀`.
    pub mean_abs_terminal_error: f64,
    pub max_terminal_error: f64,
    /// Mean over paths and steps of `|Δlog Y − (r + ½‖Z/Y‖²)h − (Z/Y)ΔW|`
    /// with `Y` from the closed form.
    pub mean_bsde_increment_residual: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub brownian_steps: usize,
}

/// Simulated factor paths, stored flat as `[path][node][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub dim: usize,
    pub seed: u64,
    pub mode: DriftMode,
    states: Vec<f64>,
}

impl PathEnsemble {
    /// State of path `p` at node `i`.
    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let n = self.dim;
        let start = (p * (self.grid.steps() + 1) + i) * n;
        &self.states[start..start + n]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// Euler–Maruyama stepper with per-node linear drift `M_i x + c_i`.
struct Stepper {
    n: usize,
    steps: usize,
    h: f64,
    /// Normals drawn per step and component; increments are their sum.
    substeps: usize,
    /// Row-major `M_i`, one block per node (a single block when constant).
    drift_mat: Vec<f64>,
    drift_vec: Vec<f64>,
    varying: bool,
    sigma: Vec<f64>,
    x0: Vec<f64>,
}

impl Stepper {
    fn new(model: &FactorModel, grid: TimeGrid, mode: DriftMode, bond: Option<&CoefficientPath>, substeps: usize) -> Result<Self> {
        let n = model.dim();
        let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<f64>>();
        let (drift_mat, drift_vec, varying) = match mode {
            DriftMode::RiskNeutral => (row_major(model.a()), model.b().iter().copied().collect(), false),
            DriftMode::Forward => {
                let bond = bond.ok_or_else(|| {
                    QtsmError::InvalidArgument("forward-measure paths need a solved bond path".into())
                })?;
                check_path(bond, grid, n)?;
                let sst = model.sigma_sigma_t();
                let mut mats = Vec::with_capacity((grid.steps() + 1) * n * n);
                let mut vecs = Vec::with_capacity((grid.steps() + 1) * n);
                for (r2, r1) in bond.r2.iter().zip(&bond.r1) {
                    let s = r2 + r2.transpose();
                    mats.extend(row_major(&(model.a() + sst * s)));
                    vecs.extend((model.b() + sst * r1).iter().copied());
                }
                (mats, vecs, true)
            }
        };
        Ok(Self {
            n,
            steps: grid.steps(),
            h: grid.step(),
            substeps: substeps.max(1),
            drift_mat,
            drift_vec,
            varying,
            sigma: row_major(model.sigma()),
            x0: model.x0().iter().copied().collect(),
        })
    }

    /// Runs path `p`, calling `visit(i, x_i, ΔW_i)` at every node; the
    /// increment is the one leading out of node `i` (zero at the last node).
    fn run<F>(&self, seed: u64, p: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &[f64], &[f64]) -> Result<()>,
    {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let sub_sd = (self.h / self.substeps as f64).sqrt();
        let mut x = self.x0.clone();
        let mut next = vec![0.0; n];
        let mut dw = vec![0.0; n];
        for i in 0..self.steps {
            dw.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..self.substeps {
                for v in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += z;
                }
            }
            dw.iter_mut().for_each(|v| *v *= sub_sd);
            visit(i, &x, &dw)?;
            let (m, c) = if self.varying {
                (&self.drift_mat[i * n * n..(i + 1) * n * n], &self.drift_vec[i * n..(i + 1) * n])
            } else {
                (&self.drift_mat[..], &self.drift_vec[..])
            };
            for r in 0..n {
                let mut drift = c[r];
                let mut noise = 0.0;
                for col in 0..n {
                    drift += m[r * n + col] * x[col];
                    noise += self.sigma[r * n + col] * dw[col];
                }
                next[r] = x[r] + drift * self.h + noise;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(QtsmError::PathBlowUp { path: p, step: i + 1 });
            }
            std::mem::swap(&mut x, &mut next);
        }
        dw.iter_mut().for_each(|v| *v = 0.0);
        visit(self.steps, &x, &dw)
    }
}

fn check_path(path: &CoefficientPath, grid: TimeGrid, n: usize) -> Result<()> {
    if path.grid != grid {
        return Err(QtsmError::InvalidGrid(format!(
            "bond path grid (T = {}, N = {}) differs from simulation grid (T = {}, N = {})",
            path.grid.maturity(),
            path.grid.steps(),
            grid.maturity(),
            grid.steps()
        )));
    }
    if path.dim() != n {
        return Err(QtsmError::dims("bond path", n, path.dim()));
    }
    Ok(())
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(QtsmError::InvalidArgument("n_paths must be positive".into()));
    }
    Ok(())
}

/// Worker threads requested through [`THREADS_ENV`], if any.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Evaluates `f` on `0..count` in parallel and returns the results in
/// index order; the first error by index wins.
fn par_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let work = || (0..count).into_par_iter().map(&f).collect::<Vec<Result<T>>>();
    let results = match thread_limit() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| QtsmError::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    results.into_iter().collect()
}

pub fn simulate_paths(
    model: &FactorModel,
    mode: DriftMode,
    bond: Option<&CoefficientPath>,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    let stepper = Stepper::new(model, grid, mode, bond, 1)?;
    let n = model.dim();
    let per_path = (grid.steps() + 1) * n;
    let chunks = par_map(n_paths, |p| {
        let mut out = Vec::with_capacity(per_path);
        stepper.run(seed, p, |_, x, _| {
            out.extend_from_slice(x);
            Ok(())
        })?;
        Ok(out)
    })?;
    Ok(PathEnsemble {
        n_paths,
        grid,
        dim: n,
        seed,
        mode,
        states: chunks.concat(),
    })
}

/// Row-major copies of the rate and payoff for the inner loops.
struct Functionals {
    n: usize,
    gamma: Vec<f64>,
    r: Vec<f64>,
    k: f64,
    a_t: Vec<f64>,
    b_t: Vec<f64>,
    c_t: f64,
}

impl Functionals {
    fn new(n: usize, rate: Option<&QuadraticRate>, payoff: Option<&QuadraticPayoff>) -> Result<Self> {
        let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<f64>>();
        let mut out = Self {
            n,
            gamma: vec![0.0; n * n],
            r: vec![0.0; n],
            k: 0.0,
            a_t: vec![0.0; n * n],
            b_t: vec![0.0; n],
            c_t: 0.0,
        };
        if let Some(rate) = rate {
            if rate.dim() != n {
                return Err(QtsmError::dims("rate", n, rate.dim()));
            }
            out.gamma = row_major(rate.gamma());
            out.r = rate.r().iter().copied().collect();
            out.k = rate.k();
        }
        if let Some(payoff) = payoff {
            if payoff.dim() != n {
                return Err(QtsmError::dims("payoff", n, payoff.dim()));
            }
            out.a_t = row_major(payoff.a_t());
            out.b_t = payoff.b_t().iter().copied().collect();
            out.c_t = payoff.c_t();
        }
        Ok(out)
    }

    fn quadratic(&self, m: &[f64], v: &[f64], c: f64, x: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = c;
        for i in 0..n {
            let mut row = v[i];
            for j in 0..n {
                row += m[i * n + j] * x[j];
            }
            acc += row * x[i];
        }
        acc
    }

    fn rate(&self, x: &[f64]) -> f64 {
        self.quadratic(&self.gamma, &self.r, self.k, x)
    }

    fn log_payoff(&self, x: &[f64]) -> f64 {
        self.quadratic(&self.a_t, &self.b_t, self.c_t, x)
    }
}

/// Per-path `(e^{−∫r}, S(T, X_T))` under the risk-neutral measure.
fn discount_and_payoff(
    model: &FactorModel,
    rate: Option<&QuadraticRate>,
    payoff: Option<&QuadraticPayoff>,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    check_paths(n_paths)?;
    let stepper = Stepper::new(model, grid, DriftMode::RiskNeutral, None, 1)?;
    let f = Functionals::new(model.dim(), rate, payoff)?;
    let (steps, h) = (grid.steps(), grid.step());
    par_map(n_paths, |p| {
        let mut integral = 0.0;
        let mut log_payoff = 0.0;
        stepper.run(seed, p, |i, x, _| {
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * h * f.rate(x);
            if i == steps {
                log_payoff = f.log_payoff(x);
            }
            Ok(())
        })?;
        let s = log_payoff.exp();
        if !s.is_finite() {
            return Err(QtsmError::Overflow {
                what: format!("payoff on path {p}"),
                exponent: log_payoff,
            });
        }
        Ok(((-integral).exp(), s))
    })
}

/// `E[exp(−∫₀ᵀ r(X_u) du)]`, trapezoidal in time, `T` the grid maturity.
pub fn mc_bond(model: &FactorModel, rate: &QuadraticRate, n_paths: usize, grid: TimeGrid, seed: u64) -> Result<McEstimate> {
    let samples = discount_and_payoff(model, Some(rate), None, n_paths, grid, seed)?;
    McEstimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>())
}

/// `E[S(T, X_T)]`, the futures price.
pub fn mc_terminal_expectation(
    model: &FactorModel,
    payoff: &QuadraticPayoff,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<McEstimate> {
    let samples = discount_and_payoff(model, None, Some(payoff), n_paths, grid, seed)?;
    McEstimate::from_samples(&samples.iter().map(|s| s.1).collect::<Vec<_>>())
}

/// `E[exp(−∫₀ᵀ r) S(T, X_T)]`, the forward-price numerator.
pub fn mc_discounted_payoff(
    model: &FactorModel,
    rate: &QuadraticRate,
    payoff: &QuadraticPayoff,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<McEstimate> {
    let samples = discount_and_payoff(model, Some(rate), Some(payoff), n_paths, grid, seed)?;
    McEstimate::from_samples(&samples.iter().map(|s| s.0 * s.1).collect::<Vec<_>>())
}

/// Forward price as a ratio of two estimators on shared paths.
pub fn mc_forward(
    model: &FactorModel,
    rate: &QuadraticRate,
    payoff: &QuadraticPayoff,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<ForwardEstimate> {
    let samples = discount_and_payoff(model, Some(rate), Some(payoff), n_paths, grid, seed)?;
    let numerator = McEstimate::from_samples(&samples.iter().map(|s| s.0 * s.1).collect::<Vec<_>>())?;
    let bond = McEstimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>())?;
    let ratio = numerator.mean / bond.mean;
    let residuals: Vec<f64> = samples.iter().map(|s| (s.0 * s.1 - ratio * s.0) / bond.mean).collect();
    let spread = McEstimate::from_samples(&residuals)?;
    Ok(ForwardEstimate {
        ratio: McEstimate {
            mean: ratio,
            stderr: spread.stderr,
            n_paths,
        },
        numerator,
        bond,
    })
}

/// Simulates the forward-measure FBSDE of the bond along factor paths
/// driven by `bond`'s drift and compares it with the closed form
/// `Y = exp(xᵀR₂x + R₁x + R₀)`, `Z/Y = (xᵀ(R₂ + R₂ᵀ) + R₁)σ`.
///
/// The terminal check integrates `log Ŷ` forward with the log-BSDE
/// dynamics `d log Y = (r + ½‖Z/Y‖²)dt + (Z/Y)dW`, starting from the
/// closed-form `Y₀`, so `|Ŷ_N − 1|` measures discretization error only.
/// Brownian increments are sums over a base grid of at least
/// [`BROWNIAN_BASE_STEPS`] steps that `N` divides: grids whose step counts
/// divide the same base see the same Brownian paths.
pub fn fbsde_check(
    model: &FactorModel,
    rate: &QuadraticRate,
    bond: &CoefficientPath,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<FbsdeReport> {
    check_paths(n_paths)?;
    let n = model.dim();
    check_path(bond, grid, n)?;
    let steps = grid.steps();
    let substeps = BROWNIAN_BASE_STEPS.div_ceil(steps);
    let stepper = Stepper::new(model, grid, DriftMode::Forward, Some(bond), substeps)?;
    let f = Functionals::new(n, Some(rate), None)?;
    let h = grid.step();

    // per node: S = R₂ + R₂ᵀ row-major, R₁, R₂ row-major, R₀, and σ
    let sym: Vec<Vec<f64>> = bond
        .r2
        .iter()
        .map(|r2| (r2 + r2.transpose()).transpose().iter().copied().collect())
        .collect();
    let sigma = model.sigma();

    let per_path = par_map(n_paths, |p| {
        let mut log_hat = 0.0;
        let mut prev: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
        let mut residual_sum = 0.0;
        let mut grad = vec![0.0; n];
        stepper.run(seed, p, |i, x, dw| {
            let xv = DVector::from_column_slice(x);
            let log_y = bond.exponent_at_node(i, &xv);
            if let Some((prev_log_y, drift, vol, prev_dw)) = prev.take() {
                let noise: f64 = vol.iter().zip(&prev_dw).map(|(a, b)| a * b).sum();
                residual_sum += (log_y - prev_log_y - drift * h - noise).abs();
                log_hat += drift * h + noise;
            } else {
                log_hat = log_y;
            }
            if i < steps {
                // Z/Y = σᵀ(S x + R₁) as a column
                let s = &sym[i];
                for r in 0..n {
                    let mut acc = bond.r1[i][r];
                    for c in 0..n {
                        acc += s[r * n + c] * x[c];
                    }
                    grad[r] = acc;
                }
                let vol: Vec<f64> = (0..n)
                    .map(|c| (0..n).map(|r| sigma[(r, c)] * grad[r]).sum())
                    .collect();
                let norm2: f64 = vol.iter().map(|v| v * v).sum();
                let drift = f.rate(x) + 0.5 * norm2;
                prev = Some((log_y, drift, vol, dw.to_vec()));
            }
            Ok(())
        })?;
        let terminal = (log_hat.exp() - 1.0).abs();
        if !terminal.is_finite() {
            return Err(QtsmError::PathBlowUp { path: p, step: steps });
        }
        Ok((terminal, residual_sum / steps as f64))
    })?;

    let nf = n_paths as f64;
    Ok(FbsdeReport {
        mean_abs_terminal_error: per_path.iter().map(|v| v.0).sum::<f64>() / nf,
        max_terminal_error: per_path.iter().map(|v| v.0).fold(0.0, f64::max),
        mean_bsde_increment_residual: per_path.iter().map(|v| v.1).sum::<f64>() / nf,
        n_paths,
        steps,
        brownian_steps: steps * substeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat_exp, mat_exp_with_integral, simpson};
    use crate::pricing::{bond_system, forward_system, futures_system};

    fn dm(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    fn reference_1d() -> (FactorModel, QuadraticRate) {
        let model = FactorModel::one_factor(0.05, 0.5, 0.1, 0.1).unwrap();
        let rate = QuadraticRate::new(dm(1, &[1.0]), DVector::from_element(1, 0.02), 0.0, false).unwrap();
        (model, rate)
    }

    fn model_2d(sigma_scale: f64) -> FactorModel {
        FactorModel::new(
            dm(2, &[-0.8, 0.2, 0.1, -0.5]),
            DVector::from_vec(vec![0.02, -0.01]),
            dm(2, &[0.15, 0.0, 0.05, 0.1]) * sigma_scale,
            DVector::from_vec(vec![0.1, -0.05]),
        )
        .unwrap()
    }

    fn rate_2d() -> QuadraticRate {
        QuadraticRate::new(dm(2, &[0.6, 0.1, 0.1, 0.4]), DVector::from_vec(vec![0.02, 0.01]), 0.01, false).unwrap()
    }

    fn payoff_2d() -> QuadraticPayoff {
        QuadraticPayoff::new(dm(2, &[-0.3, 0.05, 0.05, -0.2]), DVector::from_vec(vec![0.4, -0.2]), 0.1).unwrap()
    }

    #[test]
    fn estimate_of_constant_sample() {
        let e = McEstimate::from_samples(&[0.3; 1000]).unwrap();
        assert_eq!(e.mean, 0.3);
        assert_eq!(e.stderr, 0.0);
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(McEstimate::from_samples(&[]).is_err());
    }

    #[test]
    fn paths_start_at_x0_and_are_reproducible() {
        let model = model_2d(1.0);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let a = simulate_paths(&model, DriftMode::RiskNeutral, None, 50, grid, 7).unwrap();
        let b = simulate_paths(&model, DriftMode::RiskNeutral, None, 50, grid, 7).unwrap();
        assert_eq!(a, b);
        for p in 0..50 {
            assert_eq!(a.state(p, 0), &[0.1, -0.05]);
        }
        let c = simulate_paths(&model, DriftMode::RiskNeutral, None, 50, grid, 8).unwrap();
        assert_ne!(a.states(), c.states());
        // path p does not depend on how many paths are drawn
        let d = simulate_paths(&model, DriftMode::RiskNeutral, None, 10, grid, 7).unwrap();
        assert_eq!(d.state(9, 20), a.state(9, 20));
    }

    #[test]
    fn zero_volatility_follows_the_ode() {
        let model = model_2d(0.0);
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let ens = simulate_paths(&model, DriftMode::RiskNeutral, None, 3, grid, 1).unwrap();
        // x(t) = e^{At}x₀ + ∫₀ᵗ e^{Au}du B
        let (e, int) = mat_exp_with_integral(model.a(), 1.0).unwrap();
        let exact = &e * model.x0() + int * model.b();
        for p in 0..3 {
            let x = ens.state(p, 400);
            let err = (x[0] - exact[0]).abs().max((x[1] - exact[1]).abs());
            assert!(err < 1e-3 && err > 0.0, "{err}");
        }
    }

    #[test]
    fn pure_noise_covariance() {
        let sigma = dm(2, &[0.3, 0.0, 0.2, 0.4]);
        let model = FactorModel::new(DMatrix::zeros(2, 2), DVector::zeros(2), sigma.clone(), DVector::zeros(2)).unwrap();
        let grid = TimeGrid::new(0.5, 2).unwrap();
        let ens = simulate_paths(&model, DriftMode::RiskNeutral, None, 100_000, grid, 3).unwrap();
        let h = grid.step();
        let expected = &sigma * sigma.transpose() * h;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for p in 0..ens.n_paths {
            let (a, b) = (ens.state(p, 1), ens.state(p, 2));
            let d = DVector::from_vec(vec![b[0] - a[0], b[1] - a[1]]);
            cov += &d * d.transpose();
        }
        cov /= ens.n_paths as f64;
        for (c, e) in cov.iter().zip(expected.iter()) {
            assert!((c - e).abs() <= 0.05 * expected.max(), "{c} vs {e}");
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let model = FactorModel::new(dm(1, &[4000.0]), DVector::zeros(1), dm(1, &[0.1]), DVector::from_element(1, 1.0)).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        assert!(simulate_paths(&model, DriftMode::RiskNeutral, None, 4, grid, 0).is_ok());
        let grid = TimeGrid::new(200.0, 200).unwrap();
        match simulate_paths(&model, DriftMode::RiskNeutral, None, 4, grid, 0) {
            Err(QtsmError::PathBlowUp { path: 0, step }) => assert!(step > 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_mode_needs_matching_bond_path() {
        let (model, rate) = reference_1d();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        assert!(simulate_paths(&model, DriftMode::Forward, None, 2, grid, 0).is_err());
        let bond = bond_system(&model, &rate, TimeGrid::new(1.0, 40).unwrap()).unwrap();
        assert!(simulate_paths(&model, DriftMode::Forward, Some(bond.path()), 2, grid, 0).is_err());
    }

    #[test]
    fn constant_rate_bond_is_exact() {
        let model = model_2d(1.0);
        let rate = QuadraticRate::constant(2, 0.05).unwrap();
        let est = mc_bond(&model, &rate, 1000, TimeGrid::new(2.0, 100).unwrap(), 1).unwrap();
        assert!((est.mean - 0.904_837_4).abs() < 1e-7);
        assert!((est.mean - (-0.1f64).exp()).abs() < 1e-15);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn zero_volatility_bond_is_a_quadrature() {
        let model = model_2d(0.0);
        let rate = rate_2d();
        let (a, b, x0) = (model.a().clone(), model.b().clone(), model.x0().clone());
        let r = |t: f64| {
            let x = mat_exp(&a, t).unwrap() * &x0 + mat_exp_with_integral(&a, t).unwrap().1 * &b;
            crate::model::eval_short_rate(&rate, &x).unwrap()
        };
        let exact = (-simpson(r, 0.0, 1.0, 200)).exp();
        let est = |steps| mc_bond(&model, &rate, 1, TimeGrid::new(1.0, steps).unwrap(), 0).unwrap().mean;
        let (e1, e2) = ((est(50) - exact).abs(), (est(100) - exact).abs());
        assert!(e1 < 1e-3, "{e1}");
        // first order in h from the Euler path
        assert!((1.6..2.4).contains(&(e1 / e2)), "{}", e1 / e2);
    }

    #[test]
    fn unit_payoff_estimates() {
        let model = model_2d(1.0);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let unit = QuadraticPayoff::unit(2);
        let g = mc_terminal_expectation(&model, &unit, 500, grid, 2).unwrap();
        assert_eq!((g.mean, g.stderr), (1.0, 0.0));
        let rate = rate_2d();
        let num = mc_discounted_payoff(&model, &rate, &unit, 500, grid, 2).unwrap();
        let bond = mc_bond(&model, &rate, 500, grid, 2).unwrap();
        assert_eq!(num, bond);
        let fwd = mc_forward(&model, &rate, &unit, 500, grid, 2).unwrap();
        assert_eq!(fwd.ratio.mean, 1.0);
    }

    #[test]
    fn zero_volatility_futures() {
        let model = model_2d(0.0);
        let payoff = payoff_2d();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let g = mc_terminal_expectation(&model, &payoff, 2, grid, 0).unwrap();
        let ens = simulate_paths(&model, DriftMode::RiskNeutral, None, 1, grid, 0).unwrap();
        let x = DVector::from_column_slice(ens.state(0, 100));
        assert_eq!(g.mean, crate::model::eval_payoff(&payoff, &x).unwrap());
    }

    #[test]
    fn deterministic_rate_forward_matches_futures() {
        let model = model_2d(1.0);
        let rate = QuadraticRate::constant(2, 0.03).unwrap();
        let payoff = payoff_2d();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let f = mc_forward(&model, &rate, &payoff, 4000, grid, 4).unwrap();
        let g = mc_terminal_expectation(&model, &payoff, 4000, grid, 4).unwrap();
        assert!((f.ratio.mean - g.mean).abs() <= 1e-12 * g.mean);
        assert!((f.ratio.stderr - g.stderr).abs() <= 1e-9 * g.stderr);
    }

    #[test]
    fn stderr_scales_with_path_count() {
        let (model, rate) = reference_1d();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let small = mc_bond(&model, &rate, 2_000, grid, 5).unwrap();
        let large = mc_bond(&model, &rate, 32_000, grid, 5).unwrap();
        let ratio = small.stderr / large.stderr;
        assert!((ratio / 4.0 - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn reference_bond_brackets_closed_form() {
        let (model, rate) = reference_1d();
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let closed = bond_system(&model, &rate, grid).unwrap().price(0.0, model.x0()).unwrap();
        let est = mc_bond(&model, &rate, 20_000, grid, 11).unwrap();
        assert!(est.brackets(closed, 3.0), "{closed} vs {est:?}");
    }

    #[test]
    fn futures_and_forward_bracket_closed_form() {
        let model = model_2d(1.0);
        let (rate, payoff) = (rate_2d(), payoff_2d());
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let g = futures_system(&model, &payoff, grid).unwrap().price(0.0, model.x0()).unwrap();
        let f = forward_system(&model, &rate, &payoff, grid).unwrap().price(0.0, model.x0()).unwrap();
        let mg = mc_terminal_expectation(&model, &payoff, 20_000, grid, 12).unwrap();
        let mf = mc_forward(&model, &rate, &payoff, 20_000, grid, 12).unwrap();
        assert!(mg.brackets(g, 3.0), "{g} vs {mg:?}");
        assert!(mf.ratio.brackets(f, 3.0), "{f} vs {mf:?}");
    }

    #[test]
    fn fbsde_constant_rate_is_exact() {
        let model = model_2d(1.0);
        let rate = QuadraticRate::constant(2, 0.04).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let bond = bond_system(&model, &rate, grid).unwrap();
        let report = fbsde_check(&model, &rate, bond.path(), 200, grid, 1).unwrap();
        assert!(report.mean_bsde_increment_residual <= 1e-12, "{report:?}");
        assert!(report.max_terminal_error <= 1e-12, "{report:?}");
    }

    #[test]
    fn fbsde_zero_volatility_is_first_order() {
        let model = model_2d(0.0);
        let rate = rate_2d();
        let err = |steps| {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let bond = bond_system(&model, &rate, grid).unwrap();
            fbsde_check(&model, &rate, bond.path(), 1, grid, 0).unwrap().mean_abs_terminal_error
        };
        let (a, b) = (err(100), err(200));
        assert!(a < 1e-3 && (1.7..2.3).contains(&(a / b)), "{a} {b}");
    }

    #[test]
    fn fbsde_terminal_error_shrinks() {
        let (model, rate) = reference_1d();
        let err = |steps| {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let bond = bond_system(&model, &rate, grid).unwrap();
            fbsde_check(&model, &rate, bond.path(), 500, grid, 9).unwrap()
        };
        let (a, b) = (err(100), err(400));
        assert_eq!(a.brownian_steps, b.brownian_steps);
        assert!(b.mean_abs_terminal_error < a.mean_abs_terminal_error, "{a:?} {b:?}");
        assert!(a.mean_abs_terminal_error < 5.0 / (100f64).sqrt());
    }
}
