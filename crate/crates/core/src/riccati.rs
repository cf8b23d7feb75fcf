//! Non-symmetric matrix Riccati system behind every price in the crate.
//!
//! For `t ∈ [0, T]` the coefficients `(R₂, R₁, R₀)` solve
//!
//! ```text
//! dR₂/dt + S A + ½ S σσᵀ S − Υ = 0,                 R₂(T) = Θ,   S = R₂ + R₂ᵀ
//! dR₁/dt + R₁ (A + σσᵀ S) + Bᵀ S − Ψ = 0,             R₁(T) = θ
//! R₀(t) = c_T + ∫ₜᵀ (R₁B + ½R₁σσᵀR₁ᵀ + tr(σᵀR₂σ) − k) ds
//! ```
//!
//! `R₂ = −(U + V)` splits into the symmetric solution `U` of the Riccati
//! equation of linear-quadratic control and a skew part `V`. `U = Y X⁻¹`
//! where `[X; Y]` solves the linear Hamiltonian system
//! `d/dt [X; Y] = H [X; Y]`, `H = [[A, −2σσᵀ], [−Q, −Aᵀ]]`, with
//! `[X; Y](T) = [I; C₁]`, so `[X; Y](t) = exp(H (t − T)) [I; C₁]`.
//!
//! The global `X(t)` grows like the exponential of the spread of the
//! closed-loop spectrum and quickly becomes too ill-conditioned to divide
//! by. The solver therefore propagates one step at a time, restarting the
//! linear system from `[I; U(t_{i+1})]` at every node: `U` is invariant
//! under right-multiplication of `[X; Y]` by a constant matrix, so the
//! restarted system yields the same `U` and `R₁` with a well-conditioned
//! divisor. The global `X`, `Y` are still accumulated (as products of the
//! step factors) and exposed on [`HamiltonianState`].
//!
//! The propagation and the quadratures for `V` and `R₀` run on an internal
//! grid that splits each requested interval into
//! [`RiccatiProblem::refinement`] sub-steps, chosen from `‖H‖₁` so that
//! Simpson's rule stays accurate on stiff problems; the returned
//! [`CoefficientPath`] is sampled back onto the requested grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QtsmError, Result};
use crate::linalg::{
    cond2, cumulative_simpson_from_end, mat_exp_with_integral, max_abs, norm1, right_solve,
    right_solve_row, skew_part, sym_part, tol_psd,
};
use crate::model::{quadratic_form, FactorModel, TimeGrid};

pub use crate::linalg::mat_exp;

/// Condition estimate above which a step factor is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Target value of `h‖H‖₁` on the internal grid.
const STEP_STIFFNESS: f64 = 0.01;

/// Upper bound on [`RiccatiProblem::refinement`].
pub const MAX_REFINEMENT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductTag {
    Bond,
    Futures,
    Forward,
    Custom,
}

impl ProductTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProductTag::Bond => "bond",
            ProductTag::Futures => "futures",
            ProductTag::Forward => "forward",
            ProductTag::Custom => "custom",
        }
    }
}

/// Data `(Υ, Θ, Ψ, θ, k, c_T)` of one Riccati system on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiProblem {
    model: FactorModel,
    upsilon: DMatrix<f64>,
    theta: DMatrix<f64>,
    psi: DVector<f64>,
    theta_vec: DVector<f64>,
    k: f64,
    c_t: f64,
    grid: TimeGrid,
    product: ProductTag,
}

impl RiccatiProblem {
    /// Fails unless `sym(Υ)` is positive and `sym(Θ)` negative semidefinite
    /// (within [`tol_psd`]); outside that class the solution may blow up
    /// before reaching `t = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: FactorModel,
        upsilon: DMatrix<f64>,
        theta: DMatrix<f64>,
        psi: DVector<f64>,
        theta_vec: DVector<f64>,
        k: f64,
        c_t: f64,
        grid: TimeGrid,
    ) -> Result<Self> {
        let n = model.dim();
        for (name, m) in [("Upsilon", &upsilon), ("Theta", &theta)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(QtsmError::dims(name, format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(QtsmError::NonFinite(name.into()));
            }
        }
        for (name, v) in [("Psi", &psi), ("theta", &theta_vec)] {
            if v.len() != n {
                return Err(QtsmError::dims(name, n, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(QtsmError::NonFinite(name.into()));
            }
        }
        if !k.is_finite() || !c_t.is_finite() {
            return Err(QtsmError::NonFinite("k / cT".into()));
        }
        let q = sym_part(&upsilon);
        let min_q = q.symmetric_eigenvalues().min();
        if min_q < -tol_psd(&q) {
            return Err(QtsmError::InvalidArgument(format!(
                "symmetric part of Upsilon is not positive semidefinite (min eigenvalue {min_q:.3e})"
            )));
        }
        let c = sym_part(&theta);
        let max_c = c.symmetric_eigenvalues().max();
        if max_c > tol_psd(&c) {
            return Err(QtsmError::InvalidArgument(format!(
                "symmetric part of Theta is not negative semidefinite (max eigenvalue {max_c:.3e})"
            )));
        }
        Ok(Self {
            model,
            upsilon,
            theta,
            psi,
            theta_vec,
            k,
            c_t,
            grid,
            product: ProductTag::Custom,
        })
    }

    pub fn with_product(mut self, product: ProductTag) -> Self {
        self.product = product;
        self
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }
    pub fn upsilon(&self) -> &DMatrix<f64> {
        &self.upsilon
    }
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }
    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }
    pub fn theta_vec(&self) -> &DVector<f64> {
        &self.theta_vec
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn c_t(&self) -> f64 {
        self.c_t
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn product(&self) -> ProductTag {
        self.product
    }

    /// `Q = ½(Υ + Υᵀ)`
    pub fn q(&self) -> DMatrix<f64> {
        sym_part(&self.upsilon)
    }
    /// `Q̃ = ½(Υ − Υᵀ)`
    pub fn q_skew(&self) -> DMatrix<f64> {
        skew_part(&self.upsilon)
    }
    /// `C₁ = −½(Θ + Θᵀ)`
    pub fn c1(&self) -> DMatrix<f64> {
        -sym_part(&self.theta)
    }
    /// `C̃₁ = −½(Θ − Θᵀ)`
    pub fn c1_skew(&self) -> DMatrix<f64> {
        -skew_part(&self.theta)
    }

    /// The `2n × 2n` matrix `[[A, −2σσᵀ], [−Q, −Aᵀ]]`.
    /// Internal sub-steps per grid interval.
    pub fn refinement(&self) -> usize {
        let stiffness = self.grid.step() * norm1(&self.hamiltonian());
        ((stiffness / STEP_STIFFNESS).ceil() as usize).clamp(1, MAX_REFINEMENT)
    }

    /// Grid the Hamiltonian state is computed on.
    pub fn internal_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.maturity(), self.grid.steps() * self.refinement())
    }

    pub fn hamiltonian(&self) -> DMatrix<f64> {
        let n = self.model.dim();
        let a = self.model.a();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(a);
        h.view_mut((0, n), (n, n)).copy_from(&(self.model.sigma_sigma_t() * -2.0));
        h.view_mut((n, 0), (n, n)).copy_from(&(-self.q()));
        h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
        h
    }
}

/// Gridded solution of the Hamiltonian system and the `U`/`V` split, on
/// [`RiccatiProblem::internal_grid`].
#[derive(Debug, Clone)]
pub struct HamiltonianState {
    pub grid: TimeGrid,
    /// `X(t_i)` of the un-restarted system, `X(T) = I`.
    pub x: Vec<DMatrix<f64>>,
    /// `Y(t_i)` of the un-restarted system, `Y(T) = C₁`.
    pub y: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    /// 2-norm condition number of `x[i]`.
    pub cond_x: Vec<f64>,
    /// Condition number of the one-step factor actually divided by.
    pub cond_step: Vec<f64>,
    /// `X(t_i)` of the system restarted from `[I; U(t_{i+1})]` at `t_{i+1}`.
    step_x: Vec<DMatrix<f64>>,
    /// `∫_{t_i}^{t_{i+1}} X ds` of the restarted system.
    step_int_x: Vec<DMatrix<f64>>,
    /// `∫_{t_i}^{t_{i+1}} Y ds` of the restarted system.
    step_int_y: Vec<DMatrix<f64>>,
}

/// Builds `[X; Y]` on the grid by exponential propagation of `H` and sets
/// `U = Y X⁻¹` and `V` (via [`solve_skew`]).
pub fn solve_hamiltonian(problem: &RiccatiProblem) -> Result<HamiltonianState> {
    let n = problem.model.dim();
    let grid = problem.internal_grid()?;
    let steps = grid.steps();
    let h = grid.step();
    let ham = problem.hamiltonian();
    // e^{-Hh} and ∫₀ʰ e^{-Hu} du: one backward step of the linear system
    let (prop, prop_int) = mat_exp_with_integral(&(-&ham), h)?;

    let id = DMatrix::<f64>::identity(n, n);
    let c1 = problem.c1();

    let mut x = vec![DMatrix::zeros(n, n); steps + 1];
    let mut y = vec![DMatrix::zeros(n, n); steps + 1];
    let mut u = vec![DMatrix::zeros(n, n); steps + 1];
    let mut cond_x = vec![1.0; steps + 1];
    let mut cond_step = vec![1.0; steps + 1];
    let mut step_x = vec![id.clone(); steps + 1];
    let mut step_int_x = vec![DMatrix::zeros(n, n); steps + 1];
    let mut step_int_y = vec![DMatrix::zeros(n, n); steps + 1];

    x[steps] = id.clone();
    y[steps] = c1.clone();
    u[steps] = c1;

    let mut anchor = DMatrix::<f64>::zeros(2 * n, n);
    for i in (0..steps).rev() {
        anchor.view_mut((0, 0), (n, n)).copy_from(&id);
        anchor.view_mut((n, 0), (n, n)).copy_from(&u[i + 1]);
        let z = &prop * &anchor;
        let zi = &prop_int * &anchor;
        let xs = z.view((0, 0), (n, n)).into_owned();
        let ys = z.view((n, 0), (n, n)).into_owned();
        let t = grid.node(i);

        let c = cond2(&xs);
        cond_step[i] = c;
        if c.is_nan() || c > MAX_CONDITION {
            return Err(QtsmError::IllConditioned { t, cond: c });
        }
        u[i] = right_solve(&ys, &xs).ok_or(QtsmError::IllConditioned { t, cond: c })?;
        if u[i].iter().any(|v| !v.is_finite()) {
            return Err(QtsmError::BlowUp { t });
        }

        x[i] = &xs * &x[i + 1];
        y[i] = &ys * &x[i + 1];
        cond_x[i] = cond2(&x[i]);
        step_int_x[i] = zi.view((0, 0), (n, n)).into_owned();
        step_int_y[i] = zi.view((n, 0), (n, n)).into_owned();
        step_x[i] = xs;
    }

    let mut state = HamiltonianState {
        grid,
        x,
        y,
        u,
        v: Vec::new(),
        cond_x,
        cond_step,
        step_x,
        step_int_x,
        step_int_y,
    };
    state.v = solve_skew(&state, problem);
    Ok(state)
}

/// `V(t_i) = C̃₁ + ∫_{t_i}^T (U A − Aᵀ U + Q̃) ds` by composite Simpson.
pub fn solve_skew(state: &HamiltonianState, problem: &RiccatiProblem) -> Vec<DMatrix<f64>> {
    let n = problem.model.dim();
    let a = problem.model.a();
    let q_skew = problem.q_skew();
    let integrand: Vec<DMatrix<f64>> = state
        .u
        .iter()
        .map(|u| u * a - a.transpose() * u + &q_skew)
        .collect();
    let c1_skew = problem.c1_skew();
    let mut v = cumulative_simpson_from_end(&integrand, state.grid.step(), DMatrix::zeros(n, n));
    for vi in v.iter_mut() {
        *vi += &c1_skew;
    }
    let last = v.len() - 1;
    v[last] = c1_skew;
    v
}

/// `R₂ = −(U + V)` on the state's grid, with the terminal node set to `Θ`.
pub fn r2_from_state(state: &HamiltonianState, problem: &RiccatiProblem) -> Vec<DMatrix<f64>> {
    let mut r2: Vec<DMatrix<f64>> = state.u.iter().zip(&state.v).map(|(u, v)| -(u + v)).collect();
    let last = r2.len() - 1;
    r2[last] = problem.theta.clone();
    r2
}

/// `R₂` on the problem grid.
pub fn solve_r2(problem: &RiccatiProblem) -> Result<Vec<DMatrix<f64>>> {
    let state = solve_hamiltonian(problem)?;
    let r2 = r2_from_state(&state, problem);
    Ok(coarsen(&r2, problem.refinement()))
}

fn coarsen<T: Clone>(values: &[T], every: usize) -> Vec<T> {
    values.iter().step_by(every).cloned().collect()
}

/// `R₁(t) = (θ − ∫ₜᵀ [2BᵀY + ΨX] ds) X(t)⁻¹`, applied node to node on the
/// restarted system: `R₁(t_i) = (R₁(t_{i+1}) − ∫ [2BᵀY + ΨX]) X̂(t_i)⁻¹`,
/// where the one-step integrals of `X̂`, `Ŷ` are exact. Returned on the
/// state's grid.
pub fn solve_r1(problem: &RiccatiProblem, state: &HamiltonianState) -> Result<Vec<DVector<f64>>> {
    let steps = state.grid.steps();
    let b = problem.model.b();
    let mut r1 = vec![DVector::zeros(problem.model.dim()); steps + 1];
    r1[steps] = problem.theta_vec.clone();
    for i in (0..steps).rev() {
        // row vectors stored as columns: Bᵀ Y ↦ Yᵀ B, Ψ X ↦ Xᵀ Ψ
        let w = &r1[i + 1]
            - state.step_int_y[i].transpose() * b * 2.0
            - state.step_int_x[i].transpose() * &problem.psi;
        let t = state.grid.node(i);
        r1[i] = right_solve_row(&w, &state.step_x[i]).ok_or(QtsmError::IllConditioned {
            t,
            cond: state.cond_step[i],
        })?;
    }
    Ok(r1)
}

/// `R₀(t_i) = c_T + ∫_{t_i}^T (R₁B + ½R₁σσᵀR₁ᵀ + tr(σᵀR₂σ) − k) ds` by
/// composite Simpson on the uniform grid the paths are sampled on
/// (`len − 1` steps over `[0, T]`); `R₀(T) = c_T`.
pub fn solve_r0(problem: &RiccatiProblem, r2: &[DMatrix<f64>], r1: &[DVector<f64>]) -> Vec<f64> {
    let h = problem.grid.maturity() / (r2.len() - 1) as f64;
    let integrand: Vec<f64> = r2
        .iter()
        .zip(r1)
        .map(|(r2, r1)| r0_rate(problem, r2, r1))
        .collect();
    let mut r0: Vec<f64> = cumulative_simpson_from_end(&integrand, h, 0.0)
        .into_iter()
        .map(|v| problem.c_t + v)
        .collect();
    let last = r0.len() - 1;
    r0[last] = problem.c_t;
    r0
}

fn r0_rate(problem: &RiccatiProblem, r2: &DMatrix<f64>, r1: &DVector<f64>) -> f64 {
    let m = &problem.model;
    let sigma = m.sigma();
    let trace = (sigma.transpose() * r2 * sigma).trace();
    r1.dot(m.b()) + 0.5 * quadratic_form(m.sigma_sigma_t(), r1) + trace - problem.k
}

/// Full solve: Hamiltonian state (internal grid) plus the coefficient path
/// (problem grid).
pub fn solve(problem: &RiccatiProblem) -> Result<(HamiltonianState, CoefficientPath)> {
    let state = solve_hamiltonian(problem)?;
    let r2 = r2_from_state(&state, problem);
    let r1 = solve_r1(problem, &state)?;
    let r0 = solve_r0(problem, &r2, &r1);
    let every = problem.refinement();
    let path = CoefficientPath {
        grid: problem.grid,
        r2: coarsen(&r2, every),
        r1: coarsen(&r1, every),
        r0: coarsen(&r0, every),
        product: problem.product,
    };
    Ok((state, path))
}

/// Worst-case violations of the `U`/`V` split, all relative to `1 + ‖·‖`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DecompositionResiduals {
    /// `‖U − Uᵀ‖ / (1 + ‖U‖)`
    pub u_asymmetry: f64,
    /// `‖V + Vᵀ‖ / (1 + ‖V‖)`
    pub v_symmetry: f64,
    /// `‖½(R₂ + R₂ᵀ) + U‖ / (1 + ‖U‖)`
    pub sym_split: f64,
    /// `‖½(R₂ − R₂ᵀ) + V‖ / (1 + ‖V‖)`
    pub skew_split: f64,
    /// `‖U X − Y‖ / (1 + ‖Y‖)` on the global system
    pub ux_minus_y: f64,
}

pub fn decomposition_residuals(state: &HamiltonianState, r2: &[DMatrix<f64>]) -> DecompositionResiduals {
    let mut out = DecompositionResiduals::default();
    for (i, r2i) in r2.iter().enumerate() {
        let (u, v) = (&state.u[i], &state.v[i]);
        let nu = 1.0 + max_abs(u);
        let nv = 1.0 + max_abs(v);
        out.u_asymmetry = out.u_asymmetry.max(max_abs(&(u - u.transpose())) / nu);
        out.v_symmetry = out.v_symmetry.max(max_abs(&(v + v.transpose())) / nv);
        out.sym_split = out.sym_split.max(max_abs(&(sym_part(r2i) + u)) / nu);
        out.skew_split = out.skew_split.max(max_abs(&(skew_part(r2i) + v)) / nv);
        if state.x[i].iter().all(|v| v.is_finite()) {
            let y = &state.y[i];
            out.ux_minus_y = out.ux_minus_y.max(max_abs(&(u * &state.x[i] - y)) / (1.0 + max_abs(y)));
        }
    }
    out
}

/// Coefficients `(R₂, R₁, R₀)` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    pub grid: TimeGrid,
    pub r2: Vec<DMatrix<f64>>,
    pub r1: Vec<DVector<f64>>,
    pub r0: Vec<f64>,
    pub product: ProductTag,
}

impl CoefficientPath {
    pub fn dim(&self) -> usize {
        self.r1[0].len()
    }

    /// `xᵀR₂x + R₁x + R₀` at node `i`.
    pub fn exponent_at_node(&self, i: usize, x: &DVector<f64>) -> f64 {
        quadratic_form(&self.r2[i], x) + self.r1[i].dot(x) + self.r0[i]
    }

    /// Coefficients at `t`, linearly interpolated between nodes.
    pub fn interpolate(&self, t: f64) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let (i, w) = self.grid.locate(t)?;
        if w == 0.0 {
            return Ok((self.r2[i].clone(), self.r1[i].clone(), self.r0[i]));
        }
        if w == 1.0 {
            let j = i + 1;
            return Ok((self.r2[j].clone(), self.r1[j].clone(), self.r0[j]));
        }
        let r2 = &self.r2[i] * (1.0 - w) + &self.r2[i + 1] * w;
        let r1 = &self.r1[i] * (1.0 - w) + &self.r1[i + 1] * w;
        let r0 = self.r0[i] * (1.0 - w) + self.r0[i + 1] * w;
        Ok((r2, r1, r0))
    }

    pub fn exponent(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(QtsmError::dims("state", self.dim(), x.len()));
        }
        let (r2, r1, r0) = self.interpolate(t)?;
        Ok(quadratic_form(&r2, x) + r1.dot(x) + r0)
    }

    pub fn to_record(&self) -> CoefficientPathRecord {
        CoefficientPathRecord {
            product: self.product,
            n: self.dim(),
            maturity: self.grid.maturity(),
            steps: self.grid.steps(),
            step: self.grid.step(),
            times: self.grid.nodes(),
            r2: self
                .r2
                .iter()
                .map(|m| m.transpose().iter().copied().collect())
                .collect(),
            r1: self.r1.iter().map(|v| v.iter().copied().collect()).collect(),
            r0: self.r0.clone(),
        }
    }
}

/// Serialized form of a [`CoefficientPath`]; `r2` entries are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPathRecord {
    pub product: ProductTag,
    pub n: usize,
    pub maturity: f64,
    pub steps: usize,
    pub step: f64,
    pub times: Vec<f64>,
    pub r2: Vec<Vec<f64>>,
    pub r1: Vec<Vec<f64>>,
    pub r0: Vec<f64>,
}

impl CoefficientPathRecord {
    pub fn into_path(self) -> Result<CoefficientPath> {
        let grid = TimeGrid::new(self.maturity, self.steps)?;
        let len = self.steps + 1;
        if self.r2.len() != len || self.r1.len() != len || self.r0.len() != len {
            return Err(QtsmError::dims("coefficient path", len, self.r0.len()));
        }
        let n = self.n;
        let mut r2 = Vec::with_capacity(len);
        for row in &self.r2 {
            if row.len() != n * n {
                return Err(QtsmError::dims("r2 entry", n * n, row.len()));
            }
            r2.push(DMatrix::from_row_slice(n, n, row));
        }
        let mut r1 = Vec::with_capacity(len);
        for row in &self.r1 {
            if row.len() != n {
                return Err(QtsmError::dims("r1 entry", n, row.len()));
            }
            r1.push(DVector::from_column_slice(row));
        }
        Ok(CoefficientPath {
            grid,
            r2,
            r1,
            r0: self.r0,
            product: self.product,
        })
    }
}

/// Direct classical RK4 integration of the coupled `(R₂, R₁, R₀)` system
/// backward from `T`, with `refinement` sub-steps per grid interval. This
/// route never touches the Hamiltonian and serves as the reference the
/// exponential solver is checked against.
pub fn rk4_oracle(problem: &RiccatiProblem, refinement: usize) -> Result<CoefficientPath> {
    let refinement = refinement.max(1);
    let grid = problem.grid;
    let steps = grid.steps();
    let n = problem.model.dim();
    let h = grid.step() / refinement as f64;

    let m = &problem.model;
    let (a, b, sst, sigma) = (m.a(), m.b(), m.sigma_sigma_t(), m.sigma());

    // time derivatives (d/dt) of each block
    let rhs = |r2: &DMatrix<f64>, r1: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>, f64) {
        let s = r2 + r2.transpose();
        let d2 = -(&s * a + &s * sst * &s * 0.5 - &problem.upsilon);
        let d1 = -((a + sst * &s).transpose() * r1 + &s * b - &problem.psi);
        let trace = (sigma.transpose() * r2 * sigma).trace();
        let d0 = -(r1.dot(b) + 0.5 * quadratic_form(sst, r1) + trace - problem.k);
        (d2, d1, d0)
    };

    let mut r2 = problem.theta.clone();
    let mut r1 = problem.theta_vec.clone();
    let mut r0 = problem.c_t;
    let mut out_r2 = vec![DMatrix::zeros(n, n); steps + 1];
    let mut out_r1 = vec![DVector::zeros(n); steps + 1];
    let mut out_r0 = vec![0.0; steps + 1];
    out_r2[steps] = r2.clone();
    out_r1[steps] = r1.clone();
    out_r0[steps] = r0;

    let dt = -h;
    for i in (0..steps).rev() {
        for _ in 0..refinement {
            let (a2, a1, a0) = rhs(&r2, &r1);
            let (b2, b1, b0) = rhs(&(&r2 + &a2 * (dt / 2.0)), &(&r1 + &a1 * (dt / 2.0)));
            let (c2, c1, c0) = rhs(&(&r2 + &b2 * (dt / 2.0)), &(&r1 + &b1 * (dt / 2.0)));
            let (d2, d1, d0) = rhs(&(&r2 + &c2 * dt), &(&r1 + &c1 * dt));
            r2 += (a2 + b2 * 2.0 + c2 * 2.0 + d2) * (dt / 6.0);
            r1 += (a1 + b1 * 2.0 + c1 * 2.0 + d1) * (dt / 6.0);
            r0 += (a0 + 2.0 * b0 + 2.0 * c0 + d0) * (dt / 6.0);
        }
        if !r0.is_finite() || r2.iter().chain(r1.iter()).any(|v| !v.is_finite()) {
            return Err(QtsmError::BlowUp { t: grid.node(i) });
        }
        out_r2[i] = r2.clone();
        out_r1[i] = r1.clone();
        out_r0[i] = r0;
    }
    Ok(CoefficientPath {
        grid,
        r2: out_r2,
        r1: out_r1,
        r0: out_r0,
        product: problem.product,
    })
}

/// Largest node-wise difference between two paths on the same grid, per
/// block: `(R₂, R₁, R₀)`.
pub fn max_path_difference(a: &CoefficientPath, b: &CoefficientPath) -> (f64, f64, f64) {
    let mut d = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..a.r0.len() {
        d.0 = d.0.max(max_abs(&(&a.r2[i] - &b.r2[i])));
        d.1 = d.1.max((&a.r1[i] - &b.r1[i]).amax());
        d.2 = d.2.max((a.r0[i] - b.r0[i]).abs());
    }
    d
}
