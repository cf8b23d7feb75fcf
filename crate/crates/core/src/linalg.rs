//! Dense linear-algebra helpers shared by the Riccati and pricing layers.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};

use crate::error::{QtsmError, Result};

/// Degree-13 Padé numerator coefficients (the denominator uses the same
/// coefficients with alternating signs).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the degree-13 approximant meets double
/// precision without scaling.
const THETA13: f64 = 5.371_920_351_148_152;

/// `exp(s * m)` by scaling and squaring with a degree-13 Padé approximant.
pub fn mat_exp(m: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(QtsmError::dims(
            "mat_exp",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if !s.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(QtsmError::NonFinite("mat_exp input".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let a = m * s;
    let norm = norm1(&a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| QtsmError::NonFinite("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(QtsmError::Overflow {
            what: "matrix exponential".into(),
            exponent: norm,
        });
    }
    Ok(r)
}

/// Returns `(exp(s*m), ∫₀^s exp(u*m) du)` from one exponential of the
/// augmented block matrix `[[m, I], [0, 0]]`.
pub fn mat_exp_with_integral(m: &DMatrix<f64>, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(m);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = mat_exp(&aug, s)?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    ))
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn skew_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// 2-norm condition number; infinite for singular or non-finite input.
pub fn cond2(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.singular_values();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

/// Eigenvalue tolerance for semidefiniteness checks of `m`.
pub fn tol_psd(m: &DMatrix<f64>) -> f64 {
    1e-10 * (1.0 + spectral_norm(m))
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = sym_part(m).symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// Solves `z * x = y` for `z` (i.e. `z = y x⁻¹`) without forming the inverse.
pub fn right_solve(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let zt = x.transpose().lu().solve(&y.transpose())?;
    Some(zt.transpose())
}

/// Solves the row-vector system `r * x = w` for `r`, with rows held as
/// column vectors.
pub fn right_solve_row(w: &DVector<f64>, x: &DMatrix<f64>) -> Option<DVector<f64>> {
    x.transpose().lu().solve(w)
}

/// Cumulative integrals `∫_{t_i}^{T} f` for every node of a uniform grid
/// with an even number of steps, built backward from `t_N = T`.
///
/// Even offsets from `T` use composite Simpson panels; odd offsets add a
/// three-point single-interval rule, so every node is fourth-order accurate.
pub fn cumulative_simpson_from_end<T>(values: &[T], h: f64, zero: T) -> Vec<T>
where
    T: Clone + Add<Output = T> + Mul<f64, Output = T>,
{
    let len = values.len();
    assert!(len >= 3 && (len - 1).is_multiple_of(2), "need an even number of steps");
    let n = len - 1;
    let mut out = vec![zero; len];
    let mut j = n;
    while j >= 2 {
        let panel = (values[j - 2].clone() + values[j - 1].clone() * 4.0 + values[j].clone())
            * (h / 3.0);
        out[j - 2] = out[j].clone() + panel;
        j -= 2;
    }
    let mut i = 1;
    while i < n {
        let piece = (values[i - 1].clone() * -1.0 + values[i].clone() * 8.0 + values[i + 1].clone() * 5.0)
            * (h / 12.0);
        out[i] = out[i + 1].clone() + piece;
        i += 2;
    }
    out
}

/// Composite Simpson rule over `[a, b]` with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
