//! Weighted least squares in closed form plus a full-batch gradient trainer for
//! linear predictors. The closed-form solution is the reference the gradient
//! path is checked against: with weights 1/sigma2 it is the minimum-variance
//! unbiased estimator when the label noise has the reported variances.

use crate::error::{BivError, Result};
use crate::losses::{batch_loss, WeightingScheme};

const PIVOT_FLOOR: f64 = 1e-12;

/// Solves `a x = b` for a dense row-major d x d system by Gaussian elimination
/// with partial pivoting. A pivot below 1e-12 in absolute value means the
/// system is treated as singular.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d || b.len() != d {
        return Err(BivError::Shape(format!(
            "solve: matrix {} and rhs {} entries for dimension {d}",
            a.len(),
            b.len()
        )));
    }
    for col in 0..d {
        let mut pivot_row = col;
        let mut pivot_abs = a[col * d + col].abs();
        for row in col + 1..d {
            let v = a[row * d + col].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = row;
            }
        }
        if pivot_abs < PIVOT_FLOOR {
            return Err(BivError::Singular(format!(
                "pivot {pivot_abs:.3e} below {PIVOT_FLOOR:.0e} in column {col}"
            )));
        }
        if pivot_row != col {
            for k in 0..d {
                a.swap(col * d + k, pivot_row * d + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * d + col];
        for row in col + 1..d {
            let factor = a[row * d + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..d {
                a[row * d + k] -= factor * a[col * d + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for k in col + 1..d {
            acc -= a[col * d + k] * x[k];
        }
        x[col] = acc / a[col * d + col];
    }
    Ok(x)
}

fn check_design(x: &[f64], n: usize, d: usize, y: &[f64]) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(BivError::Shape("empty design matrix".into()));
    }
    if x.len() != n * d || y.len() != n {
        return Err(BivError::Shape(format!(
            "design is {} values with {} labels, expected {n} x {d}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Weighted least squares coefficients: solves (X' W X) beta = X' W y with
/// W = diag(1/sigma2). Every variance must be strictly positive.
pub fn wls_closed_form(
    x: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    sigma2s: &[f64],
) -> Result<Vec<f64>> {
    check_design(x, n, d, y)?;
    if sigma2s.len() != n {
        return Err(BivError::Shape(format!(
            "{} variances for {n} rows",
            sigma2s.len()
        )));
    }
    if sigma2s.iter().any(|&s2| !(s2 > 0.0)) {
        return Err(BivError::ZeroVariance);
    }
    let mut a = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for k in 0..n {
        let w = 1.0 / sigma2s[k];
        let row = &x[k * d..(k + 1) * d];
        for i in 0..d {
            let wx = w * row[i];
            rhs[i] += wx * y[k];
            for j in i..d {
                a[i * d + j] += wx * row[j];
            }
        }
    }
    // fill the symmetric lower triangle
    for i in 0..d {
        for j in 0..i {
            a[i * d + j] = a[j * d + i];
        }
    }
    solve(a, rhs, d)
}

/// Ordinary least squares, the unit-weight special case.
pub fn ols_closed_form(x: &[f64], n: usize, d: usize, y: &[f64]) -> Result<Vec<f64>> {
    wls_closed_form(x, n, d, y, &vec![1.0; n])
}

pub fn predict_linear(x: &[f64], n: usize, d: usize, beta: &[f64]) -> Result<Vec<f64>> {
    if x.len() != n * d || beta.len() != d {
        return Err(BivError::Shape(format!(
            "predict: design {} values, beta {} for {n} x {d}",
            x.len(),
            beta.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let row = &x[k * d..(k + 1) * d];
        out.push(row.iter().zip(beta).map(|(a, b)| a * b).sum());
    }
    Ok(out)
}

/// Full-batch gradient descent on a linear predictor from a zero start. The loss
/// and its prediction gradient come from the chosen weighting scheme, so the same
/// routine covers L2, IV, BIV and cutoff training.
pub fn fit_gd(
    x: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    sigma2s: &[f64],
    scheme: WeightingScheme,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    check_design(x, n, d, y)?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(BivError::config(format!(
            "fit_gd: learning rate must be positive, got {lr}"
        )));
    }
    let mut beta = vec![0.0; d];
    for _ in 0..steps {
        let preds = predict_linear(x, n, d, &beta)?;
        let res = batch_loss(scheme, &preds, y, sigma2s)?;
        for j in 0..d {
            let mut g = 0.0;
            for k in 0..n {
                g += res.grad[k] * x[k * d + j];
            }
            beta[j] -= lr * g;
        }
    }
    Ok(beta)
}

/// Safe step size for `fit_gd`: the trace of the weighted Gram matrix bounds its
/// largest eigenvalue, so 1/trace keeps full-batch descent stable.
pub fn gd_stable_lr(
    x: &[f64],
    n: usize,
    d: usize,
    sigma2s: &[f64],
    scheme: WeightingScheme,
) -> Result<f64> {
    if x.len() != n * d {
        return Err(BivError::Shape(format!(
            "design is {} values, expected {n} x {d}",
            x.len()
        )));
    }
    let zeros = vec![0.0; n];
    let res = batch_loss(scheme, &zeros, &zeros, sigma2s)?;
    let mut trace = 0.0;
    for k in 0..n {
        let row = &x[k * d..(k + 1) * d];
        let norm2: f64 = row.iter().map(|v| v * v).sum();
        trace += 2.0 * res.weights[k] * norm2;
    }
    if !(trace > 0.0) {
        return Err(BivError::Singular(
            "weighted Gram matrix has zero trace".into(),
        ));
    }
    Ok(1.0 / trace)
}
