//! Penalized least squares: cyclic coordinate descent for the lasso and a
//! closed-form solve for ridge, both on standardized features with an
//! unpenalized intercept.

use super::Penalty;
use crate::linalg::solve_spd_jittered;
use crate::matrix::FeatureMatrix;
use crate::scalar::{mean, Real};

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct LassoSolution<T> {
    pub intercept: T,
    pub coefficients: Vec<T>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold<T: Real>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

/// Minimizes `(1/2n) ||y - b0 - X b||^2 + lambda ||b||_1` by cyclic coordinate
/// descent. Stops once a full sweep changes no coefficient by more than `tol`.
pub fn lasso_coordinate_descent<T: Real>(
    columns: &[Vec<T>],
    y: &[T],
    lambda: T,
    tol: T,
    max_sweeps: usize,
) -> LassoSolution<T> {
    let n = y.len();
    let nf = T::from_count(n);
    let p = columns.len();
    let y_mean = mean(y);
    let x_means: Vec<T> = columns.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<T>> = columns
        .iter()
        .zip(&x_means)
        .map(|(c, &m)| c.iter().map(|&v| v - m).collect())
        .collect();
    let curvature: Vec<T> = centered
        .iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<T>() / nf)
        .collect();

    let mut beta = vec![T::zero(); p];
    let mut resid: Vec<T> = y.iter().map(|&v| v - y_mean).collect();
    let mut sweeps = 0;
    let mut converged = p == 0;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta = T::zero();
        for j in 0..p {
            if curvature[j] <= T::zero() {
                continue;
            }
            let xj = &centered[j];
            let rho = xj.iter().zip(&resid).map(|(&a, &b)| a * b).sum::<T>() / nf + curvature[j] * beta[j];
            let updated = soft_threshold(rho, lambda) / curvature[j];
            let delta = updated - beta[j];
            if delta != T::zero() {
                for (r, &x) in resid.iter_mut().zip(xj) {
                    *r -= delta * x;
                }
                beta[j] = updated;
            }
            max_delta = max_delta.max(delta.abs());
        }
        converged = max_delta < tol;
    }
    let intercept = y_mean - beta.iter().zip(&x_means).map(|(&b, &m)| b * m).sum::<T>();
    LassoSolution {
        intercept,
        coefficients: beta,
        sweeps,
        converged,
    }
}

pub(crate) struct Standardized<T> {
    pub columns: Vec<Vec<T>>,
    pub means: Vec<T>,
    pub scales: Vec<T>,
}

/// Centers and scales each column to unit population variance. Constant
/// columns are left at zero and reported with scale zero.
pub(crate) fn standardize<T: Real>(x: &FeatureMatrix<T>) -> Standardized<T> {
    let nf = T::from_count(x.n_rows().max(1));
    let mut columns = Vec::with_capacity(x.n_cols());
    let mut means = Vec::with_capacity(x.n_cols());
    let mut scales = Vec::with_capacity(x.n_cols());
    for col in x.columns() {
        let m = mean(col);
        let sd = (col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nf).sqrt();
        let tiny = T::epsilon() * (T::one() + m.abs()) * T::lit(16.0);
        if sd > tiny {
            columns.push(col.iter().map(|&v| (v - m) / sd).collect());
            scales.push(sd);
        } else {
            columns.push(vec![T::zero(); col.len()]);
            scales.push(T::zero());
        }
        means.push(m);
    }
    Standardized { columns, means, scales }
}

/// Maps standardized slopes back to the original feature scale.
pub(crate) fn unstandardize<T: Real>(std: &Standardized<T>, intercept_std: T, slopes_std: &[T]) -> (T, Vec<T>) {
    let coefs: Vec<T> = slopes_std
        .iter()
        .zip(&std.scales)
        .map(|(&b, &s)| if s > T::zero() { b / s } else { T::zero() })
        .collect();
    let intercept = intercept_std - coefs.iter().zip(&std.means).map(|(&c, &m)| c * m).sum::<T>();
    (intercept, coefs)
}

pub(crate) fn fit_penalized<T: Real>(x: &FeatureMatrix<T>, y: &[T], lambda: T, penalty: Penalty) -> (T, Vec<T>) {
    let std = standardize(x);
    let y_mean = mean(y);
    let slopes = match penalty {
        Penalty::Lasso => {
            lasso_coordinate_descent(&std.columns, y, lambda, T::lit(LASSO_TOL), LASSO_MAX_SWEEPS).coefficients
        }
        Penalty::Ridge => ridge_slopes(&std.columns, y, lambda),
    };
    // Standardized columns have mean zero, so the intercept there is mean(y).
    unstandardize(&std, y_mean, &slopes)
}

fn ridge_slopes<T: Real>(columns: &[Vec<T>], y: &[T], lambda: T) -> Vec<T> {
    let p = columns.len();
    if p == 0 {
        return Vec::new();
    }
    let nf = T::from_count(y.len());
    let y_mean = mean(y);
    let active: Vec<usize> = (0..p).filter(|&j| columns[j].iter().any(|v| !v.is_zero())).collect();
    let q = active.len();
    let mut gram = vec![T::zero(); q * q];
    let mut rhs = vec![T::zero(); q];
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate().take(a + 1) {
            let v = columns[i].iter().zip(&columns[j]).map(|(&u, &w)| u * w).sum::<T>() / nf;
            gram[a * q + b] = v;
            gram[b * q + a] = v;
        }
        gram[a * q + a] += lambda;
        rhs[a] = columns[i].iter().zip(y).map(|(&u, &v)| u * (v - y_mean)).sum::<T>() / nf;
    }
    let sol = solve_spd_jittered(&gram, &rhs, q);
    let mut slopes = vec![T::zero(); p];
    for (a, &j) in active.iter().enumerate() {
        slopes[j] = sol[a];
    }
    slopes
}
