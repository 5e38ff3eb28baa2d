//! Ridge-penalized logistic regression by damped iteratively reweighted least
//! squares (Newton-Raphson) on standardized features.

use super::linear::{standardize, unstandardize};
use crate::linalg::solve_spd_jittered;
use crate::matrix::FeatureMatrix;
use crate::scalar::{expit, mean, Real};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-10;
/// Working-weight probabilities are clipped to this band.
const WEIGHT_CLIP: f64 = 1e-6;

fn objective<T: Real>(eta: &[T], y: &[T], slopes: &[T], lambda: T) -> T {
    let nf = T::from_count(y.len());
    // log(1 + e^eta) - y * eta, computed stably
    let nll: T = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let softplus = if e > T::zero() { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            softplus - yi * e
        })
        .sum::<T>()
        / nf;
    nll + lambda * T::lit(0.5) * slopes.iter().map(|&b| b * b).sum::<T>()
}

fn linear_terms<T: Real>(cols: &[Vec<T>], beta: &[T], n: usize) -> Vec<T> {
    let mut eta = vec![beta[0]; n];
    for (c, &b) in cols.iter().zip(&beta[1..]) {
        if b != T::zero() {
            for (e, &x) in eta.iter_mut().zip(c) {
                *e += b * x;
            }
        }
    }
    eta
}

/// Returns `(intercept, coefficients)` on the original feature scale.
pub(crate) fn fit_logistic<T: Real>(x: &FeatureMatrix<T>, y: &[T], lambda: T) -> (T, Vec<T>) {
    let n = y.len();
    let nf = T::from_count(n);
    let std = standardize(x);
    let cols: Vec<&Vec<T>> = std
        .columns
        .iter()
        .zip(&std.scales)
        .filter(|(_, &s)| s > T::zero())
        .map(|(c, _)| c)
        .collect();
    let active: Vec<usize> = (0..std.scales.len()).filter(|&j| std.scales[j] > T::zero()).collect();
    let q = cols.len() + 1;
    let owned: Vec<Vec<T>> = cols.iter().map(|c| (*c).clone()).collect();

    let ybar = mean(y).max(T::lit(WEIGHT_CLIP)).min(T::one() - T::lit(WEIGHT_CLIP));
    let mut beta = vec![T::zero(); q];
    beta[0] = (ybar / (T::one() - ybar)).ln();
    let mut eta = linear_terms(&owned, &beta, n);
    let mut obj = objective(&eta, y, &beta[1..], lambda);
    let clip_lo = T::lit(WEIGHT_CLIP);
    let clip_hi = T::one() - clip_lo;

    for _ in 0..MAX_ITER {
        let mut grad = vec![T::zero(); q];
        let mut hess = vec![T::zero(); q * q];
        let mut row = vec![T::zero(); q];
        row[0] = T::one();
        for i in 0..n {
            let p = expit(eta[i]);
            let w = {
                let pc = p.max(clip_lo).min(clip_hi);
                pc * (T::one() - pc)
            };
            let r = p - y[i];
            for (k, c) in owned.iter().enumerate() {
                row[k + 1] = c[i];
            }
            for a in 0..q {
                grad[a] += row[a] * r;
                let wa = w * row[a];
                for b in 0..=a {
                    hess[a * q + b] += wa * row[b];
                }
            }
        }
        for a in 0..q {
            grad[a] /= nf;
            for b in 0..=a {
                hess[a * q + b] /= nf;
                hess[b * q + a] = hess[a * q + b];
            }
        }
        for a in 1..q {
            grad[a] += lambda * beta[a];
            hess[a * q + a] += lambda;
        }
        let step = solve_spd_jittered(&hess, &grad, q);

        // Damped Newton: halve until the penalized objective does not increase.
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b - scale * s).collect();
            let trial_eta = linear_terms(&owned, &trial, n);
            let trial_obj = objective(&trial_eta, y, &trial[1..], lambda);
            if trial_obj <= obj || !obj.is_finite() {
                beta = trial;
                eta = trial_eta;
                obj = trial_obj;
                accepted = true;
                break;
            }
            scale *= T::lit(0.5);
        }
        let max_step = step.iter().fold(T::zero(), |m, s| m.max(s.abs())) * scale;
        if !accepted || max_step < T::lit(STEP_TOL) {
            break;
        }
    }

    let mut slopes = vec![T::zero(); std.scales.len()];
    for (k, &j) in active.iter().enumerate() {
        slopes[j] = beta[k + 1];
    }
    unstandardize(&std, beta[0], &slopes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_logistic_coefficients_on_large_sample() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if rng.gen::<f64>() < expit(0.3 - 1.2 * v) { 1.0 } else { 0.0 })
            .collect();
        let m = FeatureMatrix::new(vec!["x".into()], vec![x], n).unwrap();
        let (b0, b) = fit_logistic(&m, &y, 0.0);
        assert!((b0 - 0.3).abs() < 0.08, "{b0}");
        assert!((b[0] + 1.2).abs() < 0.08, "{}", b[0]);
    }

    #[test]
    fn score_equation_holds() {
        let x = vec![0.1, 0.5, -0.3, 2.0, 1.1, -1.5, 0.0, 0.7];
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let m = FeatureMatrix::new(vec!["x".into()], vec![x.clone()], 8).unwrap();
        let (b0, b) = fit_logistic(&m, &y, 0.1);
        let mean_p = x.iter().map(|&v| expit(b0 + b[0] * v)).sum::<f64>() / 8.0;
        assert!((mean_p - 0.5).abs() < 1e-9);
    }
}
