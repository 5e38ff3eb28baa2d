use crate::scalar::Real;

/// Solves `a x = b` for symmetric positive-definite `a` (row-major, `p x p`)
/// via Cholesky. Returns `None` if `a` is not numerically positive definite.
pub(crate) fn solve_spd<T: Real>(a: &[T], b: &[T], p: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut z = vec![T::zero(); p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}

/// Cholesky solve with a growing diagonal jitter as fallback.
pub(crate) fn solve_spd_jittered<T: Real>(a: &[T], b: &[T], p: usize) -> Vec<T> {
    if let Some(x) = solve_spd(a, b, p) {
        return x;
    }
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(T::one(), T::max);
    let mut jitter = scale * T::lit(1e-10);
    let mut m = a.to_vec();
    loop {
        for i in 0..p {
            m[i * p + i] = a[i * p + i] + jitter;
        }
        if let Some(x) = solve_spd(&m, b, p) {
            return x;
        }
        jitter *= T::lit(100.0);
    }
}
