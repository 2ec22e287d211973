//! Minimal numeric helpers shared by the solver and reparameterization.

/// Largest eigenvalue of a symmetric PSD operator by power iteration with a
/// deterministic start vector. `apply` must compute `out = M v`.
pub fn power_iter_sym(
    dim: usize,
    max_iter: usize,
    tol: f64,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    // Fixed pseudo-random start so results are reproducible and the vector is
    // unlikely to be orthogonal to the top eigenvector.
    let mut state = 0x9e37_79b9_7f4a_7c15u64 ^ dim as u64;
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        })
        .collect();
    let norm = l2_norm(&v);
    if norm == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);

    let mut out = vec![0.0; dim];
    let mut eig = 0.0f64;
    for _ in 0..max_iter {
        apply(&v, &mut out);
        let new_eig = dot(&v, &out);
        let norm = l2_norm(&out);
        if norm == 0.0 {
            return 0.0;
        }
        for (vi, oi) in v.iter_mut().zip(out.iter()) {
            *vi = oi / norm;
        }
        if (new_eig - eig).abs() <= tol * new_eig.abs().max(1.0) {
            return new_eig.max(0.0);
        }
        eig = new_eig;
    }
    eig.max(0.0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

/// Population variance (divide by n).
pub fn variance(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let m = mean(a);
    a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / a.len() as f64
}

/// Mean and standard error of the mean (sample sd / sqrt(n)).
pub fn mean_se(a: &[f64]) -> (f64, f64) {
    let n = a.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(a);
    if n == 1 {
        return (m, 0.0);
    }
    let var = a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}
