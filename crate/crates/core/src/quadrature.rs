//! One-dimensional quadrature rules used by the diagnostics and oracles.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 48;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::QuadratureFailure(format!("non-finite integrand on [{a}, {b}]")));
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(format!(
            "refinement stalled on [{a}, {b}] with local error {}",
            delta.abs() / 15.0
        )));
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the standard
/// normal weight, so that `Σ w_i f(z_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
///
/// Golub–Welsch: eigen-decomposition of the Jacobi matrix with off-diagonal
/// entries `sqrt(i)`.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomials_and_exponential() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 5.0, 1e-12).unwrap();
        assert!((v - (1.0 - (-5f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn simpson_reports_non_finite() {
        let r = adaptive_simpson(&|x: f64| 1.0 / (x - 0.5), 0.0, 1.0, 1e-10);
        assert!(r.is_err());
    }

    #[test]
    fn hermite_moments() {
        let (z, w) = gauss_hermite_normal(20);
        let m0: f64 = w.iter().sum();
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        assert!((m0 - 1.0).abs() < 1e-12);
        assert!((m2 - 1.0).abs() < 1e-11);
        assert!((m4 - 3.0).abs() < 1e-10);
        // E[cos Z] = e^{-1/2}
        let c: f64 = z.iter().zip(&w).map(|(z, w)| w * z.cos()).sum();
        assert!((c - (-0.5f64).exp()).abs() < 1e-12);
    }
}
