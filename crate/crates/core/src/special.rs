//! Orthogonal polynomials and series coefficients used by the Fock-basis
//! operator constructors.
//!
//! Polynomials are evaluated by their three-term recurrences. Factorial ratios
//! go through `ln_gamma` so that cutoffs well past twenty photons stay finite.

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// Generalized Laguerre polynomial `L_k^{(j)}(x)`.
pub fn laguerre(k: i32, j: i32, x: f64) -> Result<f64> {
    if k < 0 || j < 0 {
        return invalid(format!("laguerre needs k >= 0 and j >= 0, got k={k}, j={j}"));
    }
    Ok(laguerre_poly(k as usize, j as f64, x))
}

/// Recurrence evaluation of `L_k^{(alpha)}(x)` for any real `alpha`.
pub fn laguerre_poly(k: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for i in 1..k {
        let i = i as f64;
        let next = ((2.0 * i + 1.0 + alpha - x) * cur - (i + alpha) * prev) / (i + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `s^k L_k^{(alpha)}(-c/s)` for `c, s >= 0`, stable down to `s = 0`.
///
/// Every term of the explicit sum is nonnegative, so there is no
/// cancellation. At `s = 0` this is `c^k / k!`.
pub fn laguerre_scaled(k: usize, alpha: usize, c: f64, s: f64) -> f64 {
    let n = k + alpha;
    let mut acc = 0.0;
    for i in 0..=k {
        let ln_coef = ln_factorial(n) - ln_factorial(k - i) - ln_factorial(alpha + i) - ln_factorial(i);
        let mut term = ln_coef.exp();
        if i > 0 {
            term *= c.powi(i as i32);
        }
        if k - i > 0 {
            term *= s.powi((k - i) as i32);
        }
        acc += term;
    }
    acc
}

/// Physicists' Hermite polynomial `H_l(z)` for complex argument.
pub fn hermite(l: i32, z: Complex64) -> Result<Complex64> {
    if l < 0 {
        return invalid(format!("hermite needs l >= 0, got {l}"));
    }
    Ok(hermite_poly(l as usize, z))
}

pub fn hermite_poly(l: usize, z: Complex64) -> Complex64 {
    let mut prev = Complex64::new(1.0, 0.0);
    if l == 0 {
        return prev;
    }
    let mut cur = z * 2.0;
    for i in 1..l {
        let next = z * cur * 2.0 - prev * (2.0 * i as f64);
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficient of `t^n` in `(1-t)^{-(alpha-k)} (1-(1+1/a)t)^{-(k+1)}`.
pub fn taylor_f(n: i32, a: f64, alpha: f64, k: f64) -> Result<f64> {
    if n < 0 {
        return invalid(format!("taylor_f needs n >= 0, got {n}"));
    }
    if !(a > 0.0) {
        return invalid(format!("taylor_f needs a > 0, got {a}"));
    }
    let r = 1.0 + 1.0 / a;
    let n = n as usize;
    let left = binomial_series(alpha - k, n);
    let right = binomial_series(k + 1.0, n);
    Ok((0..=n).map(|i| left[i] * right[n - i] * r.powi((n - i) as i32)).sum())
}

/// `a^n f_n(a, alpha, k)`, finite as `a -> 0`.
pub fn taylor_f_scaled(n: usize, a: f64, alpha: f64, k: f64) -> f64 {
    let left = binomial_series(alpha - k, n);
    let right = binomial_series(k + 1.0, n);
    (0..=n)
        .map(|i| left[i] * right[n - i] * a.powi(i as i32) * (1.0 + a).powi((n - i) as i32))
        .sum()
}

/// Coefficients `C(p+i-1, i)` of `(1-t)^{-p}` up to order `n`.
fn binomial_series(p: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut c = 1.0;
    out.push(c);
    for i in 1..=n {
        c *= (p + i as f64 - 1.0) / i as f64;
        out.push(c);
    }
    out
}

pub fn ln_factorial(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Explicit series `sum_i (-1)^i C(k+j, k-i) x^i / i!`.
    fn laguerre_series(k: usize, j: usize, x: f64) -> f64 {
        (0..=k)
            .map(|i| {
                let coef = (ln_factorial(k + j) - ln_factorial(k - i) - ln_factorial(j + i) - ln_factorial(i)).exp();
                coef * (-x).powi(i as i32)
            })
            .sum()
    }

    /// Multiply the two truncated power series term by term.
    fn taylor_brute(n: usize, a: f64, alpha: f64, k: f64) -> f64 {
        let expand = |p: f64| {
            let mut v = vec![1.0];
            for i in 1..=n {
                let prev = v[i - 1];
                v.push(prev * (p + i as f64 - 1.0) / i as f64);
            }
            v
        };
        let left = expand(alpha - k);
        let r = 1.0 + 1.0 / a;
        let right: Vec<f64> = expand(k + 1.0).iter().enumerate().map(|(i, c)| c * r.powi(i as i32)).collect();
        let mut prod = vec![0.0; n + 1];
        for (i, l) in left.iter().enumerate() {
            for (j, rr) in right.iter().enumerate() {
                if i + j <= n {
                    prod[i + j] += l * rr;
                }
            }
        }
        prod[n]
    }

    #[test]
    fn laguerre_examples() {
        assert_eq!(laguerre(0, 5, 3.7).unwrap(), 1.0);
        assert_relative_eq!(laguerre(1, 0, 2.0).unwrap(), -1.0, epsilon = 1e-15);
        assert_relative_eq!(laguerre(2, 1, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(laguerre(-1, 0, 1.0).is_err());
        assert!(laguerre(1, -2, 1.0).is_err());
    }

    #[test]
    fn laguerre_recurrence_matches_series() {
        for k in 0..=15 {
            for j in 0..=15 {
                for step in 0..=40 {
                    let x = -20.0 * step as f64 / 40.0;
                    let rec = laguerre_poly(k, j as f64, x);
                    let ser = laguerre_series(k, j, x);
                    assert_relative_eq!(rec, ser, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn scaled_laguerre_limits() {
        for k in 0..8 {
            for alpha in 0..4 {
                let (c, s): (f64, f64) = (1.7, 0.3);
                let direct = s.powi(k as i32) * laguerre_poly(k, alpha as f64, -c / s);
                assert_relative_eq!(laguerre_scaled(k, alpha, c, s), direct, max_relative = 1e-12);
            }
            let zero = laguerre_scaled(k, 2, 1.3, 0.0);
            assert_relative_eq!(zero, 1.3f64.powi(k as i32) / ln_factorial(k).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite(0, Complex64::new(1.0, 2.0)).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(hermite(1, Complex64::new(0.5, 0.0)).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(hermite(2, Complex64::new(1.0, 0.0)).unwrap(), Complex64::new(2.0, 0.0));
        assert!(hermite(-1, Complex64::new(0.0, 0.0)).is_err());
        // H_3(z) = 8z^3 - 12z
        let z = Complex64::new(0.3, -0.7);
        let h3 = z * z * z * 8.0 - z * 12.0;
        assert!((hermite(3, z).unwrap() - h3).norm() < 1e-14);
    }

    #[test]
    fn taylor_f_examples() {
        assert_eq!(taylor_f(0, 0.4, 2.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(taylor_f(1, 1.0, 1.0, 1.0).unwrap(), 4.0, epsilon = 1e-14);
        // (1-t)^{-1} (1-3t)^{-2}: sum_{j<=3} (j+1) 3^j = 142
        assert_relative_eq!(taylor_f(3, 0.5, 2.0, 1.0).unwrap(), taylor_brute(3, 0.5, 2.0, 1.0), max_relative = 1e-14);
        assert_relative_eq!(taylor_f(3, 0.5, 2.0, 1.0).unwrap(), 142.0, max_relative = 1e-14);
        assert!(taylor_f(2, 0.0, 1.0, 1.0).is_err());
        assert!(taylor_f(2, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn taylor_f_matches_polynomial_product() {
        for n in 0..=12 {
            for &(a, alpha, k) in &[(0.3, 2.0, 1.0), (1.7, 1.0, 1.0), (0.05, 3.0, 1.5), (2.0, 0.0, 1.0), (0.9, 5.0, 2.5)] {
                let f = taylor_f(n as i32, a, alpha, k).unwrap();
                assert_relative_eq!(f, taylor_brute(n, a, alpha, k), max_relative = 1e-12);
                assert_relative_eq!(taylor_f_scaled(n, a, alpha, k), a.powi(n as i32) * f, max_relative = 1e-12);
            }
        }
    }
}
