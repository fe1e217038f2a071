//! Adaptive Gauss–Kronrod quadrature for vector-valued integrands.
//!
//! The integrand writes its values into an output slice so one pass over the
//! domain can integrate every matrix entry of an operator at once. The error
//! estimate of a panel is the max-norm of the Kronrod/Gauss difference.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-12, max_panels: 2000 }
    }
}

impl QuadOptions {
    pub fn abs(abs_tol: f64) -> Self {
        Self { abs_tol, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub values: Vec<f64>,
    pub error: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, scratch: &mut [f64]) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    for (i, &x) in XGK.iter().enumerate() {
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sign in nodes {
            f(center + sign * half * x, scratch);
            for k in 0..dim {
                kron[k] += WGK[i] * scratch[k];
                if i % 2 == 1 {
                    gauss[k] += WG[i / 2] * scratch[k];
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for k in 0..dim {
        kron[k] *= half;
        gauss[k] *= half;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

/// Integrate a vector-valued function of one variable over `[a, b]`.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<QuadResult>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut scratch = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let (values, error) = gk15(&mut f, a, b, dim, &mut scratch);
    let mut total = values.clone();
    let mut total_err = error;
    let mut evaluations = 15;
    heap.push(Panel { a, b, values, error });

    loop {
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if total_err <= opts.abs_tol.max(opts.rel_tol * scale) {
            break;
        }
        if heap.len() >= opts.max_panels {
            return Err(Error::Quadrature {
                achieved: total_err,
                tolerance: opts.abs_tol,
                context: format!("1-D integral over [{a}, {b}]"),
            });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = gk15(&mut f, worst.a, mid, dim, &mut scratch);
        let (rv, re) = gk15(&mut f, mid, worst.b, dim, &mut scratch);
        evaluations += 30;
        for k in 0..dim {
            total[k] += lv[k] + rv[k] - worst.values[k];
        }
        total_err += le + re - worst.error;
        if (worst.b - worst.a).abs() < 1e-14 * (1.0 + a.abs().max(b.abs())) {
            // cannot refine further; accept what we have
            heap.push(Panel { a: worst.a, b: mid, values: lv, error: 0.0 });
            heap.push(Panel { a: mid, b: worst.b, values: rv, error: 0.0 });
            total_err -= le + re;
            continue;
        }
        heap.push(Panel { a: worst.a, b: mid, values: lv, error: le });
        heap.push(Panel { a: mid, b: worst.b, values: rv, error: re });
    }

    // Re-sum from the panels to shed accumulated update round-off.
    let mut values = vec![0.0; dim];
    let mut error = 0.0;
    for p in heap.iter() {
        for k in 0..dim {
            values[k] += p.values[k];
        }
        error += p.error;
    }
    Ok(QuadResult { values, error, evaluations })
}

/// Scalar convenience wrapper.
pub fn integrate<F>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_vec(|x, out| out[0] = f(x), a, b, 1, opts)?;
    Ok((r.values[0], r.error))
}

/// Nested 2-D integral: the outer adaptive rule runs over `x`, and each outer
/// node triggers an inner adaptive integral over `y in [y_lo(x), y_hi(x)]`.
pub fn integrate_2d_vec<F, L, H>(
    mut f: F,
    x_range: (f64, f64),
    y_lo: L,
    y_hi: H,
    dim: usize,
    opts: QuadOptions,
) -> Result<QuadResult>
where
    F: FnMut(f64, f64, &mut [f64]),
    L: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let width = (x_range.1 - x_range.0).abs().max(1e-300);
    let inner_opts = QuadOptions {
        abs_tol: 0.25 * opts.abs_tol / width,
        rel_tol: opts.rel_tol,
        max_panels: opts.max_panels,
    };
    let mut inner_err: f64 = 0.0;
    let mut inner_evals = 0usize;
    let mut failure: Option<Error> = None;
    let outer = integrate_vec(
        |x, out| {
            if failure.is_some() {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            match integrate_vec(|y, o| f(x, y, o), y_lo(x), y_hi(x), dim, inner_opts) {
                Ok(r) => {
                    out.copy_from_slice(&r.values);
                    inner_err = inner_err.max(r.error);
                    inner_evals += r.evaluations;
                }
                Err(e) => {
                    failure = Some(e);
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        },
        x_range.0,
        x_range.1,
        dim,
        QuadOptions { abs_tol: 0.75 * opts.abs_tol, ..opts },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(QuadResult {
        values: outer.values,
        error: outer.error + inner_err * width,
        evaluations: inner_evals,
    })
}

/// Scalar 2-D integral over a rectangle.
pub fn integrate_2d<F>(mut f: F, x_range: (f64, f64), y_range: (f64, f64), opts: QuadOptions) -> Result<(f64, f64)>
where
    F: FnMut(f64, f64) -> f64,
{
    let r = integrate_2d_vec(|x, y, out| out[0] = f(x, y), x_range, |_| y_range.0, |_| y_range.1, 1, opts)?;
    Ok((r.values[0], r.error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let (v, _) = integrate(|x| 3.0 * x * x - x + 2.0, -1.0, 2.0, QuadOptions::default()).unwrap();
        // exact: [x^3 - x^2/2 + 2x] from -1 to 2 = (8 - 2 + 4) - (-1 - 0.5 - 2) = 13.5
        assert_relative_eq!(v, 13.5, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_tail() {
        let (v, _) = integrate(|x| (-x * x).exp(), -10.0, 10.0, QuadOptions::abs(1e-13)).unwrap();
        assert_relative_eq!(v, PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn peaked_integrand_refines() {
        let (v, _) = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, QuadOptions::abs(1e-9)).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert_relative_eq!(v, exact, max_relative = 1e-10);
    }

    #[test]
    fn non_convergence_reports_tolerance() {
        let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 0.0, max_panels: 3 };
        let err = integrate(|x| (50.0 * x).sin().abs(), 0.0, 3.0, opts).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    #[test]
    fn plane_gaussian() {
        let (v, _) = integrate_2d(
            |x, y| (-(x * x + 2.0 * y * y)).exp(),
            (-8.0, 8.0),
            (-8.0, 8.0),
            QuadOptions::abs(1e-11),
        )
        .unwrap();
        assert_relative_eq!(v, PI / 2f64.sqrt(), epsilon = 1e-10);
    }
}
