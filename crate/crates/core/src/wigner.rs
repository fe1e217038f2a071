//! Wigner functions of Gaussian states and Fock-basis transition operators,
//! and the phase-space overlap `Tr(FG) = pi * int W_F W_G d^2 gamma`.
//!
//! Everything here is an independent route to matrix elements that are
//! computed in closed form elsewhere; production code does not depend on it.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::quadrature::{integrate_2d_vec, QuadOptions};
use crate::special::{laguerre_poly, ln_factorial};

/// Default absolute tolerance of the overlap quadrature.
pub const OVERLAP_TOL: f64 = 1e-10;

/// `prefactor * exp(-Re(g - c)^2 / var_q - Im(g - c)^2 / var_p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerGaussian {
    pub center: Complex64,
    pub var_q: f64,
    pub var_p: f64,
    pub prefactor: f64,
}

impl WignerGaussian {
    pub fn new(center: Complex64, var_q: f64, var_p: f64, prefactor: f64) -> Result<Self> {
        if !(var_q > 0.0 && var_p > 0.0) {
            return invalid(format!("Gaussian variances must be positive, got {var_q}, {var_p}"));
        }
        Ok(Self { center, var_q, var_p, prefactor })
    }

    pub fn eval(&self, gamma: Complex64) -> f64 {
        let d = gamma - self.center;
        self.prefactor * (-d.re * d.re / self.var_q - d.im * d.im / self.var_p).exp()
    }

    /// Closed-form integral over the whole plane.
    pub fn plane_integral(&self) -> f64 {
        self.prefactor * PI * (self.var_q * self.var_p).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { prefactor: self.prefactor * factor, ..*self }
    }

    pub fn sigma_max(&self) -> f64 {
        self.var_q.max(self.var_p).sqrt()
    }
}

/// Single-mode Gaussian states with real squeezing parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaussianState {
    Vacuum,
    Thermal { nbar: f64 },
    DisplacedThermal { alpha: Complex64, nbar: f64 },
    SqueezedThermal { xi: f64, nbar: f64 },
    DisplacedSqueezedThermal { alpha: Complex64, xi: f64, nbar: f64 },
}

impl GaussianState {
    pub fn wigner(&self) -> Result<WignerGaussian> {
        let zero = Complex64::new(0.0, 0.0);
        let (alpha, xi, nbar) = match *self {
            GaussianState::Vacuum => (zero, 0.0, 0.0),
            GaussianState::Thermal { nbar } => (zero, 0.0, nbar),
            GaussianState::DisplacedThermal { alpha, nbar } => (alpha, 0.0, nbar),
            GaussianState::SqueezedThermal { xi, nbar } => (zero, xi, nbar),
            GaussianState::DisplacedSqueezedThermal { alpha, xi, nbar } => (alpha, xi, nbar),
        };
        if !(nbar >= 0.0) {
            return invalid(format!("mean photon number must be nonnegative, got {nbar}"));
        }
        let w = 1.0 + 2.0 * nbar;
        WignerGaussian::new(alpha, 0.5 * w * (-2.0 * xi).exp(), 0.5 * w * (2.0 * xi).exp(), 2.0 / (PI * w))
    }
}

/// `<m|D(beta)|n>` from the closed form with associated Laguerre polynomials.
pub fn displacement_element(m: usize, n: usize, beta: Complex64) -> Complex64 {
    let x = beta.norm_sqr();
    let env = (-x / 2.0).exp();
    if m >= n {
        let ratio = (0.5 * (ln_factorial(n) - ln_factorial(m))).exp();
        beta.powu((m - n) as u32) * (ratio * env * laguerre_poly(n, (m - n) as f64, x))
    } else {
        let ratio = (0.5 * (ln_factorial(m) - ln_factorial(n))).exp();
        (-beta.conj()).powu((n - m) as u32) * (ratio * env * laguerre_poly(m, (n - m) as f64, x))
    }
}

/// Wigner function of the (generally non-Hermitian) operator `|a><b|`:
/// `(2/pi) (-1)^a <b|D(2 gamma)|a>`.
pub fn fock_transition_wigner(a: usize, b: usize, gamma: Complex64) -> Complex64 {
    let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
    displacement_element(b, a, gamma * 2.0) * (sign * 2.0 / PI)
}

/// Square integration domain `[-half_width, half_width]^2` centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationBox {
    pub half_width: f64,
}

impl IntegrationBox {
    /// `max(6, |center| + 6 sigma_max)`: the Gaussian tail outside is below `1e-15`.
    pub fn for_gaussian(w: &WignerGaussian) -> Self {
        Self { half_width: 6.0f64.max(w.center.norm() + 6.0 * w.sigma_max()) }
    }

    pub fn range(&self) -> (f64, f64) {
        (-self.half_width, self.half_width)
    }
}

/// `pi * int W_F W_G` over `domain` for two real phase-space functions.
pub fn overlap_integral<F, G>(wf: F, wg: G, domain: IntegrationBox, abs_tol: f64) -> Result<f64>
where
    F: Fn(Complex64) -> f64,
    G: Fn(Complex64) -> f64,
{
    let r = integrate_2d_vec(
        |x, y, out| {
            let g = Complex64::new(x, y);
            out[0] = wf(g) * wg(g);
        },
        domain.range(),
        |_| domain.range().0,
        |_| domain.range().1,
        1,
        QuadOptions::abs(abs_tol / PI),
    )?;
    Ok(PI * r.values[0])
}

/// Matrix elements `<m|G|n>` of an operator with Gaussian Wigner function,
/// one per requested `(m, n)` pair, via `Tr(|n><m| G)` in phase space.
pub fn fock_elements_by_overlap(w: &WignerGaussian, pairs: &[(usize, usize)], abs_tol: f64) -> Result<Vec<Complex64>> {
    let domain = IntegrationBox::for_gaussian(w);
    let dim = 2 * pairs.len();
    let r = integrate_2d_vec(
        |x, y, out| {
            let g = Complex64::new(x, y);
            let wg = w.eval(g);
            for (k, &(m, n)) in pairs.iter().enumerate() {
                let v = fock_transition_wigner(n, m, g) * wg;
                out[2 * k] = v.re;
                out[2 * k + 1] = v.im;
            }
        },
        domain.range(),
        |_| domain.range().0,
        |_| domain.range().1,
        dim,
        QuadOptions::abs(abs_tol / PI),
    )?;
    Ok((0..pairs.len()).map(|k| Complex64::new(r.values[2 * k], r.values[2 * k + 1]) * PI).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_overlap, displaced_thermal_state, displacement};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn printed_values_at_origin() {
        let vac = GaussianState::Vacuum.wigner().unwrap();
        assert_relative_eq!(vac.eval(c(0.0, 0.0)), 2.0 / PI, epsilon = 1e-15);
        let th = GaussianState::Thermal { nbar: 0.7 }.wigner().unwrap();
        assert_relative_eq!(th.eval(c(0.0, 0.0)), 2.0 / PI / 2.4, epsilon = 1e-15);
        assert!(GaussianState::Thermal { nbar: -0.1 }.wigner().is_err());
        assert!(GaussianState::DisplacedSqueezedThermal { alpha: c(1.0, 0.0), xi: 0.2, nbar: -1.0 }.wigner().is_err());
    }

    #[test]
    fn squeezed_form_matches_exponent() {
        let (xi, nbar, a) = (0.3, 0.4, c(0.5, -0.2));
        let w = GaussianState::DisplacedSqueezedThermal { alpha: a, xi, nbar }.wigner().unwrap();
        let g = c(0.9, 0.1);
        let d = g - a;
        let expect = 2.0 / PI / (1.0 + 2.0 * nbar)
            * (-2.0 * ((2.0 * xi).exp() * d.re * d.re + (-2.0 * xi).exp() * d.im * d.im) / (1.0 + 2.0 * nbar)).exp();
        assert_relative_eq!(w.eval(g), expect, max_relative = 1e-14);
    }

    #[test]
    fn every_state_has_unit_integral() {
        let states = [
            GaussianState::Vacuum,
            GaussianState::Thermal { nbar: 1.3 },
            GaussianState::DisplacedThermal { alpha: c(0.7, -1.1), nbar: 0.2 },
            GaussianState::SqueezedThermal { xi: -0.4, nbar: 0.5 },
            GaussianState::DisplacedSqueezedThermal { alpha: c(-1.0, 0.3), xi: 0.6, nbar: 0.1 },
        ];
        for s in states {
            let w = s.wigner().unwrap();
            assert_relative_eq!(w.plane_integral(), 1.0, epsilon = 1e-14);
            let domain = IntegrationBox::for_gaussian(&w);
            let numeric = overlap_integral(|g| w.eval(g), |_| 1.0 / PI, domain, 1e-11).unwrap();
            assert!((numeric - 1.0).abs() < 1e-8, "{s:?}: {numeric}");
        }
    }

    #[test]
    fn vacuum_overlaps() {
        let vac = GaussianState::Vacuum.wigner().unwrap();
        let domain = IntegrationBox::for_gaussian(&vac);
        let self_overlap = overlap_integral(|g| vac.eval(g), |g| vac.eval(g), domain, 1e-11).unwrap();
        assert_relative_eq!(self_overlap, 1.0, epsilon = 1e-9);
        let nbar = 0.8;
        let th = GaussianState::Thermal { nbar }.wigner().unwrap();
        let v = overlap_integral(|g| vac.eval(g), |g| th.eval(g), IntegrationBox::for_gaussian(&th), 1e-11).unwrap();
        assert_relative_eq!(v, 1.0 / (1.0 + nbar), epsilon = 1e-9);
    }

    #[test]
    fn coherent_states_overlap_as_squared_modulus() {
        let (a, b) = (c(0.4, 0.9), c(-0.3, 0.2));
        let wa = GaussianState::DisplacedThermal { alpha: a, nbar: 0.0 }.wigner().unwrap();
        let wb = GaussianState::DisplacedThermal { alpha: b, nbar: 0.0 }.wigner().unwrap();
        let v = overlap_integral(|g| wa.eval(g), |g| wb.eval(g), IntegrationBox { half_width: 7.0 }, 1e-11).unwrap();
        assert_relative_eq!(v, coherent_overlap(a, b).norm_sqr(), epsilon = 1e-9);
    }

    #[test]
    fn displacement_elements_match_matrix() {
        let beta = c(0.8, -0.45);
        let d = displacement(beta, 9);
        for m in 0..10 {
            for n in 0..10 {
                assert!((displacement_element(m, n, beta) - d[(m, n)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn vacuum_projector_wigner() {
        let g = c(0.3, -0.6);
        let w = fock_transition_wigner(0, 0, g);
        assert_relative_eq!(w.re, 2.0 / PI * (-2.0 * g.norm_sqr()).exp(), epsilon = 1e-15);
        assert_eq!(w.im, 0.0);
    }

    #[test]
    fn overlap_reproduces_fock_trace_of_gaussian_states() {
        // Tr(F G) for two displaced thermal states, Fock side at N = 20.
        let cutoff = 20;
        let cases = [
            ((c(0.5, 0.2), 0.3), (c(-0.4, 0.6), 0.8)),
            ((c(1.2, -0.3), 0.0), (c(0.9, 0.1), 0.5)),
            ((c(0.0, 0.0), 1.0), (c(0.3, -0.8), 0.2)),
        ];
        for ((a1, n1), (a2, n2)) in cases {
            let f = displaced_thermal_state(a1, n1, cutoff).unwrap();
            let g = displaced_thermal_state(a2, n2, cutoff).unwrap();
            let fock = f.trace_product(&g);
            let wf = GaussianState::DisplacedThermal { alpha: a1, nbar: n1 }.wigner().unwrap();
            let wg = GaussianState::DisplacedThermal { alpha: a2, nbar: n2 }.wigner().unwrap();
            let ph = overlap_integral(|z| wf.eval(z), |z| wg.eval(z), IntegrationBox::for_gaussian(&wg), 1e-11).unwrap();
            assert!((fock - ph).abs() < 1e-6, "{fock} vs {ph}");
        }
    }

    #[test]
    fn fock_elements_of_thermal_state() {
        let nbar = 0.6;
        let w = GaussianState::Thermal { nbar }.wigner().unwrap();
        let pairs = [(0, 0), (1, 1), (3, 3), (0, 2), (2, 1)];
        let vals = fock_elements_by_overlap(&w, &pairs, 1e-11).unwrap();
        for (&(m, n), v) in pairs.iter().zip(vals) {
            let expect = if m == n { (nbar / (1.0 + nbar)).powi(m as i32) / (1.0 + nbar) } else { 0.0 };
            assert!((v - c(expect, 0.0)).norm() < 1e-8, "({m},{n}): {v}");
        }
    }
}
