//! Honest phase-invariant Gaussian channel: simulated moment statistics,
//! outcome densities, the discretized joint distribution and the
//! error-correction leakage.

use std::f64::consts::PI;

use num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::detector::DetectorModel;
use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate_2d_vec, integrate_vec, QuadOptions};

/// Absolute tolerance of the outcome-region integrals.
pub const DISTRIBUTION_TOL: f64 = 1e-10;

/// Fiber attenuation in dB/km.
pub const FIBER_LOSS_DB_PER_KM: f64 = 0.2;

/// Transmittance `eta_t` and excess noise `xi` (shot-noise units, referred
/// to the channel input).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub eta_t: f64,
    pub xi: f64,
    pub distance_km: Option<f64>,
}

impl ChannelModel {
    pub fn from_distance(distance_km: f64, xi: f64) -> Result<Self> {
        if !(distance_km >= 0.0 && distance_km.is_finite()) {
            return invalid(format!("distance must be nonnegative, got {distance_km}"));
        }
        let eta_t = 10f64.powf(-FIBER_LOSS_DB_PER_KM * distance_km / 10.0);
        Self::check_xi(xi)?;
        Ok(Self { eta_t, xi, distance_km: Some(distance_km) })
    }

    pub fn from_transmittance(eta_t: f64, xi: f64) -> Result<Self> {
        if !(eta_t > 0.0 && eta_t <= 1.0) {
            return invalid(format!("transmittance must lie in (0, 1], got {eta_t}"));
        }
        Self::check_xi(xi)?;
        Ok(Self { eta_t, xi, distance_km: None })
    }

    fn check_xi(xi: f64) -> Result<()> {
        if !(xi >= 0.0 && xi.is_finite()) {
            return invalid(format!("excess noise must be nonnegative, got {xi}"));
        }
        Ok(())
    }

    /// Distance in km, recovered from `eta_t` if it was given directly.
    pub fn distance(&self) -> f64 {
        self.distance_km.unwrap_or_else(|| -10.0 * self.eta_t.log10() / FIBER_LOSS_DB_PER_KM)
    }
}

/// QPSK amplitude, postselection radius, reconciliation efficiency and the
/// photon-number cutoff. Priors are uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub alpha: f64,
    pub delta_a: f64,
    pub beta: f64,
    pub cutoff: usize,
}

impl ProtocolParams {
    pub fn new(alpha: f64, delta_a: f64, beta: f64, cutoff: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return invalid(format!("amplitude must be positive, got {alpha}"));
        }
        if !(delta_a >= 0.0 && delta_a.is_finite()) {
            return invalid(format!("postselection radius must be nonnegative, got {delta_a}"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return invalid(format!("reconciliation efficiency must lie in (0, 1], got {beta}"));
        }
        if cutoff < 2 {
            return invalid(format!("photon-number cutoff must be at least 2, got {cutoff}"));
        }
        Ok(Self { alpha, delta_a, beta, cutoff })
    }

    pub fn priors(&self) -> [f64; 4] {
        [0.25; 4]
    }

    /// `alpha_x = alpha e^{i x pi/2}`.
    pub fn signal_states(&self) -> [Complex64; 4] {
        std::array::from_fn(|x| signal_state(self.alpha, x))
    }
}

pub fn signal_state(alpha: f64, x: usize) -> Complex64 {
    // Exact quarter turns keep the constellation symmetric bit-for-bit.
    match x % 4 {
        0 => Complex64::new(alpha, 0.0),
        1 => Complex64::new(0.0, alpha),
        2 => Complex64::new(-alpha, 0.0),
        _ => Complex64::new(0.0, -alpha),
    }
}

/// Expected `F_Q, F_P, S_Q, S_P` per signal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedStatistics {
    pub fq: [f64; 4],
    pub fp: [f64; 4],
    pub sq: [f64; 4],
    pub sp: [f64; 4],
}

impl SimulatedStatistics {
    /// `[<F_Q>, <F_P>, <S_Q>, <S_P>]` for signal `x`.
    pub fn trusted_values(&self, x: usize) -> [f64; 4] {
        [self.fq[x], self.fp[x], self.sq[x], self.sp[x]]
    }

    /// `[<q>, <p>, <n>, <d>]` for signal `x` when the same data are read as
    /// ideal-heterodyne statistics: `F -> q, p` and `S_Q, S_P -> n +- d/2 + 1`.
    pub fn untrusted_values(&self, x: usize) -> [f64; 4] {
        let n = 0.5 * (self.sq[x] + self.sp[x]) - 1.0;
        let d = self.sq[x] - self.sp[x];
        [self.fq[x], self.fp[x], n, d]
    }
}

/// Per-arm variance parameter `v_j = 1 + eta_j eta_t xi / 2 + nu_j` of the
/// outcome density `exp(-(y_j - mean)^2 / v_j)`.
fn outcome_variances(ch: &ChannelModel, det: &DetectorModel) -> (f64, f64) {
    (
        1.0 + det.eta1 * ch.eta_t * ch.xi / 2.0 + det.nu1,
        1.0 + det.eta2 * ch.eta_t * ch.xi / 2.0 + det.nu2,
    )
}

/// Mean outcome `sqrt(eta_1 eta_t) Re a + i sqrt(eta_2 eta_t) Im a`.
fn outcome_mean(a: Complex64, ch: &ChannelModel, det: &DetectorModel) -> Complex64 {
    Complex64::new((det.eta1 * ch.eta_t).sqrt() * a.re, (det.eta2 * ch.eta_t).sqrt() * a.im)
}

/// Moment statistics of the honest channel.
///
/// For unequal arms each quadrature keeps the identical-arm form with its own
/// `(eta_j, nu_j)`: the outcome density factorises over the two arms.
pub fn simulate_statistics(ch: &ChannelModel, det: &DetectorModel, pp: &ProtocolParams) -> SimulatedStatistics {
    let (v1, v2) = outcome_variances(ch, det);
    let mut s = SimulatedStatistics { fq: [0.0; 4], fp: [0.0; 4], sq: [0.0; 4], sp: [0.0; 4] };
    for (x, a) in pp.signal_states().iter().enumerate() {
        let m = outcome_mean(*a, ch, det);
        s.fq[x] = 2f64.sqrt() * m.re;
        s.fp[x] = 2f64.sqrt() * m.im;
        s.sq[x] = 2.0 * m.re * m.re + v1;
        s.sp[x] = 2.0 * m.im * m.im + v2;
    }
    s
}

/// `P(y|x)`.
pub fn pdf_outcome(y: Complex64, x: usize, ch: &ChannelModel, det: &DetectorModel, pp: &ProtocolParams) -> f64 {
    let (v1, v2) = outcome_variances(ch, det);
    let d = y - outcome_mean(signal_state(pp.alpha, x), ch, det);
    (-d.re * d.re / v1 - d.im * d.im / v2).exp() / (PI * (v1 * v2).sqrt())
}

/// `ptilde[x][z] = P(x) P(z|x)` with postselection, and the pass probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizedDistribution {
    pub ptilde: [[f64; 4]; 4],
    pub p_pass: f64,
}

impl DiscretizedDistribution {
    pub fn from_conditional(cond: [[f64; 4]; 4], priors: [f64; 4]) -> Self {
        let mut ptilde = [[0.0; 4]; 4];
        let mut p_pass = 0.0;
        for x in 0..4 {
            for z in 0..4 {
                ptilde[x][z] = priors[x] * cond[x][z];
                p_pass += ptilde[x][z];
            }
        }
        Self { ptilde, p_pass }
    }

    /// Joint distribution renormalised to the postselected rounds.
    pub fn conditional_table(&self) -> Result<[[f64; 4]; 4]> {
        if !(self.p_pass > 0.0) {
            return Err(Error::Degenerate("no round passes postselection".into()));
        }
        let mut t = self.ptilde;
        t.iter_mut().flatten().for_each(|v| *v /= self.p_pass);
        Ok(t)
    }
}

/// `int_delta^inf r exp(-(r - b)^2 / v) dr`.
fn radial_tail(delta: f64, b: f64, v: f64) -> f64 {
    let s = v.sqrt();
    0.5 * v * (-(delta - b).powi(2) / v).exp() + b * 0.5 * (PI * v).sqrt() * erfc((delta - b) / s)
}

/// `P(z|x)` for identical arms: the radial integral is done in closed form and
/// only the angular integral is numerical.
fn conditional_isotropic(center: Complex64, v: f64, delta_a: f64) -> Result<[f64; 4]> {
    let c_abs = center.norm();
    let c_arg = center.arg();
    let mut out = [0.0; 4];
    for (z, o) in out.iter_mut().enumerate() {
        let lo = (2.0 * z as f64 - 1.0) * PI / 4.0;
        let r = integrate_vec(
            |theta, res| {
                let b = c_abs * (theta - c_arg).cos();
                res[0] = (-(c_abs * c_abs - b * b) / v).exp() * radial_tail(delta_a, b, v) / (PI * v);
            },
            lo,
            lo + PI / 2.0,
            1,
            QuadOptions { abs_tol: 1e-13, rel_tol: 1e-14, max_panels: 2000 },
        )?;
        *o = r.values[0];
    }
    Ok(out)
}

/// `P(z|x)` by nested adaptive quadrature of `P(y|x)` in polar coordinates.
pub fn conditional_by_quadrature(
    x: usize,
    ch: &ChannelModel,
    det: &DetectorModel,
    pp: &ProtocolParams,
    abs_tol: f64,
) -> Result<[f64; 4]> {
    let (v1, v2) = outcome_variances(ch, det);
    let mean = outcome_mean(signal_state(pp.alpha, x), ch, det);
    let r_max = mean.norm() + 12.0 * v1.max(v2).sqrt() + pp.delta_a;
    let mut out = [0.0; 4];
    for (z, o) in out.iter_mut().enumerate() {
        let lo = (2.0 * z as f64 - 1.0) * PI / 4.0;
        let r = integrate_2d_vec(
            |r, theta, res| res[0] = r * pdf_outcome(Complex64::from_polar(r, theta), x, ch, det, pp),
            (pp.delta_a, r_max),
            |_| lo,
            |_| lo + PI / 2.0,
            1,
            QuadOptions::abs(abs_tol),
        )?;
        *o = r.values[0];
    }
    Ok(out)
}

pub fn discretization_distribution(ch: &ChannelModel, det: &DetectorModel, pp: &ProtocolParams) -> Result<DiscretizedDistribution> {
    let (v1, v2) = outcome_variances(ch, det);
    let mut cond = [[0.0; 4]; 4];
    for (x, row) in cond.iter_mut().enumerate() {
        *row = if v1 == v2 {
            let center = outcome_mean(signal_state(pp.alpha, x), ch, det);
            conditional_isotropic(center, v1, pp.delta_a)?
        } else {
            conditional_by_quadrature(x, ch, det, pp, DISTRIBUTION_TOL)?
        };
    }
    Ok(DiscretizedDistribution::from_conditional(cond, pp.priors()))
}

/// Error-correction leakage and the entropies it is built from (bits).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcCost {
    pub delta_ec: f64,
    pub p_pass: f64,
    pub h_z: f64,
    pub i_xz: f64,
}

fn entropy_bits(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter().filter(|&v| v > 0.0).map(|v| -v * v.log2()).sum()
}

/// `delta_EC = H(Z) - beta I(X;Z)` on the postselected, renormalised distribution.
pub fn ec_cost(dd: &DiscretizedDistribution, beta: f64) -> Result<EcCost> {
    let t = dd.conditional_table()?;
    let px: Vec<f64> = (0..4).map(|x| t[x].iter().sum()).collect();
    let pz: Vec<f64> = (0..4).map(|z| (0..4).map(|x| t[x][z]).sum()).collect();
    let h_x = entropy_bits(px.iter().cloned());
    let h_z = entropy_bits(pz.iter().cloned());
    let h_xz = entropy_bits(t.iter().flatten().cloned());
    let i_xz = (h_x + h_z - h_xz).max(0.0);
    Ok(EcCost { delta_ec: h_z - beta * i_xz, p_pass: dd.p_pass, h_z, i_xz })
}

/// `xi + nu_el / (eta_d eta_t)`: the excess noise an observer would infer if
/// the electronic noise were attributed to the channel.
pub fn effective_excess_noise(ch: &ChannelModel, det: &DetectorModel) -> f64 {
    ch.xi + det.nu1 / (det.eta1 * ch.eta_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::moment_observables;
    use crate::fock::displaced_thermal_state;
    use crate::quadrature::integrate_2d;
    use approx::assert_relative_eq;

    fn baseline() -> (DetectorModel, ProtocolParams) {
        (DetectorModel::simple(0.719, 0.01).unwrap(), ProtocolParams::new(0.75, 0.0, 0.95, 12).unwrap())
    }

    #[test]
    fn transmittance_from_distance() {
        let ch = ChannelModel::from_distance(50.0, 0.01).unwrap();
        assert_relative_eq!(ch.eta_t, 0.1, max_relative = 1e-14);
        assert_relative_eq!(ch.distance(), 50.0, max_relative = 1e-14);
        let t = ChannelModel::from_transmittance(0.1, 0.01).unwrap();
        assert_relative_eq!(t.distance(), 50.0, max_relative = 1e-12);
        assert!(ChannelModel::from_distance(-1.0, 0.0).is_err());
        assert!(ChannelModel::from_transmittance(0.5, -0.1).is_err());
        assert!(ProtocolParams::new(0.0, 0.0, 0.95, 12).is_err());
        assert!(ProtocolParams::new(0.7, 0.0, 1.5, 12).is_err());
    }

    #[test]
    fn noiseless_second_moment() {
        let ch = ChannelModel::from_transmittance(1.0, 0.0).unwrap();
        let pp = ProtocolParams::new(0.8, 0.0, 1.0, 10).unwrap();
        let s = simulate_statistics(&ch, &DetectorModel::ideal(), &pp);
        assert_relative_eq!(s.sq[0], 2.0 * 0.64 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn first_moments() {
        let (det, pp) = baseline();
        let ch = ChannelModel::from_distance(10.0, 0.01).unwrap();
        let s = simulate_statistics(&ch, &det, &pp);
        assert_relative_eq!(s.fq[0], (2.0 * 0.719 * 10f64.powf(-0.2)).sqrt() * 0.75, max_relative = 1e-14);
        for x in 0..4 {
            assert_relative_eq!(s.fq[x].powi(2) + s.fp[x].powi(2), 2.0 * 0.719 * ch.eta_t * 0.5625, max_relative = 1e-14);
            assert!(s.sq[x] >= s.fq[x].powi(2));
            assert!(s.sp[x] >= s.fp[x].powi(2));
        }
    }

    #[test]
    fn fock_expectations_converge_to_closed_form() {
        let (det, pp) = baseline();
        let ch = ChannelModel::from_distance(20.0, 0.01).unwrap();
        let s = simulate_statistics(&ch, &det, &pp);
        let mom = moment_observables(&det, 20).unwrap();
        for x in 0..4 {
            let a = signal_state(pp.alpha, x) * ch.eta_t.sqrt();
            let rho = displaced_thermal_state(a, ch.eta_t * ch.xi / 2.0, 20).unwrap();
            let got = [&mom.fq, &mom.fp, &mom.sq, &mom.sp].map(|o| rho.trace_product(o));
            for (g, e) in got.iter().zip(s.trusted_values(x)) {
                assert!((g - e).abs() < 1e-6, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn outcome_density() {
        let (det, pp) = baseline();
        let ch = ChannelModel::from_distance(20.0, 0.01).unwrap();
        let v = 1.0 + 0.719 * ch.eta_t * 0.01 / 2.0 + 0.01;
        let peak = Complex64::new((0.719 * ch.eta_t).sqrt() * 0.75, 0.0);
        assert_relative_eq!(pdf_outcome(peak, 0, &ch, &det, &pp), 1.0 / (PI * v), max_relative = 1e-14);
        let (mass, _) =
            integrate_2d(|a, b| pdf_outcome(Complex64::new(a, b), 2, &ch, &det, &pp), (-12.0, 12.0), (-12.0, 12.0), QuadOptions::abs(1e-12))
                .unwrap();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-10);
        // Ideal detector, no excess noise: Husimi function of sqrt(eta_t) alpha_x.
        let ch0 = ChannelModel::from_distance(20.0, 0.0).unwrap();
        let y = Complex64::new(0.2, 0.3);
        let q = (-(y - signal_state(0.75, 1) * ch0.eta_t.sqrt()).norm_sqr()).exp() / PI;
        assert_relative_eq!(pdf_outcome(y, 1, &ch0, &DetectorModel::ideal(), &pp), q, max_relative = 1e-14);
    }

    #[test]
    fn distribution_without_postselection() {
        let (det, pp) = baseline();
        let ch = ChannelModel::from_distance(20.0, 0.01).unwrap();
        let dd = discretization_distribution(&ch, &det, &pp).unwrap();
        for x in 0..4 {
            let row: f64 = dd.ptilde[x].iter().sum();
            assert_relative_eq!(row, 0.25, epsilon = 1e-12);
        }
        assert_relative_eq!(dd.p_pass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_radial_route_matches_nested_quadrature() {
        let det = DetectorModel::simple(0.552, 0.015).unwrap();
        let ch = ChannelModel::from_distance(50.0, 0.01).unwrap();
        for delta in [0.0, 0.6] {
            let pp = ProtocolParams::new(0.7, delta, 0.95, 12).unwrap();
            let dd = discretization_distribution(&ch, &det, &pp).unwrap();
            for x in 0..4 {
                let q = conditional_by_quadrature(x, &ch, &det, &pp, 1e-11).unwrap();
                for z in 0..4 {
                    assert!((dd.ptilde[x][z] - 0.25 * q[z]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rotational_symmetry_and_monotone_pass() {
        let det = DetectorModel::simple(0.552, 0.015).unwrap();
        let ch = ChannelModel::from_distance(50.0, 0.01).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..=5 {
            let pp = ProtocolParams::new(0.7, 0.2 * step as f64, 0.95, 12).unwrap();
            let dd = discretization_distribution(&ch, &det, &pp).unwrap();
            for x in 0..4 {
                for z in 0..4 {
                    assert!((dd.ptilde[x][z] - dd.ptilde[(x + 1) % 4][(z + 1) % 4]).abs() < 1e-12);
                    assert!(dd.ptilde[x][z] >= 0.0);
                }
            }
            assert!(dd.p_pass <= last + 1e-14);
            last = dd.p_pass;
        }
    }

    #[test]
    fn strong_signal_is_nearly_diagonal() {
        let ch = ChannelModel::from_transmittance(1.0, 0.0).unwrap();
        let pp = ProtocolParams::new(10.0, 0.0, 1.0, 10).unwrap();
        let dd = discretization_distribution(&ch, &DetectorModel::ideal(), &pp).unwrap();
        for x in 0..4 {
            assert!(dd.ptilde[x][x] / 0.25 > 1.0 - 1e-9);
        }
    }

    #[test]
    fn ec_cost_limits() {
        let mut cond = [[0.0; 4]; 4];
        (0..4).for_each(|i| cond[i][i] = 1.0);
        let perfect = DiscretizedDistribution::from_conditional(cond, [0.25; 4]);
        let c = ec_cost(&perfect, 1.0).unwrap();
        assert_relative_eq!(c.delta_ec, 0.0, epsilon = 1e-14);
        assert_relative_eq!(c.h_z, 2.0, epsilon = 1e-14);
        let uniform = DiscretizedDistribution::from_conditional([[0.25; 4]; 4], [0.25; 4]);
        let c = ec_cost(&uniform, 0.95).unwrap();
        assert_relative_eq!(c.i_xz, 0.0, epsilon = 1e-14);
        assert_relative_eq!(c.delta_ec, 2.0, epsilon = 1e-14);
        let empty = DiscretizedDistribution::from_conditional([[0.0; 4]; 4], [0.25; 4]);
        assert!(matches!(ec_cost(&empty, 0.95), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ec_cost_matches_brute_force_entropies() {
        let (det, pp) = baseline();
        let ch = ChannelModel::from_distance(20.0, 0.01).unwrap();
        let dd = discretization_distribution(&ch, &det, &pp).unwrap();
        let c = ec_cost(&dd, 0.95).unwrap();
        // Joint table by 2-D quadrature; mutual information as sum p log p/(p_x p_z).
        let mut t = [[0.0; 4]; 4];
        for x in 0..4 {
            let q = conditional_by_quadrature(x, &ch, &det, &pp, 1e-12).unwrap();
            for z in 0..4 {
                t[x][z] = 0.25 * q[z];
            }
        }
        let total: f64 = t.iter().flatten().sum();
        let pz: Vec<f64> = (0..4).map(|z| (0..4).map(|x| t[x][z]).sum::<f64>() / total).collect();
        let mut mi = 0.0;
        for x in 0..4 {
            for z in 0..4 {
                let p = t[x][z] / total;
                mi += p * (p / (0.25 * pz[z])).log2();
            }
        }
        let hz: f64 = pz.iter().map(|p| -p * p.log2()).sum();
        assert!((c.delta_ec - (hz - 0.95 * mi)).abs() < 1e-6);
        assert!(c.i_xz >= 0.0 && c.i_xz <= 2.0);
    }

    #[test]
    fn effective_noise_at_twenty_km() {
        let det = DetectorModel::simple(0.719, 0.01).unwrap();
        let ch = ChannelModel::from_distance(20.0, 0.01).unwrap();
        assert!((effective_excess_noise(&ch, &det) - 0.045).abs() < 1e-3);
    }

    #[test]
    fn unequal_arm_statistics_are_moments_of_the_density() {
        let det = DetectorModel::new(0.8, 0.6, 0.02, 0.01).unwrap();
        let ch = ChannelModel::from_distance(10.0, 0.02).unwrap();
        let pp = ProtocolParams::new(0.7, 0.0, 0.95, 4).unwrap();
        let s = simulate_statistics(&ch, &det, &pp);
        for x in [0, 1] {
            let moment = |w: &dyn Fn(Complex64) -> f64| {
                integrate_2d(|a, b| {
                    let y = Complex64::new(a, b);
                    w(y) * pdf_outcome(y, x, &ch, &det, &pp)
                }, (-12.0, 12.0), (-12.0, 12.0), QuadOptions::abs(1e-12))
                .unwrap()
                .0
            };
            assert!((moment(&|y| 2f64.sqrt() * y.re) - s.fq[x]).abs() < 1e-9);
            assert!((moment(&|y| 2f64.sqrt() * y.im) - s.fp[x]).abs() < 1e-9);
            assert!((moment(&|y| 2.0 * y.re * y.re) - s.sq[x]).abs() < 1e-9);
            assert!((moment(&|y| 2.0 * y.im * y.im) - s.sp[x]).abs() < 1e-9);
        }
        let dd = discretization_distribution(&ch, &det, &pp).unwrap();
        assert_relative_eq!(dd.p_pass, 1.0, epsilon = 1e-9);
    }
}
