//! Noisy heterodyne detector: POVM elements `G_y`, key-map region operators
//! and first/second-moment observables on the truncated Fock basis.
//!
//! Each homodyne arm `j` is a beam splitter of transmittance `eta_j` mixing
//! the signal with a thermal ancilla, which makes every `G_y` a scaled,
//! displaced (and, for unequal arms, squeezed) thermal state. When both arms
//! are identical the integrals over outcome regions have closed forms in
//! terms of `taylor_f`; otherwise they are done by adaptive quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::fock::{quadrature_operators, CMatrix, FockOperator};
use crate::quadrature::{integrate_2d_vec, integrate_vec, QuadOptions};
use crate::special::{hermite_poly, laguerre_scaled, ln_factorial};
use crate::wigner::{fock_elements_by_overlap, WignerGaussian, OVERLAP_TOL};

/// Below this ancilla photon number the detector is treated as ideal.
pub const IDEAL_NBAR_THRESHOLD: f64 = 1e-12;
/// `|lambda_1 - lambda_2|` below this routes to the identical-arm formulas.
pub const DEGENERATE_LAMBDA_GAP: f64 = 1e-12;
/// Absolute tolerance of the postselection-disk radial integrals.
pub const POSTSELECTION_TOL: f64 = 1e-12;
/// Absolute tolerance of the unequal-arm region/moment integrals.
pub const NUMERIC_OPERATOR_TOL: f64 = 1e-10;
/// Default cutoff cap for the unequal-arm numerical path.
pub const NUMERIC_CUTOFF_CAP: usize = 10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Efficiencies and electronic noises (shot-noise units) of the two
/// homodyne arms; arm 1 measures `q`, arm 2 measures `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub eta1: f64,
    pub eta2: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl DetectorModel {
    pub fn new(eta1: f64, eta2: f64, nu1: f64, nu2: f64) -> Result<Self> {
        for (name, eta) in [("eta1", eta1), ("eta2", eta2)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return invalid(format!("{name} must lie in (0, 1], got {eta}"));
            }
        }
        for (name, nu) in [("nu1", nu1), ("nu2", nu2)] {
            if !(nu >= 0.0 && nu.is_finite()) {
                return invalid(format!("{name} must be nonnegative, got {nu}"));
            }
        }
        Ok(Self { eta1, eta2, nu1, nu2 })
    }

    /// Both arms with efficiency `eta_d` and electronic noise `nu_el`.
    pub fn simple(eta_d: f64, nu_el: f64) -> Result<Self> {
        Self::new(eta_d, eta_d, nu_el, nu_el)
    }

    pub fn ideal() -> Self {
        Self { eta1: 1.0, eta2: 1.0, nu1: 0.0, nu2: 0.0 }
    }

    pub fn simple_case(&self) -> bool {
        self.eta1 == self.eta2 && self.nu1 == self.nu2
    }

    /// `lambda_j = (1 - eta_j + nu_j) / eta_j`.
    pub fn lambdas(&self) -> (f64, f64) {
        ((1.0 - self.eta1 + self.nu1) / self.eta1, (1.0 - self.eta2 + self.nu2) / self.eta2)
    }

    /// Whether the unequal-arm formulas degenerate and the identical-arm
    /// formulas (with `eta_d = eta1`, `nbar_d = lambda1`) apply.
    pub fn effectively_simple(&self) -> bool {
        let (l1, l2) = self.lambdas();
        self.simple_case() || ((l1 - l2).abs() < DEGENERATE_LAMBDA_GAP && self.eta1 == self.eta2)
    }

    /// `nbar_d` of the identical-arm model.
    pub fn nbar_d(&self) -> f64 {
        self.lambdas().0
    }

    /// Mean photon number `nu_j / (2 (1 - eta_j))` of each arm's thermal
    /// ancilla; `None` for a unit-efficiency arm.
    pub fn ancilla_photon_numbers(&self) -> (Option<f64>, Option<f64>) {
        let f = |eta: f64, nu: f64| if eta < 1.0 { Some(nu / (2.0 * (1.0 - eta))) } else { None };
        (f(self.eta1, self.nu1), f(self.eta2, self.nu2))
    }

    pub fn is_ideal(&self) -> bool {
        self.effectively_simple() && self.nbar_d() < IDEAL_NBAR_THRESHOLD
    }
}

/// Parameters identifying `G_y` as `(1/(sqrt(eta1 eta2) pi)) rho_DSTS(alpha_het, xi_het, nbar_het)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralPovmParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub nbar_het: f64,
    pub xi_het: f64,
    pub alpha_het: Complex64,
}

impl GeneralPovmParams {
    pub fn new(det: &DetectorModel, y: Complex64) -> Self {
        let (l1, l2) = det.lambdas();
        Self {
            lambda1: l1,
            lambda2: l2,
            nbar_het: (((1.0 + 2.0 * l1) * (1.0 + 2.0 * l2)).sqrt() - 1.0) / 2.0,
            xi_het: 0.25 * ((1.0 + 2.0 * l2) / (1.0 + 2.0 * l1)).ln(),
            alpha_het: Complex64::new(y.re / det.eta1.sqrt(), y.im / det.eta2.sqrt()),
        }
    }
}

/// Phase-space (Wigner) representation of `G_y`.
pub fn povm_wigner(y: Complex64, det: &DetectorModel) -> WignerGaussian {
    let p = GeneralPovmParams::new(det, y);
    let w = 1.0 + 2.0 * p.nbar_het;
    WignerGaussian {
        center: p.alpha_het,
        var_q: 0.5 * w * (-2.0 * p.xi_het).exp(),
        var_p: 0.5 * w * (2.0 * p.xi_het).exp(),
        prefactor: 2.0 / (PI * w) / ((det.eta1 * det.eta2).sqrt() * PI),
    }
}

/// `<m|G_y|n>` for `m <= n` in the identical-arm model, written with the
/// scaled Laguerre form so that `nbar_d -> 0` is continuous.
fn simple_entry(m: usize, n: usize, y: Complex64, eta: f64, nbar: f64) -> Complex64 {
    let k = n - m;
    let c = y.norm_sqr() / (eta * (1.0 + nbar));
    let ln_ratio = 0.5 * (ln_factorial(m) - ln_factorial(n));
    let mag = (ln_ratio - c - (n as f64 + 1.0) * nbar.ln_1p()).exp() / (eta * PI) * laguerre_scaled(m, k, c, nbar);
    (y.conj() / eta.sqrt()).powu(k as u32) * mag
}

/// `<m|G_y|n>` for the ideal heterodyne POVM `(1/pi)|y><y|`.
fn coherent_projector_entry(m: usize, n: usize, y: Complex64) -> Complex64 {
    let ln_norm = -y.norm_sqr() - 0.5 * (ln_factorial(m) + ln_factorial(n));
    y.powu(m as u32) * y.conj().powu(n as u32) * (ln_norm.exp() / PI)
}

fn fill_hermitian(cutoff: usize, entry: impl Fn(usize, usize) -> Complex64) -> Result<FockOperator> {
    let d = cutoff + 1;
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = entry(i, j);
        }
    }
    FockOperator::hermitian_from_upper(m)
}

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff == 0 {
        return invalid("photon-number cutoff must be at least 1");
    }
    Ok(())
}

/// POVM element `G_y` of the identical-arm detector on `{|0>..|cutoff>}`.
pub fn povm_element_simple(y: Complex64, det: &DetectorModel, cutoff: usize) -> Result<FockOperator> {
    check_cutoff(cutoff)?;
    if !det.simple_case() {
        return invalid("povm_element_simple needs identical arms; use povm_element_general");
    }
    let nbar = det.nbar_d();
    if nbar < IDEAL_NBAR_THRESHOLD {
        return fill_hermitian(cutoff, |m, n| coherent_projector_entry(m, n, y));
    }
    let eta = det.eta1;
    fill_hermitian(cutoff, |m, n| simple_entry(m, n, y, eta, nbar))
}

/// Precomputed outcome-independent pieces of the unequal-arm matrix elements.
#[derive(Debug, Clone)]
struct GeneralKernel {
    eta1: f64,
    eta2: f64,
    lam1: f64,
    lam2: f64,
    a: f64,
    b_sqrt: Complex64,
    q_norm: f64,
}

impl GeneralKernel {
    fn new(det: &DetectorModel) -> Self {
        let (l1, l2) = det.lambdas();
        let denom = 2.0 * (l1 + 1.0) * (l2 + 1.0);
        let b_abs = (l1 - l2).abs() / denom;
        // The square root is chosen so that (b_sqrt)^2 = (lambda2 - lambda1) / denom,
        // which is the sign that reproduces the Wigner form of G_y for either
        // ordering of the two arms.
        let phi = if l1 <= l2 { PI } else { 0.0 };
        Self {
            eta1: det.eta1,
            eta2: det.eta2,
            lam1: l1,
            lam2: l2,
            a: 1.0 - (l1 + l2 + 2.0) / denom,
            b_sqrt: Complex64::new(0.0, 1.0) * Complex64::from_polar(b_abs.sqrt(), phi / 2.0),
            q_norm: 1.0 / (PI * ((l1 + 1.0) * (l2 + 1.0)).sqrt()) / (det.eta1 * det.eta2).sqrt(),
        }
    }

    /// Upper triangle of `<m|G_y|n>` written into `out[(m, n)]`.
    fn fill(&self, y: Complex64, cutoff: usize, out: &mut CMatrix) {
        let alpha = Complex64::new(y.re / self.eta1.sqrt(), y.im / self.eta2.sqrt());
        let (sx, sy) = (self.lam1 + 1.0, self.lam2 + 1.0);
        let q0 = self.q_norm * (-alpha.re * alpha.re / sx - alpha.im * alpha.im / sy).exp();
        let c = Complex64::new(alpha.re / sx, alpha.im / sy);
        // (B/2)^{l/2} H_l((2B)^{-1/2} C), expressed through B^{1/2} only.
        let half_sqrt = self.b_sqrt * FRAC_1_SQRT_2;
        let z = c / (self.b_sqrt * std::f64::consts::SQRT_2);
        let h: Vec<Complex64> = (0..=cutoff).map(|l| half_sqrt.powu(l as u32) * hermite_poly(l, z)).collect();
        for m in 0..=cutoff {
            for n in m..=cutoff {
                let mut acc = ZERO;
                for k in 0..=m {
                    let ln_w = 0.5 * (ln_factorial(m) + ln_factorial(n))
                        - ln_factorial(k)
                        - ln_factorial(m - k)
                        - ln_factorial(n - k);
                    acc += h[m - k] * h[n - k].conj() * (ln_w.exp() * self.a.powi(k as i32));
                }
                out[(m, n)] = acc * q0;
            }
        }
    }
}

/// POVM element `G_y` for arbitrary arms. Near-identical arms (where the
/// squeezing vanishes) use the identical-arm formula instead.
pub fn povm_element_general(y: Complex64, det: &DetectorModel, cutoff: usize) -> Result<FockOperator> {
    check_cutoff(cutoff)?;
    if det.effectively_simple() {
        let same = DetectorModel { eta2: det.eta1, nu2: det.nu1, ..*det };
        return povm_element_simple(y, &same, cutoff);
    }
    let kernel = GeneralKernel::new(det);
    let mut m = CMatrix::zeros(cutoff + 1, cutoff + 1);
    kernel.fill(y, cutoff, &mut m);
    FockOperator::hermitian_from_upper(m)
}

/// `G_y` by whichever closed form applies.
pub fn povm_element(y: Complex64, det: &DetectorModel, cutoff: usize) -> Result<FockOperator> {
    if det.simple_case() {
        povm_element_simple(y, det, cutoff)
    } else {
        povm_element_general(y, det, cutoff)
    }
}

/// `<m|G_y|n>` from the phase-space overlap of `|n><m|` with `G_y`.
/// Validation only.
pub fn povm_oracle_entry(m: usize, n: usize, y: Complex64, det: &DetectorModel) -> Result<Complex64> {
    Ok(povm_oracle_entries(&[(m, n)], y, det)?[0])
}

pub fn povm_oracle_entries(pairs: &[(usize, usize)], y: Complex64, det: &DetectorModel) -> Result<Vec<Complex64>> {
    if let Some(&(m, n)) = pairs.iter().find(|&&(m, n)| m > 20 || n > 20) {
        return invalid(format!("oracle entries limited to photon numbers <= 20, got ({m}, {n})"));
    }
    fock_elements_by_overlap(&povm_wigner(y, det), pairs, OVERLAP_TOL)
}

/// Options for the numerical (unequal-arm) operator constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericOptions {
    pub abs_tol: f64,
    /// Permit cutoffs above [`NUMERIC_CUTOFF_CAP`].
    pub allow_large_cutoff: bool,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self { abs_tol: NUMERIC_OPERATOR_TOL, allow_large_cutoff: false }
    }
}

/// Region operators `R_j = int_{A_j} G_y d^2y` for the four key-map sectors
/// `A_j = {r e^{i theta}: r >= delta_a, |theta - j pi/2| <= pi/4}`, plus the
/// discarded disk `r < delta_a`.
#[derive(Debug, Clone)]
pub struct RegionOperators {
    pub regions: [FockOperator; 4],
    pub disk: FockOperator,
    pub delta_a: f64,
    /// Built by two-dimensional quadrature rather than closed forms.
    pub numeric: bool,
}

impl RegionOperators {
    pub fn dim(&self) -> usize {
        self.disk.dim()
    }

    /// `sum_j R_j`, i.e. the postselection-pass operator.
    pub fn pass_operator(&self) -> CMatrix {
        let mut s = self.regions[0].matrix().clone();
        for r in &self.regions[1..] {
            s += r.matrix();
        }
        s
    }
}

/// `i [e^{i(m-n)(2j-1)pi/4} - e^{i(m-n)(2j+1)pi/4}] / (m-n)` for `m != n`,
/// and its `pi/2` limit on the diagonal.
fn sector_phase(m: usize, n: usize, j: usize) -> Complex64 {
    if m == n {
        return Complex64::new(PI / 2.0, 0.0);
    }
    let d = m as f64 - n as f64;
    let lo = Complex64::from_polar(1.0, d * (2.0 * j as f64 - 1.0) * PI / 4.0);
    let hi = Complex64::from_polar(1.0, d * (2.0 * j as f64 + 1.0) * PI / 4.0);
    Complex64::new(0.0, 1.0) * (lo - hi) / d
}

/// `sum_i C(p+i-1, i) C(k+n-i, n-i) (a/(1+a))^i`, equal to `f_n(a, alpha, k) (a/(1+a))^n`
/// with `p = alpha - k`; bounded for all `a >= 0`.
fn taylor_f_ratio(n: usize, a: f64, alpha: f64, k: f64) -> f64 {
    let t = a / (1.0 + a);
    let mut left = 1.0;
    let mut right = vec![1.0; n + 1];
    for i in 1..=n {
        right[i] = right[i - 1] * (k + i as f64) / i as f64;
    }
    let mut acc = 0.0;
    let mut tp = 1.0;
    for i in 0..=n {
        if i > 0 {
            left *= (alpha - k + i as f64 - 1.0) / i as f64;
            tp *= t;
        }
        acc += left * right[n - i] * tp;
    }
    acc
}

/// Upper-triangle `(m, n)` pairs, row-major.
fn upper_pairs(cutoff: usize) -> Vec<(usize, usize)> {
    (0..=cutoff).flat_map(|m| (m..=cutoff).map(move |n| (m, n))).collect()
}

/// `C_{m,n} int_0^{delta_a} exp(-r^2/(eta(1+nbar))) L_m^{(n-m)}(...) r^{n-m+1} dr`
/// for every upper-triangle pair, by one vector-valued adaptive quadrature.
fn disk_radial_integrals(eta: f64, nbar: f64, delta_a: f64, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    if delta_a == 0.0 {
        return Ok(vec![0.0; pairs.len()]);
    }
    let scale: Vec<f64> = pairs
        .iter()
        .map(|&(m, n)| {
            let k = (n - m) as f64;
            (0.5 * (ln_factorial(m) - ln_factorial(n)) - (n as f64 + 1.0) * nbar.ln_1p()).exp() / (PI * eta.powf(k / 2.0 + 1.0))
        })
        .collect();
    let r = integrate_vec(
        |r, out| {
            let c = r * r / (eta * (1.0 + nbar));
            let e = (-c).exp();
            for (idx, &(m, n)) in pairs.iter().enumerate() {
                let k = n - m;
                out[idx] = scale[idx] * e * laguerre_scaled(m, k, c, nbar) * r.powi(k as i32 + 1);
            }
        },
        0.0,
        delta_a,
        pairs.len(),
        QuadOptions { abs_tol: POSTSELECTION_TOL, rel_tol: 1e-14, max_panels: 4000 },
    )?;
    Ok(r.values)
}

fn region_operators_closed_form(eta: f64, nbar: f64, delta_a: f64, cutoff: usize) -> Result<RegionOperators> {
    let pairs = upper_pairs(cutoff);
    let partial = disk_radial_integrals(eta, nbar, delta_a, &pairs)?;
    let d = cutoff + 1;
    let mut mats = [CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d)];
    let mut disk = CMatrix::zeros(d, d);
    for (idx, &(m, n)) in pairs.iter().enumerate() {
        if m == n {
            let v = 0.25 - PI / 2.0 * partial[idx];
            for mat in mats.iter_mut() {
                mat[(m, m)] = Complex64::new(v, 0.0);
            }
            disk[(m, m)] = Complex64::new(2.0 * PI * partial[idx], 0.0);
            continue;
        }
        let k = n - m;
        let kh = k as f64 / 2.0;
        // C_{m,n} times the full radial integral; eta cancels.
        let full = (0.5 * (ln_factorial(m) - ln_factorial(n))).exp() / (2.0 * PI)
            * gamma(kh + 1.0)
            * taylor_f_ratio(m, nbar, k as f64, kh)
            / (1.0 + nbar).powf(kh);
        let radial = full - partial[idx];
        for (j, mat) in mats.iter_mut().enumerate() {
            mat[(m, n)] = sector_phase(m, n, j) * radial;
        }
    }
    let [a, b, c, e] = mats;
    Ok(RegionOperators {
        regions: [
            FockOperator::hermitian_from_upper(a)?,
            FockOperator::hermitian_from_upper(b)?,
            FockOperator::hermitian_from_upper(c)?,
            FockOperator::hermitian_from_upper(e)?,
        ],
        disk: FockOperator::hermitian_from_upper(disk)?,
        delta_a,
        numeric: false,
    })
}

/// Radius beyond which every `<m|G_y|n>` with `m, n <= cutoff` is negligible.
fn outcome_radius(det: &DetectorModel, cutoff: usize) -> f64 {
    let (l1, l2) = det.lambdas();
    let spread = det.eta1.max(det.eta2).sqrt() * (l1.max(l2) + 1.0).sqrt();
    spread * ((cutoff as f64 + 2.0).sqrt() + 6.0)
}

fn require_numeric_cutoff(cutoff: usize, opts: &NumericOptions) -> Result<()> {
    if cutoff > NUMERIC_CUTOFF_CAP && !opts.allow_large_cutoff {
        return invalid(format!(
            "unequal-arm operators are built by quadrature and capped at cutoff {NUMERIC_CUTOFF_CAP} (got {cutoff}); set allow_large_cutoff to override"
        ));
    }
    Ok(())
}

fn upper_to_operator(values: &[f64], pairs: &[(usize, usize)], cutoff: usize) -> Result<FockOperator> {
    let d = cutoff + 1;
    let mut m = CMatrix::zeros(d, d);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        m[(i, j)] = Complex64::new(values[2 * idx], values[2 * idx + 1]);
    }
    FockOperator::hermitian_from_upper(m)
}

fn region_operators_numeric(det: &DetectorModel, delta_a: f64, cutoff: usize, opts: &NumericOptions) -> Result<RegionOperators> {
    require_numeric_cutoff(cutoff, opts)?;
    let kernel = GeneralKernel::new(det);
    let pairs = upper_pairs(cutoff);
    let r_max = outcome_radius(det, cutoff).max(delta_a + 1.0);
    let d = cutoff + 1;
    let dim = 2 * pairs.len();
    let mut scratch = CMatrix::zeros(d, d);
    let mut polar = |r: f64, theta: f64, out: &mut [f64]| {
        kernel.fill(Complex64::from_polar(r, theta), cutoff, &mut scratch);
        for (idx, &(m, n)) in pairs.iter().enumerate() {
            let v = scratch[(m, n)] * r;
            out[2 * idx] = v.re;
            out[2 * idx + 1] = v.im;
        }
    };
    let quad = QuadOptions::abs(opts.abs_tol);
    let mut regions = Vec::with_capacity(4);
    for j in 0..4 {
        let lo = (2.0 * j as f64 - 1.0) * PI / 4.0;
        let res = integrate_2d_vec(|r, t, out| polar(r, t, out), (delta_a, r_max), |_| lo, |_| lo + PI / 2.0, dim, quad)?;
        regions.push(upper_to_operator(&res.values, &pairs, cutoff)?);
    }
    let disk = if delta_a > 0.0 {
        let res = integrate_2d_vec(|r, t, out| polar(r, t, out), (0.0, delta_a), |_| 0.0, |_| 2.0 * PI, dim, quad)?;
        upper_to_operator(&res.values, &pairs, cutoff)?
    } else {
        FockOperator::zeros(d)
    };
    let regions: [FockOperator; 4] = regions.try_into().expect("four sectors");
    Ok(RegionOperators { regions, disk, delta_a, numeric: true })
}

/// Region operators with the default numeric options.
pub fn region_operators(det: &DetectorModel, delta_a: f64, cutoff: usize) -> Result<RegionOperators> {
    region_operators_with(det, delta_a, cutoff, &NumericOptions::default())
}

pub fn region_operators_with(
    det: &DetectorModel,
    delta_a: f64,
    cutoff: usize,
    opts: &NumericOptions,
) -> Result<RegionOperators> {
    check_cutoff(cutoff)?;
    if !(delta_a >= 0.0 && delta_a.is_finite()) {
        return invalid(format!("postselection radius must be nonnegative, got {delta_a}"));
    }
    if det.effectively_simple() {
        region_operators_closed_form(det.eta1, det.nbar_d(), delta_a, cutoff)
    } else {
        region_operators_numeric(det, delta_a, cutoff, opts)
    }
}

/// `F_Q, F_P, S_Q, S_P`: integrals of `sqrt2 Re y`, `sqrt2 Im y`, `2 Re(y)^2`
/// and `2 Im(y)^2` against `G_y`.
#[derive(Debug, Clone)]
pub struct MomentObservables {
    pub fq: FockOperator,
    pub fp: FockOperator,
    pub sq: FockOperator,
    pub sp: FockOperator,
    pub numeric: bool,
}

impl MomentObservables {
    pub fn as_array(&self) -> [&FockOperator; 4] {
        [&self.fq, &self.fp, &self.sq, &self.sp]
    }
}

fn moment_observables_closed_form(eta: f64, nbar: f64, cutoff: usize) -> Result<MomentObservables> {
    let d = cutoff + 1;
    let mut fq = CMatrix::zeros(d, d);
    let mut fp = CMatrix::zeros(d, d);
    let mut sq = CMatrix::zeros(d, d);
    let mut sp = CMatrix::zeros(d, d);
    let s = 1.0 + nbar;
    for m in 0..d {
        let diag = eta * s * taylor_f_ratio(m, nbar, 0.0, 1.0);
        sq[(m, m)] = Complex64::new(diag, 0.0);
        sp[(m, m)] = Complex64::new(diag, 0.0);
        if m + 1 < d {
            let v = (eta / (2.0 * (m as f64 + 1.0))).sqrt() * taylor_f_ratio(m, nbar, 1.0, 1.0);
            fq[(m, m + 1)] = Complex64::new(v, 0.0);
            fp[(m, m + 1)] = Complex64::new(0.0, -v);
        }
        if m + 2 < d {
            let v = eta / ((m as f64 + 1.0) * (m as f64 + 2.0)).sqrt() * taylor_f_ratio(m, nbar, 2.0, 2.0);
            sq[(m, m + 2)] = Complex64::new(v, 0.0);
            sp[(m, m + 2)] = Complex64::new(-v, 0.0);
        }
    }
    Ok(MomentObservables {
        fq: FockOperator::hermitian_from_upper(fq)?,
        fp: FockOperator::hermitian_from_upper(fp)?,
        sq: FockOperator::hermitian_from_upper(sq)?,
        sp: FockOperator::hermitian_from_upper(sp)?,
        numeric: false,
    })
}

fn moment_observables_numeric(det: &DetectorModel, cutoff: usize, opts: &NumericOptions) -> Result<MomentObservables> {
    require_numeric_cutoff(cutoff, opts)?;
    let kernel = GeneralKernel::new(det);
    let pairs = upper_pairs(cutoff);
    let r_max = outcome_radius(det, cutoff);
    let d = cutoff + 1;
    let np = pairs.len();
    let mut scratch = CMatrix::zeros(d, d);
    let res = integrate_2d_vec(
        |x, y, out| {
            kernel.fill(Complex64::new(x, y), cutoff, &mut scratch);
            let weights = [2f64.sqrt() * x, 2f64.sqrt() * y, 2.0 * x * x, 2.0 * y * y];
            for (w_idx, w) in weights.iter().enumerate() {
                for (idx, &(m, n)) in pairs.iter().enumerate() {
                    let v = scratch[(m, n)] * *w;
                    out[2 * (w_idx * np + idx)] = v.re;
                    out[2 * (w_idx * np + idx) + 1] = v.im;
                }
            }
        },
        (-r_max, r_max),
        |_| -r_max,
        |_| r_max,
        8 * np,
        QuadOptions::abs(opts.abs_tol),
    )?;
    let block = |w_idx: usize| upper_to_operator(&res.values[2 * w_idx * np..2 * (w_idx + 1) * np], &pairs, cutoff);
    Ok(MomentObservables { fq: block(0)?, fp: block(1)?, sq: block(2)?, sp: block(3)?, numeric: true })
}

pub fn moment_observables(det: &DetectorModel, cutoff: usize) -> Result<MomentObservables> {
    moment_observables_with(det, cutoff, &NumericOptions::default())
}

pub fn moment_observables_with(det: &DetectorModel, cutoff: usize, opts: &NumericOptions) -> Result<MomentObservables> {
    if cutoff < 2 {
        return invalid(format!("moment observables need cutoff >= 2, got {cutoff}"));
    }
    if det.effectively_simple() {
        moment_observables_closed_form(det.eta1, det.nbar_d(), cutoff)
    } else {
        moment_observables_numeric(det, cutoff, opts)
    }
}

/// Which observables constrain Bob's marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// Detector noise is characterised and excluded from Eve's control.
    Trusted,
    /// Detector treated as ideal; all noise attributed to the channel.
    Untrusted,
}

impl NoiseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseMode::Trusted => "trusted",
            NoiseMode::Untrusted => "untrusted",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trusted" => Ok(NoiseMode::Trusted),
            "untrusted" => Ok(NoiseMode::Untrusted),
            other => invalid(format!("unknown noise mode '{other}' (expected trusted or untrusted)")),
        }
    }
}

/// Four moment observables plus the key-map region operators.
///
/// Trusted mode holds `F_Q, F_P, S_Q, S_P` and the noisy-detector regions;
/// untrusted mode holds `q, p, n, d` and the ideal-detector regions.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    pub mode: NoiseMode,
    pub observables: [FockOperator; 4],
    pub regions: RegionOperators,
}

impl ObservableSet {
    pub fn cutoff(&self) -> usize {
        self.regions.dim() - 1
    }
}

pub fn trusted_observables(det: &DetectorModel, delta_a: f64, cutoff: usize) -> Result<ObservableSet> {
    let mom = moment_observables(det, cutoff)?;
    let regions = region_operators(det, delta_a, cutoff)?;
    Ok(ObservableSet { mode: NoiseMode::Trusted, observables: [mom.fq, mom.fp, mom.sq, mom.sp], regions })
}

pub fn untrusted_observables(delta_a: f64, cutoff: usize) -> Result<ObservableSet> {
    let ops = quadrature_operators(cutoff)?;
    let regions = region_operators(&DetectorModel::ideal(), delta_a, cutoff)?;
    Ok(ObservableSet { mode: NoiseMode::Untrusted, observables: [ops.q, ops.p, ops.n, ops.d], regions })
}

pub fn observables(mode: NoiseMode, det: &DetectorModel, delta_a: f64, cutoff: usize) -> Result<ObservableSet> {
    match mode {
        NoiseMode::Trusted => trusted_observables(det, delta_a, cutoff),
        NoiseMode::Untrusted => untrusted_observables(delta_a, cutoff),
    }
}
