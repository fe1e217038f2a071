//! Built-in verification suites behind `oracle-check` and `selftest`.

use dmrate_core::detector::{moment_observables, povm_element, povm_oracle_entry, region_operators, DetectorModel};
use dmrate_core::fock::{quadrature_operators, CMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-form POVM entries must match the phase-space oracle to this.
pub const ORACLE_TOL: f64 = 1e-6;
/// Region completeness at zero postselection radius.
pub const COMPLETENESS_TOL: f64 = 1e-12;
/// Entrywise tolerance of the ideal-detector reductions.
pub const IDEAL_LIMIT_TOL: f64 = 1e-10;

const ORACLE_CUTOFF: usize = 8;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn fail(name: &str, e: impl std::fmt::Display) -> CheckOutcome {
    CheckOutcome::new(name, false, format!("error: {e}"))
}

/// The detector pair exercised by the oracle suite: identical arms and
/// unequal arms.
pub fn oracle_detectors() -> [(&'static str, DetectorModel); 2] {
    [
        ("identical arms", DetectorModel::simple(0.719, 0.01).expect("valid detector")),
        ("unequal arms", DetectorModel::new(0.8, 0.6, 0.02, 0.01).expect("valid detector")),
    ]
}

/// Largest deviation between `n_samples` random closed-form POVM entries
/// and their phase-space overlap integrals.
pub fn oracle_deviation(det: &DetectorModel, n_samples: usize, seed: u64) -> dmrate_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let m = rng.gen_range(0..=ORACLE_CUTOFF);
        let n = rng.gen_range(0..=ORACLE_CUTOFF);
        let y = Complex64::from_polar(rng.gen_range(0.0..1.5), rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        let closed = povm_element(y, det, ORACLE_CUTOFF)?.get(m, n);
        let oracle = povm_oracle_entry(m, n, y, det)?;
        worst = worst.max((closed - oracle).norm());
    }
    Ok(worst)
}

/// Region operators at zero radius: every diagonal entry is exactly 1/4 and
/// the four regions sum to the identity.
fn region_checks(outcomes: &mut Vec<CheckOutcome>) {
    for (label, det) in [("noisy detector", DetectorModel::simple(0.719, 0.01).expect("valid detector")), ("ideal detector", DetectorModel::ideal())] {
        let name = format!("regions at zero radius, {label}");
        match region_operators(&det, 0.0, 12) {
            Ok(ro) => {
                let diag_exact = ro.regions.iter().all(|r| (0..ro.dim()).all(|k| r.get(k, k) == Complex64::new(0.25, 0.0)));
                let dev = max_abs_diff(&ro.pass_operator(), &CMatrix::identity(ro.dim(), ro.dim()));
                outcomes.push(CheckOutcome::new(
                    name,
                    diag_exact && dev <= COMPLETENESS_TOL,
                    format!("diagonals exactly 1/4: {diag_exact}; |sum R - 1| = {dev:.2e}"),
                ));
            }
            Err(e) => outcomes.push(fail(&name, e)),
        }
    }
}

/// Closed-form POVM elements against the Wigner-overlap oracle, plus the
/// zero-radius region identities.
pub fn oracle_check(n_samples: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut outcomes = Vec::new();
    for (k, (label, det)) in oracle_detectors().iter().enumerate() {
        let name = format!("POVM oracle, {label}");
        outcomes.push(match oracle_deviation(det, n_samples, seed.wrapping_add(k as u64)) {
            Ok(dev) => CheckOutcome::new(name, dev <= ORACLE_TOL, format!("{n_samples} entries, max deviation {dev:.2e}")),
            Err(e) => fail(&name, e),
        });
    }
    region_checks(&mut outcomes);
    outcomes
}

/// Largest entrywise deviation of the four moment observables from
/// `q, p, n + d/2 + 1, n - d/2 + 1`.
pub fn ideal_limit_deviation(det: &DetectorModel, cutoff: usize) -> dmrate_core::Result<f64> {
    let mom = moment_observables(det, cutoff)?;
    let ops = quadrature_operators(cutoff)?;
    let (sq, sp) = ops.second_moments();
    let pairs = [(&mom.fq, &ops.q), (&mom.fp, &ops.p), (&mom.sq, &sq), (&mom.sp, &sp)];
    Ok(pairs.iter().map(|(a, b)| max_abs_diff(a.matrix(), b.matrix())).fold(0.0, f64::max))
}

/// Ideal-detector reductions and zero-radius region identities.
pub fn selftest() -> Vec<CheckOutcome> {
    let mut outcomes = Vec::new();
    let detectors = [
        ("ideal detector", Ok(DetectorModel::ideal())),
        ("near-ideal detector", DetectorModel::simple(1.0 - 1e-13, 1e-14)),
    ];
    for (label, det) in detectors {
        let name = format!("moment observables reduce to quadratures, {label}");
        outcomes.push(match det.and_then(|d| ideal_limit_deviation(&d, 12)) {
            Ok(dev) => CheckOutcome::new(name, dev <= IDEAL_LIMIT_TOL, format!("max entry deviation {dev:.2e}")),
            Err(e) => fail(&name, e),
        });
    }
    region_checks(&mut outcomes);
    outcomes
}
