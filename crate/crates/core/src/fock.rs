//! Truncated Fock-space operators.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Result};

pub type CMatrix = DMatrix<Complex64>;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative eigenvalue floor applied before taking matrix logarithms.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// A square complex matrix on a truncated Fock basis (or a tensor product of
/// such bases), optionally tagged Hermitian.
///
/// A Hermitian tag is only ever attached after the entries were made exactly
/// self-adjoint, so `m[(i, j)] == m[(j, i)].conj()` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    matrix: CMatrix,
    hermitian: bool,
}

impl FockOperator {
    /// Wrap a general square matrix.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return invalid(format!("operator must be square and nonempty, got {}x{}", matrix.nrows(), matrix.ncols()));
        }
        Ok(Self { matrix, hermitian: false })
    }

    /// Build a Hermitian operator: the upper triangle (with real diagonal) is
    /// kept and the lower triangle is overwritten by conjugation.
    pub fn hermitian_from_upper(mut matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return invalid("operator must be square and nonempty");
        }
        let n = matrix.nrows();
        for i in 0..n {
            matrix[(i, i)].im = 0.0;
            for j in (i + 1)..n {
                matrix[(j, i)] = matrix[(i, j)].conj();
            }
        }
        Ok(Self { matrix, hermitian: true })
    }

    /// Build a Hermitian operator from `(M + M^dagger) / 2`.
    pub fn hermitian_part(matrix: &CMatrix) -> Result<Self> {
        let sym = (matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
        Self::hermitian_from_upper(sym)
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim, dim), hermitian: true }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: CMatrix::zeros(dim, dim), hermitian: true }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// `Re Tr(self * other)`.
    pub fn trace_product(&self, other: &FockOperator) -> f64 {
        trace_product(&self.matrix, &other.matrix)
    }

    /// Largest `|M_ij - conj(M_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &FockOperator) -> FockOperator {
        FockOperator {
            matrix: self.matrix.kronecker(&other.matrix),
            hermitian: self.hermitian && other.hermitian,
        }
    }

    pub fn eigen(&self) -> Result<HermitianEigen> {
        self.require_hermitian("eigendecomposition")?;
        Ok(HermitianEigen::new(&self.matrix))
    }

    /// Smallest eigenvalue of a Hermitian operator.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigen()?.values.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Principal square root; eigenvalues below zero are clamped to zero.
    pub fn sqrt_psd(&self) -> Result<FockOperator> {
        let e = self.eigen()?;
        Ok(FockOperator { matrix: e.map(|w| w.max(0.0).sqrt()), hermitian: true })
    }

    /// Natural logarithm with eigenvalues clamped at `EIGEN_CLAMP` times the
    /// largest eigenvalue.
    pub fn log_clamped(&self) -> Result<FockOperator> {
        let e = self.eigen()?;
        Ok(FockOperator { matrix: e.log_clamped(), hermitian: true })
    }

    /// General Hermitian functional calculus.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> Result<FockOperator> {
        let e = self.eigen()?;
        Ok(FockOperator { matrix: e.map(f), hermitian: true })
    }

    fn require_hermitian(&self, what: &str) -> Result<()> {
        if !self.hermitian {
            return invalid(format!("{what} requires a Hermitian operator"));
        }
        Ok(())
    }
}

/// `Re Tr(a * b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let x = a[(i, k)];
            let y = b[(k, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// Eigendecomposition `M = U diag(values) U^dagger` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        let e = SymmetricEigen::new(m.clone());
        Self { values: e.eigenvalues.iter().cloned().collect(), vectors: e.eigenvectors }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &w) in self.values.iter().enumerate() {
            let fw = f(w);
            scaled.column_mut(j).scale_mut(fw);
        }
        let mut out = &scaled * self.vectors.adjoint();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Clamp threshold used for `log`.
    pub fn clamp_floor(&self) -> f64 {
        EIGEN_CLAMP * self.max_value().max(f64::MIN_POSITIVE)
    }

    pub fn log_clamped(&self) -> CMatrix {
        let floor = self.clamp_floor();
        self.map(|w| w.max(floor).ln())
    }

    /// `Tr(M log M)` with the convention `0 log 0 = 0`.
    pub fn trace_xlogx(&self) -> f64 {
        self.values.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum()
    }
}

/// Replace `m` with its Hermitian part.
pub fn symmetrize_in_place(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Annihilation operator truncated to `{|0>, ..., |cutoff>}`.
pub fn annihilation(cutoff: usize) -> CMatrix {
    let d = cutoff + 1;
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Truncated `q`, `p`, `n = a^dagger a` and `d = a^2 + (a^dagger)^2`.
#[derive(Debug, Clone)]
pub struct QuadratureOperators {
    pub q: FockOperator,
    pub p: FockOperator,
    pub n: FockOperator,
    pub d: FockOperator,
}

impl QuadratureOperators {
    /// `n + d/2 + 1` and `n - d/2 + 1`, the second-moment pair matching
    /// `2 Re(y)^2` and `2 Im(y)^2` for an ideal heterodyne detector.
    pub fn second_moments(&self) -> (FockOperator, FockOperator) {
        let dim = self.n.dim();
        let id = CMatrix::identity(dim, dim);
        let half = Complex64::new(0.5, 0.0);
        let sq = self.n.matrix() + self.d.matrix() * half + &id;
        let sp = self.n.matrix() - self.d.matrix() * half + &id;
        (
            FockOperator::hermitian_from_upper(sq).expect("square"),
            FockOperator::hermitian_from_upper(sp).expect("square"),
        )
    }
}

pub fn quadrature_operators(cutoff: usize) -> Result<QuadratureOperators> {
    if cutoff == 0 {
        return invalid("quadrature operators need a cutoff of at least one photon");
    }
    let a = annihilation(cutoff);
    let ad = a.adjoint();
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i_s = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    let q = (&ad + &a) * s;
    let p = (&ad - &a) * i_s;
    let n = CMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| if i == j { Complex64::new(i as f64, 0.0) } else { Complex64::new(0.0, 0.0) });
    let d = &a * &a + &ad * &ad;
    Ok(QuadratureOperators {
        q: FockOperator::hermitian_from_upper(q)?,
        p: FockOperator::hermitian_from_upper(p)?,
        n: FockOperator::hermitian_from_upper(n)?,
        d: FockOperator::hermitian_from_upper(d)?,
    })
}

/// `<b|a>` for coherent states `|a>`, `|b>`.
pub fn coherent_overlap(a: Complex64, b: Complex64) -> Complex64 {
    (-(a.norm_sqr() + b.norm_sqr()) / 2.0 + b.conj() * a).exp()
}

/// Projector onto `|k><k|` in a `dim`-dimensional register.
pub fn basis_projector(dim: usize, k: usize) -> FockOperator {
    let mut m = CMatrix::zeros(dim, dim);
    m[(k, k)] = ONE;
    FockOperator { matrix: m, hermitian: true }
}

/// Displaced thermal state projected onto `{|0>..|cutoff>}` (not renormalised).
pub fn displaced_thermal_state(alpha: Complex64, nbar: f64, cutoff: usize) -> Result<FockOperator> {
    if nbar < 0.0 {
        return invalid(format!("mean photon number must be nonnegative, got {nbar}"));
    }
    // Work in a larger space so the truncated displacement is accurate, then
    // project back onto the cutoff.
    let big = cutoff + 40 + (4.0 * alpha.norm_sqr()).ceil() as usize;
    let disp = displacement(alpha, big);
    let mut thermal = CMatrix::zeros(big + 1, big + 1);
    for n in 0..=big {
        let p = if nbar == 0.0 {
            if n == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (n as f64 * (nbar / (1.0 + nbar)).ln()).exp() / (1.0 + nbar)
        };
        thermal[(n, n)] = Complex64::new(p, 0.0);
    }
    let full = &disp * thermal * disp.adjoint();
    let d = cutoff + 1;
    FockOperator::hermitian_part(&full.view((0, 0), (d, d)).into_owned())
}

/// Displacement operator `exp(alpha a^dagger - alpha* a)` on `{|0>..|cutoff>}`,
/// built from the closed-form matrix elements.
pub fn displacement(alpha: Complex64, cutoff: usize) -> CMatrix {
    use crate::special::{laguerre_poly, ln_factorial};
    let d = cutoff + 1;
    let x = alpha.norm_sqr();
    let env = (-x / 2.0).exp();
    CMatrix::from_fn(d, d, |m, n| {
        // <m|D(alpha)|n>
        if m >= n {
            let ratio = (0.5 * (ln_factorial(n) - ln_factorial(m))).exp();
            ratio * alpha.powu((m - n) as u32) * env * laguerre_poly(n, (m - n) as f64, x)
        } else {
            let ratio = (0.5 * (ln_factorial(m) - ln_factorial(n))).exp();
            ratio * (-alpha.conj()).powu((n - m) as u32) * env * laguerre_poly(m, (n - m) as f64, x)
        }
    })
}
