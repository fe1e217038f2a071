//! Key-rate optimisation: constraint assembly, the key-map channels, the
//! relative-entropy objective and its Frank-Wolfe minimisation with a
//! dual-certified lower bound.
//!
//! Operators on `A (x) B` use the index `x * (N + 1) + n`; operators on
//! `R (x) A (x) B` prepend the key register as the slowest index.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::channel::{EcCost, ProtocolParams, SimulatedStatistics};
use crate::detector::{NoiseMode, ObservableSet, RegionOperators};
use crate::error::{invalid, Error, Result};
use crate::fock::{basis_projector, coherent_overlap, symmetrize_in_place, trace_product, CMatrix, FockOperator, HermitianEigen};
use crate::sdp::{Blocks, SdpOptions, SdpProblem};

/// Alice's register dimension (four signal states).
pub const DIM_A: usize = 4;

/// Negative eigenvalues down to `-PSD_TOL` are accepted as round-off.
pub const PSD_TOL: f64 = 1e-9;

/// Largest constraint violation accepted for a converged solve.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Slack allowed between the certified bound and the primal value.
pub const CERTIFICATE_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `|x><x| (x) O_k` for signal `x` and observable `k`.
    Moment { signal: usize, observable: usize },
    Normalization,
    /// One element of a Hermitian basis on `A`, tensored with the identity.
    PartialTrace,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub observable: FockOperator,
    pub value: f64,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    /// `rho_A[i][j] = sqrt(p_i p_j) <alpha_j|alpha_i>`.
    pub rho_a: CMatrix,
    pub cutoff: usize,
    pub mode: NoiseMode,
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        DIM_A * (self.cutoff + 1)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// `Tr(O_i rho) - v_i` for every constraint.
    pub fn residuals(&self, rho: &CMatrix) -> Vec<f64> {
        self.constraints.iter().map(|c| trace_product(c.observable.matrix(), rho) - c.value).collect()
    }

    pub fn max_residual(&self, rho: &CMatrix) -> f64 {
        self.residuals(rho).iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Copy keeping only the moment constraints accepted by `keep`.
    pub fn filter_moments(&self, keep: impl Fn(usize, usize) -> bool) -> ConstraintSet {
        let constraints = self
            .constraints
            .iter()
            .filter(|c| match c.kind {
                ConstraintKind::Moment { signal, observable } => keep(signal, observable),
                _ => true,
            })
            .cloned()
            .collect();
        ConstraintSet { constraints, rho_a: self.rho_a.clone(), cutoff: self.cutoff, mode: self.mode }
    }
}

/// Gram matrix of the signal ensemble.
pub fn alice_marginal(pp: &ProtocolParams) -> CMatrix {
    let states = pp.signal_states();
    let priors = pp.priors();
    CMatrix::from_fn(DIM_A, DIM_A, |i, j| coherent_overlap(states[i], states[j]) * (priors[i] * priors[j]).sqrt())
}

pub fn build_constraints(stats: &SimulatedStatistics, obs: &ObservableSet, pp: &ProtocolParams, mode: NoiseMode) -> Result<ConstraintSet> {
    if obs.mode != mode {
        return invalid(format!("observable set is for {} mode, constraints requested for {}", obs.mode.as_str(), mode.as_str()));
    }
    let cutoff = obs.cutoff();
    if cutoff != pp.cutoff {
        return invalid(format!("observables use cutoff {cutoff}, protocol specifies {}", pp.cutoff));
    }
    let dim_b = cutoff + 1;
    if obs.observables.iter().any(|o| o.dim() != dim_b) {
        return invalid("observable dimensions do not match the region operators");
    }
    let priors = pp.priors();
    let mut constraints = Vec::with_capacity(33);
    for x in 0..DIM_A {
        let vals = match mode {
            NoiseMode::Trusted => stats.trusted_values(x),
            NoiseMode::Untrusted => stats.untrusted_values(x),
        };
        let px = basis_projector(DIM_A, x);
        for (k, o) in obs.observables.iter().enumerate() {
            constraints.push(Constraint { observable: px.kron(o), value: priors[x] * vals[k], kind: ConstraintKind::Moment { signal: x, observable: k } });
        }
    }
    let d = DIM_A * dim_b;
    constraints.push(Constraint { observable: FockOperator::identity(d), value: 1.0, kind: ConstraintKind::Normalization });

    let rho_a = alice_marginal(pp);
    let id_b = FockOperator::identity(dim_b);
    let mut push_basis = |e: CMatrix, value: f64| -> Result<()> {
        let op = FockOperator::hermitian_from_upper(e)?.kron(&id_b);
        constraints.push(Constraint { observable: op, value, kind: ConstraintKind::PartialTrace });
        Ok(())
    };
    for i in 0..DIM_A {
        let mut e = CMatrix::zeros(DIM_A, DIM_A);
        e[(i, i)] = ONE;
        push_basis(e, rho_a[(i, i)].re)?;
        for j in (i + 1)..DIM_A {
            let mut e = CMatrix::zeros(DIM_A, DIM_A);
            e[(i, j)] = ONE;
            e[(j, i)] = ONE;
            push_basis(e, 2.0 * rho_a[(i, j)].re)?;
            let mut e = CMatrix::zeros(DIM_A, DIM_A);
            e[(i, j)] = Complex64::new(0.0, -1.0);
            e[(j, i)] = Complex64::new(0.0, 1.0);
            push_basis(e, -2.0 * rho_a[(i, j)].im)?;
        }
    }
    Ok(ConstraintSet { constraints, rho_a, cutoff, mode })
}

/// The key-map channel `G(rho) = K rho K^dagger` with
/// `K = sum_z |z>_R (x) 1_A (x) sqrt(R_z)`, and the pinching `Z` on `R`.
#[derive(Debug, Clone)]
pub struct PostprocessingMaps {
    pub dim_b: usize,
    pub regions: [CMatrix; 4],
    pub sqrt_regions: [CMatrix; 4],
}

impl PostprocessingMaps {
    pub fn new(regions: &RegionOperators) -> Result<Self> {
        let sqrt = |r: &FockOperator| -> Result<CMatrix> { Ok(r.sqrt_psd()?.into_matrix()) };
        let [r0, r1, r2, r3] = &regions.regions;
        Ok(Self {
            dim_b: regions.dim(),
            regions: [r0.matrix().clone(), r1.matrix().clone(), r2.matrix().clone(), r3.matrix().clone()],
            sqrt_regions: [sqrt(r0)?, sqrt(r1)?, sqrt(r2)?, sqrt(r3)?],
        })
    }

    /// Dimension of `A (x) B`.
    pub fn dim(&self) -> usize {
        DIM_A * self.dim_b
    }

    /// `1_A (x) sqrt(R_z)`.
    pub fn branch(&self, z: usize) -> CMatrix {
        CMatrix::identity(DIM_A, DIM_A).kronecker(&self.sqrt_regions[z])
    }

    /// `K`, of shape `(4 * dim) x dim`.
    pub fn kraus(&self) -> CMatrix {
        let d = self.dim();
        let mut k = CMatrix::zeros(4 * d, d);
        for z in 0..4 {
            k.view_mut((z * d, 0), (d, d)).copy_from(&self.branch(z));
        }
        k
    }

    /// `K^dagger K = 1_A (x) sum_z R_z`.
    pub fn pass_operator(&self) -> CMatrix {
        let sum = self.regions.iter().fold(CMatrix::zeros(self.dim_b, self.dim_b), |acc, r| acc + r);
        CMatrix::identity(DIM_A, DIM_A).kronecker(&sum)
    }

    pub fn apply_g(&self, rho: &FockOperator) -> Result<FockOperator> {
        if rho.dim() != self.dim() {
            return invalid(format!("state has dimension {}, maps expect {}", rho.dim(), self.dim()));
        }
        check_psd(rho.matrix())?;
        let k = self.kraus();
        FockOperator::hermitian_part(&(&k * rho.matrix() * k.adjoint()))
    }

    /// `K^dagger X K`.
    pub fn apply_g_adjoint(&self, x: &CMatrix) -> Result<FockOperator> {
        let k = self.kraus();
        if x.nrows() != k.nrows() {
            return invalid("operator does not live on the register-extended space");
        }
        FockOperator::hermitian_part(&(k.adjoint() * x * &k))
    }

    pub fn apply_z(&self, sigma: &FockOperator) -> FockOperator {
        let n = sigma.dim();
        let block = n / 4;
        let mut out = CMatrix::zeros(n, n);
        for z in 0..4 {
            out.view_mut((z * block, z * block), (block, block)).copy_from(&sigma.matrix().view((z * block, z * block), (block, block)));
        }
        FockOperator::hermitian_part(&out).expect("square")
    }
}

fn check_psd(m: &CMatrix) -> Result<()> {
    let lmin = HermitianEigen::new(m).values.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -PSD_TOL {
        return invalid(format!("state is not positive semidefinite (min eigenvalue {lmin:.3e})"));
    }
    Ok(())
}

fn xlogx_sum(m: &CMatrix) -> f64 {
    HermitianEigen::new(m).trace_xlogx()
}

/// `D(G(rho) || Z(G(rho)))` in bits, evaluated directly on `R (x) A (x) B`.
pub fn objective_direct(rho: &FockOperator, maps: &PostprocessingMaps) -> Result<f64> {
    let g = maps.apply_g(rho)?;
    let zg = maps.apply_z(&g);
    Ok((xlogx_sum(g.matrix()) - xlogx_sum(zg.matrix())) / LN_2)
}

/// `D(G(rho) || Z(G(rho)))` in bits.
///
/// Evaluated as `Tr Y log Y - sum_z Tr s_z log s_z` with
/// `Y = M^(1/2) rho M^(1/2)`, `M = K^dagger K`, `s_z = B_z rho B_z` and
/// `B_z = 1 (x) sqrt(R_z)`; `G(rho)` shares its spectrum with `Y`.
pub fn objective(rho: &FockOperator, maps: &PostprocessingMaps) -> Result<f64> {
    if rho.dim() != maps.dim() {
        return invalid(format!("state has dimension {}, maps expect {}", rho.dim(), maps.dim()));
    }
    check_psd(rho.matrix())?;
    let model = EntropyModel::dense(maps)?;
    Ok(model.value(&vec![rho.matrix().clone()]))
}

/// `G^dagger[log2 G(rho)] - G^dagger[log2 Z(G(rho))]` with eigenvalues
/// clamped at `EIGEN_CLAMP` relative to the largest before the logarithm.
pub fn gradient(rho: &FockOperator, maps: &PostprocessingMaps) -> Result<FockOperator> {
    if rho.dim() != maps.dim() {
        return invalid(format!("state has dimension {}, maps expect {}", rho.dim(), maps.dim()));
    }
    let model = EntropyModel::dense(maps)?;
    let g = model.gradient(&vec![rho.matrix().clone()]);
    FockOperator::hermitian_part(&g[0])
}

/// `(1 - eps) rho + eps 1 / dim` after clipping negative eigenvalues.
pub fn perturb(rho: &CMatrix, eps: f64) -> CMatrix {
    let n = rho.nrows();
    let mut out = HermitianEigen::new(rho).map(|w| (1.0 - eps) * w.max(0.0));
    for i in 0..n {
        out[(i, i)] += Complex64::new(eps / n as f64, 0.0);
    }
    out
}

/// Orthonormal change of basis `W` splitting `A (x) B` into invariant blocks.
#[derive(Debug, Clone)]
struct SectorBasis {
    w: CMatrix,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl SectorBasis {
    fn trivial(dim: usize) -> Self {
        Self { w: CMatrix::identity(dim, dim), sizes: vec![dim], offsets: vec![0] }
    }

    /// Eigenspaces of `U = S (x) exp(i pi n / 2)`, where `S|x> = |x+1>`.
    /// Sector `k` holds `|a~> (x) |n>` with `a + n = k (mod 4)` and
    /// `|a~> = (1/2) sum_x i^(-a x) |x>`.
    fn quarter_turn(dim_b: usize) -> Self {
        let d = DIM_A * dim_b;
        let mut w = CMatrix::zeros(d, d);
        let mut col = 0;
        for k in 0..4 {
            for n in 0..dim_b {
                let a = (k + 4 - n % 4) % 4;
                for x in 0..DIM_A {
                    w[(x * dim_b + n, col)] = Complex64::new(0.0, -1.0).powu(((a * x) % 4) as u32) * 0.5;
                }
                col += 1;
            }
        }
        Self { w, sizes: vec![dim_b; 4], offsets: (0..4).map(|k| k * dim_b).collect() }
    }

    fn dim(&self) -> usize {
        self.w.nrows()
    }

    fn is_trivial(&self) -> bool {
        self.sizes.len() == 1
    }

    fn project(&self, full: &CMatrix) -> Blocks {
        if self.is_trivial() {
            return vec![full.clone()];
        }
        let t = self.w.adjoint() * full * &self.w;
        self.sizes
            .iter()
            .zip(&self.offsets)
            .map(|(&s, &o)| {
                let mut b = t.view((o, o), (s, s)).into_owned();
                symmetrize_in_place(&mut b);
                b
            })
            .collect()
    }

    /// Largest entry of `W^dagger full W` outside the diagonal blocks.
    fn off_block_norm(&self, full: &CMatrix) -> f64 {
        let t = self.w.adjoint() * full * &self.w;
        let mut worst: f64 = 0.0;
        for (bi, (&si, &oi)) in self.sizes.iter().zip(&self.offsets).enumerate() {
            for (bj, (&sj, &oj)) in self.sizes.iter().zip(&self.offsets).enumerate() {
                if bi != bj {
                    worst = t.view((oi, oj), (si, sj)).iter().fold(worst, |m, z| m.max(z.norm()));
                }
            }
        }
        worst
    }

    fn block_diag(&self, blocks: &Blocks) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (b, &o) in blocks.iter().zip(&self.offsets) {
            out.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        }
        out
    }

    fn to_full(&self, blocks: &Blocks) -> CMatrix {
        if self.is_trivial() {
            return blocks[0].clone();
        }
        let mut out = &self.w * self.block_diag(blocks) * self.w.adjoint();
        symmetrize_in_place(&mut out);
        out
    }

    /// `K rho K^dagger` for block-diagonal `rho` and a full `K`.
    fn sandwich(&self, k: &CMatrix, rho: &Blocks) -> CMatrix {
        let d = k.nrows();
        let mut kr = CMatrix::zeros(d, self.dim());
        for (b, (&s, &o)) in rho.iter().zip(self.sizes.iter().zip(&self.offsets)) {
            let prod = k.columns(o, s) * b;
            kr.columns_mut(o, s).copy_from(&prod);
        }
        let mut out = kr * k.adjoint();
        symmetrize_in_place(&mut out);
        out
    }
}

/// Objective evaluator on block-diagonal states.
#[derive(Debug, Clone)]
struct EntropyModel {
    basis: SectorBasis,
    m_sqrt: Blocks,
    /// `B_z W` for the branches summed explicitly.
    branches: Vec<CMatrix>,
    /// Multiplicity of each explicit branch.
    weight: f64,
}

impl EntropyModel {
    fn dense(maps: &PostprocessingMaps) -> Result<Self> {
        let basis = SectorBasis::trivial(maps.dim());
        let m_sqrt = FockOperator::hermitian_part(&maps.pass_operator())?.sqrt_psd()?.into_matrix();
        Ok(Self { basis, m_sqrt: vec![m_sqrt], branches: (0..4).map(|z| maps.branch(z)).collect(), weight: 1.0 })
    }

    /// Block model when the regions are covariant under a quarter turn,
    /// `V R_z V^dagger = R_(z+1)` with `V = exp(i pi n / 2)`.
    fn quarter_turn(maps: &PostprocessingMaps) -> Result<Option<Self>> {
        let db = maps.dim_b;
        let v = CMatrix::from_fn(db, db, |i, j| if i == j { Complex64::new(0.0, 1.0).powu((i % 4) as u32) } else { ZERO });
        let scale = maps.regions.iter().map(|r| r.iter().fold(0.0f64, |m, z| m.max(z.norm()))).fold(0.0, f64::max);
        for z in 0..4 {
            let rotated = &v * &maps.regions[z] * v.adjoint();
            let diff = (&rotated - &maps.regions[(z + 1) % 4]).iter().fold(0.0f64, |m, e| m.max(e.norm()));
            if diff > 1e-12 * scale.max(1.0) {
                return Ok(None);
            }
        }
        let basis = SectorBasis::quarter_turn(db);
        let pass = maps.pass_operator();
        if basis.off_block_norm(&pass) > 1e-12 {
            return Ok(None);
        }
        let m_sqrt = basis
            .project(&pass)
            .iter()
            .map(|b| Ok(FockOperator::hermitian_part(b)?.sqrt_psd()?.into_matrix()))
            .collect::<Result<Blocks>>()?;
        let branches = vec![maps.branch(0) * &basis.w];
        Ok(Some(Self { basis, m_sqrt, branches, weight: 4.0 }))
    }

    fn value(&self, rho: &Blocks) -> f64 {
        let mut v = 0.0;
        for (m, r) in self.m_sqrt.iter().zip(rho) {
            let mut y = m * r * m;
            symmetrize_in_place(&mut y);
            v += xlogx_sum(&y);
        }
        for b in &self.branches {
            v -= self.weight * xlogx_sum(&self.basis.sandwich(b, rho));
        }
        v / LN_2
    }

    fn gradient(&self, rho: &Blocks) -> Blocks {
        let mut g: Blocks = Vec::with_capacity(rho.len());
        for (m, r) in self.m_sqrt.iter().zip(rho) {
            let mut y = m * r * m;
            symmetrize_in_place(&mut y);
            g.push(m * HermitianEigen::new(&y).log_clamped() * m);
        }
        for b in &self.branches {
            let sigma = self.basis.sandwich(b, rho);
            let log_s = HermitianEigen::new(&sigma).log_clamped();
            for (gk, (&s, &o)) in g.iter_mut().zip(self.basis.sizes.iter().zip(&self.basis.offsets)) {
                let bk = b.columns(o, s);
                *gk -= (bk.adjoint() * &log_s * bk) * Complex64::new(self.weight, 0.0);
            }
        }
        for gk in g.iter_mut() {
            *gk /= Complex64::new(LN_2, 0.0);
            symmetrize_in_place(gk);
        }
        g
    }
}

/// Indices of a maximal linearly independent subset (greedy, in order).
fn independent_subset(ops: &[Blocks], rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<Blocks> = Vec::new();
    let mut keep = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        let norm0 = blocks_inner(op, op).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = op.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = blocks_inner(q, &r);
                for (rk, qk) in r.iter_mut().zip(q) {
                    *rk -= qk * Complex64::new(c, 0.0);
                }
            }
        }
        let norm = blocks_inner(&r, &r).sqrt();
        if norm > rel_tol * norm0 {
            for rk in r.iter_mut() {
                *rk /= Complex64::new(norm, 0.0);
            }
            basis.push(r);
            keep.push(i);
        }
    }
    keep
}

fn blocks_inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| trace_product(x, y)).sum()
}

/// Whether the affine constraint set is mapped into itself by `rho -> U rho U^dagger`.
fn constraints_invariant(cs: &ConstraintSet, u: &CMatrix) -> bool {
    let ops: Vec<Blocks> = cs.constraints.iter().map(|c| vec![c.observable.matrix().clone()]).collect();
    let idx = independent_subset(&ops, 1e-10);
    let k = idx.len();
    let gram = nalgebra::DMatrix::<f64>::from_fn(k, k, |i, j| blocks_inner(&ops[idx[i]], &ops[idx[j]]));
    let Some(chol) = gram.cholesky() else { return false };
    for c in &cs.constraints {
        let moved = u.adjoint() * c.observable.matrix() * u;
        let rhs = nalgebra::DVector::from_fn(k, |i, _| trace_product(&ops[idx[i]][0], &moved));
        let coef = chol.solve(&rhs);
        let mut fit = CMatrix::zeros(moved.nrows(), moved.ncols());
        let mut value = 0.0;
        for (i, &j) in idx.iter().enumerate() {
            fit += cs.constraints[j].observable.matrix() * Complex64::new(coef[i], 0.0);
            value += coef[i] * cs.constraints[j].value;
        }
        let scale = moved.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1.0);
        let err = (&fit - &moved).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if err > 1e-9 * scale || (value - c.value).abs() > 1e-9 * (1.0 + c.value.abs()) {
            return false;
        }
    }
    true
}

/// The quarter-turn symmetry `U = S (x) exp(i pi n / 2)` on `A (x) B`.
fn quarter_turn_unitary(dim_b: usize) -> CMatrix {
    let mut s = CMatrix::zeros(DIM_A, DIM_A);
    for x in 0..DIM_A {
        s[((x + 1) % DIM_A, x)] = ONE;
    }
    let v = CMatrix::from_fn(dim_b, dim_b, |i, j| if i == j { Complex64::new(0.0, 1.0).powu((i % 4) as u32) } else { ZERO });
    s.kronecker(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryMode {
    /// Use the quarter-turn block reduction when the problem admits it.
    Auto,
    /// Always optimise over the full space.
    Off,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub max_iters: usize,
    pub perturbation: f64,
    pub line_search_evals: usize,
    pub sdp: SdpOptions,
    /// Tolerance of the final dual solve used for certification.
    pub certify_tol: f64,
    pub symmetry: SymmetryMode,
    /// Stop once the primal value falls below this level (the bound can
    /// then only be lower as well).
    pub stop_below: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            max_iters: 300,
            perturbation: 1e-9,
            line_search_evals: 20,
            sdp: SdpOptions::default(),
            certify_tol: 1e-11,
            symmetry: SymmetryMode::Auto,
            stop_below: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Objective at the returned (feasible) state, bits.
    pub primal_value: f64,
    /// Certified lower bound on the minimum, bits.
    pub lower_bound: f64,
    /// Last Frank-Wolfe gap estimate.
    pub gap: f64,
    pub iterations: usize,
    pub constraint_residual: f64,
    pub min_eigenvalue: f64,
    pub trace_error: f64,
    /// The iteration ended without a stall (gap below `gap_tol`, iteration
    /// limit, or `stop_below`), the bound is certified, the state is feasible
    /// to `FEASIBILITY_TOL` and the bound does not exceed the primal value by
    /// more than `CERTIFICATE_TOL`.
    pub converged: bool,
    /// The Frank-Wolfe gap fell below `gap_tol`.
    pub gap_reached: bool,
    pub stopped_below: bool,
    /// `lower_bound` comes from a converged dual solve.
    pub certified: bool,
    /// Solved on the quarter-turn invariant blocks.
    pub reduced: bool,
    /// Objective value after each accepted step.
    pub history: Vec<f64>,
    pub state: CMatrix,
}

#[derive(Debug, Clone)]
pub struct KeyRateResult {
    pub primal_value: f64,
    pub lower_bound: f64,
    pub delta_ec: f64,
    pub p_pass: f64,
    /// `max(0, lower_bound - p_pass * delta_ec)`.
    pub rate: f64,
    pub iterations: usize,
    pub constraint_residual: f64,
    /// Smallest eigenvalue of the returned state.
    pub min_eigenvalue: f64,
    pub converged: bool,
    pub certified: bool,
}

impl KeyRateResult {
    pub fn from_report(report: &SolveReport, delta_ec: f64, p_pass: f64) -> Self {
        Self {
            primal_value: report.primal_value,
            lower_bound: report.lower_bound,
            delta_ec,
            p_pass,
            rate: (report.lower_bound - p_pass * delta_ec).max(0.0),
            iterations: report.iterations,
            constraint_residual: report.constraint_residual,
            min_eigenvalue: report.min_eigenvalue,
            converged: report.converged,
            certified: report.certified,
        }
    }
}

/// Problem data restricted to the chosen block structure.
struct Reduced {
    model: EntropyModel,
    a: Vec<Blocks>,
    b: Vec<f64>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Reduced {
    fn new(cs: &ConstraintSet, maps: &PostprocessingMaps, symmetry: SymmetryMode) -> Result<Self> {
        let model = match symmetry {
            SymmetryMode::Auto if constraints_invariant(cs, &quarter_turn_unitary(maps.dim_b)) => match EntropyModel::quarter_turn(maps)? {
                Some(m) => m,
                None => EntropyModel::dense(maps)?,
            },
            _ => EntropyModel::dense(maps)?,
        };
        let projected: Vec<Blocks> = cs.constraints.iter().map(|c| model.basis.project(c.observable.matrix())).collect();
        let idx = independent_subset(&projected, 1e-10);
        let a = idx.iter().map(|&i| projected[i].clone()).collect();
        let b = idx.iter().map(|&i| cs.constraints[i].value).collect();
        let gram = nalgebra::DMatrix::from_fn(idx.len(), idx.len(), |i, j| blocks_inner(&projected[idx[i]], &projected[idx[j]]))
            .cholesky()
            .ok_or_else(|| Error::Numerical("constraint Gram matrix is singular".into()))?;
        Ok(Self { model, a, b, gram })
    }

    fn problem(&self, c: Blocks) -> Result<SdpProblem> {
        SdpProblem::new(self.model.basis.sizes.clone(), c, self.a.clone(), self.b.clone())
    }

    fn zeros(&self) -> Blocks {
        self.model.basis.sizes.iter().map(|&s| CMatrix::zeros(s, s)).collect()
    }

    /// Least-norm correction onto the affine constraint set followed by
    /// clipping of negative eigenvalues.
    fn repair(&self, rho: &Blocks) -> Blocks {
        let r = nalgebra::DVector::from_iterator(self.b.len(), self.a.iter().zip(&self.b).map(|(a, b)| b - blocks_inner(a, rho)));
        let coef = self.gram.solve(&r);
        let mut out = rho.clone();
        for (a, c) in self.a.iter().zip(coef.iter()) {
            for (o, ak) in out.iter_mut().zip(a) {
                *o += ak * Complex64::new(*c, 0.0);
            }
        }
        out.iter().map(|m| HermitianEigen::new(m).map(|w| w.max(0.0))).collect()
    }

    fn perturb(&self, rho: &Blocks, eps: f64) -> Blocks {
        let n = self.model.basis.dim() as f64;
        rho.iter()
            .map(|r| {
                let mut out = HermitianEigen::new(r).map(|w| (1.0 - eps) * w.max(0.0));
                for i in 0..out.nrows() {
                    out[(i, i)] += Complex64::new(eps / n, 0.0);
                }
                out
            })
            .collect()
    }
}

/// A minimiser of `Re Tr(c rho)` over the constraint set, solved on the full
/// space. `c = 0` returns an interior point.
pub fn feasible_state(cs: &ConstraintSet, c: &CMatrix, sdp: &SdpOptions) -> Result<CMatrix> {
    let d = cs.dim();
    if c.nrows() != d || c.ncols() != d {
        return invalid(format!("cost matrix must be {d}x{d}"));
    }
    let ops: Vec<Blocks> = cs.constraints.iter().map(|k| vec![k.observable.matrix().clone()]).collect();
    let idx = independent_subset(&ops, 1e-10);
    let mut cost = c.clone();
    symmetrize_in_place(&mut cost);
    let p = SdpProblem::new(vec![d], vec![cost], idx.iter().map(|&i| ops[i].clone()).collect(), idx.iter().map(|&i| cs.constraints[i].value).collect())?;
    let sol = p.solve(sdp)?;
    let x = sol.x.into_iter().next().expect("one block");
    let residual = cs.max_residual(&x);
    if residual > FEASIBILITY_TOL || x.iter().any(|z| !z.is_finite()) {
        return Err(Error::Infeasible { max_residual: residual });
    }
    Ok(x)
}

/// Golden-section minimisation of `eval` on `[0, t_max]` with `evals`
/// function calls, backtracking towards zero when the bracket misses a
/// decrease. Returns a step that lowers the value below `f0`.
fn line_search(eval: impl Fn(f64) -> f64, t_max: f64, evals: usize, f0: f64) -> Option<(f64, f64)> {
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, t_max);
    let mut c = hi - gr * (hi - lo);
    let mut d = lo + gr * (hi - lo);
    let mut fc = eval(c);
    let mut fd = eval(d);
    for _ in 2..evals {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = eval(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = eval(d);
        }
    }
    let (mut t, mut f) = if fc < fd { (c, fc) } else { (d, fd) };
    let f_end = eval(t_max);
    if f_end < f {
        (t, f) = (t_max, f_end);
    }
    let mut tries = 0;
    while !(f < f0) && tries < evals {
        t *= 0.25;
        f = eval(t);
        tries += 1;
    }
    (f < f0).then_some((t, f))
}

fn combine(rho: &Blocks, t: f64, dir: &Blocks) -> Blocks {
    rho.iter().zip(dir).map(|(r, d)| r + d * Complex64::new(t, 0.0)).collect()
}

/// Minimise `D(G(rho) || Z(G(rho)))` over the constraint set by Frank-Wolfe
/// and certify the result through the dual of the linearised problem.
pub fn solve(cs: &ConstraintSet, maps: &PostprocessingMaps, opts: &SolverOptions) -> Result<SolveReport> {
    if cs.dim() != maps.dim() {
        return invalid(format!("constraints act on dimension {}, maps on {}", cs.dim(), maps.dim()));
    }
    if opts.gap_tol <= 0.0 || opts.max_iters == 0 || opts.line_search_evals < 2 || !(0.0..1.0).contains(&opts.perturbation) {
        return invalid("solver options out of range");
    }
    let red = Reduced::new(cs, maps, opts.symmetry)?;
    let reduced = !red.model.basis.is_trivial();

    // Feasibility pre-solve: any interior point of the constraint set.
    let phase1 = red.problem(red.zeros())?.solve(&opts.sdp)?;
    let start_full = red.model.basis.to_full(&phase1.x);
    let start_residual = cs.max_residual(&start_full);
    if start_residual > FEASIBILITY_TOL || start_full.iter().any(|z| !z.is_finite()) {
        return Err(Error::Infeasible { max_residual: start_residual });
    }

    let eps = opts.perturbation;
    let mut rho = red.repair(&phase1.x);
    let mut f_cur = red.model.value(&red.perturb(&rho, eps));
    let mut history = vec![f_cur];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut stalled = false;
    let below = |f: f64| opts.stop_below.is_some_and(|s| f < s);
    while iterations < opts.max_iters && !below(f_cur) {
        let rho_e = red.perturb(&rho, eps);
        let g = red.model.gradient(&rho_e);
        let lmo = match red.problem(g.clone()).and_then(|p| p.solve(&opts.sdp)) {
            Ok(s) => s,
            Err(_) => {
                stalled = true;
                break;
            }
        };
        let sigma = red.repair(&lmo.x);
        let dir: Blocks = sigma.iter().zip(&rho).map(|(s, r)| s - r).collect();
        gap = -blocks_inner(&g, &dir);
        if gap < opts.gap_tol {
            break;
        }
        iterations += 1;
        let eval = |t: f64| red.model.value(&red.perturb(&combine(&rho, t, &dir), eps));
        let Some((t, f_new)) = line_search(eval, 1.0, opts.line_search_evals, f_cur) else {
            stalled = true;
            break;
        };
        rho = combine(&rho, t, &dir);
        f_cur = f_new;
        history.push(f_cur);
    }
    let stopped_below = below(f_cur);
    let gap_reached = gap < opts.gap_tol;

    // Certification: linearise at the perturbed iterate and bound the
    // linear problem from below with any dual point.
    let rho_e = red.perturb(&rho, eps);
    let g = red.model.gradient(&rho_e);
    let f_e = red.model.value(&rho_e);
    let linear_offset = f_e - blocks_inner(&rho_e, &g);
    let cert_opts = SdpOptions { tol: opts.certify_tol, ..opts.sdp };
    // Any dual vector gives a valid bound, converged or not.
    let (lower_bound, certified) = match red.problem(g.clone()).and_then(|p| p.solve(&cert_opts).map(|s| (p, s))) {
        Ok((p, sol)) => {
            let slack = p.dual_slack(&sol.y);
            let lmin = slack.iter().map(|s| HermitianEigen::new(s).values.iter().cloned().fold(f64::INFINITY, f64::min)).fold(f64::INFINITY, f64::min);
            let by: f64 = p.b.iter().zip(&sol.y).map(|(b, y)| b * y).sum();
            (linear_offset + by + lmin.min(0.0), lmin.is_finite())
        }
        Err(_) => (linear_offset + blocks_inner(&g, &rho_e) - gap, false),
    };

    let state = red.model.basis.to_full(&rho);
    let primal_value = red.model.value(&rho.iter().map(|r| HermitianEigen::new(r).map(|w| w.max(0.0))).collect());
    let eig = HermitianEigen::new(&state);
    let min_eigenvalue = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let trace_error = (state.trace().re - 1.0).abs();
    let constraint_residual = cs.max_residual(&state);
    let converged = !stalled && certified && constraint_residual <= FEASIBILITY_TOL && lower_bound <= primal_value + CERTIFICATE_TOL;
    Ok(SolveReport {
        primal_value,
        lower_bound,
        gap,
        iterations,
        constraint_residual,
        min_eigenvalue,
        trace_error,
        converged,
        gap_reached,
        stopped_below,
        certified,
        reduced,
        history,
        state,
    })
}

pub fn key_rate(cs: &ConstraintSet, maps: &PostprocessingMaps, ec: &EcCost, opts: &SolverOptions) -> Result<KeyRateResult> {
    let threshold = ec.p_pass * ec.delta_ec;
    let opts = SolverOptions { stop_below: Some(opts.stop_below.map_or(threshold, |s| s.min(threshold))), ..*opts };
    let report = solve(cs, maps, &opts)?;
    Ok(KeyRateResult::from_report(&report, ec.delta_ec, ec.p_pass))
}
