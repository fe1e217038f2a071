//! Primal-dual interior-point solver for small complex Hermitian SDPs with
//! block-diagonal structure:
//!
//! ```text
//!   minimize   sum_k Re Tr(C_k X_k)
//!   subject to sum_k Re Tr(A_ik X_k) = b_i,   X_k >= 0
//! ```
//!
//! with dual `maximize b.y  s.t.  S_k = C_k - sum_i y_i A_ik >= 0`.
//! Search directions are HKM with a Mehrotra predictor-corrector step.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fock::{symmetrize_in_place, trace_product, CMatrix, HermitianEigen};

/// Block-diagonal Hermitian operator, one dense matrix per block.
pub type Blocks = Vec<CMatrix>;

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub c: Blocks,
    /// `a[i][k]`: block `k` of constraint `i`.
    pub a: Vec<Blocks>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 100, step_fraction: 0.95 }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Blocks,
    pub y: Vec<f64>,
    pub s: Blocks,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn blocks_inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| trace_product(x, y)).sum()
}

fn blocks_axpy(alpha: f64, x: &Blocks, y: &mut Blocks) {
    let a = Complex64::new(alpha, 0.0);
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk += xk * a;
    }
}

fn blocks_norm(a: &Blocks) -> f64 {
    a.iter().map(|m| m.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt()
}

fn hermitian_inverse(m: &CMatrix) -> Result<CMatrix> {
    let e = HermitianEigen::new(m);
    if e.values.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Numerical("interior-point iterate lost positive definiteness".into()));
    }
    Ok(e.map(|w| 1.0 / w))
}

/// Largest `t <= 1` keeping `x + t dx` positive semidefinite.
fn max_step(x: &CMatrix, dx: &CMatrix) -> f64 {
    let e = HermitianEigen::new(x);
    let mut li = e.vectors.clone();
    for (j, &w) in e.values.iter().enumerate() {
        li.column_mut(j).scale_mut(1.0 / w.max(1e-300).sqrt());
    }
    let mut t = li.adjoint() * dx * &li;
    symmetrize_in_place(&mut t);
    let lmin = HermitianEigen::new(&t).values.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        1.0
    } else {
        (-1.0 / lmin).min(1.0)
    }
}

impl SdpProblem {
    pub fn new(block_sizes: Vec<usize>, c: Blocks, a: Vec<Blocks>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return invalid(format!("{} constraint operators but {} values", a.len(), b.len()));
        }
        let check = |m: &Blocks, what: &str| -> Result<()> {
            if m.len() != block_sizes.len() || m.iter().zip(&block_sizes).any(|(x, &d)| x.nrows() != d || x.ncols() != d) {
                return invalid(format!("{what} does not match the block structure"));
            }
            Ok(())
        };
        check(&c, "objective")?;
        for ai in &a {
            check(ai, "constraint")?;
        }
        Ok(Self { block_sizes, c, a, b })
    }

    pub fn total_dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// `(Re Tr(A_i X))_i`.
    pub fn apply_a(&self, x: &Blocks) -> Vec<f64> {
        self.a.iter().map(|ai| blocks_inner(ai, x)).collect()
    }

    /// `sum_i y_i A_i`.
    pub fn apply_a_adjoint(&self, y: &[f64]) -> Blocks {
        let mut out: Blocks = self.block_sizes.iter().map(|&d| CMatrix::zeros(d, d)).collect();
        for (ai, &yi) in self.a.iter().zip(y) {
            if yi != 0.0 {
                blocks_axpy(yi, ai, &mut out);
            }
        }
        out
    }

    /// `S = C - sum_i y_i A_i`.
    pub fn dual_slack(&self, y: &[f64]) -> Blocks {
        let mut s = self.c.clone();
        blocks_axpy(-1.0, &self.apply_a_adjoint(y), &mut s);
        for m in s.iter_mut() {
            symmetrize_in_place(m);
        }
        s
    }

    /// Solve after scaling every constraint row and the cost to unit norm;
    /// the returned solution is in the original scaling.
    pub fn solve(&self, opts: &SdpOptions) -> Result<SdpSolution> {
        let row_norms: Vec<f64> = self.a.iter().map(|a| blocks_norm(a).max(f64::MIN_POSITIVE)).collect();
        let c_norm = blocks_norm(&self.c);
        let c_scale = if c_norm > 0.0 { c_norm } else { 1.0 };
        let scale = |m: &Blocks, f: f64| -> Blocks { m.iter().map(|x| x * Complex64::new(f, 0.0)).collect() };
        let scaled = SdpProblem {
            block_sizes: self.block_sizes.clone(),
            c: scale(&self.c, 1.0 / c_scale),
            a: self.a.iter().zip(&row_norms).map(|(a, n)| scale(a, 1.0 / n)).collect(),
            b: self.b.iter().zip(&row_norms).map(|(b, n)| b / n).collect(),
        };
        let mut sol = scaled.solve_unscaled(opts)?;
        sol.y = sol.y.iter().zip(&row_norms).map(|(y, n)| y * c_scale / n).collect();
        sol.s = scale(&sol.s, c_scale);
        sol.primal_objective = blocks_inner(&self.c, &sol.x);
        sol.dual_objective = self.b.iter().zip(&sol.y).map(|(b, y)| b * y).sum();
        let ax = self.apply_a(&sol.x);
        sol.primal_residual = self.b.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt();
        let mut rd = self.dual_slack(&sol.y);
        blocks_axpy(-1.0, &sol.s, &mut rd);
        sol.dual_residual = blocks_norm(&rd);
        Ok(sol)
    }

    fn solve_unscaled(&self, opts: &SdpOptions) -> Result<SdpSolution> {
        let m = self.b.len();
        let n_total = self.total_dim() as f64;
        let mut x: Blocks = self.block_sizes.iter().map(|&d| CMatrix::identity(d, d) * Complex64::new(1.0 / n_total, 0.0)).collect();
        let mut s: Blocks = self.block_sizes.iter().map(|&d| CMatrix::identity(d, d)).collect();
        let mut y = vec![0.0; m];
        let b_norm = self.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c_norm = blocks_norm(&self.c);

        let mut iterations = 0;
        let mut converged = false;
        let mut last = None;
        for it in 0..opts.max_iters {
            iterations = it;
            let ax = self.apply_a(&x);
            let rp: Vec<f64> = self.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let mut rd = self.c.clone();
            blocks_axpy(-1.0, &self.apply_a_adjoint(&y), &mut rd);
            blocks_axpy(-1.0, &s, &mut rd);
            let mu = blocks_inner(&x, &s) / n_total;
            let pobj = blocks_inner(&self.c, &x);
            let dobj: f64 = self.b.iter().zip(&y).map(|(b, y)| b * y).sum();
            let rp_norm = rp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rd_norm = blocks_norm(&rd);
            last = Some((pobj, dobj, rp_norm, rd_norm));
            let gap_ok = (pobj - dobj).abs() < opts.tol * (1.0 + pobj.abs()) || mu < 1e-14 * (1.0 + pobj.abs());
            if rp_norm < opts.tol * (1.0 + b_norm) && rd_norm < opts.tol * (1.0 + c_norm) && gap_ok {
                converged = true;
                break;
            }

            // Past this point numerical failures end the run with the last
            // iterate; callers inspect `converged`.
            let s_inv: Blocks = match s.iter().map(hermitian_inverse).collect::<Result<_>>() {
                Ok(v) => v,
                Err(_) => break,
            };
            // Schur complement M_ij = Re Tr(A_i X A_j S^{-1}).
            let xas: Vec<Blocks> = self
                .a
                .iter()
                .map(|aj| aj.iter().zip(x.iter().zip(&s_inv)).map(|(a, (xk, sk))| xk * a * sk).collect())
                .collect();
            let mut schur = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let v = blocks_inner(&self.a[i], &xas[j]);
                    schur[(i, j)] = v;
                    schur[(j, i)] = v;
                }
            }
            let schur_lu = schur.clone().lu();
            let schur_chol = schur.clone().cholesky();

            let direction = |sigma: f64, corr: Option<&Blocks>| -> Result<(Blocks, Vec<f64>, Blocks)> {
                let mut rhs_mat: Blocks = Vec::with_capacity(x.len());
                for k in 0..x.len() {
                    let mut r = &s_inv[k] * Complex64::new(sigma * mu, 0.0) - &x[k] - &x[k] * &rd[k] * &s_inv[k];
                    if let Some(c) = corr {
                        r -= &c[k] * &s_inv[k];
                    }
                    rhs_mat.push(r);
                }
                let a_rhs = self.apply_a(&rhs_mat);
                let rhs = DVector::from_iterator(m, rp.iter().zip(&a_rhs).map(|(r, a)| r - a));
                let dy = match &schur_chol {
                    Some(ch) => ch.solve(&rhs),
                    None => schur_lu.solve(&rhs).ok_or_else(|| Error::Numerical("singular Schur complement".into()))?,
                };
                let dy: Vec<f64> = dy.iter().cloned().collect();
                let ady = self.apply_a_adjoint(&dy);
                let mut ds = rd.clone();
                blocks_axpy(-1.0, &ady, &mut ds);
                let mut dx = rhs_mat;
                for k in 0..x.len() {
                    dx[k] += &x[k] * &ady[k] * &s_inv[k];
                    symmetrize_in_place(&mut dx[k]);
                    symmetrize_in_place(&mut ds[k]);
                }
                Ok((dx, dy, ds))
            };
            let steps = |dx: &Blocks, ds: &Blocks| -> (f64, f64) {
                let ap = x.iter().zip(dx).map(|(a, d)| max_step(a, d)).fold(1.0, f64::min);
                let ad = s.iter().zip(ds).map(|(a, d)| max_step(a, d)).fold(1.0, f64::min);
                (ap, ad)
            };

            let Ok((dxa, _, dsa)) = direction(0.0, None) else { break };
            let (ap, ad) = steps(&dxa, &dsa);
            let mut xa = x.clone();
            blocks_axpy(ap, &dxa, &mut xa);
            let mut sa = s.clone();
            blocks_axpy(ad, &dsa, &mut sa);
            let mu_aff = blocks_inner(&xa, &sa) / n_total;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let corr: Blocks = dxa.iter().zip(&dsa).map(|(a, b)| a * b).collect();
            let Ok((dx, dy, ds)) = direction(sigma, Some(&corr)) else { break };
            let (ap, ad) = steps(&dx, &ds);
            let (ap, ad) = ((opts.step_fraction * ap).min(1.0), (opts.step_fraction * ad).min(1.0));
            let finite = dx.iter().chain(&ds).all(|m| m.iter().all(|z| z.is_finite())) && dy.iter().all(|v| v.is_finite());
            if !finite {
                break;
            }
            blocks_axpy(ap, &dx, &mut x);
            blocks_axpy(ad, &ds, &mut s);
            for (yi, di) in y.iter_mut().zip(&dy) {
                *yi += ad * di;
            }
            for k in 0..x.len() {
                symmetrize_in_place(&mut x[k]);
                symmetrize_in_place(&mut s[k]);
            }
            if ap < 1e-12 && ad < 1e-12 {
                break;
            }
        }
        let (pobj, dobj, rp_norm, rd_norm) = last.expect("at least one iteration");
        Ok(SdpSolution {
            x,
            y,
            s,
            primal_objective: pobj,
            dual_objective: dobj,
            primal_residual: rp_norm,
            dual_residual: rd_norm,
            iterations,
            converged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn minimum_eigenvalue_as_sdp() {
        // min Tr(C X) s.t. Tr X = 1 is the smallest eigenvalue of C.
        let cm = CMatrix::from_row_slice(3, 3, &[c(2.0, 0.0), c(0.5, 0.3), c(0.0, 0.0), c(0.5, -0.3), c(1.0, 0.0), c(0.2, 0.0), c(0.0, 0.0), c(0.2, 0.0), c(3.0, 0.0)]);
        let p = SdpProblem::new(vec![3], vec![cm.clone()], vec![vec![CMatrix::identity(3, 3)]], vec![1.0]).unwrap();
        let sol = p.solve(&SdpOptions::default()).unwrap();
        assert!(sol.converged);
        let lmin = HermitianEigen::new(&cm).values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(sol.primal_objective, lmin, epsilon = 1e-8);
        assert_relative_eq!(sol.dual_objective, lmin, epsilon = 1e-8);
    }

    #[test]
    fn block_problem_splits_mass() {
        // Two blocks sharing a unit trace: all mass goes to the cheaper one.
        let p = SdpProblem::new(
            vec![2, 1],
            vec![CMatrix::identity(2, 2) * c(1.0, 0.0), CMatrix::identity(1, 1) * c(0.3, 0.0)],
            vec![vec![CMatrix::identity(2, 2), CMatrix::identity(1, 1)]],
            vec![1.0],
        )
        .unwrap();
        let sol = p.solve(&SdpOptions::default()).unwrap();
        assert_relative_eq!(sol.primal_objective, 0.3, epsilon = 1e-8);
        assert!(sol.x[0].trace().re < 1e-7);
    }

    #[test]
    fn complex_off_diagonal_constraint() {
        // Fix Tr X = 1 and Re Tr(A X) = 0.4 with A = [[0, i], [-i, 0]]; minimise X_00.
        let a = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        let cm = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let p = SdpProblem::new(vec![2], vec![cm], vec![vec![CMatrix::identity(2, 2)], vec![a.clone()]], vec![1.0, 0.4]).unwrap();
        let sol = p.solve(&SdpOptions::default()).unwrap();
        assert!(sol.converged);
        // |X_01|^2 <= X_00 X_11 with Im X_01 = -0.2 gives X_00 = (1 - sqrt(1 - 0.16)) / 2.
        let expect = (1.0 - (1.0f64 - 0.16).sqrt()) / 2.0;
        assert_relative_eq!(sol.primal_objective, expect, epsilon = 1e-7);
        assert_relative_eq!(trace_product(&a, &sol.x[0]), 0.4, epsilon = 1e-8);
    }

    #[test]
    fn weak_duality_on_returned_pair() {
        let cm = CMatrix::from_fn(4, 4, |i, j| c(((i * 3 + j * 7) % 5) as f64 - 2.0, 0.0));
        let cm = (&cm + cm.adjoint()) * c(0.5, 0.0);
        let a1 = CMatrix::from_fn(4, 4, |i, j| if i == j { c(i as f64, 0.0) } else { c(0.0, 0.0) });
        let p = SdpProblem::new(vec![4], vec![cm], vec![vec![CMatrix::identity(4, 4)], vec![a1]], vec![1.0, 1.2]).unwrap();
        let sol = p.solve(&SdpOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.dual_objective <= sol.primal_objective + 1e-8);
        let slack = p.dual_slack(&sol.y);
        let lmin = HermitianEigen::new(&slack[0]).values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lmin > -1e-7);
    }
}
