//! Linear solvers for the coupled tangent: sparse direct LU (default) and
//! restarted GMRES with an ILU(0) preconditioner. The direct path reuses the
//! symbolic factorization across Newton iterations and runs sequentially so
//! results are identical across thread counts.

use crate::error::{Error, Result};
use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::SparseColMatRef;

pub struct DirectSolver {
    symbolic: Option<SymbolicLu<usize>>,
}

impl Default for DirectSolver {
    fn default() -> Self {
        Self::new()
    }
}

impl DirectSolver {
    pub fn new() -> Self {
        faer::set_global_parallelism(faer::Par::Seq);
        DirectSolver { symbolic: None }
    }

    /// Solves `A x = rhs`, overwriting rhs with x. One step of iterative
    /// refinement keeps the relative linear residual at direct-solver levels.
    pub fn solve(&mut self, a: SparseColMatRef<'_, usize, f64>, rhs: &mut [f64]) -> Result<()> {
        let n = a.nrows();
        if self.symbolic.is_none() {
            self.symbolic = Some(
                SymbolicLu::try_new(a.symbolic())
                    .map_err(|e| Error::LinearSolve(format!("symbolic analysis failed: {e:?}")))?,
            );
        }
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone().unwrap(), a)
            .map_err(|e| Error::LinearSolve(format!("factorization failed: {e:?}")))?;
        let b0: Vec<f64> = rhs.to_vec();
        let mut x = Mat::from_fn(n, 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        // iterative refinement
        let mut r = Mat::from_fn(n, 1, |i, _| b0[i]);
        spmv_sub(a, x.as_ref(), r.as_mut());
        let rnorm = r.norm_l2();
        let bnorm = Mat::from_fn(n, 1, |i, _| b0[i]).norm_l2();
        if bnorm > 0.0 && rnorm > 1e-14 * bnorm {
            lu.solve_in_place(r.as_mut());
            for i in 0..n {
                x[(i, 0)] += r[(i, 0)];
            }
        }
        for (i, v) in rhs.iter_mut().enumerate() {
            *v = x[(i, 0)];
            if !v.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "non-finite solution component at equation {i} (singular pivot?)"
                )));
            }
        }
        Ok(())
    }

    pub fn reset_symbolic(&mut self) {
        self.symbolic = None;
    }
}

/// r -= A x
fn spmv_sub(a: SparseColMatRef<'_, usize, f64>, x: MatRef<'_, f64>, mut r: MatMut<'_, f64>) {
    for c in 0..a.ncols() {
        let xc = x[(c, 0)];
        if xc == 0.0 {
            continue;
        }
        let rows = a.row_idx_of_col_raw(c);
        let vals = a.val_of_col(c);
        for (k, &row) in rows.iter().enumerate() {
            r[(row, 0)] -= vals[k] * xc;
        }
    }
}

/// CSR representation used by the iterative solver.
pub struct CsrView<'a> {
    pub n: usize,
    pub row_ptr: &'a [usize],
    pub col_idx: &'a [u32],
    pub vals: &'a [f64],
}

impl CsrView<'_> {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k] as usize];
            }
            y[r] = acc;
        }
    }
}

/// Zero-fill incomplete LU factorization on the CSR pattern.
pub struct Ilu0 {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
    diag_ptr: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrView<'_>) -> Result<Self> {
        let n = a.n;
        let row_ptr = a.row_ptr.to_vec();
        let col_idx = a.col_idx.to_vec();
        let mut vals = a.vals.to_vec();
        let mut diag_ptr = vec![0usize; n];
        for r in 0..n {
            let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            let pos = row
                .binary_search(&(r as u32))
                .map_err(|_| Error::LinearSolve(format!("ILU(0): missing diagonal in row {r}")))?;
            diag_ptr[r] = row_ptr[r] + pos;
        }
        // IKJ factorization restricted to the pattern
        let mut colmap: Vec<i64> = vec![-1; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                colmap[col_idx[k] as usize] = k as i64;
            }
            let mut k = row_ptr[i];
            while k < row_ptr[i + 1] {
                let j = col_idx[k] as usize;
                if j >= i {
                    break;
                }
                let piv = vals[diag_ptr[j]];
                if piv.abs() < 1e-300 {
                    return Err(Error::LinearSolve(format!("ILU(0): zero pivot in row {j}")));
                }
                let lij = vals[k] / piv;
                vals[k] = lij;
                for kk in (diag_ptr[j] + 1)..row_ptr[j + 1] {
                    let col = col_idx[kk] as usize;
                    let slot = colmap[col];
                    if slot >= 0 {
                        vals[slot as usize] -= lij * vals[kk];
                    }
                }
                k += 1;
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                colmap[col_idx[k] as usize] = -1;
            }
        }
        Ok(Ilu0 {
            row_ptr,
            col_idx,
            vals,
            diag_ptr,
        })
    }

    /// y = (LU)^-1 x
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag_ptr.len();
        y.copy_from_slice(x);
        // forward solve L y = x (unit diagonal)
        for r in 0..n {
            let mut acc = y[r];
            for k in self.row_ptr[r]..self.diag_ptr[r] {
                acc -= self.vals[k] * y[self.col_idx[k] as usize];
            }
            y[r] = acc;
        }
        // backward solve U y = y
        for r in (0..n).rev() {
            let mut acc = y[r];
            for k in (self.diag_ptr[r] + 1)..self.row_ptr[r + 1] {
                acc -= self.vals[k] * y[self.col_idx[k] as usize];
            }
            y[r] = acc / self.vals[self.diag_ptr[r]];
        }
    }
}

/// Right-preconditioned restarted GMRES. Returns the iteration count.
pub fn gmres_ilu0(
    a: &CsrView<'_>,
    b: &[f64],
    x: &mut [f64],
    tol_rel: f64,
    restart: usize,
    max_outer: usize,
) -> Result<usize> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut total_iters = 0;
    let mut r = vec![0.0; n];
    let mut scratch = vec![0.0; n];

    for _ in 0..max_outer {
        // r = b - A x
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta <= tol_rel * bnorm {
            return Ok(total_iters);
        }
        let m = restart;
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|x| x / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            total_iters += 1;
            // w = A M^-1 v_k
            pre.apply(&v[k], &mut scratch);
            let mut w = vec![0.0; n];
            a.matvec(&scratch, &mut w);
            for (j, vj) in v.iter().enumerate().take(k + 1) {
                let hjk = dot(&w, vj);
                h[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * vj[i];
                }
            }
            let hk1 = norm(&w);
            h[k + 1][k] = hk1;
            // Givens rotations
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + hk1 * hk1).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = hk1 / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if hk1 == 0.0 || g[k + 1].abs() <= tol_rel * bnorm {
                break;
            }
            v.push(w.iter().map(|x| x / hk1).collect());
        }

        // back substitution for y, then x += M^-1 (V y)
        let kk = k_used;
        if kk == 0 {
            return Err(Error::LinearSolve("GMRES breakdown at restart".into()));
        }
        let mut y = vec![0.0f64; kk];
        for i in (0..kk).rev() {
            let mut acc = g[i];
            for j in (i + 1)..kk {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut z = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                z[i] += yj * v[j][i];
            }
        }
        pre.apply(&z, &mut scratch);
        for i in 0..n {
            x[i] += scratch[i];
        }
        // convergence check on true residual
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        if norm(&r) <= tol_rel * bnorm {
            return Ok(total_iters);
        }
    }
    Err(Error::LinearSolve(format!(
        "GMRES stagnated after {total_iters} iterations"
    )))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use faer::sparse::{SparseColMat, Triplet};

    fn csr_from_dense(m: &[&[f64]]) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
        let n = m.len();
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if m[r][c] != 0.0 {
                    col_idx.push(c as u32);
                    vals.push(m[r][c]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        (row_ptr, col_idx, vals)
    }

    #[test]
    fn direct_identity_returns_rhs() {
        let mut solver = DirectSolver::new();
        let trip: Vec<Triplet<usize, usize, f64>> =
            (0..4).map(|i| Triplet::new(i, i, 1.0)).collect();
        let a = SparseColMat::try_new_from_triplets(4, 4, &trip).unwrap();
        let mut rhs = vec![1.0, -2.0, 3.0, 0.5];
        solver.solve(a.rb(), &mut rhs).unwrap();
        assert_eq!(rhs, vec![1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn direct_spd_2x2_hand_inverse() {
        // [[2,1],[1,3]] x = [3,4] -> x = [1,1] (hand inverse: det 5)
        let mut solver = DirectSolver::new();
        let trip = vec![
            Triplet::new(0usize, 0usize, 2.0),
            Triplet::new(0, 1, 1.0),
            Triplet::new(1, 0, 1.0),
            Triplet::new(1, 1, 3.0),
        ];
        let a = SparseColMat::try_new_from_triplets(2, 2, &trip).unwrap();
        let mut rhs = vec![3.0, 4.0];
        solver.solve(a.rb(), &mut rhs).unwrap();
        assert_relative_eq!(rhs[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(rhs[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gmres_matches_direct_on_unsymmetric_system() {
        // diffusion-like unsymmetric band matrix
        let n = 60;
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            dense[i][i] = 4.0 + (i % 3) as f64;
            if i > 0 {
                dense[i][i - 1] = -1.2;
            }
            if i + 1 < n {
                dense[i][i + 1] = -0.8;
            }
            if i + 5 < n {
                dense[i][i + 5] = -0.3;
            }
        }
        let refs: Vec<&[f64]> = dense.iter().map(|r| r.as_slice()).collect();
        let (row_ptr, col_idx, vals) = csr_from_dense(&refs);
        let a = CsrView {
            n,
            row_ptr: &row_ptr,
            col_idx: &col_idx,
            vals: &vals,
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = vec![0.0; n];
        gmres_ilu0(&a, &b, &mut x, 1e-10, 30, 20).unwrap();
        let mut r = vec![0.0; n];
        a.matvec(&x, &mut r);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(ax, bi)| (ax - bi) * (ax - bi))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-9 * norm(&b), "gmres residual {res:e}");
    }
}
