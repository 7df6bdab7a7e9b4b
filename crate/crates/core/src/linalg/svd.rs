//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working copy are orthogonalised pairwise until every pair
//! is orthogonal to machine precision. Singular values are the resulting
//! column norms; the accumulated rotations form `V`.

use super::matrix::dot;
use super::DenseMatrix;
use crate::error::{Result, SalrError};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// `input ≈ u · diag(s) · vt` with `q = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows × q`, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `q × cols`, orthonormal rows.
    pub vt: DenseMatrix,
}

impl SvdResult {
    pub fn rank_count(&self) -> usize {
        self.s.len()
    }

    /// `U_r · diag(s_r) · Vt_r`.
    pub fn reconstruct(&self, r: usize) -> DenseMatrix {
        let r = r.min(self.s.len());
        let (m, n) = (self.u.rows(), self.vt.cols());
        let mut out = DenseMatrix::zeros(m, n);
        let data = out.as_mut_slice();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            for k in 0..r {
                let coef = self.u.get(i, k) * self.s[k];
                super::matrix::axpy(row, coef, self.vt.row(k));
            }
        }
        out
    }

    /// Number of singular values above `rel_cutoff · s[0]`.
    pub fn effective_rank(&self, rel_cutoff: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&v| v > rel_cutoff * top).count()
    }
}

pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(SalrError::Domain("svd of an empty matrix".into()));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(SalrError::Domain("svd input has non-finite entries".into()));
    }
    if m.rows() >= m.cols() {
        let (u, s, v) = jacobi_tall(m);
        Ok(SvdResult { u, s, vt: v.transpose() })
    } else {
        // A^T = U' S V'^T  ⇒  A = V' S U'^T
        let (u_t, s, v_t) = jacobi_tall(&m.transpose());
        Ok(SvdResult { u: v_t, s, vt: u_t.transpose() })
    }
}

/// One-sided Jacobi on an `m × n` matrix with `m ≥ n`. Returns `(U, s, V)`
/// with `U` as `m × n` and `V` as `n × n`.
fn jacobi_tall(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let (m, n) = a.shape();
    // column-major working copies
    let mut cols: Vec<f64> = a.transpose().into_vec();
    let mut vcols: Vec<f64> = DenseMatrix::identity(n).into_vec();
    let mut norms: Vec<f64> = (0..n)
        .map(|j| {
            let c = &cols[j * m..(j + 1) * m];
            dot(c, c)
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (cp, cq) = pair_mut(&mut cols, m, p, q);
                let gamma = dot(cp, cq);
                if gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vp, vq) = pair_mut(&mut vcols, n, p, q);
                rotate(vp, vq, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // refresh to stop drift in the incrementally updated norms
        for j in 0..n {
            let c = &cols[j * m..(j + 1) * m];
            norms[j] = dot(c, c);
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigma: Vec<f64> = norms.iter().map(|v| v.sqrt()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let s: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let top = s.first().copied().unwrap_or(0.0);
    let floor = top * (m.max(n) as f64) * f64::EPSILON;

    let mut u = vec![0.0; n * m]; // column-major m × n
    let mut have = vec![false; n];
    for (k, &j) in order.iter().enumerate() {
        if s[k] > floor && s[k] > 0.0 {
            let src = &cols[j * m..(j + 1) * m];
            for (dst, &v) in u[k * m..(k + 1) * m].iter_mut().zip(src) {
                *dst = v / s[k];
            }
            have[k] = true;
        }
    }
    complete_basis(&mut u, m, &have);

    let mut v = vec![0.0; n * n]; // column-major
    for (k, &j) in order.iter().enumerate() {
        v[k * n..(k + 1) * n].copy_from_slice(&vcols[j * n..(j + 1) * n]);
    }

    let u = DenseMatrix::new(n, m, u).expect("finite").transpose();
    let v = DenseMatrix::new(n, n, v).expect("finite").transpose();
    (u, s, v)
}

fn pair_mut(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = buf.split_at_mut(q * len);
    (&mut lo[p * len..(p + 1) * len], &mut hi[..len])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the columns not marked in `have` with unit vectors orthogonal to all
/// others, drawn from the standard basis by modified Gram–Schmidt.
fn complete_basis(u: &mut [f64], m: usize, have: &[bool]) {
    let n = have.len();
    let mut filled: Vec<usize> = (0..n).filter(|&k| have[k]).collect();
    let mut candidate = 0usize;
    for k in 0..n {
        if have[k] {
            continue;
        }
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut w = vec![0.0; m];
            w[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = &u[f * m..(f + 1) * m];
                    let proj = dot(col, &w);
                    for (wi, &ci) in w.iter_mut().zip(col) {
                        *wi -= proj * ci;
                    }
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > 0.5 {
                for (dst, wi) in u[k * m..(k + 1) * m].iter_mut().zip(&w) {
                    *dst = wi / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}
