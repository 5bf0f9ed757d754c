//! Small dense kernels for the solver: thin SVD by one-sided Jacobi,
//! Cholesky ridge solves, conjugate gradients and orthogonal Procrustes.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Maximum number of Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 60;
/// Relative off-diagonal tolerance `|aᵢ·aⱼ| ≤ tol·‖aᵢ‖‖aⱼ‖` for Jacobi rotations.
pub const JACOBI_TOL: f64 = 1e-12;
/// Accepted relative residual of a ridge solve.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-10;

/// Thin singular value decomposition `m = u · diag(s) · vᵀ`.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
    /// Number of singular values treated as numerically zero; their left
    /// vectors come from the deterministic basis completion.
    pub deficient: usize,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul(&self.v.transpose()).expect("consistent svd shapes")
    }
}

/// Thin SVD of `m`, optionally truncated to the `k` leading triples.
///
/// Singular values are sorted nonincreasing, and each pair is sign-normalized so
/// that the largest-magnitude entry of the left vector is positive (first
/// index wins ties).
pub fn thin_svd(m: &Matrix, k: Option<usize>) -> Result<ThinSvd> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("svd input has non-finite entries".into()));
    }
    let full = rows.min(cols);
    let k = k.unwrap_or(full);
    if k > full {
        return Err(Error::InvalidArgument(format!(
            "truncation {k} exceeds min({rows}, {cols})"
        )));
    }

    let svd = if rows >= cols {
        jacobi_tall(m)?
    } else {
        let t = jacobi_tall(&m.transpose())?;
        // Aᵀ = U' S V'ᵀ  =>  A = V' S U'ᵀ; the completed side is now on the right.
        let mut svd = ThinSvd { u: t.v, s: t.s, v: t.u, deficient: t.deficient };
        normalize_signs(&mut svd);
        svd
    };
    Ok(truncate(svd, k))
}

fn truncate(svd: ThinSvd, k: usize) -> ThinSvd {
    if k == svd.s.len() {
        return svd;
    }
    let u = Matrix::from_fn(svd.u.rows(), k, |i, j| svd.u.get(i, j));
    let v = Matrix::from_fn(svd.v.rows(), k, |i, j| svd.v.get(i, j));
    let s = svd.s[..k].to_vec();
    let deficient = svd.deficient.saturating_sub(svd.s.len() - k);
    ThinSvd { u, s, v, deficient }
}

/// One-sided (Hestenes) Jacobi for `rows >= cols`.
fn jacobi_tall(m: &Matrix) -> Result<ThinSvd> {
    let (rows, n) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    let mut worst = 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        worst = 0.0f64;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (&a[p], &a[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in ap.iter().zip(aq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: JACOBI_MAX_SWEEPS, residual: worst });
    }

    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let smax = norms[order[0]];
    let cutoff = smax * (rows.max(n) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut deficient = 0;
    for &j in &order {
        let sigma = norms[j];
        s.push(sigma);
        v_cols.push(v[j].clone());
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
        } else {
            deficient += 1;
            u_cols.push(Vec::new());
        }
    }
    complete_basis(&mut u_cols, rows);

    let mut svd = ThinSvd {
        u: Matrix::from_columns(&u_cols)?,
        s,
        v: Matrix::from_columns(&v_cols)?,
        deficient,
    };
    normalize_signs(&mut svd);
    Ok(svd)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills every empty column with a unit vector orthogonal to all other
/// columns, by Gram–Schmidt over canonical basis vectors in index order.
fn complete_basis(cols: &mut [Vec<f64>], dim: usize) {
    let mut next_candidate = 0;
    for j in 0..cols.len() {
        if !cols[j].is_empty() {
            continue;
        }
        loop {
            assert!(next_candidate < dim, "basis completion ran out of candidates");
            let mut w = vec![0.0; dim];
            w[next_candidate] = 1.0;
            next_candidate += 1;
            // Two passes of modified Gram–Schmidt.
            for _ in 0..2 {
                for c in cols.iter().filter(|c| !c.is_empty()) {
                    let proj: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
                    for (wi, ci) in w.iter_mut().zip(c) {
                        *wi -= proj * ci;
                    }
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols[j] = w.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

fn normalize_signs(svd: &mut ThinSvd) {
    for j in 0..svd.u.cols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..svd.u.rows() {
            let x = svd.u.get(i, j);
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..svd.u.rows() {
                svd.u.set(i, j, -svd.u.get(i, j));
            }
            for i in 0..svd.v.rows() {
                svd.v.set(i, j, -svd.v.get(i, j));
            }
        }
    }
}

/// Solves `(mu·I + g) x = rhs` by Cholesky factorization with one step of
/// iterative refinement.
///
/// `g` must be symmetric (within 1e-10, relative to its largest entry) and
/// `mu·I + g` positive definite. The returned solution satisfies
/// `‖(mu·I + g)x − rhs‖_F / ‖rhs‖_F < 1e-10`.
pub fn ridge_solve(g: &Matrix, rhs: &Matrix, mu: f64) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::Shape(format!("ridge matrix must be square, got {}x{}", n, g.cols())));
    }
    if rhs.rows() != n {
        return Err(Error::Shape(format!("rhs has {} rows, system is {n}x{n}", rhs.rows())));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge weight must be >= 0, got {mu}")));
    }
    let scale = g.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (g.get(i, j) - g.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "ridge matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let system = Matrix::from_fn(n, n, |i, j| g.get(i, j) + if i == j { mu } else { 0.0 });
    let chol = cholesky(&system)?;
    let mut x = chol.solve(rhs);
    let residual = |x: &Matrix| system.matmul(x).expect("square").sub(rhs).expect("same shape");
    let r = residual(&x);
    x = x.sub(&chol.solve(&r))?;

    let rhs_norm = rhs.frobenius_norm();
    if rhs_norm == 0.0 {
        return Ok(Matrix::zeros(n, rhs.cols()));
    }
    let rel = residual(&x).frobenius_norm() / rhs_norm;
    if !(rel < RIDGE_RESIDUAL_TOL) {
        return Err(Error::Residual { residual: rel, tolerance: RIDGE_RESIDUAL_TOL });
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

fn cholesky(a: &Matrix) -> Result<Cholesky> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(Cholesky { n, l })
}

impl Cholesky {
    fn solve(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let l = &self.l;
        let mut out = Matrix::zeros(n, rhs.cols());
        let mut y = vec![0.0; n];
        for c in 0..rhs.cols() {
            for i in 0..n {
                let mut s = rhs.get(i, c);
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k * n + i] * out.get(k, c);
                }
                out.set(i, c, s / l[i * n + i]);
            }
        }
        out
    }
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// Stops when `‖b − A x‖ ≤ rel_tol · ‖b‖`; returns the solution and the
/// number of iterations used.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((vec![0.0; b.len()], 0));
    }
    let mut x = x0.map_or_else(|| vec![0.0; b.len()], <[f64]>::to_vec);
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iters {
        if rr.sqrt() <= rel_tol * b_norm {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: it, value: pap });
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    if rr.sqrt() <= rel_tol * b_norm {
        Ok((x, max_iters))
    } else {
        Err(Error::Residual { residual: rr.sqrt() / b_norm, tolerance: rel_tol })
    }
}

/// Result of an orthogonal Procrustes projection.
#[derive(Clone, Debug)]
pub struct Procrustes {
    pub u: Matrix,
    /// Set when the input had a numerically zero singular value, in which
    /// case the missing directions come from the deterministic completion.
    pub rank_deficient: bool,
}

/// Column-orthonormal maximizer of `⟨U, m⟩` subject to `UᵀU = I`, i.e. the
/// polar factor `P·Qᵀ` of `m = P Σ Qᵀ`.
pub fn procrustes(m: &Matrix) -> Result<Procrustes> {
    if m.rows() < m.cols() {
        return Err(Error::Shape(format!(
            "procrustes needs rows >= cols, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let svd = thin_svd(m, None)?;
    Ok(Procrustes { u: svd.u.matmul(&svd.v.transpose())?, rank_deficient: svd.deficient > 0 })
}
