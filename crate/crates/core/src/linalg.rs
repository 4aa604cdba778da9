//! Thin SVD, pseudo-inverse, and QR kernels.
//!
//! The SVD is a one-sided Jacobi iteration (rotations orthogonalize column
//! pairs of the working matrix), which is backward stable and exact on
//! rank-deficient input. Results follow a deterministic convention so
//! downstream factorizations are reproducible: singular values are
//! non-increasing, and in each left singular vector (and each Q column of the
//! QR) the maximum-magnitude entry — lowest index on ties — is made
//! non-negative, with the flip absorbed into the paired right factor.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// Left singular vectors, `rows x k` with `k = min(rows, cols)`.
    pub u: Matrix,
    /// Singular values, non-increasing.
    pub s: Vec<f64>,
    /// Right singular vectors, `cols x k` (not transposed).
    pub v: Matrix,
}

impl ThinSvd {
    /// Number of singular values above `threshold`.
    pub fn rank(&self, threshold: f64) -> usize {
        self.s.iter().filter(|&&x| x > threshold).count()
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let sv = Matrix::diag(&self.s);
        self.u
            .matmul(&sv)
            .and_then(|us| us.matmul(&self.v.transpose()))
            .expect("conformable by construction")
    }
}

/// Index of the maximum-magnitude entry of a column, lowest index on ties.
fn dominant_row(col: &[f64]) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// One-sided Jacobi SVD of a tall-or-square matrix (`rows >= cols`).
/// Returns (W, V, sigma) with `W`'s nonzero columns the scaled left singular
/// vectors, before sorting and normalization.
fn jacobi_sweeps(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.cols();
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let tol = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let wp = w.col(p);
                    let wq = w.col(q);
                    for i in 0..wp.len() {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                // Jacobi rotation zeroing the (p,q) Gram entry
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    let rows = mat.rows();
                    for i in 0..rows {
                        let xp = mat.get(i, p);
                        let xq = mat.get(i, q);
                        mat.set(i, p, c * xp - s * xq);
                        mat.set(i, q, s * xp + c * xq);
                    }
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Deterministically extends `u`'s first `filled` columns (orthonormal) to a
/// full column count using canonical basis vectors.
fn complete_basis(u: &mut Matrix, filled: usize) {
    let rows = u.rows();
    let mut have = filled;
    let mut cand = 0usize;
    while have < u.cols() && cand < rows {
        let mut col = vec![0.0; rows];
        col[cand] = 1.0;
        // two rounds of Gram-Schmidt for stability
        for _ in 0..2 {
            for j in 0..have {
                let cj = u.col(j);
                let dot: f64 = cj.iter().zip(&col).map(|(a, b)| a * b).sum();
                for i in 0..rows {
                    col[i] -= dot * cj[i];
                }
            }
        }
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for (i, x) in col.iter().enumerate() {
                u.set(i, have, x / norm);
            }
            have += 1;
        }
        cand += 1;
    }
}

fn thin_svd_tall(a: &Matrix) -> ThinSvd {
    let n = a.cols();
    let (w, v) = jacobi_sweeps(a);
    // column norms are the singular values; sort descending, stable
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> =
        (0..n).map(|j| w.col(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&j| norms[j]);
    let negligible = smax * f64::EPSILON * a.rows().max(n) as f64;
    let mut u = Matrix::zeros(a.rows(), n);
    let mut vs = Matrix::zeros(n, n);
    let mut s = vec![0.0; n];
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        for (i, &x) in v.col(j).iter().enumerate() {
            vs.set(i, k, x);
        }
        if norms[j] > negligible && norms[j] > 0.0 {
            for (i, &x) in w.col(j).iter().enumerate() {
                u.set(i, k, x / norms[j]);
            }
            filled = k + 1;
        }
    }
    // zero-σ columns get a deterministic orthonormal completion
    complete_basis(&mut u, filled);
    ThinSvd { u, s, v: vs }
}

/// Thin SVD with `k = min(rows, cols)` columns and the deterministic sign
/// convention described at module level.
pub fn thin_svd(m: &Matrix) -> Result<ThinSvd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("thin_svd input"));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Value("thin_svd of an empty matrix".into()));
    }
    let mut svd = if m.rows() >= m.cols() {
        thin_svd_tall(m)
    } else {
        let t = thin_svd_tall(&m.transpose());
        ThinSvd { u: t.v, s: t.s, v: t.u }
    };
    // sign convention: dominant entry of each left singular vector >= 0
    for j in 0..svd.u.cols() {
        let dom = dominant_row(svd.u.col(j));
        if svd.u.get(dom, j) < 0.0 {
            for x in svd.u.col_mut(j) {
                *x = -*x;
            }
            for x in svd.v.col_mut(j) {
                *x = -*x;
            }
        }
    }
    Ok(svd)
}

/// Default singular-value cutoff factor: `max(rows, cols) * machine epsilon`,
/// scaled by the largest singular value at the point of use.
pub fn default_rcond(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudo-inverse. Singular values at or below
/// `rcond * s_max` are treated as zero. Pass [`default_rcond`] for the
/// standard cutoff.
pub fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix> {
    let ThinSvd { u, s, v } = thin_svd(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let cut = rcond * smax;
    let inv: Vec<f64> = s.iter().map(|&x| if x > cut && x > 0.0 { 1.0 / x } else { 0.0 }).collect();
    // V diag(1/s) Uᵀ
    v.matmul(&Matrix::diag(&inv))?.matmul(&u.transpose())
}

/// Pseudo-inverse with the default cutoff.
pub fn pinv_default(m: &Matrix) -> Result<Matrix> {
    pinv(m, default_rcond(m.rows(), m.cols()))
}

/// Thin QR decomposition `m = Q R` by Householder reflections, with `Q` of
/// shape `rows x min(rows, cols)` and deterministically signed columns (sign
/// flips absorbed into `R`).
pub fn thin_qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    if !m.is_finite() {
        return Err(Error::NonFinite("thin_qr input"));
    }
    let rows = m.rows();
    let cols = m.cols();
    let k = rows.min(cols);
    let mut r = m.clone();
    // Householder vectors, stored per reflection
    let mut hh: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = (j..rows).map(|i| r.get(i, j)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let alpha = if v[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vnorm > 0.0 {
                for x in v.iter_mut() {
                    *x /= vnorm;
                }
                // apply reflector to remaining columns of R
                for c in j..cols {
                    let dot: f64 = (j..rows).map(|i| v[i - j] * r.get(i, c)).sum();
                    for i in j..rows {
                        r.set(i, c, r.get(i, c) - 2.0 * dot * v[i - j]);
                    }
                }
            } else {
                v = vec![0.0; rows - j];
            }
        } else {
            v = vec![0.0; rows - j];
        }
        hh.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1} applied to the thin identity
    let mut q = Matrix::from_fn(rows, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for j in (0..k).rev() {
        let v = &hh[j];
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for c in 0..k {
            let dot: f64 = (j..rows).map(|i| v[i - j] * q.get(i, c)).sum();
            for i in j..rows {
                q.set(i, c, q.get(i, c) - 2.0 * dot * v[i - j]);
            }
        }
    }
    let mut r_thin = Matrix::zeros(k, cols);
    for c in 0..cols {
        for i in 0..k.min(c + 1) {
            r_thin.set(i, c, r.get(i, c));
        }
    }
    // sign convention on Q columns, flips absorbed into R rows
    for j in 0..k {
        let dom = dominant_row(q.col(j));
        if q.get(dom, j) < 0.0 {
            for x in q.col_mut(j) {
                *x = -*x;
            }
            for c in 0..cols {
                r_thin.set(j, c, -r_thin.get(j, c));
            }
        }
    }
    Ok((q, r_thin))
}

/// Principal angles (radians, ascending) between the column spaces of `a` and
/// `b`. Both inputs are orthonormalized first, so any bases work.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "principal angles between {}-row and {}-row bases",
            a.rows(),
            b.rows()
        )));
    }
    let (qa, _) = thin_qr(a)?;
    let (qb, _) = thin_qr(b)?;
    let c = qa.transpose().matmul(&qb)?;
    let mut cosines = thin_svd(&c)?.s; // descending
    // sine formulation keeps precision for small angles where acos degrades
    let resid = qb.sub(&qa.matmul(&c)?)?;
    let mut sines = thin_svd(&resid)?.s;
    sines.reverse(); // ascending, pairs with descending cosines
    let k = cosines.len().min(sines.len());
    cosines.truncate(k);
    let mut angles: Vec<f64> = (0..k)
        .map(|i| sines[i].max(0.0).atan2(cosines[i].clamp(-1.0, 1.0)))
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(angles)
}

/// Largest principal angle between two column spaces of equal dimension.
pub fn max_principal_angle(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(principal_angles(a, b)?.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::kronecker;

    fn randomish(rows: usize, cols: usize, seed: f64) -> Matrix {
        // deterministic pseudo-random fill, good enough for factorization tests
        Matrix::from_fn(rows, cols, |r, c| {
            let x = (r * 31 + c * 17) as f64 + seed;
            (x * 12.9898).sin() * 43758.5453 % 1.0
        })
    }

    #[test]
    fn svd_reconstructs() {
        let m = randomish(6, 4, 0.3);
        let svd = thin_svd(&m).unwrap();
        assert_eq!((svd.u.rows(), svd.u.cols()), (6, 4));
        assert_eq!((svd.v.rows(), svd.v.cols()), (4, 4));
        let err = svd.reconstruct().sub(&m).unwrap().max_abs();
        assert!(err < 1e-12 * svd.s[0].max(1.0), "err {err}");
    }

    #[test]
    fn svd_wide_matrix_is_thin() {
        let m = randomish(3, 7, 1.1);
        let svd = thin_svd(&m).unwrap();
        assert_eq!((svd.u.rows(), svd.u.cols()), (3, 3));
        assert_eq!((svd.v.rows(), svd.v.cols()), (7, 3));
        assert!(svd.reconstruct().sub(&m).unwrap().max_abs() < 1e-12);
        assert!(svd.u.orthonormality_residual() < 1e-13);
        assert!(svd.v.orthonormality_residual() < 1e-13);
    }

    #[test]
    fn singular_values_non_increasing_and_signed() {
        let m = randomish(5, 5, 2.7);
        let svd = thin_svd(&m).unwrap();
        for w in svd.s.windows(2) {
            assert!(w[0] >= w[1] - 1e-15);
        }
        for j in 0..svd.u.cols() {
            let dom = dominant_row(svd.u.col(j));
            assert!(svd.u.get(dom, j) >= 0.0);
        }
    }

    #[test]
    fn svd_diag_matrix_frozen() {
        let m = Matrix::diag(&[3.0, 1.0]);
        let svd = thin_svd(&m).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-14);
        assert!((svd.s[1] - 1.0).abs() < 1e-14);
        // dominant entries non-negative forces +e1, +e2
        assert!((svd.u.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((svd.u.get(1, 1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_rank_one_outer_product() {
        let x = [1.0, -2.0, 2.0];
        let y = [3.0, 4.0];
        let m = Matrix::from_fn(3, 2, |r, c| x[r] * y[c]);
        let svd = thin_svd(&m).unwrap();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((svd.s[0] - nx * ny).abs() < 1e-12);
        assert!(svd.s[1].abs() < 1e-12);
        assert!(svd.reconstruct().sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn svd_exact_rank_deficient_integer_matrix() {
        // regression guard: rank-1 integer matrix must reconstruct exactly
        let m = Matrix::from_fn(4, 3, |r, c| ((r + 1) * (c + 1)) as f64);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.reconstruct().sub(&m).unwrap().max_abs() < 1e-12);
        assert!(svd.s[1] < 1e-12 && svd.s[2] < 1e-12);
        assert!(svd.u.orthonormality_residual() < 1e-12);
    }

    #[test]
    fn svd_zero_matrix() {
        let m = Matrix::zeros(3, 2);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.s, vec![0.0, 0.0]);
        assert!(svd.u.orthonormality_residual() < 1e-14);
    }

    #[test]
    fn svd_deterministic_repeats() {
        let m = randomish(8, 5, 4.2);
        let a = thin_svd(&m).unwrap();
        let b = thin_svd(&m).unwrap();
        assert_eq!(a.u.as_slice(), b.u.as_slice());
        assert_eq!(a.s, b.s);
        assert_eq!(a.v.as_slice(), b.v.as_slice());
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m.set(0, 0, f64::NAN);
        assert!(matches!(thin_svd(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pinv_orthonormal_is_transpose() {
        let m = randomish(6, 3, 0.9);
        let (q, _) = thin_qr(&m).unwrap();
        let p = pinv_default(&q).unwrap();
        assert!(p.sub(&q.transpose()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn pinv_penrose_conditions() {
        let m = randomish(5, 3, 3.3);
        let p = pinv_default(&m).unwrap();
        let mpm = m.matmul(&p).unwrap().matmul(&m).unwrap();
        let pmp = p.matmul(&m).unwrap().matmul(&p).unwrap();
        assert!(mpm.sub(&m).unwrap().max_abs() < 1e-10);
        assert!(pmp.sub(&p).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn pinv_rank_deficient_min_norm() {
        let m = Matrix::from_fn(4, 3, |r, c| ((r + 1) * (c + 1)) as f64);
        let p = pinv_default(&m).unwrap();
        let mpm = m.matmul(&p).unwrap().matmul(&m).unwrap();
        assert!(mpm.sub(&m).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn qr_orthonormal_and_reconstructs() {
        let m = randomish(7, 4, 5.5);
        let (q, r) = thin_qr(&m).unwrap();
        assert_eq!((q.rows(), q.cols()), (7, 4));
        assert!(q.orthonormality_residual() < 1e-12);
        assert!(q.matmul(&r).unwrap().sub(&m).unwrap().max_abs() < 1e-12);
        // R upper triangular
        for c in 0..r.cols() {
            for i in (c + 1)..r.rows() {
                assert_eq!(r.get(i, c), 0.0);
            }
        }
    }

    #[test]
    fn qr_rank_deficient_still_orthonormal() {
        let m = Matrix::from_fn(5, 3, |r, c| (r as f64 + 1.0) * (c as f64 + 1.0));
        let (q, r) = thin_qr(&m).unwrap();
        assert!(q.orthonormality_residual() < 1e-12);
        assert!(q.matmul(&r).unwrap().sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn principal_angles_same_space_zero() {
        let m = randomish(6, 3, 6.1);
        let (q, _) = thin_qr(&m).unwrap();
        // rotate basis within the same space
        let rot = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let q2 = q.matmul(&rot).unwrap();
        assert!(max_principal_angle(&q, &q2).unwrap() < 1e-8);
    }

    #[test]
    fn principal_angles_orthogonal_spaces() {
        let a = Matrix::from_fn(4, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let b = Matrix::from_fn(4, 2, |r, c| if r == c + 2 { 1.0 } else { 0.0 });
        let angles = principal_angles(&a, &b).unwrap();
        assert!((angles.last().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn kron_of_orthonormal_is_orthonormal() {
        let (qa, _) = thin_qr(&randomish(4, 2, 7.7)).unwrap();
        let (qb, _) = thin_qr(&randomish(3, 2, 8.8)).unwrap();
        let k = kronecker(&qa, &qb);
        assert!(k.orthonormality_residual() < 1e-12);
    }
}
