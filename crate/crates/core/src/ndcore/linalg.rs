//! Symmetric eigendecomposition (cyclic Jacobi) and thin SVD (one-sided Jacobi).

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with matching unit eigenvectors as the
/// columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl SymEig {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    /// `V · diag(λ) · Vᵀ`.
    pub fn reconstruct(&self) -> Tensor {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for r in 0..d {
            for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
                *v *= self.values[c];
            }
        }
        scaled.matmul_t(&self.vectors)
    }
}

fn check_square_symmetric(m: &Tensor) -> Result<usize> {
    if !m.is_matrix() || m.rows() != m.cols() {
        return Err(Error::Shape {
            context: "sym_eig",
            expected: vec![m.rows(), m.rows()],
            actual: m.shape().to_vec(),
        });
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    let d = m.rows();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            asym = asym.max((m.at(i, j) - m.at(j, i)).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym / scale,
        });
    }
    Ok(d)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eig(m: &Tensor) -> Result<SymEig> {
    let d = check_square_symmetric(m)?;
    // Work on the exact symmetric part.
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = 0.5 * (m.at(i, j) + m.at(j, i));
        }
    }
    let mut v = Tensor::identity(d).into_data();
    let norm2: f64 = a.iter().map(|x| x * x).sum();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off <= 1e-32 * norm2 || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut vectors = Tensor::zeros(&[d, d]);
    for (new_c, &old_c) in order.iter().enumerate() {
        let col: Vec<f64> = (0..d).map(|r| v[r * d + old_c]).collect();
        let flip = col
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|&x| x < 0.0);
        for (r, x) in col.into_iter().enumerate() {
            vectors.set(r, new_c, if flip { -x } else { x });
        }
    }
    Ok(SymEig { values, vectors })
}

/// `(M + ridge·I)^{-1/2}` for a symmetric positive (semi)definite `M`.
///
/// Fails when an eigenvalue of the shifted matrix is not positive relative to
/// the largest one.
pub fn sym_inv_sqrt(m: &Tensor, ridge: f64) -> Result<Tensor> {
    let mut shifted = m.clone();
    let d = m.rows();
    for i in 0..d {
        let v = shifted.at(i, i) + ridge;
        shifted.set(i, i, v);
    }
    let eig = sym_eig(&shifted)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    if eig.values.iter().any(|&l| l <= 1e-12 * top.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance(
            "covariance is rank-deficient; use a positive ridge".into(),
        ));
    }
    let inv = SymEig {
        values: eig.values.iter().map(|l| 1.0 / l.sqrt()).collect(),
        vectors: eig.vectors,
    };
    Ok(inv.reconstruct())
}

/// Thin singular value decomposition `A = U · diag(s) · Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `n × r`, orthonormal columns.
    pub u: Tensor,
    /// Descending, length `r = min(n, m)`.
    pub s: Vec<f64>,
    /// `m × r`, orthonormal columns.
    pub v: Tensor,
}

impl Svd {
    pub fn reconstruct(&self) -> Tensor {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, x) in us.row_mut(r).iter_mut().enumerate() {
                *x *= self.s[c];
            }
        }
        us.matmul_t(&self.v)
    }
}

pub fn thin_svd(a: &Tensor) -> Result<Svd> {
    if !a.is_matrix() {
        return Err(Error::invalid("thin_svd expects a matrix"));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("thin_svd input"));
    }
    if a.rows() < a.cols() {
        let t = thin_svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (n, m) = (a.rows(), a.cols());
    // Columns of A held as rows for contiguous access.
    let mut cols = a.transpose().into_data();
    let mut vt = Tensor::identity(m).into_data();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let (alpha, beta, gamma) = {
                    let cp = &cols[p * n..(p + 1) * n];
                    let cq = &cols[q * n..(q + 1) * n];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, n, p, q, c, s);
                rotate_rows(&mut vt, m, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..m)
        .map(|j| dot(&cols[j * n..(j + 1) * n], &cols[j * n..(j + 1) * n]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let top = norms[order[0]];
    let tol = 1e-13 * top.max(f64::MIN_POSITIVE) * (n.max(m) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut s = Vec::with_capacity(m);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut pending_null = Vec::new();
    for &j in &order {
        let sigma = norms[j];
        v_cols.push(vt[j * m..(j + 1) * m].to_vec());
        if sigma > tol {
            s.push(sigma);
            u_cols.push(cols[j * n..(j + 1) * n].iter().map(|x| x / sigma).collect());
        } else {
            s.push(0.0);
            pending_null.push(u_cols.len());
            u_cols.push(Vec::new());
        }
    }
    // Complete U with orthonormal directions for null singular values.
    for slot in pending_null {
        let mut basis_idx = 0;
        loop {
            let mut e = vec![0.0; n];
            e[basis_idx % n] = 1.0;
            basis_idx += 1;
            for other in u_cols.iter().filter(|c| !c.is_empty()) {
                let proj = dot(&e, other);
                e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-6 {
                u_cols[slot] = e.iter().map(|x| x / norm).collect();
                break;
            }
            assert!(basis_idx <= 2 * n, "failed to complete orthonormal basis");
        }
    }

    let mut u = Tensor::zeros(&[n, m]);
    let mut v = Tensor::zeros(&[m, m]);
    for (c, (uc, vc)) in u_cols.iter().zip(&v_cols).enumerate() {
        for r in 0..n {
            u.set(r, c, uc[r]);
        }
        for r in 0..m {
            v.set(r, c, vc[r]);
        }
    }
    Ok(Svd { u, s, v })
}

fn rotate_rows(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let rp = &mut head[p * len..(p + 1) * len];
    let rq = &mut tail[..len];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::RngStream;

    fn orthonormality_error(q: &Tensor) -> f64 {
        let g = q.t_matmul(q);
        g.max_abs_diff(&Tensor::identity(g.rows()))
    }

    fn random_symmetric(rng: &mut RngStream, d: usize) -> Tensor {
        let mut m = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in i..d {
                let v = rng.normal();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&Tensor::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs() {
        let m = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 3.0]);
        let e = sym_eig(&m).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0]);
        assert_eq!(e.vector(1), vec![1.0, 0.0]);
    }

    #[test]
    fn two_by_two_hand_solution() {
        // det([[2-λ,1],[1,2-λ]]) = (2-λ)² - 1 = 0  ⇒  λ ∈ {3, 1}.
        let m = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let e = sym_eig(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!((v0[0] - h).abs() < 1e-12 && (v0[1] - h).abs() < 1e-12);
        assert!((v1[0] - h).abs() < 1e-12 && (v1[1] + h).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_symmetric_and_non_finite() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&m), Err(Error::NotSymmetric { .. })));
        let m = Tensor::matrix(2, 2, vec![1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(sym_eig(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn random_symmetric_reconstruction_up_to_64() {
        let mut rng = RngStream::new(17);
        for &d in &[1usize, 3, 10, 33, 64] {
            let m = random_symmetric(&mut rng, d);
            let e = sym_eig(&m).unwrap();
            let err = e.reconstruct().sub(&m).frobenius();
            assert!(err <= 1e-7 * m.frobenius(), "d={d} err={err}");
            assert!(orthonormality_error(&e.vectors) < 1e-8);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            // M v = λ v
            for i in 0..d {
                let v = Tensor::matrix(d, 1, e.vector(i));
                let mv = m.matmul(&v);
                let lv = v.scale(e.values[i]);
                assert!(mv.sub(&lv).frobenius() <= 1e-7 * m.frobenius().max(1.0));
            }
        }
    }

    #[test]
    fn svd_identity_and_zero() {
        let s = thin_svd(&Tensor::identity(3)).unwrap();
        assert_eq!(s.s, vec![1.0, 1.0, 1.0]);
        let z = thin_svd(&Tensor::zeros(&[4, 3])).unwrap();
        assert!(z.s.iter().all(|&x| x == 0.0));
        assert!(orthonormality_error(&z.u) < 1e-12);
    }

    #[test]
    fn svd_rank_one_outer_product() {
        // |u| = 2, |v| = 3  ⇒  the only non-zero singular value is 6.
        let u = [2.0 / 3.0_f64.sqrt(); 3];
        let v = [3.0 / 2.0, 3.0 / 2.0, 3.0 / 2.0, 3.0 / 2.0];
        let mut a = Tensor::zeros(&[3, 4]);
        for i in 0..3 {
            for j in 0..4 {
                a.set(i, j, u[i] * v[j]);
            }
        }
        let s = thin_svd(&a).unwrap();
        assert!((s.s[0] - 6.0).abs() < 1e-12);
        assert!(s.s[1..].iter().all(|x| x.abs() < 1e-12));
        assert!(s.reconstruct().sub(&a).frobenius() < 1e-7 * a.frobenius());
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = RngStream::new(3);
        for &(n, m) in &[(7usize, 3usize), (3, 7), (20, 20), (50, 8)] {
            let a = Tensor::matrix(n, m, (0..n * m).map(|_| rng.normal()).collect());
            let s = thin_svd(&a).unwrap();
            assert!(s.reconstruct().sub(&a).frobenius() <= 1e-7 * a.frobenius());
            assert!(orthonormality_error(&s.u) < 1e-8);
            assert!(orthonormality_error(&s.v) < 1e-8);
            assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let m = Tensor::matrix(2, 2, vec![4.0, 1.0, 1.0, 3.0]);
        let w = sym_inv_sqrt(&m, 0.0).unwrap();
        let prod = w.matmul(&m).matmul(&w);
        assert!(prod.max_abs_diff(&Tensor::identity(2)) < 1e-12);
        assert!(sym_inv_sqrt(&Tensor::zeros(&[2, 2]), 0.0).is_err());
    }
}
