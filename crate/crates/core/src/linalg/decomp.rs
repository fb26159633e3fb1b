//! Householder QR, one-sided Jacobi SVD and cyclic Jacobi symmetric eigensolver.

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Thin singular value decomposition `M = U diag(S) Vᵀ` with `S` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for j in 0..self.s.len() {
            for i in 0..us.rows() {
                us[(i, j)] *= self.s[j];
            }
        }
        us.matmul_tr(&self.v)
    }
}

/// Symmetric eigendecomposition `S = Q diag(values) Qᵀ`, values ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl SymEig {
    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let q = &self.vectors;
        let n = q.rows();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut qf = q.clone();
        for i in 0..n {
            for j in 0..n {
                qf[(i, j)] *= fl[j];
            }
        }
        qf.matmul_tr(q).sym()
    }
}

/// Compact QR of an `n x k` matrix (`n >= k`) by Householder reflections.
/// `R` has a nonnegative diagonal.
pub fn qr_compact(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::dim(format!("qr_compact needs rows >= cols, got {n}x{k}")));
    }
    // Columns stored contiguously; row-major access down a column is slow for tall inputs.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| m.column(j)).collect();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<f64> = cols[j][j..].to_vec();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push((v, 0.0));
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
        for col in cols.iter_mut().skip(j) {
            reflect(&mut col[j..], &v, beta);
        }
        reflectors.push((v, beta));
    }
    let mut r = DenseMatrix::zeros(k, k);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().take(j + 1).enumerate() {
            r[(i, j)] = x;
        }
    }
    let mut q: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();
    for j in (0..k).rev() {
        let (v, beta) = &reflectors[j];
        if *beta == 0.0 {
            continue;
        }
        for col in q.iter_mut() {
            reflect(&mut col[j..], v, *beta);
        }
    }
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            for c in i..k {
                r[(i, c)] = -r[(i, c)];
            }
            q[i].iter_mut().for_each(|x| *x = -*x);
        }
    }
    let qm = DenseMatrix::from_fn(n, k, |i, j| q[j][i]);
    Ok((qm, r))
}

/// `x -= β (vᵀx) v`.
fn reflect(x: &mut [f64], v: &[f64], beta: f64) {
    let f = beta * v.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    if f != 0.0 {
        x.iter_mut().zip(v).for_each(|(xi, vi)| *xi -= f * vi);
    }
}

/// Thin SVD. Tall inputs are first reduced by QR, then the square factor is
/// diagonalized by one-sided (Hestenes) Jacobi rotations.
pub fn svd_thin(m: &DenseMatrix) -> Svd {
    let (n, k) = m.shape();
    if n < k {
        let t = svd_thin(&m.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    if k == 0 {
        return Svd {
            u: DenseMatrix::zeros(n, 0),
            s: Vec::new(),
            v: DenseMatrix::zeros(0, 0),
        };
    }
    if n > k {
        let (q, r) = qr_compact(m).expect("n >= k checked");
        let inner = jacobi_svd_square(&r);
        return Svd {
            u: q.matmul(&inner.u),
            s: inner.s,
            v: inner.v,
        };
    }
    jacobi_svd_square(m)
}

fn jacobi_svd_square(a: &DenseMatrix) -> Svd {
    let k = a.cols();
    // Work on columns stored contiguously.
    let mut w: Vec<Vec<f64>> = (0..k).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    const EPS: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = w
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let rows = a.rows();
    let mut u = DenseMatrix::zeros(rows, k);
    let mut vm = DenseMatrix::zeros(k, k);
    let mut s = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sg = sigma[src];
        s.push(sg);
        vm.set_column(dst, &v[src]);
        if sg > 1e-14 * smax && sg > 0.0 {
            let col: Vec<f64> = w[src].iter().map(|x| x / sg).collect();
            u.set_column(dst, &col);
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Svd { u, s, v: vm }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column, drawing candidates from the standard basis.
pub(crate) fn complete_orthonormal(u: &mut DenseMatrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &dst in missing {
        loop {
            assert!(candidate < n, "cannot complete orthonormal basis");
            let mut x = vec![0.0; n];
            x[candidate] = 1.0;
            candidate += 1;
            for _pass in 0..2 {
                for &j in &filled {
                    let d: f64 = (0..n).map(|i| u[(i, j)] * x[i]).sum();
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi -= d * u[(i, j)];
                    }
                }
            }
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx > 1e-8 {
                let col: Vec<f64> = x.iter().map(|v| v / nx).collect();
                u.set_column(dst, &col);
                filled.push(dst);
                break;
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// The input is symmetrized first.
pub fn eig_sym(s: &DenseMatrix) -> Result<SymEig> {
    if !s.is_square() {
        return Err(Error::dim(format!("eig_sym needs a square matrix, got {:?}", s.shape())));
    }
    let n = s.rows();
    let mut a = s.sym();
    let mut v = DenseMatrix::identity(n);
    let norm = a.norm_fro();
    let off = |a: &DenseMatrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };
    for _sweep in 0..100 {
        if norm == 0.0 || off(&a) <= 1e-14 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let diag = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEig { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian, Rng};

    fn orth_defect(q: &DenseMatrix) -> f64 {
        (&q.tr_matmul(q) - &DenseMatrix::identity(q.cols())).norm_fro()
    }

    #[test]
    fn qr_identity_and_orthogonal_columns() {
        let (q, r) = qr_compact(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(q, DenseMatrix::identity(3));
        assert_eq!(r, DenseMatrix::identity(3));

        let m = DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.0], &[0.0, 3.0]]);
        let (q, r) = qr_compact(&m).unwrap();
        assert!((&q - &DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]])).max_abs() < 1e-15);
        assert!((&r - &DenseMatrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-15);
    }

    #[test]
    fn qr_random_reconstruction() {
        let mut rng = Rng::seeded(7);
        let m = gaussian(8, 3, &mut rng);
        let (q, r) = qr_compact(&m).unwrap();
        assert!(orth_defect(&q) < 1e-12);
        assert!((&q.matmul(&r) - &m).norm_fro() < 1e-12 * m.norm_fro());
        for i in 0..3 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
        assert!(qr_compact(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn qr_rank_deficient_still_orthonormal() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[0.0, 0.0]]);
        let (q, r) = qr_compact(&m).unwrap();
        assert!(orth_defect(&q) < 1e-14);
        assert!((&q.matmul(&r) - &m).norm_fro() < 1e-14);
    }

    #[test]
    fn svd_trivial_cases() {
        let d = svd_thin(&DenseMatrix::from_diag(&[3.0, 1.0]));
        assert_eq!(d.s, vec![3.0, 1.0]);
        assert!((&d.u - &DenseMatrix::identity(2)).max_abs() < 1e-15);
        let z = svd_thin(&DenseMatrix::zeros(2, 2));
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert!(orth_defect(&z.u) < 1e-15);
    }

    #[test]
    fn svd_random_against_gram_eigenvalues() {
        let mut rng = Rng::seeded(11);
        let m = gaussian(6, 4, &mut rng);
        let d = svd_thin(&m);
        assert!((&d.reconstruct() - &m).norm_fro() < 1e-11 * m.norm_fro());
        assert!(orth_defect(&d.u) < 1e-12 && orth_defect(&d.v) < 1e-12);
        // Independent route: eigenvalues of MᵀM are the squared singular values.
        let gram = m.tr_matmul(&m);
        let ev = eig_sym(&gram).unwrap();
        for (i, s) in d.s.iter().enumerate() {
            let lam = ev.values[3 - i];
            assert!((s * s - lam).abs() < 1e-11 * ev.values[3]);
        }
        let wide = svd_thin(&m.transpose());
        assert!((&wide.reconstruct() - &m.transpose()).norm_fro() < 1e-11 * m.norm_fro());
    }

    #[test]
    fn eig_trivial_and_random() {
        let e = eig_sym(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0; 3]);
        let e = eig_sym(&DenseMatrix::from_diag(&[5.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![2.0, 5.0]);
        assert!((e.vectors[(0, 0)].abs() - 0.0).abs() < 1e-15);

        let mut rng = Rng::seeded(3);
        let g = gaussian(5, 5, &mut rng);
        let s = g.sym();
        let e = eig_sym(&s).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        assert!((&e.map(|l| l) - &s).norm_fro() < 1e-11 * s.norm_fro());
        assert!(orth_defect(&e.vectors) < 1e-12);
    }
}
