//! Matrix functions: exponential, SPD logarithm / square roots, orthogonal polar factor.

use super::{eig_sym, svd_thin, DenseMatrix, SymEig};
use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(m: &DenseMatrix) -> DenseMatrix {
    assert!(m.is_square(), "expm needs a square matrix");
    let n = m.rows();
    if n == 0 {
        return m.clone();
    }
    let norm = m.norm_one();
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(0.5f64.powi(s));
    let b = &PADE13;
    let id = DenseMatrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let inner_u = a6.scale(b[13]).add_scaled(&a4, b[11]).add_scaled(&a2, b[9]);
    let u_poly = a6
        .matmul(&inner_u)
        .add_scaled(&a6, b[7])
        .add_scaled(&a4, b[5])
        .add_scaled(&a2, b[3])
        .add_scaled(&id, b[1]);
    let u = a.matmul(&u_poly);
    let inner_v = a6.scale(b[12]).add_scaled(&a4, b[10]).add_scaled(&a2, b[8]);
    let v = a6
        .matmul(&inner_v)
        .add_scaled(&a6, b[6])
        .add_scaled(&a4, b[4])
        .add_scaled(&a2, b[2])
        .add_scaled(&id, b[0]);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .solve(&p)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = r.matmul(&r);
    }
    r
}

/// Eigendecomposition of a symmetric positive definite matrix, rejecting
/// inputs whose smallest eigenvalue is at or below `1e-12 * λ_max`.
pub fn spd_eig(b: &DenseMatrix) -> Result<SymEig> {
    let e = eig_sym(b)?;
    let lmax = e.values.last().copied().unwrap_or(0.0);
    let lmin = e.values.first().copied().unwrap_or(0.0);
    if e.values.is_empty() || lmax <= 0.0 || lmin <= 1e-12 * lmax {
        return Err(Error::Domain(format!(
            "matrix is not SPD (eigenvalues in [{lmin:.3e}, {lmax:.3e}])"
        )));
    }
    Ok(e)
}

pub fn logm_spd(b: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(spd_eig(b)?.map(f64::ln))
}

pub fn sqrtm_spd(b: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(spd_eig(b)?.map(f64::sqrt))
}

pub fn invsqrtm_spd(b: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(spd_eig(b)?.map(|l| 1.0 / l.sqrt()))
}

/// Exponential of a symmetric matrix via its eigendecomposition.
pub fn expm_sym(s: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(eig_sym(s)?.map(f64::exp))
}

/// Orthogonal polar factor `P Qᵀ` of `M = P S Qᵀ`; the maximizer of
/// `Tr(Rᵀ M)` over the orthogonal group.
pub fn polar_orthogonal(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::dim(format!("polar needs a square matrix, got {:?}", m.shape())));
    }
    let d = svd_thin(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let smin = d.s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::DegenerateAlignment);
    }
    Ok(d.u.matmul_tr(&d.v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian, rand_orthonormal, Rng};

    fn taylor_expm(m: &DenseMatrix, terms: usize) -> DenseMatrix {
        let n = m.rows();
        let mut sum = DenseMatrix::identity(n);
        let mut term = DenseMatrix::identity(n);
        for k in 1..terms {
            term = term.matmul(m).scale(1.0 / k as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_zero_and_rotation() {
        assert_eq!(expm(&DenseMatrix::zeros(3, 3)), DenseMatrix::identity(3));
        let th: f64 = 0.3;
        let r = expm(&DenseMatrix::from_rows(&[&[0.0, -th], &[th, 0.0]]));
        let want = DenseMatrix::from_rows(&[&[th.cos(), -th.sin()], &[th.sin(), th.cos()]]);
        assert!((&r - &want).max_abs() < 1e-15);
    }

    #[test]
    fn expm_matches_taylor_on_small_norm() {
        let mut rng = Rng::seeded(5);
        let g = gaussian(4, 4, &mut rng);
        let m = g.scale(1.0 / g.norm_fro());
        let err = (&expm(&m) - &taylor_expm(&m, 30)).max_abs();
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        // exp(diag(10, -3)) exactly diagonal.
        let e = expm(&DenseMatrix::from_diag(&[10.0, -3.0]));
        assert!((e[(0, 0)] / 10f64.exp() - 1.0).abs() < 1e-13);
        assert!((e[(1, 1)] / (-3f64).exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn expm_skew_is_orthogonal() {
        let mut rng = Rng::seeded(9);
        let w = gaussian(6, 6, &mut rng).skew().scale(3.0);
        let q = expm(&w);
        assert!((&q.tr_matmul(&q) - &DenseMatrix::identity(6)).max_abs() < 1e-12);
    }

    #[test]
    fn spd_functions() {
        assert_eq!(logm_spd(&DenseMatrix::identity(2)).unwrap(), DenseMatrix::zeros(2, 2));
        assert_eq!(sqrtm_spd(&DenseMatrix::identity(2)).unwrap(), DenseMatrix::identity(2));
        let b = DenseMatrix::from_diag(&[4.0, 9.0]);
        assert!((&sqrtm_spd(&b).unwrap() - &DenseMatrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-15);
        let l = logm_spd(&b).unwrap();
        assert!((l[(0, 0)] - 4f64.ln()).abs() < 1e-15 && (l[(1, 1)] - 9f64.ln()).abs() < 1e-15);

        let mut rng = Rng::seeded(1);
        let g = gaussian(6, 6, &mut rng);
        let spd = g.tr_matmul(&g).add_scaled(&DenseMatrix::identity(6), 0.5);
        let back = expm(&logm_spd(&spd).unwrap());
        assert!((&back - &spd).norm_fro() < 1e-10 * spd.norm_fro());
        let s = sqrtm_spd(&spd).unwrap();
        assert!((&s.matmul(&s) - &spd).norm_fro() < 1e-11 * spd.norm_fro());
        let is = invsqrtm_spd(&spd).unwrap();
        assert!((&is.matmul(&spd).matmul(&is) - &DenseMatrix::identity(6)).max_abs() < 1e-11);

        assert!(logm_spd(&DenseMatrix::from_diag(&[1.0, -1.0])).is_err());
        assert!(sqrtm_spd(&DenseMatrix::from_diag(&[1.0, 1e-13])).is_err());
    }

    #[test]
    fn polar_cases() {
        let mut rng = Rng::seeded(2);
        let o = rand_orthonormal(4, 4, 17).unwrap();
        assert!((&polar_orthogonal(&o).unwrap() - &o).max_abs() < 1e-13);
        let p = polar_orthogonal(&DenseMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert!((&p - &DenseMatrix::identity(2)).max_abs() < 1e-15);
        assert!(matches!(
            polar_orthogonal(&DenseMatrix::from_diag(&[1.0, 0.0])),
            Err(Error::DegenerateAlignment)
        ));

        // Trace maximality against sampled orthogonal matrices.
        let m = gaussian(4, 4, &mut rng);
        let r = polar_orthogonal(&m).unwrap();
        let best = r.dot(&m);
        for seed in 0..10_000u64 {
            let cand = rand_orthonormal(4, 4, 1000 + seed).unwrap();
            assert!(cand.dot(&m) <= best + 1e-12);
        }
    }
}
