//! Seeded random fixtures. All randomness is explicit; there is no global RNG.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{qr_compact, DenseMatrix};
use crate::error::{Error, Result};

/// Deterministic generator used for fixtures, padding and tests.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }
}

/// `rows x cols` matrix of independent standard normals.
pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Orthonormal `n x k` frame from the QR of a Gaussian matrix.
pub fn rand_orthonormal(n: usize, k: usize, seed: u64) -> Result<DenseMatrix> {
    if n < k {
        return Err(Error::dim(format!("rand_orthonormal needs n >= k, got {n} < {k}")));
    }
    let mut rng = Rng::seeded(seed);
    orthonormal_from(n, k, &mut rng)
}

pub fn orthonormal_from(n: usize, k: usize, rng: &mut Rng) -> Result<DenseMatrix> {
    if n < k {
        return Err(Error::dim(format!("orthonormal frame needs n >= k, got {n} < {k}")));
    }
    let (q, _) = qr_compact(&gaussian(n, k, rng))?;
    Ok(q)
}

/// Random skew-symmetric matrix with Frobenius norm `scale`.
pub fn rand_skew(n: usize, scale: f64, rng: &mut Rng) -> DenseMatrix {
    let w = gaussian(n, n, rng).skew();
    let nrm = w.norm_fro();
    if nrm == 0.0 {
        return w;
    }
    w.scale(scale / nrm)
}

/// Random SPD matrix `Q diag(λ) Qᵀ` with log-eigenvalues uniform in `[-spread, spread]`.
pub fn rand_spd(n: usize, spread: f64, rng: &mut Rng) -> DenseMatrix {
    let q = orthonormal_from(n, n, rng).expect("square frame");
    let lam: Vec<f64> = (0..n).map(|_| rng.uniform(-spread, spread).exp()).collect();
    let mut ql = q.clone();
    for i in 0..n {
        for j in 0..n {
            ql[(i, j)] *= lam[j];
        }
    }
    ql.matmul_tr(&q).sym()
}
