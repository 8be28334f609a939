//! Small numerical building blocks shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Neumaier-compensated running sum. Terms are added in caller order, so results are
/// reproducible whenever the caller iterates in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated complex sum (real and imaginary parts tracked separately).
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanComplex {
    re: Kahan,
    im: Kahan,
}

impl KahanComplex {
    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut k = Kahan::new();
    for x in it {
        k.add(x);
    }
    k.value()
}

const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Hurwitz zeta `sum_{n>=0} (a+n)^{-s}` for `s > 1`, `a > 0`, by Euler-Maclaurin.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 1.0 && a > 0.0, "hurwitz_zeta needs s > 1, a > 0");
    const N: usize = 24;
    let mut acc = Kahan::new();
    for n in 0..N {
        acc.add((a + n as f64).powf(-s));
    }
    let b = a + N as f64;
    acc.add(b.powf(1.0 - s) / (s - 1.0));
    acc.add(0.5 * b.powf(-s));
    // rising factorial s(s+1)...(s+2k-2) and (2k)!
    let mut rising = s;
    let mut fact = 2.0;
    let mut bpow = b.powf(-s - 1.0);
    for (k, bern) in BERNOULLI_EVEN.iter().enumerate() {
        let term = bern / fact * rising * bpow;
        acc.add(term);
        if term.abs() < 1e-18 * acc.value().abs() {
            break;
        }
        let k2 = 2.0 * (k as f64 + 1.0);
        rising *= (s + k2 - 1.0) * (s + k2);
        fact *= (k2 + 1.0) * (k2 + 2.0);
        bpow /= b * b;
    }
    acc.value()
}

/// Symmetric positive-definite matrix with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Spd {
    mat: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Spd {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if n == 0 || n != mat.ncols() {
            return Err(Error::InvalidParameter("matrix must be square and non-empty".into()));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (mat[(i, j)], mat[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = mat.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l_dirty();
        if (0..n).any(|i| !(l[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { mat, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("matrix rows must have equal length".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..self.dim()).map(|i| l[(i, i)] * l[(i, i)]).product()
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(v)).iter().copied().collect()
    }

    /// `u . M^{-1} v`
    pub fn inv_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let s = self.solve(v);
        dot(u, &s)
    }

    /// `v . M v`
    pub fn form(&self, v: &[f64]) -> f64 {
        let x = DVector::from_column_slice(v);
        x.dot(&(&self.mat * &x))
    }

    /// Lower-triangular Cholesky factor `L` with `M = L L^T`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[inline]
pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn to_f64(x: &[i64]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Memory budget for dense work arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryCap {
    pub bytes: u64,
}

impl Default for MemoryCap {
    fn default() -> Self {
        Self { bytes: 2048 << 20 }
    }
}

impl MemoryCap {
    pub const ENV_VAR: &'static str = "OZLAB_MEM_CAP_MB";

    pub fn from_mb(mb: u64) -> Self {
        Self { bytes: mb << 20 }
    }

    /// Reads `OZLAB_MEM_CAP_MB`, falling back to 2 GiB.
    pub fn from_env() -> Result<Self> {
        match std::env::var(Self::ENV_VAR) {
            Ok(s) => s
                .trim()
                .parse::<u64>()
                .ok()
                .filter(|&mb| mb > 0)
                .map(Self::from_mb)
                .ok_or_else(|| Error::InvalidParameter(format!("{} must be a positive integer", Self::ENV_VAR))),
            Err(_) => Ok(Self::default()),
        }
    }

    pub fn check(&self, bytes: u64) -> Result<()> {
        if bytes > self.bytes {
            Err(Error::BoxTooLarge {
                required_mb: bytes.div_ceil(1 << 20),
                cap_mb: self.bytes >> 20,
            })
        } else {
            Ok(())
        }
    }
}
