//! Oracles written independently of the library code paths they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss-Kronrod 7/15 on `[a, b]`; stops at relative error `rel`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let mut heap = BinaryHeap::new();
    let n0 = 16;
    for i in 0..n0 {
        let lo = a + (b - a) * i as f64 / n0 as f64;
        let hi = a + (b - a) * (i + 1) as f64 / n0 as f64;
        let (value, err) = gk15(&f, lo, hi);
        heap.push(Piece { a: lo, b: hi, value, err });
    }
    for _ in 0..20_000 {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.err).sum();
        if err <= rel * total.abs() {
            break;
        }
        let p = heap.pop().unwrap();
        let mid = 0.5 * (p.a + p.b);
        for (lo, hi) in [(p.a, mid), (mid, p.b)] {
            let (value, err) = gk15(&f, lo, hi);
            heap.push(Piece { a: lo, b: hi, value, err });
        }
    }
    let mut v: Vec<f64> = heap.into_iter().map(|p| p.value).collect();
    v.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    v.iter().sum()
}

/// `int_0^inf (2 pi t)^{-d/2} det^{-1/2} exp(-(x - t eta) Q (x - t eta) / 2t) dt` with
/// `Q = Lambda^{-1}`, integrated in `s = ln t` around the saddle.
pub fn time_integral_green(x: &[f64], eta: &[f64], lambda: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let q = lambda.clone().try_inverse().expect("invertible");
    let xv = DVector::from_column_slice(x);
    let ev = DVector::from_column_slice(eta);
    let b2 = (xv.transpose() * &q * &xv)[(0, 0)];
    let a2 = (ev.transpose() * &q * &ev)[(0, 0)];
    let c = (xv.transpose() * &q * &ev)[(0, 0)];
    let det = lambda.determinant();
    let pref = 1.0 / ((2.0 * PI).powf(d as f64 / 2.0) * det.sqrt());
    let log_f = |s: f64| {
        let t = s.exp();
        s - (d as f64 / 2.0) * s - b2 / (2.0 * t) + c - a2 * t / 2.0
    };
    // peak of the log integrand in s, by bisection on its derivative
    let dlog = |s: f64| {
        let t = s.exp();
        (1.0 - d as f64 / 2.0) + b2 / (2.0 * t) - a2 * t / 2.0
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if dlog(hi) > 0.0 {
        hi = 200.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dlog(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_star = 0.5 * (lo + hi);
    let top = log_f(s_star);
    // extend each side until the integrand is 1e-40 of its peak
    let mut left = s_star - 1.0;
    while log_f(left) - top > -92.0 {
        left -= 1.0;
    }
    let mut right = s_star + 1.0;
    while log_f(right) - top > -92.0 && right < 400.0 {
        right += 1.0;
    }
    let v = integrate(|s| (log_f(s) - top).exp(), left, right, 1e-13);
    pref * v * top.exp()
}

/// `int |y|^phi G_1(y) dy = E|Z|^phi int_0^inf t^{phi/2} e^{-t/2} dt` for standard normal `Z`
/// in `R^d`, both factors by one-dimensional quadrature.
pub fn radial_a_phi(phi: f64, d: usize) -> f64 {
    // t = u^2 keeps the integrand smooth at the origin
    let time = integrate(|u: f64| 2.0 * u.powf(phi + 1.0) * (-u * u / 2.0).exp(), 0.0, 60.0, 1e-14);
    let df = d as f64;
    let num = integrate(|r: f64| r.powf(phi + df - 1.0) * (-r * r / 2.0).exp(), 0.0, 60.0, 1e-14);
    let den = integrate(|r: f64| r.powf(df - 1.0) * (-r * r / 2.0).exp(), 0.0, 60.0, 1e-14);
    time * num / den
}

/// Gauss-Hermite rule for weight `e^{-u^2}` via the Golub-Welsch eigenproblem.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    (0..n)
        .map(|i| (eig.eigenvalues[i], PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect()
}

/// Random symmetric positive-definite matrix with eigenvalues in `[0.3, 2.3]`.
pub fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let qr = a.qr();
    let q = qr.q();
    let diag = DMatrix::<f64>::from_diagonal(&DVector::from_fn(d, |_, _| rng.gen_range(0.3..2.3)));
    let m = &q * diag * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Canonical points with `||x||_inf <= r`: nonnegative, non-increasing coordinates.
pub fn canonical_points(d: usize, r: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = vec![];
        for p in &out {
            let hi = p.last().copied().unwrap_or(r);
            for v in 0..=hi {
                let mut q: Vec<i64> = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}
