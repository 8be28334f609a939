//! Mass, optimal tilts, and the norm `|x|_z = mu_x.x / m_z` whose unit ball is dual to
//! the closure of the tilt domain `Omega_z = { mu : z D^(mu)(0) < 1 }`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernel::{Canonical, Kernel};
use crate::numeric::{dot, norm2, Spd};

/// Below this distance from criticality the norm is replaced by its Euclidean limit.
pub const CRITICAL_CUTOFF: f64 = 1e-8;
const MAX_NEWTON: usize = 200;
const ROOT_TOL: f64 = 1e-13;
const TILT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltReport {
    pub z: f64,
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub mass: f64,
    pub norm_value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Drift and covariance of the tilted kernel at the optimal tilt for `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftCov {
    pub eta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    /// `eta . Lambda^{-1} eta`
    pub a2: f64,
    /// `x . Lambda^{-1} x`
    pub b2: f64,
    /// `xhat . Lambda^{-1} xhat`
    pub w2: f64,
    pub det_lambda: f64,
    pub tilt: TiltReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub z: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanFlag {
    pub z: f64,
    pub norm: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub x: Vec<f64>,
    pub rows: Vec<ScanRow>,
    /// `lim_{z->0} |x|_z`, when the support is finite.
    pub small_z_limit: Option<f64>,
    /// `lim_{z->1} |x|_z`, the Euclidean norm.
    pub large_z_limit: f64,
    /// Grid points whose value leaves the interval spanned by the two limits.
    pub flags: Vec<ScanFlag>,
    /// Successive differences never change sign beyond the tolerance.
    pub monotone: bool,
    pub non_monotone: bool,
}

/// Rejects `z` outside the subcritical window `0 < z D(0) < 1`.
pub fn check_z(kernel: &Kernel, z: f64) -> Result<()> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(invalid(format!("z must be positive and finite, got {z}")));
    }
    let total = kernel.total_weight();
    if z * total >= 1.0 {
        return Err(invalid(format!("z = {z} is not subcritical (z * sum D = {})", z * total)));
    }
    Ok(())
}

fn check_x(kernel: &Kernel, x: &[f64]) -> Result<()> {
    if x.len() != kernel.dim() {
        return Err(invalid(format!("x has dimension {} but kernel has {}", x.len(), kernel.dim())));
    }
    if x.iter().any(|v| !v.is_finite()) || x.iter().all(|&v| v == 0.0) {
        return Err(invalid("x must be finite and nonzero"));
    }
    Ok(())
}

/// Distance to criticality, `1 - z sum D`.
fn gap(kernel: &Kernel, z: f64) -> f64 {
    1.0 - z * kernel.total_weight()
}

/// Radius `r > 0` with `z D^(r u)(0) = 1`, the boundary of `Omega_z` along `u`.
pub fn boundary_radius(kernel: &Kernel, z: f64, u: &[f64]) -> Result<f64> {
    check_z(kernel, z)?;
    if u.len() != kernel.dim() || u.iter().all(|&v| v == 0.0) {
        return Err(invalid("direction must be nonzero with the kernel's dimension"));
    }
    let at = |r: f64| -> Result<(f64, f64)> {
        let mu: Vec<f64> = u.iter().map(|v| r * v).collect();
        let s = kernel.tilted_sums(z, &mu, None, 1)?;
        Ok((s.value.re - 1.0, dot(&s.eta, u)))
    };
    let value_at = |r: f64| -> Result<f64> {
        let mu: Vec<f64> = u.iter().map(|v| r * v).collect();
        Ok(kernel.tilted_value(z, &mu)? - 1.0)
    };
    let mut lo = 0.0;
    let mut hi;
    if let Some(limit) = kernel.tilt_limit() {
        hi = limit / u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let f_hi = value_at(hi)?;
        if f_hi < -ROOT_TOL {
            return Err(Error::Saturated { rate: hi });
        }
        if f_hi.abs() <= ROOT_TOL {
            return Ok(hi);
        }
    } else {
        hi = 1.0;
        while value_at(hi)? <= 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::NoConvergence { solver: "boundary bracket", iterations: 20, residual: f64::NAN });
            }
        }
    }
    // Newton from the right converges monotonically for a convex increasing function;
    // bisection takes over whenever a step leaves the bracket or the tail rejects a tilt.
    let mut r = hi;
    let mut last = f64::NAN;
    for it in 0..MAX_NEWTON {
        let (f, df) = match at(r) {
            Ok(v) => v,
            Err(Error::TailTruncation { .. }) => {
                hi = r;
                r = 0.5 * (lo + hi);
                continue;
            }
            Err(e) => return Err(e),
        };
        last = f;
        if f < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let step = if df > 0.0 { f / df } else { f64::NAN };
        let mut next = r - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if f.abs() < ROOT_TOL && (next - r).abs() <= 4.0 * f64::EPSILON * r.max(1.0) {
            return Ok(next);
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi && it > 0 {
            return Ok(r);
        }
        r = next;
    }
    if last.abs() < ROOT_TOL {
        return Ok(r);
    }
    Err(Error::NoConvergence { solver: "boundary radius", iterations: MAX_NEWTON, residual: last })
}

/// The mass `m_z`: the root of `z D^(m e_1)(0) = 1`.
pub fn mass(kernel: &Kernel, z: f64) -> Result<f64> {
    let mut e1 = vec![0.0; kernel.dim()];
    e1[0] = 1.0;
    boundary_radius(kernel, z, &e1)
}

/// Solves the Lagrange system `z D^(mu)(0) = 1`, `z grad D^(mu)(0) = lambda x` by damped
/// Newton in canonical coordinates.
pub fn optimal_tilt(kernel: &Kernel, z: f64, x: &[f64]) -> Result<TiltReport> {
    check_z(kernel, z)?;
    check_x(kernel, x)?;
    let d = kernel.dim();
    let m = mass(kernel, z)?;
    let xn = norm2(x);
    let xhat: Vec<f64> = x.iter().map(|v| v / xn).collect();
    let mut warnings = Vec::new();

    if gap(kernel, z) < CRITICAL_CUTOFF {
        let msg = format!("1 - z = {:e} is below {CRITICAL_CUTOFF:e}; returning the Euclidean limit", gap(kernel, z));
        log::warn!("{msg}");
        warnings.push(msg);
        let mu: Vec<f64> = xhat.iter().map(|v| m * v).collect();
        return Ok(TiltReport {
            z,
            x: x.to_vec(),
            mu,
            lambda: 0.0,
            mass: m,
            norm_value: xn,
            residual: f64::NAN,
            iterations: 0,
            warnings,
        });
    }

    if d == 1 {
        let mu = vec![m * xhat[0].signum()];
        let lambda = kernel.tilted_sums(z, &mu, None, 1).map(|s| s.eta[0].abs()).unwrap_or(f64::NAN);
        return Ok(TiltReport {
            z,
            x: x.to_vec(),
            mu,
            lambda,
            mass: m,
            norm_value: x[0].abs(),
            residual: 0.0,
            iterations: 0,
            warnings,
        });
    }

    let (c, canon) = Canonical::of(&xhat);
    let r0 = boundary_radius(kernel, z, &c)?;
    let mut mu: Vec<f64> = c.iter().map(|v| r0 * v).collect();
    let s0 = kernel.tilted_sums(z, &mu, None, 1)?;
    let mut lambda = dot(&s0.eta, &c);

    let residual = |mu: &[f64], lambda: f64| -> Result<(Vec<f64>, crate::kernel::TiltedSums)> {
        let s = kernel.tilted_sums(z, mu, None, 2)?;
        let mut f = Vec::with_capacity(d + 1);
        f.push(s.value.re - 1.0);
        for j in 0..d {
            f.push(s.eta[j] - lambda * c[j]);
        }
        Ok((f, s))
    };
    // an overflowed step must never look converged
    let rnorm = |f: &[f64]| f.iter().fold(0.0_f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY });

    let (mut f, mut s) = residual(&mu, lambda)?;
    let mut res = rnorm(&f);
    let mut iterations = 0;
    while res >= TILT_TOL {
        if iterations >= MAX_NEWTON {
            return Err(Error::NoConvergence { solver: "optimal tilt", iterations, residual: res });
        }
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(d + 1, d + 1);
        for j in 0..d {
            jac[(0, j)] = s.eta[j];
            for l in 0..d {
                jac[(1 + j, l)] = s.lambda[j][l];
            }
            jac[(1 + j, d)] = -c[j];
        }
        let rhs = DVector::from_iterator(d + 1, f.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::NoConvergence { solver: "optimal tilt (singular Jacobian)", iterations, residual: res })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mu_new: Vec<f64> = (0..d).map(|j| mu[j] + t * step[j]).collect();
            let lam_new = lambda + t * step[d];
            if let Ok((f_new, s_new)) = residual(&mu_new, lam_new) {
                let r_new = rnorm(&f_new);
                if r_new < res {
                    mu = mu_new;
                    lambda = lam_new;
                    f = f_new;
                    s = s_new;
                    res = r_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // stalled at rounding level
            if res < 1e-11 {
                break;
            }
            return Err(Error::NoConvergence { solver: "optimal tilt (line search)", iterations, residual: res });
        }
    }
    Spd::from_rows(&s.lambda)?;
    let mu = canon.restore(&mu);
    let norm_value = dot(&mu, x) / m;
    Ok(TiltReport { z, x: x.to_vec(), mu, lambda, mass: m, norm_value, residual: res, iterations, warnings })
}

/// `|x|_z`.
pub fn norm(kernel: &Kernel, z: f64, x: &[f64]) -> Result<f64> {
    if x.len() == kernel.dim() && x.iter().all(|&v| v == 0.0) {
        check_z(kernel, z)?;
        return Ok(0.0);
    }
    Ok(optimal_tilt(kernel, z, x)?.norm_value)
}

pub fn drift_cov(kernel: &Kernel, z: f64, x: &[f64]) -> Result<DriftCov> {
    let tilt = optimal_tilt(kernel, z, x)?;
    let mo = kernel.moments(z, &tilt.mu)?;
    let spd = Spd::from_rows(&mo.lambda)?;
    let xn = norm2(x);
    let xhat: Vec<f64> = x.iter().map(|v| v / xn).collect();
    Ok(DriftCov {
        a2: spd.inv_form(&mo.eta, &mo.eta),
        b2: spd.inv_form(x, x),
        w2: spd.inv_form(&xhat, &xhat),
        det_lambda: spd.det(),
        eta: mo.eta,
        lambda: mo.lambda,
        tilt,
    })
}

fn check_planar(kernel: &Kernel, n_samples: usize) -> Result<()> {
    if kernel.dim() != 2 {
        return Err(invalid("boundary and ball samplers need d = 2"));
    }
    if n_samples < 8 {
        return Err(invalid("need at least 8 samples"));
    }
    Ok(())
}

fn angles(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| 2.0 * std::f64::consts::PI * i as f64 / n as f64)
}

/// Rows `(theta, mu_1, mu_2)` on the boundary of `Omega_z`.
pub fn wulff_boundary(kernel: &Kernel, z: f64, n_samples: usize) -> Result<Vec<[f64; 3]>> {
    check_planar(kernel, n_samples)?;
    angles(n_samples)
        .map(|t| {
            let u = [t.cos(), t.sin()];
            let r = boundary_radius(kernel, z, &u)?;
            Ok([t, r * u[0], r * u[1]])
        })
        .collect()
}

/// Rows `(theta, x_1, x_2)` on the unit sphere of `|.|_z`.
pub fn norm_ball(kernel: &Kernel, z: f64, n_samples: usize) -> Result<Vec<[f64; 3]>> {
    check_planar(kernel, n_samples)?;
    angles(n_samples)
        .map(|t| {
            let u = [t.cos(), t.sin()];
            let n = norm(kernel, z, &u)?;
            Ok([t, u[0] / n, u[1] / n])
        })
        .collect()
}

/// Bisection for an increasing function on `[lo, hi]` down to adjacent floats.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nearest-neighbour norm from the scalar multiplier equation
/// `sum_j sqrt(1 + (d lambda x_j / z)^2) = d / z`.
pub fn closed_form_norm_nn(z: f64, x: &[f64]) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(invalid("z must lie in (0, 1)"));
    }
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) || x.iter().all(|&v| v == 0.0) {
        return Err(invalid("x must be finite and nonzero"));
    }
    let d = x.len() as f64;
    let m = (1.0 + d * (1.0 - z) / z).acosh();
    let g = |l: f64| x.iter().map(|&xj| (d * l * xj / z).hypot(1.0)).sum::<f64>() - d / z;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let l = bisect(0.0, hi, g);
    Ok(x.iter().map(|&xj| xj * (d * l * xj / z).asinh()).sum::<f64>() / m)
}

/// `l^infty`-box norm from
/// `prod_j (1 + sqrt(4 - 3 s_j^2)) / (1 - s_j^2) = 3^d / z`, `s_j = lambda |x_j|`.
pub fn closed_form_norm_linf(z: f64, x: &[f64]) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(invalid("z must lie in (0, 1)"));
    }
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) || x.iter().all(|&v| v == 0.0) {
        return Err(invalid("x must be finite and nonzero"));
    }
    let d = x.len() as f64;
    let m = ((3.0 - z) / (2.0 * z)).acosh();
    let xmax = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let target = d * 3f64.ln() - z.ln();
    let g = |l: f64| {
        x.iter()
            .map(|&xj| {
                let s = l * xj.abs();
                ((1.0 + (4.0 - 3.0 * s * s).sqrt()) / ((1.0 - s) * (1.0 + s))).ln()
            })
            .sum::<f64>()
            - target
    };
    let l = bisect(0.0, 1.0 / xmax, g);
    let mu_dot_x: f64 = x
        .iter()
        .map(|&xj| {
            let s = l * xj.abs();
            let ch = (s * s + (4.0 - 3.0 * s * s).sqrt()) / (2.0 * (1.0 - s) * (1.0 + s));
            xj.abs() * ch.max(1.0).acosh()
        })
        .sum();
    Ok(mu_dot_x / m)
}

/// `lim_{z->0} |x|_z = rad(U) * gauge_{conv U}(x)` for a finite support `U`, with
/// `rad(U) = max_{y in U} y_1`.
pub fn massive_limit_norm(kernel: &Kernel, x: &[f64]) -> Option<f64> {
    if kernel.tail().is_some() || x.len() != kernel.dim() {
        return None;
    }
    let d = kernel.dim();
    let pts: Vec<Vec<f64>> = kernel
        .support()
        .iter()
        .filter(|(p, w)| *w > 0.0 && p.iter().any(|&v| v != 0))
        .map(|(p, _)| p.iter().map(|&v| v as f64).collect())
        .collect();
    let rad = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let n = pts.len();
    if n < d || binomial(n, d) > 2_000_000 {
        return None;
    }
    // The gauge is an LP whose optimum sits on a basic solution using d support points.
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let b = DMatrix::from_fn(d, d, |i, j| pts[idx[j]][i]);
        if let Some(t) = b.lu().solve(&DVector::from_column_slice(x)) {
            if t.iter().all(|v| v.is_finite() && *v >= -1e-12) {
                best = best.min(t.iter().map(|v| v.max(0.0)).sum());
            }
        }
        // next combination
        let mut i = d;
        while i > 0 && idx[i - 1] == n - d + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
    best.is_finite().then_some(rad * best)
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Evaluates `|x|_z` on `steps + 1` equally spaced `z` in `[zmin, zmax]` and flags values
/// leaving the interval spanned by the `z -> 0` and `z -> 1` limits.
pub fn monotonicity_scan(kernel: &Kernel, x: &[f64], zmin: f64, zmax: f64, steps: usize, tol: f64) -> Result<ScanReport> {
    check_x(kernel, x)?;
    if !(zmin > 0.0 && zmin < zmax) || steps == 0 {
        return Err(invalid("need 0 < zmin < zmax and steps >= 1"));
    }
    check_z(kernel, zmax)?;
    let small = massive_limit_norm(kernel, x);
    let large = norm2(x);
    let (lower, upper) = match small {
        Some(s) => (s.min(large), s.max(large)),
        None => (large.min(crate::numeric::norm_inf(x)), large.max(crate::numeric::norm_inf(x))),
    };
    let rows = (0..=steps)
        .map(|i| {
            let z = zmin + (zmax - zmin) * i as f64 / steps as f64;
            Ok(ScanRow { z, norm: norm(kernel, z, x)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let flags: Vec<ScanFlag> = rows
        .iter()
        .filter(|r| r.norm > upper + tol || r.norm < lower - tol)
        .map(|r| ScanFlag { z: r.z, norm: r.norm, lower, upper })
        .collect();
    let mut sign = 0.0;
    let mut monotone = true;
    for w in rows.windows(2) {
        let diff = w[1].norm - w[0].norm;
        if diff.abs() <= tol {
            continue;
        }
        if sign != 0.0 && diff.signum() != sign {
            monotone = false;
        }
        sign = diff.signum();
    }
    let non_monotone = !flags.is_empty() || !monotone;
    Ok(ScanReport { x: x.to_vec(), rows, small_z_limit: small, large_z_limit: large, flags, monotone, non_monotone })
}
