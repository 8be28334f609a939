//! Crossover predictions `S_z(x) ~ C(x; eta, Lambda) e^{-m_z |x|_z} g^(mu)(0)` against
//! lattice oracles, with the Ornstein-Zernike asymptote, envelope bounds, the critical
//! scaling profile and the tilted-torus form of the Gaussian approximation.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::{gamma, gamma_lr};

use crate::brownian::{brownian_green, massive_green};
use crate::error::{invalid, Error, Result};
use crate::kernel::{Kernel, KernelName, Point};
use crate::lattice::{
    auto_radius, green_exact_1d, green_quadrature, green_series, series_work, GreenEval, GreenMethod,
    QuadratureOptions, SeriesOptions, SERIES_WORK_BUDGET,
};
use crate::numeric::{dot, norm2, to_f64, MemoryCap, Spd};
use crate::wulff::{self, DriftCov};

/// `mu -> g^(mu)(0)`; random walks use the constant 1.
pub type GHat = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CrossoverOptions {
    /// Lower bound on `m_z |x|_z` in `d <= 2`.
    pub s0: f64,
    /// Ceiling for the absolute series tolerance.
    pub tol: f64,
    /// Series tolerance relative to the smallest predicted value.
    pub rel_tol: f64,
    /// Fraction of the optimal tilt used to regularise quadrature oracles.
    pub theta: f64,
    /// Compare against a second oracle and abort on disagreement.
    pub cross_check: bool,
    pub mem: MemoryCap,
    pub ghat: Option<GHat>,
}

impl Default for CrossoverOptions {
    fn default() -> Self {
        Self { s0: 0.5, tol: 1e-12, rel_tol: 1e-6, theta: 0.5, cross_check: true, mem: MemoryCap::default(), ghat: None }
    }
}

impl std::fmt::Debug for CrossoverOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrossoverOptions")
            .field("s0", &self.s0)
            .field("tol", &self.tol)
            .field("rel_tol", &self.rel_tol)
            .field("theta", &self.theta)
            .field("cross_check", &self.cross_check)
            .field("mem", &self.mem)
            .field("ghat", &self.ghat.as_ref().map(|_| "user"))
            .finish()
    }
}

impl CrossoverOptions {
    fn ghat_at(&self, mu: &[f64]) -> f64 {
        self.ghat.as_ref().map_or(1.0, |g| g(mu))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub x: Point,
    pub oracle: f64,
    pub oracle_method: GreenMethod,
    pub oracle_error: f64,
    pub prediction: f64,
    pub ratio: f64,
    /// `m_z |x|_z = mu_x . x`, the crossover coordinate.
    pub m_norm_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableMeta {
    pub kernel: serde_json::Value,
    pub z: f64,
    pub s0: f64,
    pub series_tol: Option<f64>,
    pub quadrature_tilt: Option<Vec<f64>>,
    /// Method of the independent second oracle, when one was available.
    pub cross_check: Option<GreenMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverTable {
    pub meta: TableMeta,
    pub rows: Vec<CrossoverRow>,
}

impl CrossoverTable {
    /// Least-squares slope of `log |ratio - 1|` against `log |x|`.
    pub fn trend_slope(&self) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.ratio != 1.0)
            .map(|r| (norm2(&to_f64(&r.x)).ln(), (r.ratio - 1.0).abs().ln()))
            .unzip();
        log_slope(&xs, &ys)
    }
}

/// Ordinary least-squares slope; `None` for fewer than two distinct abscissae.
pub fn log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Primitive lattice direction of `x`, the memo key for optimal tilts.
fn direction_key(x: &[i64]) -> Point {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = x.iter().fold(0u64, |g, v| gcd(g, v.unsigned_abs())).max(1) as i64;
    x.iter().map(|v| v / g).collect()
}

fn check_points(kernel: &Kernel, points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(invalid("no points given"));
    }
    for p in points {
        if p.len() != kernel.dim() {
            return Err(invalid(format!("point {p:?} does not match kernel dimension {}", kernel.dim())));
        }
        if p.iter().all(|&v| v == 0) {
            return Err(invalid("predictions need x != 0"));
        }
    }
    Ok(())
}

/// Drift and covariance for every distinct direction among `points`.
fn tilt_memo(kernel: &Kernel, z: f64, points: &[Point]) -> Result<HashMap<Point, DriftCov>> {
    let mut keys: Vec<Point> = points.iter().map(|p| direction_key(p)).collect();
    keys.sort();
    keys.dedup();
    let solved: Vec<Result<(Point, DriftCov)>> = keys
        .into_par_iter()
        .map(|k| {
            let dc = wulff::drift_cov(kernel, z, &to_f64(&k))?;
            Ok((k, dc))
        })
        .collect();
    solved.into_iter().collect()
}

/// `C(x; eta, Lambda) e^{-mu.x}` and `mu.x`.
fn bessel_prediction(dc: &DriftCov, x: &[f64]) -> Result<(f64, f64)> {
    let spd = Spd::from_rows(&dc.lambda)?;
    let g = brownian_green(x, &dc.eta, &spd)?;
    let mx = dot(&dc.tilt.mu, x);
    Ok((g.value * (-mx).exp(), mx))
}

struct Oracle {
    evals: Vec<GreenEval>,
    series_tol: Option<f64>,
    tilt: Option<Vec<f64>>,
}

fn exact_oracle(z: f64, points: &[Point]) -> Result<Vec<GreenEval>> {
    points
        .iter()
        .map(|p| {
            let v = green_exact_1d(z, p[0])?;
            Ok(GreenEval { x: p.clone(), z, value: v, method: GreenMethod::Exact1d, error: 4.0 * f64::EPSILON * v })
        })
        .collect()
}

fn series_oracle(kernel: &Kernel, z: f64, points: &[Point], tol: f64, mem: MemoryCap) -> Option<Result<Vec<GreenEval>>> {
    let xmax = points.iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs() as usize)).max()?;
    let radius = auto_radius(kernel, z, xmax, tol).ok()?;
    let cells = ((radius + 1) as u64).saturating_pow(kernel.dim() as u32);
    if series_work(kernel, z, radius, tol) > SERIES_WORK_BUDGET / 8.0 || mem.check(cells * 32).is_err() {
        return None;
    }
    Some(green_series(kernel, z, points, SeriesOptions { tol, radius: Some(radius), mem }))
}

fn quadrature_oracle(kernel: &Kernel, z: f64, points: &[Point], tilt: &[f64], tol: f64, mem: MemoryCap) -> Result<Vec<GreenEval>> {
    green_quadrature(kernel, z, points, &QuadratureOptions { tilt: Some(tilt.to_vec()), tol, mem, ..Default::default() })
}

/// Lattice values in the preference order exact > series > tilted quadrature, optionally
/// confirmed by an independent second method.
fn oracle(
    kernel: &Kernel,
    z: f64,
    points: &[Point],
    scale: f64,
    tilt: &[f64],
    opts: &CrossoverOptions,
) -> Result<(Oracle, Option<GreenMethod>)> {
    let tol = (opts.rel_tol * scale).clamp(1e-30, opts.tol);
    let nn1 = kernel.name() == Some(KernelName::Nn) && kernel.dim() == 1;
    let primary = if nn1 {
        Oracle { evals: exact_oracle(z, points)?, series_tol: None, tilt: None }
    } else if let Some(s) = series_oracle(kernel, z, points, tol, opts.mem) {
        Oracle { evals: s?, series_tol: Some(tol), tilt: None }
    } else {
        Oracle { evals: quadrature_oracle(kernel, z, points, tilt, opts.rel_tol, opts.mem)?, series_tol: None, tilt: Some(tilt.to_vec()) }
    };
    if !opts.cross_check {
        return Ok((primary, None));
    }
    let second = if primary.tilt.is_some() {
        series_oracle(kernel, z, points, tol, opts.mem).and_then(|r| r.ok())
    } else {
        quadrature_oracle(kernel, z, points, tilt, opts.rel_tol, opts.mem).ok()
    };
    let Some(second) = second else {
        return Ok((primary, None));
    };
    for (a, b) in primary.evals.iter().zip(&second) {
        let allowed = 2.0 * (a.error + b.error) + 1e-12 * a.value.abs();
        if (a.value - b.value).abs() > allowed {
            return Err(Error::OracleMismatch { x: a.x.clone(), first: a.value, second: b.value });
        }
    }
    let method = second.first().map(|e| e.method);
    Ok((primary, method))
}

/// The crossover table for `points`.
pub fn predict_table(kernel: &Kernel, z: f64, points: &[Point], opts: &CrossoverOptions) -> Result<CrossoverTable> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, points)?;
    let memo = tilt_memo(kernel, z, points)?;
    let preds: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let dc = &memo[&direction_key(p)];
            let xf = to_f64(p);
            let (pred, mx) = bessel_prediction(dc, &xf)?;
            if kernel.dim() <= 2 && mx < opts.s0 {
                return Err(Error::Precondition(format!(
                    "m|x| = {mx} is below s0 = {} at {p:?}; the prediction needs m|x| >= s0 when d <= 2",
                    opts.s0
                )));
            }
            Ok((pred * opts.ghat_at(&dc.tilt.mu), mx))
        })
        .collect::<Result<_>>()?;
    let far = (0..points.len())
        .max_by(|&i, &j| preds[i].1.total_cmp(&preds[j].1))
        .expect("points are non-empty");
    let tilt: Vec<f64> = memo[&direction_key(&points[far])].tilt.mu.iter().map(|m| opts.theta * m).collect();
    let scale = preds.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let (orc, second) = oracle(kernel, z, points, scale, &tilt, opts)?;
    let rows = orc
        .evals
        .iter()
        .zip(&preds)
        .map(|(e, &(prediction, m_norm_x))| CrossoverRow {
            x: e.x.clone(),
            oracle: e.value,
            oracle_method: e.method,
            oracle_error: e.error,
            prediction,
            ratio: e.value / prediction,
            m_norm_x,
        })
        .collect();
    Ok(CrossoverTable {
        meta: TableMeta {
            kernel: kernel.to_json(),
            z,
            s0: opts.s0,
            series_tol: orc.series_tol,
            quadrature_tilt: orc.tilt,
            cross_check: second,
        },
        rows,
    })
}

/// The crossover row at one point.
pub fn predict(kernel: &Kernel, z: f64, x: &[i64], opts: &CrossoverOptions) -> Result<CrossoverRow> {
    let mut t = predict_table(kernel, z, &[x.to_vec()], opts)?;
    Ok(t.rows.remove(0))
}

/// `(2 pi)^{-(d-1)/2} det(Lambda)^{-1/2} w^{-1} |eta|^{(d-3)/2} |x|^{-(d-1)/2} e^{-m|x|_z}`,
/// the large-`m|x|` form of the prediction.
pub fn oz_asymptote(kernel: &Kernel, z: f64, x: &[i64], opts: &CrossoverOptions) -> Result<f64> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, &[x.to_vec()])?;
    let xf = to_f64(x);
    let dc = wulff::drift_cov(kernel, z, &xf)?;
    let d = kernel.dim() as f64;
    let pref = (2.0 * std::f64::consts::PI).powf(-(d - 1.0) / 2.0) / dc.det_lambda.sqrt() / dc.w2.sqrt();
    let power = norm2(&dc.eta).powf((d - 3.0) / 2.0) / norm2(&xf).powf((d - 1.0) / 2.0);
    Ok(pref * power * (-dot(&dc.tilt.mu, &xf)).exp() * opts.ghat_at(&dc.tilt.mu))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub x: Point,
    pub oracle: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub m_norm_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub z: f64,
    pub mass: f64,
    pub rows: Vec<EnvelopeRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub bound: f64,
    /// `max_ratio / min_ratio <= bound`.
    pub bounded: bool,
}

/// Oracle over the two-sided envelope: `max(1, m|x|)^{(d-3)/2} |x|^{-(d-2)} e^{-m|x|}` for
/// `d > 2`, and `m^{-(3-d)/2} |x|^{-(d-1)/2} e^{-m|x|}` with `m|x| >= s0` otherwise;
/// `|x|` is the norm `|x|_z`.
pub fn envelope_check(kernel: &Kernel, z: f64, points: &[Point], bound: f64, opts: &CrossoverOptions) -> Result<EnvelopeReport> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, points)?;
    if !(bound >= 1.0) {
        return Err(invalid("envelope bound must be at least 1"));
    }
    let d = kernel.dim() as f64;
    let m = wulff::mass(kernel, z)?;
    let memo = tilt_memo(kernel, z, points)?;
    let envs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let mx = dot(&memo[&direction_key(p)].tilt.mu, &to_f64(p));
            let nx = mx / m;
            let env = if kernel.dim() > 2 {
                mx.max(1.0).powf((d - 3.0) / 2.0) / nx.powf(d - 2.0) * (-mx).exp()
            } else {
                if mx < opts.s0 {
                    return Err(Error::Precondition(format!("m|x| = {mx} is below s0 = {} at {p:?}", opts.s0)));
                }
                m.powf(-(3.0 - d) / 2.0) / nx.powf((d - 1.0) / 2.0) * (-mx).exp()
            };
            Ok((env, mx))
        })
        .collect::<Result<_>>()?;
    let far = (0..points.len()).max_by(|&i, &j| envs[i].1.total_cmp(&envs[j].1)).expect("non-empty");
    let tilt: Vec<f64> = memo[&direction_key(&points[far])].tilt.mu.iter().map(|v| opts.theta * v).collect();
    let scale = 0.01 * envs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let (orc, _) = oracle(kernel, z, points, scale, &tilt, opts)?;
    let rows: Vec<EnvelopeRow> = orc
        .evals
        .iter()
        .zip(&envs)
        .map(|(e, &(envelope, m_norm_x))| EnvelopeRow {
            x: e.x.clone(),
            oracle: e.value,
            envelope,
            ratio: e.value / envelope,
            m_norm_x,
        })
        .collect();
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(EnvelopeReport { z, mass: m, rows, min_ratio, max_ratio, bound, bounded: max_ratio <= bound * min_ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalRow {
    pub z: f64,
    pub mass: f64,
    pub x: Point,
    /// `m_z |x|_z` at the chosen point.
    pub s_eff: f64,
    pub oracle: f64,
    pub oracle_method: GreenMethod,
    pub prediction: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalReport {
    pub s: f64,
    /// `sum |y|^2 D(y)`
    pub sigma2: f64,
    pub rows: Vec<CriticalRow>,
}

/// For each `z`, the axis point with `m_z x_1` nearest `s`, compared with the scaling
/// profile `d / (sigma^2 |x|^{d-2}) G_{s_eff}(xhat)`.
pub fn critical_decay_check(kernel: &Kernel, z_list: &[f64], s: f64, opts: &CrossoverOptions) -> Result<CriticalReport> {
    let d = kernel.dim();
    if d <= 2 {
        return Err(Error::Precondition("critical decay needs d > 2".into()));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid("s must be positive"));
    }
    if z_list.is_empty() {
        return Err(invalid("no z values given"));
    }
    let sigma2 = kernel.second_moment()?;
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let rows = z_list
        .iter()
        .map(|&z| {
            wulff::check_z(kernel, z)?;
            let m = wulff::mass(kernel, z)?;
            let x1 = (s / m).round().max(1.0);
            let mut x = vec![0i64; d];
            x[0] = x1 as i64;
            let s_eff = m * x1;
            let prediction = d as f64 / (sigma2 * x1.powi(d as i32 - 2)) * massive_green(s_eff, &e1)?.value;
            // m|x| is of order s here, so tilting would only slow the aliasing decay
            let tilt = vec![0.0; d];
            let (orc, _) = oracle(kernel, z, &[x.clone()], prediction, &tilt, &CrossoverOptions { cross_check: false, ..opts.clone() })?;
            let e = &orc.evals[0];
            Ok(CriticalRow { z, mass: m, x, s_eff, oracle: e.value, oracle_method: e.method, prediction, ratio: e.value / prediction })
        })
        .collect::<Result<_>>()?;
    Ok(CriticalReport { s, sigma2, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcglRow {
    pub x: Point,
    /// `int e^{ik.x} / (J^(mu)(0) - J^(mu)(k)) dk / (2 pi)^d`
    pub g_q: f64,
    pub g_q_error: f64,
    pub brownian: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcglReport {
    pub mu: Vec<f64>,
    /// `J^(mu)(0) = z D^(mu)(0)`
    pub j0: f64,
    pub eta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub theta: f64,
    pub grid: usize,
    pub rows: Vec<NcglRow>,
    /// Least-squares slope of `log |ratio - 1|` against `log |x|`.
    pub trend_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcglOptions {
    pub theta: f64,
    pub n_grid: Option<usize>,
    pub s0: f64,
    pub mem: MemoryCap,
}

impl Default for NcglOptions {
    fn default() -> Self {
        Self { theta: 0.5, n_grid: None, s0: 0.5, mem: MemoryCap::default() }
    }
}

/// Evaluates `G_Q(x)` by torus quadrature and compares it with `C(x; eta, Lambda)`.
///
/// For `mu != 0` the integrand is made smooth by moving part of the tilt back onto `x`:
/// with `a = J^(mu)(0)`, `G_Q(x) = e^{mu.x} S_{z/a}(x) / a`, and `S_{z/a}` is computed with
/// the interior tilt `theta mu`. For `mu = 0` (so `d > 2`) the `|k|^{-2}` singularity is
/// subtracted with the Gaussian-damped reference `e^{-beta q(k)} / q(k)`,
/// `q(k) = k.Lambda k / 2`, whose integral over R^d is known in closed form.
pub fn ncgl_verify(kernel: &Kernel, z: f64, mu: &[f64], points: &[Point], opts: &NcglOptions) -> Result<NcglReport> {
    let d = kernel.dim();
    if mu.len() != d {
        return Err(invalid("tilt has the wrong dimension"));
    }
    if !(opts.theta > 0.0 && opts.theta < 1.0) {
        return Err(invalid("theta must lie in (0, 1)"));
    }
    wulff::check_z(kernel, z)?;
    if points.is_empty() || points.iter().any(|p| p.len() != d || p.iter().all(|&v| v == 0)) {
        return Err(invalid("points must be nonzero and match the kernel dimension"));
    }
    let mo = kernel.moments(z, mu)?;
    let j0 = mo.value;
    if j0 > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!("z D^(mu)(0) = {j0} exceeds 1; mu lies outside the tilt domain")));
    }
    let spd = Spd::from_rows(&mo.lambda)?;
    let eta_norm = norm2(&mo.eta);
    let centred = mu.iter().all(|&v| v == 0.0);
    if centred && d <= 2 {
        return Err(Error::Precondition("zero tilt needs d > 2".into()));
    }
    for p in points {
        let xf = to_f64(p);
        if !centred {
            let cos = dot(&xf, &mo.eta) / (norm2(&xf) * eta_norm);
            if !(1.0 - cos <= 1e-9) {
                return Err(Error::Precondition(format!("x = {p:?} is not parallel to eta = {:?}", mo.eta)));
            }
            if d <= 2 && norm2(&xf) * eta_norm < opts.s0 {
                return Err(Error::Precondition(format!("|x||eta| is below s0 = {} at {p:?}", opts.s0)));
            }
        }
    }
    let (values, grid) = if centred {
        centred_fubini(kernel, z, &spd, points, opts)?
    } else {
        let z_eff = z / j0;
        let tilt: Vec<f64> = mu.iter().map(|v| opts.theta * v).collect();
        let gap = 1.0 - z_eff * kernel.tilted_value(1.0, &tilt)?;
        if gap < 1e-10 {
            return Err(Error::QuadratureUnresolved { tol: 1e-10, estimate: gap, suggested_grid: 0 });
        }
        let evals = green_quadrature(
            kernel,
            z_eff,
            points,
            &QuadratureOptions { n_grid: opts.n_grid, tilt: Some(tilt), mem: opts.mem, ..Default::default() },
        )?;
        let grid = opts.n_grid.unwrap_or_else(|| crate::lattice::default_grid(d));
        let vals = evals
            .iter()
            .map(|e| {
                let f = (dot(mu, &to_f64(&e.x))).exp() / j0;
                (e.value * f, e.error * f)
            })
            .collect();
        (vals, grid)
    };
    let rows: Vec<NcglRow> = points
        .iter()
        .zip(values)
        .map(|(p, (g_q, g_q_error))| {
            let c = brownian_green(&to_f64(p), &mo.eta, &spd)?.value;
            Ok(NcglRow { x: p.clone(), g_q, g_q_error, brownian: c, ratio: g_q / c })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|r| (norm2(&to_f64(&r.x)).ln(), (r.ratio - 1.0).abs().max(f64::MIN_POSITIVE).ln()))
        .unzip();
    Ok(NcglReport {
        mu: mu.to_vec(),
        j0,
        eta: mo.eta,
        lambda: mo.lambda,
        theta: opts.theta,
        grid,
        trend_slope: log_slope(&xs, &ys),
        rows,
    })
}

/// `int_{R^d} e^{-beta q(k)} / q(k) e^{ik.x} dk / (2 pi)^d
///  = (2 pi)^{-d/2} det^{-1/2} (b^2/2)^{1-d/2} gamma(d/2 - 1, b^2 / (2 beta))`.
fn reference_integral(d: usize, det: f64, b2: f64, beta: f64) -> f64 {
    let a = d as f64 / 2.0 - 1.0;
    let pref = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) / det.sqrt();
    if b2 == 0.0 {
        return pref * beta.powf(-a) / a;
    }
    let u = b2 / (2.0 * beta);
    pref * (b2 / 2.0).powf(-a) * gamma_lr(a, u) * gamma(a)
}

fn centred_fubini(kernel: &Kernel, z: f64, spd: &Spd, points: &[Point], opts: &NcglOptions) -> Result<(Vec<(f64, f64)>, usize)> {
    let d = kernel.dim();
    let lam = spd.matrix();
    let eig_min = lam.clone().symmetric_eigen().eigenvalues.min();
    // reference is below e^{-37} on the boundary of the torus
    let beta = 37.0 / (0.5 * eig_min * std::f64::consts::PI * std::f64::consts::PI);
    let xmax = points.iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
    let mut n = opts.n_grid.unwrap_or(64).next_power_of_two().max(16);
    while n < 4 * (xmax + 1) {
        n *= 2;
    }
    let fine = centred_table(kernel, z, lam, beta, n, opts.mem)?;
    let coarse = centred_table(kernel, z, lam, beta, n / 2, opts.mem)?;
    let vals = points
        .iter()
        .map(|p| {
            let b2 = spd.inv_form(&to_f64(p), &to_f64(p));
            let reference = reference_integral(d, spd.det(), b2, beta);
            let f = fine.at(p) + reference;
            let c = coarse.at(p) + reference;
            (f, (f - c).abs())
        })
        .collect();
    Ok((vals, n))
}

struct Periodic {
    n: usize,
    values: Vec<f64>,
}

impl Periodic {
    fn at(&self, x: &[i64]) -> f64 {
        let n = self.n as i64;
        self.values[x.iter().fold(0usize, |a, &v| a * self.n + v.rem_euclid(n) as usize)]
    }
}

/// Trapezoid values of `int (1/(z - z D(k)) - e^{-beta q}/q) e^{ik.x}` over the torus.
fn centred_table(kernel: &Kernel, z: f64, lam: &DMatrix<f64>, beta: f64, n: usize, mem: MemoryCap) -> Result<Periodic> {
    let d = kernel.dim();
    let total = n.checked_pow(d as u32).ok_or_else(|| invalid("grid too large"))?;
    mem.check(total as u64 * 32)?;
    let pairs = kernel.tilted_pairs(z, &vec![0.0; d])?;
    let j0 = pairs.at_zero();
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let q = |k: &[f64]| -> f64 {
        let kv = DVector::from_column_slice(k);
        0.5 * kv.dot(&(lam * &kv))
    };
    // limit at k = 0 along the coordinate axes: beta + fourth-moment correction
    let mut corr = 0.0;
    for j in 0..d {
        let t = 1e-3;
        let mut k = vec![0.0; d];
        k[j] = t;
        let f = 1.0 / (j0 - pairs.at(&k).re) - (-beta * q(&k)).exp() / q(&k);
        corr += f / d as f64;
    }
    let mut data: Vec<num_complex::Complex64> = vec![num_complex::Complex64::new(0.0, 0.0); total];
    data.par_chunks_mut(n).enumerate().for_each(|(row, chunk)| {
        let mut k = vec![0.0; d];
        let mut r = row;
        for j in (0..d - 1).rev() {
            let i = r % n;
            k[j] = h * if i > n / 2 { i as f64 - n as f64 } else { i as f64 };
            r /= n;
        }
        for (i, c) in chunk.iter_mut().enumerate() {
            k[d - 1] = h * if i > n / 2 { i as f64 - n as f64 } else { i as f64 };
            let qk = q(&k);
            let v = if qk == 0.0 { corr } else { 1.0 / (j0 - pairs.at(&k).re) - (-beta * qk).exp() / qk };
            *c = num_complex::Complex64::new(v, 0.0);
        }
    });
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    let mut buf = data.clone();
    for _ in 0..d {
        data.par_chunks_mut(n).for_each(|line| fft.process(line));
        let rest = total / n;
        buf.par_chunks_mut(rest).enumerate().for_each(|(il, out)| {
            for (r, o) in out.iter_mut().enumerate() {
                *o = data[r * n + il];
            }
        });
        std::mem::swap(&mut data, &mut buf);
    }
    let scale = 1.0 / total as f64;
    Ok(Periodic { n, values: data.iter().map(|c| c.re * scale).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub x: Point,
    /// `mu_x . x`
    pub target: f64,
    /// `(n, -log S_z(n x) / n)`
    pub samples: Vec<(usize, f64)>,
    pub extrapolated: f64,
    pub relative_error: f64,
}

/// Fits `-log S_z(n x) / n = R + a log(n)/n + b/n` by least squares and compares `R` with
/// `mu_x . x`. Values come from quadrature tilted by `theta mu_x`, which keeps their
/// relative accuracy at large `n`.
pub fn exponential_rate(kernel: &Kernel, z: f64, x: &[i64], ns: &[usize], theta: f64, mem: MemoryCap) -> Result<RateReport> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, &[x.to_vec()])?;
    if ns.len() < 3 || ns.contains(&0) {
        return Err(invalid("need at least three positive multiples"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid("theta must lie in (0, 1)"));
    }
    let tr = wulff::optimal_tilt(kernel, z, &to_f64(x))?;
    let target = dot(&tr.mu, &to_f64(x));
    let tilt: Vec<f64> = tr.mu.iter().map(|v| theta * v).collect();
    let pts: Vec<Point> = ns.iter().map(|&n| x.iter().map(|v| v * n as i64).collect()).collect();
    let evals = quadrature_oracle(kernel, z, &pts, &tilt, 1e-10, mem)?;
    let samples: Vec<(usize, f64)> = ns.iter().zip(&evals).map(|(&n, e)| (n, -e.value.ln() / n as f64)).collect();
    let a = DMatrix::from_fn(ns.len(), 3, |i, j| {
        let n = ns[i] as f64;
        match j {
            0 => 1.0,
            1 => n.ln() / n,
            _ => 1.0 / n,
        }
    });
    let y = DVector::from_iterator(ns.len(), samples.iter().map(|s| s.1));
    let coef = a
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::NoConvergence { solver: e, iterations: 0, residual: f64::NAN })?;
    let extrapolated = coef[0];
    Ok(RateReport { x: x.to_vec(), target, samples, extrapolated, relative_error: (extrapolated - target).abs() / target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_key_is_primitive() {
        assert_eq!(direction_key(&[4, -6, 0]), vec![2, -3, 0]);
        assert_eq!(direction_key(&[0, 7]), vec![0, 1]);
    }

    #[test]
    fn one_dimensional_prediction_is_exact() {
        let k = Kernel::nn(1).unwrap();
        let row = predict(&k, 0.6, &[7], &CrossoverOptions::default()).unwrap();
        assert!((row.ratio - 1.0).abs() < 1e-12, "{row:?}");
    }

    #[test]
    fn reference_integral_small_distance_limit() {
        let near = reference_integral(3, 1.0, 1e-12, 2.0);
        let at = reference_integral(3, 1.0, 0.0, 2.0);
        assert!((near - at).abs() < 1e-5 * at);
    }
}
