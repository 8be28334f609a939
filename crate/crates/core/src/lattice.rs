//! Lattice Green function `S_z(x) = sum_n z^n D^{*n}(x)`.
//!
//! Three independent routes: iterated convolution on a box (`series`), the trapezoid
//! rule for `int_T e^{ik.x} / (1 - z D^(nu)(k)) dk / (2 pi)^d` evaluated by FFT
//! (`quadrature`), and the closed form for the one-dimensional nearest-neighbour walk.
//!
//! The series stores only the sign-folded box `{0..=L}^d`; this relies on the kernel
//! being invariant under coordinate reflections, which every `Kernel` is.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernel::{Kernel, KernelName, Point};
use crate::numeric::{dot, Kahan, MemoryCap};
use crate::wulff;

/// Margin below 1 at which `z D^(mu)(0)` counts as critical.
pub const CHI_MARGIN: f64 = 1e-12;
pub const MAX_GRID: usize = 4096;
/// Largest `cells * steps * support` the automatic oracle will spend on the series.
pub const SERIES_WORK_BUDGET: f64 = 2e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    Series,
    Quadrature,
    Exact1d,
}

impl GreenMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Series => "series",
            Self::Quadrature => "quadrature",
            Self::Exact1d => "exact_1d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenEval {
    pub x: Point,
    pub z: f64,
    pub value: f64,
    pub method: GreenMethod,
    /// Absolute error estimate.
    pub error: f64,
}

/// `S_z(x) = e^{-m|x|} / sqrt(1 - z^2)` with `cosh m = 1/z`, for the walk on Z with
/// steps `+-1`.
pub fn green_exact_1d(z: f64, x: i64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(invalid("z must lie in (0, 1)"));
    }
    let m = (1.0 / z).acosh();
    Ok((-m * x.unsigned_abs() as f64).exp() / (1.0 - z * z).sqrt())
}

fn is_nn_1d(kernel: &Kernel) -> bool {
    kernel.name() == Some(KernelName::Nn) && kernel.dim() == 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    /// Stop once the geometric tail `z^{n+1} / (1 - z)` drops below this.
    pub tol: f64,
    /// Half-width of the box; chosen from the targets when `None`.
    pub radius: Option<usize>,
    pub mem: MemoryCap,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self { tol: 1e-12, radius: None, mem: MemoryCap::default() }
    }
}

/// `S_z` on the folded box `{0..=L}^d`, paths leaving the box discarded.
#[derive(Debug, Clone)]
pub struct SeriesField {
    d: usize,
    radius: usize,
    z: f64,
    values: Vec<f64>,
    pub steps: usize,
    /// `z^{n+1} / (1 - z)` after the last step.
    pub series_tail: f64,
    /// Total weight `sum_n z^n P(path leaves the box at step n)`.
    pub killed: f64,
    /// Rate used in `S(y) <= S(0) e^{-rate ||y||_inf}`.
    pub decay_rate: f64,
    /// Error from truncating an infinite-range kernel.
    pub kernel_truncation: f64,
}

impl SeriesField {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn index(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.d {
            return None;
        }
        let side = self.radius + 1;
        let mut idx = 0;
        for &v in x {
            let a = v.unsigned_abs() as usize;
            if a > self.radius {
                return None;
            }
            idx = idx * side + a;
        }
        Some(idx)
    }

    pub fn value(&self, x: &[i64]) -> Option<f64> {
        self.index(x).map(|i| self.values[i])
    }

    pub fn error(&self, x: &[i64]) -> f64 {
        let inf = x.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64;
        let gap = (self.radius as f64 + 1.0 - inf).max(0.0);
        self.series_tail + self.kernel_truncation + self.killed / (1.0 - self.z) * (-self.decay_rate * gap).exp()
    }

    pub fn eval(&self, x: &[i64]) -> Result<GreenEval> {
        let value = self
            .value(x)
            .ok_or_else(|| invalid(format!("point {x:?} lies outside the series box of radius {}", self.radius)))?;
        Ok(GreenEval { x: x.to_vec(), z: self.z, value, method: GreenMethod::Series, error: self.error(x) })
    }

    /// `sum_x f(x) S(x)` over the box, for `f` invariant under coordinate reflections.
    /// Each folded cell stands for its `2^{#nonzero}` reflections.
    pub fn weighted_sum(&self, f: impl Fn(&[i64]) -> f64) -> f64 {
        let side = self.radius + 1;
        let mut acc = Kahan::new();
        let mut a = vec![0i64; self.d];
        for (i, &v) in self.values.iter().enumerate() {
            let mut r = i;
            for j in (0..self.d).rev() {
                a[j] = (r % side) as i64;
                r /= side;
            }
            let mult = (1u64 << a.iter().filter(|&&c| c != 0).count()) as f64;
            acc.add(mult * f(&a) * v);
        }
        acc.value()
    }

    pub fn sum(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    /// Bound on `|sum_box S_box - sum_box S|`: every discarded unit of weight could have
    /// contributed at most `1/(1-z)` more. The last term covers rounding of the compensated sum.
    pub fn sum_error(&self) -> f64 {
        self.series_tail + (self.killed + self.kernel_truncation) / (1.0 - self.z) + 4.0 * f64::EPSILON * self.sum()
    }
}

/// Number of convolution steps after which `z^{n+1}/(1-z) < tol`.
fn series_steps(z: f64, tol: f64) -> usize {
    let n = ((tol * (1.0 - z)).ln() / z.ln()).ceil() - 1.0;
    n.max(1.0) as usize
}

/// Decay rate of `S_z` used for truncation bounds.
fn decay_rate(kernel: &Kernel, z: f64) -> f64 {
    match wulff::mass(kernel, z) {
        Ok(m) => m,
        Err(Error::Saturated { rate }) => rate,
        Err(_) => 0.0,
    }
}

/// Finite kernel for the series, and the resulting absolute error bound.
fn series_kernel(kernel: &Kernel, z: f64, tol: f64) -> Result<(Kernel, f64)> {
    let Some(t) = kernel.tail() else {
        return Ok((kernel.clone(), 0.0));
    };
    // missing kernel weight delta costs at most delta z / (1-z)^2
    let target = tol * (1.0 - z) * (1.0 - z) / z;
    let mut r = 1u64;
    loop {
        let a = (r + 1) as f64;
        let delta = 2.0 * t.c * a.powf(-t.p) * (-a).exp() / (1.0 - (-1.0f64).exp());
        if delta < target {
            return Ok((kernel.truncated(r)?, delta * z / ((1.0 - z) * (1.0 - z))));
        }
        r += 1;
        if r > 100_000 {
            return Err(Error::TailTruncation { tilt: 0.0, reason: "kernel tail too heavy for series".into() });
        }
    }
}

/// Box radius for targets with `||x||_inf <= xmax`, from the estimate
/// `killed <= 2d (2L+1)^{d-1} range e^{-m(L+1)} / (1-z)` and the return bound.
pub fn auto_radius(kernel: &Kernel, z: f64, xmax: usize, tol: f64) -> Result<usize> {
    wulff::check_z(kernel, z)?;
    let (k, _) = series_kernel(kernel, z, tol)?;
    let range = k.range().max(1) as f64;
    let d = kernel.dim() as f64;
    let rate = decay_rate(kernel, z);
    let natural = series_steps(z, tol) as f64 * range;
    let est = |l: f64| {
        2.0 * d * (2.0 * l + 1.0).powf(d - 1.0) * range * (-rate * (2.0 * l + 2.0 - xmax as f64)).exp()
            / ((1.0 - z) * (1.0 - z))
    };
    let mut l = xmax as f64 + if kernel.tail().is_some() { 1.0 } else { range };
    while est(l) >= 0.5 * tol && l < natural {
        l += 1.0;
        if l > 1e6 {
            return Err(invalid("decay too slow to choose a series box"));
        }
    }
    Ok(l.min(natural.max(xmax as f64)) as usize)
}

pub fn series_work(kernel: &Kernel, z: f64, radius: usize, tol: f64) -> f64 {
    let cells = ((radius + 1) as f64).powi(kernel.dim() as i32);
    cells * series_steps(z, tol) as f64 * kernel.support().len().max(1) as f64
}

/// Accumulates `sum_{n <= N} (zD)^{*n}` on the folded box of the given radius.
pub fn series_field(kernel: &Kernel, z: f64, radius: usize, tol: f64, mem: MemoryCap) -> Result<SeriesField> {
    wulff::check_z(kernel, z)?;
    if !(tol > 0.0) {
        return Err(invalid("series tolerance must be positive"));
    }
    let d = kernel.dim();
    let (k, kernel_truncation) = series_kernel(kernel, z, tol)?;
    let side = radius + 1;
    let cells = side
        .checked_pow(d as u32)
        .ok_or_else(|| invalid("series box too large"))?;
    mem.check(cells as u64 * 8 * 4)?;
    let steps = series_steps(z, tol);
    let support: Vec<(Vec<i64>, f64)> = k
        .support()
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(p, w)| (p.clone(), z * w))
        .collect();
    let zsum: f64 = support.iter().map(|(_, w)| w).sum();
    let range = k.range() as usize;
    let strides: Vec<usize> = (0..d).map(|j| side.pow((d - 1 - j) as u32)).collect();
    let offsets: Vec<isize> = support
        .iter()
        .map(|(y, _)| y.iter().zip(&strides).map(|(&v, &s)| v as isize * s as isize).sum())
        .collect();
    let conv = Conv { d, radius, range, strides: &strides, support: &support, offsets: &offsets };

    let mut cur = vec![0.0; cells];
    let mut next = vec![0.0; cells];
    let mut acc = vec![0.0; cells];
    let mut comp = vec![0.0; cells];
    cur[0] = 1.0;
    acc[0] = 1.0;
    let mut cur_mass = 1.0;
    let mut reach = 0usize;
    let mut killed = Kahan::new();
    for _ in 0..steps {
        let new_reach = (reach + range).min(radius);
        let next_mass = conv.step(&cur, &mut next, &mut acc, &mut comp, new_reach);
        killed.add((zsum * cur_mass - next_mass).max(0.0));
        std::mem::swap(&mut cur, &mut next);
        cur_mass = next_mass;
        reach = new_reach;
    }
    for (a, c) in acc.iter_mut().zip(&comp) {
        *a -= c;
    }
    Ok(SeriesField {
        d,
        radius,
        z,
        values: acc,
        steps,
        series_tail: z.powi(steps as i32 + 1) / (1.0 - z),
        killed: killed.value(),
        decay_rate: decay_rate(kernel, z),
        kernel_truncation,
    })
}

struct Conv<'a> {
    d: usize,
    radius: usize,
    range: usize,
    strides: &'a [usize],
    support: &'a [(Vec<i64>, f64)],
    offsets: &'a [isize],
}

/// Output slabs of one convolution step: the new term, and the running sum with its
/// Kahan compensation.
struct Slab<'s> {
    out: &'s mut [f64],
    acc: &'s mut [f64],
    comp: &'s mut [f64],
}

impl Conv<'_> {
    /// `next = zD * cur` on `[0..=reach]^d`, added into `acc`; returns the unfolded total
    /// weight of `next`.
    fn step(&self, cur: &[f64], next: &mut [f64], acc: &mut [f64], comp: &mut [f64], reach: usize) -> f64 {
        if self.d == 1 {
            return self.slab(cur, Slab { out: next, acc, comp }, &[], reach);
        }
        let len = self.strides[0];
        let masses: Vec<f64> = next
            .par_chunks_mut(len)
            .zip(acc.par_chunks_mut(len))
            .zip(comp.par_chunks_mut(len))
            .enumerate()
            .take(reach + 1)
            .map(|(a0, ((out, acc), comp))| self.slab(cur, Slab { out, acc, comp }, &[a0], reach))
            .collect();
        masses.iter().sum()
    }

    /// Fills one slab with leading coordinates `lead`, returning its unfolded weight.
    fn slab(&self, cur: &[f64], s: Slab<'_>, lead: &[usize], reach: usize) -> f64 {
        let d = self.d;
        let l = self.radius;
        let r = self.range;
        let mut a = vec![0usize; d];
        a[..lead.len()].copy_from_slice(lead);
        let base: usize = lead.iter().zip(self.strides).map(|(v, st)| v * st).sum();
        let interior = |v: usize| v >= r && v + r <= l;
        let mut mass = Kahan::new();
        let mid = d - lead.len() - 1;
        let mut m = vec![0usize; mid];
        loop {
            for (i, &v) in m.iter().enumerate() {
                a[lead.len() + i] = v;
            }
            let row_base: usize = a[..d - 1].iter().zip(self.strides).map(|(v, st)| v * st).sum();
            let lo = row_base - base;
            // interior segment of the row needs no folding and no bounds checks
            let hi = reach.min(l.saturating_sub(r));
            let (seg_lo, seg_hi) = if l >= r && a[..d - 1].iter().all(|&v| interior(v)) && r <= hi {
                (r, hi)
            } else {
                (reach + 1, reach)
            };
            for last in (0..=reach).filter(|&v| v < seg_lo || v > seg_hi) {
                a[d - 1] = last;
                s.out[lo + last] = self.folded(cur, &a);
            }
            if seg_lo <= seg_hi {
                let out = &mut s.out[lo + seg_lo..=lo + seg_hi];
                out.fill(0.0);
                for ((_, w), &off) in self.support.iter().zip(self.offsets) {
                    let src = (row_base + seg_lo) as isize - off;
                    let src = &cur[src as usize..src as usize + out.len()];
                    for (o, c) in out.iter_mut().zip(src) {
                        *o += w * c;
                    }
                }
            }
            let row = &s.out[lo..=lo + reach];
            let acc = &mut s.acc[lo..=lo + reach];
            let comp = &mut s.comp[lo..=lo + reach];
            for ((x, t), c) in row.iter().zip(acc.iter_mut()).zip(comp.iter_mut()) {
                let y = x - *c;
                let sum = *t + y;
                *c = (sum - *t) - y;
                *t = sum;
            }
            let weight = (1u64 << a[..d - 1].iter().filter(|&&v| v != 0).count()) as f64;
            mass.add(weight * (row[0] + 2.0 * row[1..].iter().sum::<f64>()));
            // advance the middle multi-index within [0..=reach]
            let mut j = mid;
            loop {
                if j == 0 {
                    return mass.value();
                }
                j -= 1;
                m[j] += 1;
                if m[j] <= reach {
                    break;
                }
                m[j] = 0;
            }
        }
    }

    fn folded(&self, cur: &[f64], a: &[usize]) -> f64 {
        let mut s = 0.0;
        'terms: for (y, w) in self.support {
            let mut idx = 0;
            for j in 0..self.d {
                let v = (a[j] as i64 - y[j]).unsigned_abs() as usize;
                if v > self.radius {
                    continue 'terms;
                }
                idx += v * self.strides[j];
            }
            s += w * cur[idx];
        }
        s
    }
}

/// Series values at the given points, with the box chosen automatically.
pub fn green_series(kernel: &Kernel, z: f64, points: &[Point], opts: SeriesOptions) -> Result<Vec<GreenEval>> {
    check_points(kernel, points)?;
    let xmax = points.iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
    let radius = match opts.radius {
        Some(r) => r,
        None => auto_radius(kernel, z, xmax, opts.tol)?,
    };
    let field = series_field(kernel, z, radius, opts.tol, opts.mem)?;
    points.iter().map(|p| field.eval(p)).collect()
}

fn check_points(kernel: &Kernel, points: &[Point]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.len() != kernel.dim()) {
        return Err(invalid(format!("point {p:?} does not match kernel dimension {}", kernel.dim())));
    }
    Ok(())
}

/// Default number of grid points per axis for the torus quadrature.
pub fn default_grid(d: usize) -> usize {
    match d {
        1 => 512,
        2 => 256,
        3 => 64,
        _ => 32,
    }
}

/// Trapezoid values of `S^(nu)(x) = S(x) e^{nu.x}` on the periodic grid `(Z/n)^d`.
#[derive(Debug, Clone)]
pub struct QuadratureTable {
    d: usize,
    n: usize,
    tilt: Vec<f64>,
    values: Vec<f64>,
    /// `max_k |1 / (1 - z D^(nu)(k))|`, which sets the rounding floor.
    pub peak: f64,
}

impl QuadratureTable {
    pub fn grid(&self) -> usize {
        self.n
    }

    /// `S^(nu)(x)` (aliased by the grid period).
    pub fn tilted_value(&self, x: &[i64]) -> f64 {
        let n = self.n as i64;
        let idx = x.iter().fold(0usize, |acc, &v| acc * self.n + v.rem_euclid(n) as usize);
        self.values[idx]
    }

    /// `S(x)`, for `||x||_inf < n/2`.
    pub fn value(&self, x: &[i64]) -> f64 {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.tilted_value(x) * (-dot(&self.tilt, &xf)).exp()
    }

    fn rounding_floor(&self, x: &[i64]) -> f64 {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        64.0 * f64::EPSILON * self.peak * ((self.d as f64) * (self.n as f64).ln()).sqrt() * (-dot(&self.tilt, &xf)).exp()
    }
}

/// Computes the tilted trapezoid table with `n` points per axis.
pub fn quadrature_table(kernel: &Kernel, z: f64, tilt: &[f64], n: usize, mem: MemoryCap) -> Result<QuadratureTable> {
    let d = kernel.dim();
    if tilt.len() != d {
        return Err(invalid("tilt has the wrong dimension"));
    }
    if n < 4 || n > MAX_GRID || !n.is_power_of_two() {
        return Err(invalid(format!("grid size must be a power of two in 4..={MAX_GRID}, got {n}")));
    }
    let pairs = kernel.tilted_pairs(z, tilt)?;
    let gap0 = 1.0 - pairs.at_zero();
    if gap0 <= CHI_MARGIN {
        return Err(Error::Precondition(format!(
            "z D^(nu)(0) = {} is not below 1; the tilt must lie inside the tilt domain",
            1.0 - gap0
        )));
    }
    let total = n.checked_pow(d as u32).ok_or_else(|| invalid("grid too large"))?;
    mem.check(total as u64 * 16 * 2)?;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut data = vec![Complex64::new(0.0, 0.0); total];
    let peaks: Vec<f64> = data
        .par_chunks_mut(n)
        .enumerate()
        .map(|(row, chunk)| {
            let mut k = vec![0.0; d];
            let mut r = row;
            for j in (0..d - 1).rev() {
                k[j] = h * (r % n) as f64;
                r /= n;
            }
            let mut peak = 0.0_f64;
            for (i, c) in chunk.iter_mut().enumerate() {
                k[d - 1] = h * i as f64;
                let f = (Complex64::new(1.0, 0.0) - pairs.at(&k)).inv();
                peak = peak.max(f.norm());
                *c = f;
            }
            peak
        })
        .collect();
    let peak = peaks.iter().fold(0.0_f64, |a, &b| a.max(b));
    ifft_nd(&mut data, n, d);
    let scale = 1.0 / total as f64;
    let values = data.iter().map(|c| c.re * scale).collect();
    Ok(QuadratureTable { d, n, tilt: tilt.to_vec(), values, peak })
}

/// In-place unnormalised inverse DFT along every axis, via repeated last-axis
/// transforms and cyclic axis rotation.
fn ifft_nd(data: &mut Vec<Complex64>, n: usize, d: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
    for _ in 0..d {
        data.par_chunks_mut(n).for_each(|line| fft.process(line));
        if d == 1 {
            break;
        }
        // rotate axes: new[i_last, rest] = old[rest, i_last]
        let rest = data.len() / n;
        buf.par_chunks_mut(rest).enumerate().for_each(|(il, out)| {
            for (r, o) in out.iter_mut().enumerate() {
                *o = data[r * n + il];
            }
        });
        std::mem::swap(data, &mut buf);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureOptions {
    pub n_grid: Option<usize>,
    /// Relative tolerance on each value, floored at the rounding level.
    pub tol: f64,
    /// Exponential tilt `nu`; must lie inside the tilt domain.
    pub tilt: Option<Vec<f64>>,
    pub mem: MemoryCap,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { n_grid: None, tol: 1e-10, tilt: None, mem: MemoryCap::default() }
    }
}

/// Torus quadrature with Richardson-style error `|Q_n - Q_{n/2}|`, doubling `n` until
/// the estimate meets the tolerance.
pub fn green_quadrature(kernel: &Kernel, z: f64, points: &[Point], opts: &QuadratureOptions) -> Result<Vec<GreenEval>> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, points)?;
    let d = kernel.dim();
    let tilt = opts.tilt.clone().unwrap_or_else(|| vec![0.0; d]);
    let xmax = points.iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
    let mut n = opts.n_grid.unwrap_or_else(|| default_grid(d)).max(8);
    n = n.next_power_of_two();
    while n < 4 * (xmax + 1) {
        n *= 2;
    }
    if n > MAX_GRID {
        return Err(invalid(format!("points too far for a grid of at most {MAX_GRID} per axis")));
    }
    let mut coarse = quadrature_table(kernel, z, &tilt, n / 2, opts.mem)?;
    loop {
        let fine = quadrature_table(kernel, z, &tilt, n, opts.mem)?;
        let evals: Vec<GreenEval> = points
            .iter()
            .map(|p| {
                let v = fine.value(p);
                let err = (v - coarse.value(p)).abs().max(fine.rounding_floor(p));
                GreenEval { x: p.clone(), z, value: v, method: GreenMethod::Quadrature, error: err }
            })
            .collect();
        let ok = evals.iter().all(|e| e.error <= opts.tol * e.value.abs() || e.error <= fine.rounding_floor(&e.x));
        if ok {
            return Ok(evals);
        }
        let worst = evals.iter().map(|e| e.error / e.value.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        if n * 2 > MAX_GRID || opts.mem.check(((2 * n) as u64).pow(d as u32) * 32).is_err() {
            return Err(Error::QuadratureUnresolved { tol: opts.tol, estimate: worst, suggested_grid: n * 2 });
        }
        coarse = fine;
        n *= 2;
    }
}

/// Oracle with preference exact_1d > series > quadrature; the series is skipped when its
/// estimated work exceeds [`SERIES_WORK_BUDGET`].
pub fn green_oracle(kernel: &Kernel, z: f64, points: &[Point], tol: f64, mem: MemoryCap) -> Result<Vec<GreenEval>> {
    wulff::check_z(kernel, z)?;
    check_points(kernel, points)?;
    if is_nn_1d(kernel) && z < 1.0 {
        return points
            .iter()
            .map(|p| {
                let v = green_exact_1d(z, p[0])?;
                Ok(GreenEval { x: p.clone(), z, value: v, method: GreenMethod::Exact1d, error: 4.0 * f64::EPSILON * v })
            })
            .collect();
    }
    let xmax = points.iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
    if let Ok(radius) = auto_radius(kernel, z, xmax, tol) {
        let cells = ((radius + 1) as u64).saturating_pow(kernel.dim() as u32);
        if series_work(kernel, z, radius, tol) <= SERIES_WORK_BUDGET && mem.check(cells * 32).is_ok() {
            return green_series(kernel, z, points, SeriesOptions { tol, radius: Some(radius), mem });
        }
    }
    green_quadrature(kernel, z, points, &QuadratureOptions { mem, ..Default::default() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Susceptibility {
    Finite(f64),
    Infinite,
}

/// `chi^(mu)(z) = 1 / (1 - z D^(mu)(0))`, infinite once `z D^(mu)(0) >= 1 - CHI_MARGIN`.
pub fn tilted_susceptibility(kernel: &Kernel, z: f64, mu: &[f64]) -> Result<Susceptibility> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(invalid("z must be positive and finite"));
    }
    let v = match kernel.tilted_value(z, mu) {
        Ok(v) => v,
        Err(Error::TailTruncation { .. }) => return Ok(Susceptibility::Infinite),
        Err(e) => return Err(e),
    };
    if v >= 1.0 - CHI_MARGIN {
        Ok(Susceptibility::Infinite)
    } else {
        Ok(Susceptibility::Finite(1.0 / (1.0 - v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiReport {
    pub phi: f64,
    pub xi: f64,
    /// `sum |x|^phi S(x)`
    pub moment: f64,
    /// `sum S(x)`
    pub chi: f64,
    pub radius: usize,
    pub steps: usize,
    /// Relative error bound on `xi`.
    pub relative_error: f64,
}

/// `xi_phi = (sum |x|^phi S / sum S)^{1/phi}` from series values on a box large enough
/// that the tail bound `S(x) <= chi e^{-m ||x||_inf}` makes the remainder below `tol`.
pub fn xi_phi(kernel: &Kernel, z: f64, phi: f64, tol: f64, mem: MemoryCap) -> Result<XiReport> {
    Ok(xi_phis(kernel, z, &[phi], tol, mem)?.remove(0))
}

/// Several moment orders from one shared series field.
pub fn xi_phis(kernel: &Kernel, z: f64, phis: &[f64], tol: f64, mem: MemoryCap) -> Result<Vec<XiReport>> {
    wulff::check_z(kernel, z)?;
    if phis.is_empty() || phis.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(invalid("phi must be positive"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid("tol must lie in (0, 1)"));
    }
    let d = kernel.dim() as f64;
    let m = wulff::mass(kernel, z)?;
    let chi = 1.0 / (1.0 - z * kernel.total_weight());
    let scales = phis
        .iter()
        .map(|&phi| Ok(crate::brownian::a_phi(phi, kernel.dim())? * chi * m.powf(-phi) / 2.0))
        .collect::<Result<Vec<f64>>>()?;
    // sum over ||x||_inf > l of |x|^power chi e^{-m ||x||_inf}
    let tail = |l: usize, power: f64| -> f64 {
        let mut acc = 0.0;
        let mut r = l as f64 + 1.0;
        loop {
            let term = chi * 2.0 * d * (2.0 * r + 1.0).powf(d - 1.0) * (d.sqrt() * r).powf(power) * (-m * r).exp();
            acc += term;
            // terms now shrink at least geometrically
            let ratio = ((r + 1.0) / r).powf(d - 1.0 + power) * (-m).exp();
            if ratio < 1.0 && term * ratio / (1.0 - ratio) < 1e-3 * acc {
                return acc * 1.001;
            }
            r += 1.0;
            if r > 1e7 {
                return f64::INFINITY;
            }
        }
    };
    let mut l = 1usize;
    while tail(l, 0.0) > 0.25 * tol * chi
        || phis.iter().zip(&scales).any(|(&phi, &sc)| tail(l, phi) > 0.25 * tol * sc)
    {
        l += 1;
        if l > 100_000 {
            return Err(invalid("correlation length too large for the series box"));
        }
    }
    let series_tol = phis
        .iter()
        .zip(&scales)
        .map(|(&phi, &sc)| 0.25 * tol * sc / (d.sqrt() * l as f64).powf(phi))
        .fold(0.25 * tol, f64::min);
    let field = series_field(kernel, z, l, series_tol, mem)?;
    let total = field.sum();
    let e_sum = field.sum_error() + tail(l, 0.0);
    Ok(phis
        .iter()
        .map(|&phi| {
            let reach = (d.sqrt() * l as f64).powf(phi);
            let moment = field.weighted_sum(|x| {
                let r2: f64 = x.iter().map(|&v| (v * v) as f64).sum();
                r2.powf(phi / 2.0)
            });
            let e_mom = field.sum_error() * reach + tail(l, phi);
            XiReport {
                phi,
                xi: (moment / total).powf(1.0 / phi),
                moment,
                chi: total,
                radius: l,
                steps: field.steps,
                relative_error: (e_mom / moment + e_sum / total) / phi,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationReport {
    pub p: f64,
    pub z: f64,
    /// `1 / sum_x D(x) e^x`
    pub z_sat: f64,
    /// Mass from the boundary equation, reported for `z >= z_sat`.
    pub mass: Option<f64>,
    pub saturated: bool,
    /// Ornstein-Zernike decay is expected: `z > z_sat`, or `z = z_sat` with `p > 3`.
    pub oz_regime: bool,
    /// `(x, S_z(x) / (z D(x)))` for `x = 1..=x_max`.
    pub ratios: Vec<(i64, f64)>,
}

/// Saturation diagnostics for `D(x) = c_p |x|^{-p} e^{-|x|}` on Z.
pub fn saturation_probe(p: f64, z: f64, x_max: usize, mem: MemoryCap) -> Result<SaturationReport> {
    let kernel = Kernel::saturation_1d(p)?;
    wulff::check_z(&kernel, z)?;
    if x_max == 0 {
        return Err(invalid("x_max must be positive"));
    }
    let z_sat = 1.0 / kernel.tilted_value(1.0, &[1.0])?;
    let at_threshold = (z - z_sat).abs() <= 1e-12 * z_sat;
    let (mass, saturated) = match wulff::mass(&kernel, z) {
        Ok(m) => (Some(m), false),
        Err(Error::Saturated { .. }) => (None, true),
        Err(e) => return Err(e),
    };
    let oz_regime = (z > z_sat && !at_threshold) || (at_threshold && p > 3.0);
    let t = kernel.tail().copied().expect("saturation kernel has a tail");
    let smallest = z * t.weight(x_max as u64);
    let tol = (1e-10 * smallest).max(f64::MIN_POSITIVE * 1e10);
    let points: Vec<Point> = (1..=x_max as i64).map(|x| vec![x]).collect();
    let radius = auto_radius(&kernel, z, x_max, tol)?;
    let field = series_field(&kernel, z, radius, tol, mem)?;
    let ratios = points
        .iter()
        .map(|x| {
            let s = field.value(x).unwrap_or(f64::NAN);
            (x[0], s / (z * t.weight(x[0].unsigned_abs())))
        })
        .collect();
    Ok(SaturationReport { p, z, z_sat, mass, saturated, oz_regime, ratios })
}
