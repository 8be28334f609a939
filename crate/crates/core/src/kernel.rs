//! Lattice step kernels `D` on Z^d and their exponentially tilted transforms.
//!
//! Kernels are stored as one representative per hyperoctahedral orbit. The expanded
//! support is built on first use and kept in canonical (lexicographic) order, which
//! fixes the summation order of every lattice sum.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{dot, hurwitz_zeta, Kahan, KahanComplex};

pub type Point = Vec<i64>;

/// Relative size of the discarded tail of an infinite-range kernel.
pub const TAIL_TOL: f64 = 1e-12;
const TAIL_MAX_RADIUS: u64 = 50_000_000;
/// Tilts within this distance of the tail decay rate are treated as lying on it.
const TAIL_EDGE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Nn,
    LinfBox,
    PerturbedNn,
    Saturation1d,
}

impl KernelName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Self::Nn),
            "linf_box" => Ok(Self::LinfBox),
            "perturbed_nn" => Ok(Self::PerturbedNn),
            "saturation_1d" => Ok(Self::Saturation1d),
            other => Err(Error::UnknownKernel(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nn => "nn",
            Self::LinfBox => "linf_box",
            Self::PerturbedNn => "perturbed_nn",
            Self::Saturation1d => "saturation_1d",
        }
    }
}

/// One symmetry orbit: every member carries the same weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Orbit {
    pub representative: Point,
    pub weight: f64,
    pub size: usize,
}

/// `D(x) = c |x|^{-p} e^{-|x|}` for `x != 0` in one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerExpTail {
    pub c: f64,
    pub p: f64,
}

impl PowerExpTail {
    pub fn weight(&self, x: u64) -> f64 {
        let xf = x as f64;
        self.c * xf.powf(-self.p) * (-xf).exp()
    }
}

/// Result of summing a tilted kernel: value, first and second moments, and a bound on
/// what was discarded by truncating an infinite support.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedSums {
    pub value: Complex64,
    pub eta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub truncation_error: f64,
}

/// `eta = grad` and `lambda = Hessian` of `mu -> J^(mu)(0)`, with `value = J^(mu)(0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub value: f64,
    pub eta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub truncation_error: f64,
}

/// Empirical estimates of the constants in the class-Q bounds. These are grid
/// estimates of infima and suprema, not certified constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QClassReport {
    pub nonnegative: bool,
    pub symmetric: bool,
    pub zeta: f64,
    /// `max(||J^(mu)||_1, || |y|^(2+zeta) J^(mu) ||_1)`
    pub m_estimate: f64,
    /// `min_k Re[J^(mu)(0) - J^(mu)(k)] / |k|^2` over the nonzero grid points.
    pub kir_estimate: f64,
    pub grid: usize,
    pub truncation_error: f64,
}

/// See [`Kernel::tilted_pairs`].
#[derive(Debug, Clone)]
pub struct TiltedPairs {
    pub origin: f64,
    pub pairs: Vec<(Vec<f64>, f64, f64)>,
    pub truncation_error: f64,
}

impl TiltedPairs {
    #[inline]
    pub fn at(&self, k: &[f64]) -> Complex64 {
        let mut re = self.origin;
        let mut im = 0.0;
        for (y, c, s) in &self.pairs {
            let b = dot(k, y);
            let (sn, cs) = b.sin_cos();
            re += c * cs;
            im -= s * sn;
        }
        Complex64::new(re, im)
    }

    pub fn at_zero(&self) -> f64 {
        self.origin + self.pairs.iter().map(|p| p.1).sum::<f64>()
    }
}

#[derive(Debug)]
struct Expanded {
    support: Vec<(Point, f64)>,
    /// One member of each `{y, -y}` pair, `y != 0`, first nonzero coordinate positive.
    half: Vec<(Point, f64)>,
    origin: f64,
}

#[derive(Debug)]
pub struct Kernel {
    d: usize,
    name: Option<KernelName>,
    params: BTreeMap<String, f64>,
    orbits: Vec<Orbit>,
    tail: Option<PowerExpTail>,
    expanded: OnceLock<Expanded>,
}

impl Clone for Kernel {
    fn clone(&self) -> Self {
        Self {
            d: self.d,
            name: self.name,
            params: self.params.clone(),
            orbits: self.orbits.clone(),
            tail: self.tail,
            expanded: OnceLock::new(),
        }
    }
}

/// Builds one of the named kernels. `params` may hold `alpha` (perturbed_nn) or `p`
/// (saturation_1d).
pub fn make_named_kernel(name: &str, d: usize, params: &BTreeMap<String, f64>) -> Result<Kernel> {
    let kind = KernelName::parse(name)?;
    let known: &[&str] = match kind {
        KernelName::PerturbedNn => &["alpha"],
        KernelName::Saturation1d => &["p"],
        _ => &[],
    };
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(invalid(format!("kernel {} takes no parameter `{k}`", kind.as_str())));
    }
    match kind {
        KernelName::Nn => Kernel::nn(d),
        KernelName::LinfBox => Kernel::linf_box(d),
        KernelName::PerturbedNn => {
            if d != 2 {
                return Err(invalid("perturbed_nn is defined for d = 2 only"));
            }
            let alpha = *params
                .get("alpha")
                .ok_or_else(|| invalid("perturbed_nn needs parameter alpha"))?;
            Kernel::perturbed_nn(alpha)
        }
        KernelName::Saturation1d => {
            if d != 1 {
                return Err(invalid("saturation_1d is defined for d = 1 only"));
            }
            let p = *params.get("p").ok_or_else(|| invalid("saturation_1d needs parameter p"))?;
            Kernel::saturation_1d(p)
        }
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > 8 {
        return Err(invalid(format!("dimension must be in 1..=8, got {d}")));
    }
    Ok(())
}

impl Kernel {
    /// Simple random walk: mass `1/(2d)` on each of `+-e_j`.
    pub fn nn(d: usize) -> Result<Self> {
        check_dim(d)?;
        let mut rep = vec![0; d];
        rep[0] = 1;
        Self::from_orbits(d, Some(KernelName::Nn), BTreeMap::new(), vec![(rep, 1.0 / (2 * d) as f64)], None)
    }

    /// Uniform on the `l^infty` unit box `{-1,0,1}^d`, origin included.
    pub fn linf_box(d: usize) -> Result<Self> {
        check_dim(d)?;
        let w = 3f64.powi(-(d as i32));
        let reps = (0..=d)
            .map(|k| ((0..d).map(|j| i64::from(j < k)).collect::<Point>(), w))
            .collect();
        Self::from_orbits(d, Some(KernelName::LinfBox), BTreeMap::new(), reps, None)
    }

    /// `(1-alpha)/4` on `+-e_j` and `alpha/4` on `(+-1, +-1)`.
    pub fn perturbed_nn(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let params = BTreeMap::from([("alpha".to_string(), alpha)]);
        let mut reps = vec![(vec![1, 1], alpha / 4.0)];
        if alpha < 1.0 {
            reps.insert(0, (vec![1, 0], (1.0 - alpha) / 4.0));
        }
        Self::from_orbits(2, Some(KernelName::PerturbedNn), params, reps, None)
    }

    /// `c_p |x|^{-p} e^{-|x|}` on `x != 0` in one dimension.
    pub fn saturation_1d(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid(format!("saturation_1d needs p > 1, got {p}")));
        }
        let mut acc = Kahan::new();
        let mut x = 1u64;
        loop {
            let t = (x as f64).powf(-p) * (-(x as f64)).exp();
            acc.add(t);
            if t < 1e-20 * acc.value() {
                break;
            }
            x += 1;
        }
        let c = 0.5 / acc.value();
        let params = BTreeMap::from([("p".to_string(), p)]);
        Self::from_orbits(1, Some(KernelName::Saturation1d), params, Vec::new(), Some(PowerExpTail { c, p }))
    }

    /// Kernel from explicit points and weights. With `symmetry_closure` each point is a
    /// representative whose orbit receives its weight; otherwise the support must already
    /// be symmetric.
    pub fn from_points(d: usize, points: &[Point], weights: &[f64], symmetry_closure: bool, normalize: bool) -> Result<Self> {
        check_dim(d)?;
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidKernel("points and weights must be non-empty and of equal length".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::InvalidKernel(format!("point {p:?} does not have dimension {d}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidKernel(format!("weight {w} must be finite and non-negative")));
        }
        let mut by_rep: BTreeMap<Point, f64> = BTreeMap::new();
        if symmetry_closure {
            for (p, &w) in points.iter().zip(weights) {
                if by_rep.insert(canonical_rep(p), w).is_some() {
                    return Err(Error::InvalidKernel(format!("point {p:?} repeats an orbit already listed")));
                }
            }
        } else {
            let mut given: BTreeMap<Point, f64> = BTreeMap::new();
            for (p, &w) in points.iter().zip(weights) {
                if given.insert(p.clone(), w).is_some() {
                    return Err(Error::InvalidKernel(format!("point {p:?} listed twice")));
                }
            }
            for (p, &w) in &given {
                for q in orbit_points(p) {
                    match given.get(&q) {
                        Some(&wq) if (wq - w).abs() <= 1e-12 * w.max(wq) => {}
                        _ => {
                            return Err(Error::InvalidKernel(format!(
                                "support is not invariant under lattice symmetries: {p:?} vs {q:?}"
                            )))
                        }
                    }
                }
                by_rep.entry(canonical_rep(p)).or_insert(w);
            }
        }
        by_rep.retain(|_, w| *w > 0.0);
        let mut reps: Vec<(Point, f64)> = by_rep.into_iter().collect();
        let total: f64 = reps.iter().map(|(r, w)| w * orbit_points(r).len() as f64).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidKernel("kernel has zero total weight".into()));
        }
        if normalize {
            for (_, w) in reps.iter_mut() {
                *w /= total;
            }
        } else if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidKernel(format!(
                "weights sum to {total}, not 1; set normalize to rescale"
            )));
        }
        let k = Self::from_orbits(d, None, BTreeMap::new(), reps, None)?;
        if !k.generates_lattice() {
            log::warn!("kernel support lies in a proper sublattice of Z^{d}");
        }
        Ok(k)
    }

    /// Reads a kernel description from JSON: either `{"name", "d", "params"}` or
    /// `{"d", "points", "weights", "symmetry_closure", "normalize"}`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged, deny_unknown_fields)]
        enum KernelFile {
            Named {
                name: String,
                d: usize,
                #[serde(default)]
                params: BTreeMap<String, f64>,
            },
            Explicit {
                d: usize,
                points: Vec<Point>,
                weights: Vec<f64>,
                #[serde(default)]
                symmetry_closure: bool,
                #[serde(default)]
                normalize: bool,
            },
        }
        let f: KernelFile = serde_json::from_str(s)
            .map_err(|e| Error::InvalidKernel(format!("unrecognised kernel file: {e}")))?;
        match f {
            KernelFile::Named { name, d, params } => make_named_kernel(&name, d, &params),
            KernelFile::Explicit { d, points, weights, symmetry_closure, normalize } => {
                Self::from_points(d, &points, &weights, symmetry_closure, normalize)
            }
        }
    }

    /// The description accepted by [`Kernel::from_json_str`] that rebuilds this kernel.
    pub fn to_json(&self) -> serde_json::Value {
        match self.name {
            Some(n) => serde_json::json!({ "name": n.as_str(), "d": self.d, "params": self.params }),
            None => serde_json::json!({
                "d": self.d,
                "points": self.orbits.iter().map(|o| &o.representative).collect::<Vec<_>>(),
                "weights": self.orbits.iter().map(|o| o.weight).collect::<Vec<_>>(),
                "symmetry_closure": true,
            }),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&s)
    }

    fn from_orbits(
        d: usize,
        name: Option<KernelName>,
        params: BTreeMap<String, f64>,
        reps: Vec<(Point, f64)>,
        tail: Option<PowerExpTail>,
    ) -> Result<Self> {
        if tail.is_some() && d != 1 {
            return Err(Error::InvalidKernel("infinite-range tails are one-dimensional only".into()));
        }
        let mut orbits: Vec<Orbit> = reps
            .into_iter()
            .map(|(r, w)| {
                let rep = canonical_rep(&r);
                let size = orbit_points(&rep).len();
                Orbit { representative: rep, weight: w, size }
            })
            .collect();
        orbits.sort_by(|a, b| {
            let na = a.representative.iter().map(|v| v.abs()).max().unwrap_or(0);
            let nb = b.representative.iter().map(|v| v.abs()).max().unwrap_or(0);
            na.cmp(&nb).then_with(|| a.representative.cmp(&b.representative))
        });
        Ok(Self { d, name, params, orbits, tail, expanded: OnceLock::new() })
    }

    fn expanded(&self) -> &Expanded {
        self.expanded.get_or_init(|| {
            let mut all: BTreeMap<Point, f64> = BTreeMap::new();
            for o in &self.orbits {
                for p in orbit_points(&o.representative) {
                    all.insert(p, o.weight);
                }
            }
            let zero = vec![0; self.d];
            let origin = all.get(&zero).copied().unwrap_or(0.0);
            let half = all
                .iter()
                .filter(|(p, _)| p.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0))
                .map(|(p, &w)| (p.clone(), w))
                .collect();
            Expanded { support: all.into_iter().collect(), half, origin }
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn name(&self) -> Option<KernelName> {
        self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn orbits(&self) -> &[Orbit] {
        &self.orbits
    }

    pub fn tail(&self) -> Option<&PowerExpTail> {
        self.tail.as_ref()
    }

    /// Finite part of the support with weights, in canonical order.
    pub fn support(&self) -> &[(Point, f64)] {
        &self.expanded().support
    }

    /// Largest `||y||_inf` in the finite part of the support.
    pub fn range(&self) -> i64 {
        self.orbits
            .iter()
            .flat_map(|o| o.representative.iter().map(|v| v.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Tilts are admissible only for `||mu||_inf` up to this value.
    pub fn tilt_limit(&self) -> Option<f64> {
        self.tail.map(|_| 1.0)
    }

    pub fn weight_at(&self, x: &[i64]) -> f64 {
        if x.len() != self.d {
            return 0.0;
        }
        if let Some(t) = &self.tail {
            return if x[0] == 0 { 0.0 } else { t.weight(x[0].unsigned_abs()) };
        }
        let rep = canonical_rep(x);
        self.orbits
            .iter()
            .find(|o| o.representative == rep)
            .map_or(0.0, |o| o.weight)
    }

    pub fn total_weight(&self) -> f64 {
        self.tilted_sums(1.0, &vec![0.0; self.d], None, 0)
            .map(|s| s.value.re)
            .unwrap_or(f64::NAN)
    }

    /// `sigma^2 = sum |y|^2 D(y)`.
    pub fn second_moment(&self) -> Result<f64> {
        let m = self.moments(1.0, &vec![0.0; self.d])?;
        Ok((0..self.d).map(|j| m.lambda[j][j]).sum())
    }

    /// Finite kernel agreeing with this one on `|x| <= radius` (tails only).
    pub fn truncated(&self, radius: u64) -> Result<Self> {
        let Some(t) = self.tail else {
            return Ok(self.clone());
        };
        if radius == 0 {
            return Err(invalid("truncation radius must be positive"));
        }
        let reps = (1..=radius as i64).map(|x| (vec![x], t.weight(x as u64))).collect();
        Self::from_orbits(1, None, BTreeMap::new(), reps, None)
    }

    /// True when the support generates all of Z^d as a group.
    pub fn generates_lattice(&self) -> bool {
        if self.tail.is_some() {
            return true;
        }
        let pts: Vec<Point> = self.support().iter().map(|(p, _)| p.clone()).collect();
        generates_full_lattice(self.d, &pts)
    }

    /// `z sum_y D(y) e^{mu.y} e^{-i k.y}`.
    pub fn tilted_transform(&self, z: f64, mu: &[f64], k: &[f64]) -> Result<Complex64> {
        if k.len() != self.d {
            return Err(invalid("wave vector has the wrong dimension"));
        }
        Ok(self.tilted_sums(z, mu, Some(k), 0)?.value)
    }

    /// `z D^(mu)(0)`, the tilted total weight.
    pub fn tilted_value(&self, z: f64, mu: &[f64]) -> Result<f64> {
        Ok(self.tilted_sums(z, mu, None, 0)?.value.re)
    }

    pub fn moments(&self, z: f64, mu: &[f64]) -> Result<Moments> {
        let s = self.tilted_sums(z, mu, None, 2)?;
        Ok(Moments { value: s.value.re, eta: s.eta, lambda: s.lambda, truncation_error: s.truncation_error })
    }

    /// Core lattice sum. `order` selects how many moments to accumulate (0, 1 or 2);
    /// moments are only formed at `k = 0`.
    pub fn tilted_sums(&self, z: f64, mu: &[f64], k: Option<&[f64]>, order: u8) -> Result<TiltedSums> {
        let d = self.d;
        if mu.len() != d {
            return Err(invalid(format!("tilt has dimension {} but kernel has {d}", mu.len())));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("tilt must be finite"));
        }
        let order = if k.is_some() { 0 } else { order };
        let ex = self.expanded();
        let mut val = KahanComplex::default();
        let mut eta: Vec<Kahan> = vec![Kahan::new(); if order >= 1 { d } else { 0 }];
        let mut lam: Vec<Kahan> = vec![Kahan::new(); if order >= 2 { d * d } else { 0 }];
        val.add(Complex64::new(ex.origin, 0.0));
        for (y, w) in &ex.half {
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let a = dot(mu, &yf);
            let (ch, sh) = (a.cosh(), a.sinh());
            match k {
                Some(k) => {
                    let b = dot(k, &yf);
                    val.add(Complex64::new(2.0 * w * ch * b.cos(), -2.0 * w * sh * b.sin()));
                }
                None => val.add(Complex64::new(2.0 * w * ch, 0.0)),
            }
            for j in 0..eta.len() {
                eta[j].add(2.0 * w * sh * yf[j]);
            }
            if order >= 2 {
                for i in 0..d {
                    for j in 0..d {
                        lam[i * d + j].add(2.0 * w * ch * yf[i] * yf[j]);
                    }
                }
            }
        }
        let mut truncation_error = 0.0;
        if let Some(t) = &self.tail {
            truncation_error = self.add_tail(t, mu[0], k.map(|k| k[0]), order, &mut val, &mut eta, &mut lam)?;
        }
        let value = val.value() * z;
        let eta: Vec<f64> = eta.iter().map(|e| z * e.value()).collect();
        let lambda: Vec<Vec<f64>> = (0..if order >= 2 { d } else { 0 })
            .map(|i| (0..d).map(|j| z * lam[i * d + j].value()).collect())
            .collect();
        Ok(TiltedSums { value, eta, lambda, truncation_error: z * truncation_error })
    }

    #[allow(clippy::too_many_arguments)]
    fn add_tail(
        &self,
        t: &PowerExpTail,
        mu: f64,
        k: Option<f64>,
        order: u8,
        val: &mut KahanComplex,
        eta: &mut [Kahan],
        lam: &mut [Kahan],
    ) -> Result<f64> {
        let s = mu.abs();
        let q = f64::from(order);
        if s > 1.0 + TAIL_EDGE {
            return Err(Error::TailTruncation {
                tilt: mu,
                reason: "tilt exceeds the tail decay rate 1; the tilted kernel is not summable".into(),
            });
        }
        let on_edge = s >= 1.0 - TAIL_EDGE;
        let sgn = if mu < 0.0 { -1.0 } else { 1.0 };
        // pair (x, -x): c x^-p (e^{(s-1)x} +- e^{-(s+1)x})
        let mut push = |x: u64, grow: f64, decay: f64| {
            let xf = x as f64;
            let base = t.c * xf.powf(-t.p);
            let (e_up, e_dn) = (base * grow, base * decay);
            match k {
                Some(kk) => {
                    let b = kk * xf;
                    val.add(Complex64::new((e_up + e_dn) * b.cos(), -sgn * (e_up - e_dn) * b.sin()));
                }
                None => val.add(Complex64::new(e_up + e_dn, 0.0)),
            }
            if order >= 1 {
                eta[0].add(sgn * (e_up - e_dn) * xf);
            }
            if order >= 2 {
                lam[0].add((e_up + e_dn) * xf * xf);
            }
        };
        if on_edge {
            if k.is_some_and(|kk| kk != 0.0) {
                return Err(Error::TailTruncation {
                    tilt: mu,
                    reason: "oscillatory sum at the tail decay rate converges too slowly to meet tolerance".into(),
                });
            }
            if t.p - q <= 1.0 {
                return Err(Error::TailTruncation {
                    tilt: mu,
                    reason: format!("moment of order {order} diverges at the tail decay rate for p = {}", t.p),
                });
            }
            const DIRECT: u64 = 64;
            for x in 1..=DIRECT {
                push(x, 1.0, (-2.0 * x as f64).exp());
            }
            // remaining terms: polynomial part summed in closed form, e^{-2x} part negligible
            let a = (DIRECT + 1) as f64;
            val.add(Complex64::new(t.c * hurwitz_zeta(t.p, a), 0.0));
            if order >= 1 {
                eta[0].add(sgn * t.c * hurwitz_zeta(t.p - 1.0, a));
            }
            if order >= 2 {
                lam[0].add(t.c * hurwitz_zeta(t.p - 2.0, a));
            }
            return Ok(t.c * (-2.0 * a).exp() * a.powf(q - t.p) / (1.0 - (-2.0f64).exp()));
        }
        let eps = 1.0 - s;
        let first = t.c * (-eps).exp();
        let (r, bound) = tail_radius(t.c, t.p - q, eps, TAIL_TOL * first)?;
        for x in 1..=r {
            let xf = x as f64;
            push(x, (-eps * xf).exp(), (-(1.0 + s) * xf).exp());
        }
        Ok(bound)
    }

    /// Precomputed `(y, 2zD(y)cosh(mu.y), 2zD(y)sinh(mu.y))` over one member of each
    /// `{y, -y}` pair, for repeated evaluation of `z D^(mu)(k)` at many `k`.
    pub fn tilted_pairs(&self, z: f64, mu: &[f64]) -> Result<TiltedPairs> {
        if mu.len() != self.d {
            return Err(invalid("tilt has the wrong dimension"));
        }
        let ex = self.expanded();
        let mut pairs: Vec<(Vec<f64>, f64, f64)> = ex
            .half
            .iter()
            .map(|(y, w)| {
                let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
                let a = dot(mu, &yf);
                (yf, 2.0 * z * w * a.cosh(), 2.0 * z * w * a.sinh())
            })
            .collect();
        let mut truncation_error = 0.0;
        if let Some(t) = &self.tail {
            let s = mu[0].abs();
            if s >= 1.0 - TAIL_EDGE {
                return Err(Error::TailTruncation {
                    tilt: mu[0],
                    reason: "Fourier sums need a tilt strictly below the tail decay rate".into(),
                });
            }
            let eps = 1.0 - s;
            let (r, bound) = tail_radius(t.c, t.p, eps, TAIL_TOL * t.c * (-eps).exp())?;
            let sgn = if mu[0] < 0.0 { -1.0 } else { 1.0 };
            for x in 1..=r {
                let xf = x as f64;
                let base = z * t.c * xf.powf(-t.p);
                let (up, dn) = (base * (-eps * xf).exp(), base * (-(1.0 + s) * xf).exp());
                pairs.push((vec![xf], up + dn, sgn * (up - dn)));
            }
            truncation_error = z * bound;
        }
        Ok(TiltedPairs { origin: z * ex.origin, pairs, truncation_error })
    }

    /// Class-Q diagnostics for `J = zD` tilted by `mu`.
    pub fn q_class_check(&self, z: f64, mu: &[f64], zeta: f64, n_grid: usize) -> Result<QClassReport> {
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(invalid("zeta must be positive"));
        }
        if n_grid < 4 {
            return Err(invalid("q_class_check needs n_grid >= 4"));
        }
        let d = self.d;
        let nonnegative = self.orbits.iter().all(|o| o.weight >= 0.0) && z >= 0.0;
        let symmetric = true;
        let base = self.tilted_sums(z, mu, None, 0)?;
        let (moment, merr) = self.radial_moment(z, mu, 2.0 + zeta)?;
        let m_estimate = base.value.re.abs().max(moment);
        let j0 = base.value.re;
        let table = self.tilted_pairs(z, mu)?;
        let total = n_grid.pow(d as u32);
        let h = 2.0 * std::f64::consts::PI / n_grid as f64;
        let mut kir = f64::INFINITY;
        let mut idx = vec![0usize; d];
        let mut kv = vec![0.0; d];
        for _ in 0..total {
            for j in 0..d {
                kv[j] = -std::f64::consts::PI + h * idx[j] as f64;
            }
            let k2: f64 = kv.iter().map(|v| v * v).sum();
            if k2 > 0.0 {
                let jk = table.at(&kv);
                kir = kir.min((j0 - jk.re) / k2);
            }
            for j in 0..d {
                idx[j] += 1;
                if idx[j] < n_grid {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(QClassReport {
            nonnegative,
            symmetric,
            zeta,
            m_estimate,
            kir_estimate: kir,
            grid: n_grid,
            truncation_error: base.truncation_error + merr,
        })
    }

    /// `z sum_y |y|^q D(y) e^{mu.y}` with Euclidean `|y|`.
    fn radial_moment(&self, z: f64, mu: &[f64], q: f64) -> Result<(f64, f64)> {
        let mut acc = Kahan::new();
        for (y, w) in self.support() {
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let r = yf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 0.0 {
                acc.add(w * r.powf(q) * dot(mu, &yf).exp());
            }
        }
        let mut err = 0.0;
        if let Some(t) = &self.tail {
            let s = mu[0].abs();
            if s > 1.0 + TAIL_EDGE {
                return Err(Error::TailTruncation { tilt: mu[0], reason: "tilt exceeds the tail decay rate 1".into() });
            }
            if s >= 1.0 - TAIL_EDGE {
                if t.p - q <= 1.0 {
                    return Err(Error::TailTruncation {
                        tilt: mu[0],
                        reason: format!("moment of order {q} diverges at the tail decay rate"),
                    });
                }
                for x in 1..=64u64 {
                    let xf = x as f64;
                    acc.add(t.c * xf.powf(q - t.p) * (1.0 + (-2.0 * xf).exp()));
                }
                acc.add(t.c * hurwitz_zeta(t.p - q, 65.0));
            } else {
                let eps = 1.0 - s;
                let (r, bound) = tail_radius(t.c, t.p - q, eps, TAIL_TOL * t.c * (-eps).exp())?;
                for x in 1..=r {
                    let xf = x as f64;
                    acc.add(t.c * xf.powf(q - t.p) * ((-eps * xf).exp() + (-(1.0 + s) * xf).exp()));
                }
                err = bound;
            }
        }
        Ok((z * acc.value(), z * err))
    }
}

/// Smallest `R` with `sum_{x>R} 2 c x^{-p} e^{-eps x} < tol`, using the better of a
/// geometric bound and a power-sum bound.
fn tail_radius(c: f64, p: f64, eps: f64, tol: f64) -> Result<(u64, f64)> {
    let bound = |r: u64| -> f64 {
        let a = (r + 1) as f64;
        let decay = (-eps * a).exp();
        let geometric = a.powf(-p.max(0.0)) * decay / (-(-eps).exp_m1());
        let geometric = if p < 0.0 {
            // x^{-p} grows; bound the ratio of consecutive terms instead
            let ratio = ((a + 1.0) / a).powf(-p) * (-eps).exp();
            if ratio < 1.0 { a.powf(-p) * decay / (1.0 - ratio) } else { f64::INFINITY }
        } else {
            geometric
        };
        let power = if p > 1.0 { decay * (a.powf(-p) + a.powf(1.0 - p) / (p - 1.0)) } else { f64::INFINITY };
        2.0 * c * geometric.min(power)
    };
    let mut hi = 16u64;
    while bound(hi) >= tol {
        if hi >= TAIL_MAX_RADIUS {
            return Err(Error::TailTruncation {
                tilt: 1.0 - eps,
                reason: format!("tail bound stays above {tol:e} up to radius {TAIL_MAX_RADIUS}"),
            });
        }
        hi = (hi * 2).min(TAIL_MAX_RADIUS);
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if bound(mid) < tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, bound(hi)))
}

/// Sorted absolute values, largest first.
pub fn canonical_rep(p: &[i64]) -> Point {
    let mut r: Point = p.iter().map(|v| v.abs()).collect();
    r.sort_unstable_by(|a, b| b.cmp(a));
    r
}

/// All images of `p` under coordinate permutations and sign flips.
pub fn orbit_points(p: &[i64]) -> Vec<Point> {
    let d = p.len();
    let mut out = BTreeSet::new();
    let mut perm: Vec<usize> = (0..d).collect();
    permute(&mut perm, 0, &mut |perm| {
        for mask in 0..(1u32 << d) {
            let q: Point = (0..d)
                .map(|j| {
                    let v = p[perm[j]];
                    if mask >> j & 1 == 1 { -v } else { v }
                })
                .collect();
            out.insert(q);
        }
    });
    out.into_iter().collect()
}

fn permute(perm: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == perm.len() {
        f(perm);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permute(perm, i + 1, f);
        perm.swap(i, j);
    }
}

/// Integer row reduction: the vectors generate Z^d iff the echelon pivots are all +-1.
pub fn generates_full_lattice(d: usize, points: &[Point]) -> bool {
    let mut basis: Vec<Option<Vec<i128>>> = vec![None; d];
    for p in points {
        let mut v: Vec<i128> = p.iter().map(|&x| x as i128).collect();
        for col in 0..d {
            if v[col] == 0 {
                continue;
            }
            match basis[col].take() {
                None => {
                    basis[col] = Some(v);
                    break;
                }
                Some(mut b) => {
                    while v[col] != 0 {
                        let q = b[col] / v[col];
                        for j in col..d {
                            b[j] -= q * v[j];
                        }
                        std::mem::swap(&mut b, &mut v);
                    }
                    basis[col] = Some(b);
                }
            }
        }
    }
    basis.iter().enumerate().all(|(c, b)| b.as_ref().is_some_and(|b| b[c].abs() == 1))
}

/// Maps a direction into the closed positive orthant with coordinates sorted in
/// decreasing order, remembering how to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

impl Canonical {
    pub fn of(x: &[f64]) -> (Vec<f64>, Self) {
        let d = x.len();
        let signs: Vec<f64> = x.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut perm: Vec<usize> = (0..d).collect();
        // stable order keeps ties deterministic
        perm.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
        let c = perm.iter().map(|&j| x[j].abs()).collect();
        (c, Self { perm, signs })
    }

    /// Inverse map applied to a vector expressed in canonical coordinates.
    pub fn restore(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, &j) in self.perm.iter().enumerate() {
            out[j] = v[i] * self.signs[j];
        }
        out
    }

    /// Inverse map on a symmetric matrix.
    pub fn restore_matrix(&self, m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = m.len();
        let mut out = vec![vec![0.0; d]; d];
        for (i, &a) in self.perm.iter().enumerate() {
            for (j, &b) in self.perm.iter().enumerate() {
                out[a][b] = m[i][j] * self.signs[a] * self.signs[b];
            }
        }
        out
    }
}
