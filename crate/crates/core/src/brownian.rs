//! Continuum Green functions: Brownian motion with drift and the massive Laplacian.

use serde::Serialize;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::numeric::{norm2, Spd};

/// Below this value of `a b` with `nu > 0` the small-argument limit of `K_nu` is used.
pub const SMALL_AB: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BesselMethod {
    ClosedFormHalfInteger,
    Integral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesselEval {
    /// `K_nu(x)`
    pub value: f64,
    /// `e^x K_nu(x)`, finite where `value` underflows.
    pub scaled: f64,
    pub method: BesselMethod,
    pub error_estimate: f64,
}

/// Modified Bessel function of the second kind.
///
/// Half-integer orders `+-1/2` use `sqrt(pi / 2x) e^{-x}`. Other orders integrate
/// `K_nu(x) = 1/2 (x/2)^nu int_0^inf u^{-nu-1} e^{-u - x^2/(4u)} du` after `u = (x/2) e^s`,
/// which gives the even, doubly exponentially decaying integrand
/// `cosh(nu s) e^{-x (cosh s - 1)}` for `e^x K_nu(x)`; the trapezoid rule on it converges
/// geometrically and is refined by step halving.
pub fn bessel_k(nu: f64, x: f64) -> Result<BesselEval> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid(format!("bessel_k needs x > 0, got {x}")));
    }
    if !nu.is_finite() {
        return Err(invalid("bessel_k needs a finite order"));
    }
    if (nu.abs() - 0.5).abs() < 1e-15 {
        let scaled = (std::f64::consts::PI / (2.0 * x)).sqrt();
        return Ok(BesselEval {
            value: scaled * (-x).exp(),
            scaled,
            method: BesselMethod::ClosedFormHalfInteger,
            error_estimate: 0.0,
        });
    }
    let (scaled, err) = scaled_integral(nu.abs(), x)?;
    Ok(BesselEval { value: scaled * (-x).exp(), scaled, method: BesselMethod::Integral, error_estimate: err })
}

/// `K_nu(x)` from the integral representation for every order, half-integers included.
pub fn bessel_k_integral(nu: f64, x: f64) -> Result<BesselEval> {
    if !(x > 0.0 && x.is_finite()) || !nu.is_finite() {
        return Err(invalid(format!("bessel_k needs x > 0 and a finite order, got ({nu}, {x})")));
    }
    let (scaled, err) = scaled_integral(nu.abs(), x)?;
    Ok(BesselEval { value: scaled * (-x).exp(), scaled, method: BesselMethod::Integral, error_estimate: err })
}

fn scaled_integral(nu: f64, x: f64) -> Result<(f64, f64)> {
    let log_g = |s: f64| -> f64 {
        // log cosh(nu s) without overflow
        let a = nu * s;
        let lc = a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2;
        lc - x * (s.cosh() - 1.0)
    };
    // peak where x sinh s = nu
    let s_peak = (nu / x).asinh();
    let log_max = log_g(s_peak);
    let mut upper = s_peak.max(1.0);
    while log_g(upper) > log_max - 46.0 {
        upper *= 1.25;
        if upper > 800.0 {
            return Err(Error::NoConvergence { solver: "bessel_k range", iterations: 0, residual: f64::NAN });
        }
    }
    let g = |s: f64| (log_g(s) - log_max).exp();
    // trapezoid on [0, upper] for an even integrand, halving the step
    let mut h = upper / 16.0;
    let mut n = 16usize;
    let mut sum = 0.5 * g(0.0) + (1..=n).map(|i| g(i as f64 * h)).sum::<f64>();
    let mut est = h * sum;
    for _ in 0..24 {
        let mid: f64 = (0..n).map(|i| g((i as f64 + 0.5) * h)).sum();
        sum += mid;
        h *= 0.5;
        n *= 2;
        let next = h * sum;
        let diff = (next - est).abs();
        est = next;
        if diff <= 1e-15 * next {
            return Ok((est * log_max.exp(), diff * log_max.exp()));
        }
    }
    Err(Error::NoConvergence { solver: "bessel_k quadrature", iterations: 24, residual: f64::NAN })
}

/// `rho_t(x; eta, Lambda)`, the Gaussian density of Brownian motion with drift `eta`
/// and covariance `Lambda` at time `t`.
pub fn heat_kernel(t: f64, x: &[f64], eta: &[f64], lambda: &Spd) -> Result<f64> {
    let d = x.len();
    if eta.len() != d || lambda.dim() != d {
        return Err(invalid("x, eta and Lambda must share a dimension"));
    }
    if !(t > 0.0) {
        return Err(invalid("heat kernel needs t > 0"));
    }
    let r: Vec<f64> = x.iter().zip(eta).map(|(xi, ei)| xi - t * ei).collect();
    let q = lambda.inv_form(&r, &r);
    Ok((-q / (2.0 * t)).exp() / (lambda.det().sqrt() * (2.0 * std::f64::consts::PI * t).powf(d as f64 / 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenEval {
    pub value: f64,
    /// `nu = (d - 2) / 2`
    pub nu: f64,
    /// `a = sqrt(eta . Lambda^{-1} eta)`
    pub a: f64,
    /// `b = sqrt(x . Lambda^{-1} x)`
    pub b: f64,
    pub small_argument: bool,
}

/// `2 / ((2 pi)^{d/2} sqrt(det)) (a/b)^nu K_nu(a b) e^{exponent}`, with the `a -> 0` limit
/// `Gamma(nu) 2^nu b^{-2 nu} / ((2 pi)^{d/2} sqrt(det))` for `nu > 0`.
fn bessel_form(d: usize, a: f64, b: f64, det: f64, exponent: f64) -> Result<GreenEval> {
    let nu = (d as f64 - 2.0) / 2.0;
    let pref = 2.0 / ((2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det.sqrt());
    if !(b > 0.0) {
        return Err(invalid("Green function needs x != 0"));
    }
    if a * b < SMALL_AB && nu > 0.0 {
        let value = pref * 0.5 * gamma(nu) * 2f64.powf(nu) * b.powf(-2.0 * nu) * exponent.exp();
        return Ok(GreenEval { value, nu, a, b, small_argument: true });
    }
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("zero drift gives an infinite Green function in d = {d}")));
    }
    let k = bessel_k(nu, a * b)?;
    let value = pref * (a / b).powf(nu) * k.scaled * (exponent - a * b).exp();
    Ok(GreenEval { value, nu, a, b, small_argument: false })
}

/// `C(x; eta, Lambda) = int_0^inf rho_t(x; eta, Lambda) dt` in Bessel form.
pub fn brownian_green(x: &[f64], eta: &[f64], lambda: &Spd) -> Result<GreenEval> {
    let d = x.len();
    if eta.len() != d || lambda.dim() != d {
        return Err(invalid("x, eta and Lambda must share a dimension"));
    }
    let a = lambda.inv_form(eta, eta).max(0.0).sqrt();
    let b = lambda.inv_form(x, x).max(0.0).sqrt();
    let c = lambda.inv_form(x, eta);
    bessel_form(d, a, b, lambda.det(), c)
}

/// `G_a(x) = int_0^inf (2 pi t)^{-d/2} e^{-|x|^2/(2t)} e^{-t a^2/2} dt`.
pub fn massive_green(a: f64, x: &[f64]) -> Result<GreenEval> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid("mass parameter must be finite and non-negative"));
    }
    if x.is_empty() {
        return Err(invalid("x must be non-empty"));
    }
    bessel_form(x.len(), a, norm2(x), 1.0, 0.0)
}

/// `Gamma(b + delta) / Gamma(b)`, exact as a product when `delta` is a small integer.
fn gamma_ratio(b: f64, delta: f64) -> f64 {
    if delta >= 0.0 && delta.fract() == 0.0 && delta <= 64.0 {
        (0..delta as usize).map(|i| b + i as f64).product()
    } else {
        (ln_gamma(b + delta) - ln_gamma(b)).exp()
    }
}

/// `A_phi = 2^{phi+1} Gamma((phi+2)/2) Gamma((phi+d)/2) / Gamma(d/2)`, the universal
/// constant in `sum |x|^phi S_z(x) ~ A_phi chi m^{-phi}`.
pub fn a_phi(phi: f64, d: usize) -> Result<f64> {
    if !(phi >= 0.0 && phi.is_finite()) || d == 0 {
        return Err(invalid("a_phi needs phi >= 0 and d >= 1"));
    }
    let half = phi / 2.0;
    Ok(2f64.powf(phi + 1.0) * gamma_ratio(1.0, half) * gamma_ratio(d as f64 / 2.0, half))
}

/// `B(x; eta) = max(|eta|, 1/|x|)^{(d-3)/2} / |x|^{(d-1)/2}`.
pub fn envelope(x: &[f64], eta: &[f64]) -> Result<f64> {
    if x.len() != eta.len() || x.is_empty() {
        return Err(invalid("x and eta must share a nonzero dimension"));
    }
    let r = norm2(x);
    if !(r > 0.0) {
        return Err(invalid("envelope needs x != 0"));
    }
    let d = x.len() as f64;
    Ok(norm2(eta).max(1.0 / r).powf((d - 3.0) / 2.0) / r.powf((d - 1.0) / 2.0))
}
