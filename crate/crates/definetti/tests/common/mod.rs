//! Shared helpers and independent oracles for the integration suites.

use definetti::model::{BoundFn, ModelParams};

pub fn params(mu: f64, sigma: f64, q: f64) -> ModelParams {
    ModelParams::new(mu, sigma, q).unwrap()
}

pub fn grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
        .collect()
}

/// RK4 integration of (sigma^2/2) f'' + mu f' - q f = 0 with f(0) = 0,
/// f'(0) = 1; returns f at the requested grid points (which must be
/// multiples of the step within rounding).
pub fn rk4_psi_on_grid(p: &ModelParams, xs: &[f64], h: f64) -> Vec<f64> {
    let acc = |f: f64, v: f64| (v, 2.0 / (p.sigma * p.sigma) * (p.q * f - p.mu * v));
    let mut out = Vec::with_capacity(xs.len());
    let (mut f, mut v) = (0.0f64, 1.0f64);
    let mut x = 0.0f64;
    for &target in xs {
        while x < target - 0.5 * h {
            let (k1f, k1v) = acc(f, v);
            let (k2f, k2v) = acc(f + 0.5 * h * k1f, v + 0.5 * h * k1v);
            let (k3f, k3v) = acc(f + 0.5 * h * k2f, v + 0.5 * h * k2v);
            let (k4f, k4v) = acc(f + h * k3f, v + h * k3v);
            f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            x += h;
        }
        out.push(f);
    }
    out
}

/// Smooth concave upper approximation of min(Kx, R): a log-sum-exp softened
/// minimum shifted up by its own defect, so F_a >= min(Kx, R) with
/// sup gap ln(2)/a. Differentiable, increasing, concave; converges to the
/// capped-linear bound as a grows.
pub fn smoothed_capped(k: f64, r: f64, a: f64, x_max: f64) -> BoundFn {
    let value = move |x: f64| -> f64 {
        // m - ln(e^{-a(u-m)} + e^{-a(r-m)})/a + ln(2)/a with m = min(u, r);
        // one exponent is 1, the other at most 1, so the sum is in (1, 2]
        let u = k * x;
        let m = u.min(r);
        let s = (-(a * (u - m))).exp() + (-(a * (r - m))).exp();
        m - s.ln() / a + std::f64::consts::LN_2 / a
    };
    let deriv = move |x: f64| -> f64 {
        let t = a * (k * x - r);
        let w = if t > 0.0 {
            let e = (-t).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + t.exp())
        };
        k * w
    };
    BoundFn::custom(value, deriv, x_max).unwrap()
}
