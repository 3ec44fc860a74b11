//! Shared numerical kernels: adaptive Gauss-Kronrod quadrature, bracketed
//! root finding, Ridders extrapolated differentiation, cubic Hermite
//! evaluation, monotone (pchip) slopes and order-independent summation.

use crate::error::{Error, Result};

// 15-point Kronrod / 7-point Gauss abscissae and weights on [-1, 1]
// (positive half; QUADPACK dqk15 constants).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod 15/7 panel on [a, b]; returns (integral, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h.abs())
}

/// Adaptive quadrature of `f` over [a, b] to absolute tolerance `tol`.
///
/// Bisects panels whose Kronrod-Gauss discrepancy exceeds their share of the
/// budget. Smooth integrands converge in a handful of panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || tol <= 0.0 {
        return Err(Error::Domain {
            op: "integrate",
            msg: format!("bad interval [{a}, {b}] or tolerance {tol}"),
        });
    }
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, tol.max(1e-300))];
    let mut panels = 0usize;
    while let Some((lo, hi, budget)) = stack.pop() {
        panels += 1;
        if panels > 20_000 {
            return Err(Error::NonConvergence {
                rounds: panels,
                history: vec![budget],
            });
        }
        let (val, err) = gk15(&f, lo, hi);
        let width = hi - lo;
        if err <= budget || width.abs() < 1e-14 * (b - a).abs() {
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * budget));
            stack.push((mid, hi, 0.5 * budget));
        }
    }
    Ok(total)
}

/// Brent's method on a sign-change bracket [a, b]. `fa`, `fb` are f at the ends.
pub fn brent<F: Fn(f64) -> f64>(
    f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket {
            op: "brent",
            msg: format!("no sign change: f({a}) = {fa}, f({b}) = {fb}"),
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = b - a;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic / secant step
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else if xm > 0.0 {
            tol1
        } else {
            -tol1
        };
        fb = f(b);
    }
    Ok(b)
}

/// Scan [a, b] on `n` uniform cells; report the first sign-change cell and the
/// total number of sign changes of `f` seen on the scan grid.
pub fn scan_sign_changes<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    n: usize,
) -> (Option<(f64, f64, f64, f64)>, usize) {
    let mut first = None;
    let mut count = 0usize;
    let mut x_prev = a;
    let mut f_prev = f(a);
    for i in 1..=n {
        let x = a + (b - a) * (i as f64) / (n as f64);
        let fx = f(x);
        if f_prev == 0.0 || f_prev.signum() != fx.signum() {
            count += 1;
            if first.is_none() {
                first = Some((x_prev, x, f_prev, fx));
            }
        }
        x_prev = x;
        f_prev = fx;
    }
    (first, count)
}

/// Ridders' polynomial-extrapolated central difference; returns (f'(x), error estimate).
pub fn ridders_deriv<F: Fn(f64) -> f64>(f: F, x: f64, h0: f64) -> (f64, f64) {
    const NTAB: usize = 12;
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut hh = h0;
    a[0][0] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
    let mut ans = a[0][0];
    let mut err = f64::MAX;
    for i in 1..NTAB {
        hh /= CON;
        a[0][i] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let errt = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (ans, err)
}

/// Cubic Hermite segment evaluation: value, first and second derivative at `x`
/// on [x0, x1] with end data (f0, d0), (f1, d1).
pub fn hermite(x: f64, x0: f64, x1: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> (f64, f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let v = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * f1
        + (t3 - t2) * h * d1;
    let dv = ((6.0 * t2 - 6.0 * t) * f0
        + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
        + (-6.0 * t2 + 6.0 * t) * f1
        + (3.0 * t2 - 2.0 * t) * h * d1)
        / h;
    let ddv = ((12.0 * t - 6.0) * f0
        + (6.0 * t - 4.0) * h * d0
        + (-12.0 * t + 6.0) * f1
        + (6.0 * t - 2.0) * h * d1)
        / (h * h);
    (v, dv, ddv)
}

/// Fritsch-Carlson monotone slopes for tabulated data (the pchip choice).
pub fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && ys.len() == n);
    let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    // one-sided endpoint slopes, clipped to preserve monotonicity
    let end_slope = |d0: f64, d1: f64, h0: f64, h1: f64| -> f64 {
        let m0 = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if m0 * d0 <= 0.0 {
            0.0
        } else if d0 * d1 < 0.0 && m0.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            m0
        }
    };
    if n == 2 {
        m[0] = delta[0];
        m[1] = delta[0];
    } else {
        m[0] = end_slope(delta[0], delta[1], h[0], h[1]);
        m[n - 1] = end_slope(delta[n - 2], delta[n - 3], h[n - 2], h[n - 3]);
    }
    m
}

/// Order-independent pairwise sum (identical result for any chunk schedule).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Locate an index i with nodes[i] <= x < nodes[i+1] (clamped to the ends).
pub fn segment_index(nodes: &[f64], x: f64) -> usize {
    match nodes.binary_search_by(|n| n.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(nodes.len() - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(nodes.len() - 2),
    }
}
