//! Model parameters and the concave rate-bound family.
//!
//! The state drifts upward at rate `mu` with volatility `sigma`; payouts are
//! discounted at rate `q`. The admissible payout rate at state `x` is capped
//! by a nondecreasing concave function `F` with `F(0) >= 0`. Below zero every
//! bound is evaluated through its affine extension `F(0) + F'(0+) x`, which
//! keeps the controlled dynamics Lipschitz on the whole line.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{hermite, pchip_slopes, segment_index};

/// Diffusion and discounting parameters (all strictly positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, q: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParams(format!("mu must be > 0, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParams(format!("q must be > 0, got {q}")));
        }
        Ok(Self { mu, sigma, q })
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied bound: value and derivative closures valid on `[0, x_max]`,
/// linearly extended beyond, affinely extended below zero.
#[derive(Clone)]
pub struct CustomBound {
    value: RealFn,
    deriv: RealFn,
    /// F(0)
    pub value0: f64,
    /// F'(0+)
    pub slope0: f64,
    /// right edge of the validated range; evaluation beyond continues linearly
    pub x_max: f64,
    ext_value: f64,
    ext_slope: f64,
}

impl fmt::Debug for CustomBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBound")
            .field("value0", &self.value0)
            .field("slope0", &self.slope0)
            .field("x_max", &self.x_max)
            .finish()
    }
}

/// The concave rate-bound family.
#[derive(Debug, Clone)]
pub enum BoundFn {
    /// F(x) = R
    Constant { r: f64 },
    /// F(x) = K x
    Linear { k: f64 },
    /// F(x) = R + K x
    Affine { k: f64, r: f64 },
    /// F(x) = min(K x, R), kinked at x = R/K
    CappedLinear { k: f64, r: f64 },
    /// validated user bound
    Custom(CustomBound),
}

/// Number of sample points used to validate custom bounds.
pub const CUSTOM_VALIDATION_POINTS: usize = 1024;

impl BoundFn {
    pub fn constant(r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidBound(format!("constant level R = {r} < 0")));
        }
        Ok(BoundFn::Constant { r })
    }

    pub fn linear(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidBound(format!("slope K = {k} must be > 0")));
        }
        Ok(BoundFn::Linear { k })
    }

    pub fn affine(k: f64, r: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidBound(format!("slope K = {k} must be > 0")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidBound(format!("level R = {r} must be >= 0")));
        }
        Ok(BoundFn::Affine { k, r })
    }

    pub fn capped_linear(k: f64, r: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidBound(format!("slope K = {k} must be > 0")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidBound(format!(
                "cap R = {r} must be > 0 (use the constant bound for R = 0)"
            )));
        }
        Ok(BoundFn::CappedLinear { k, r })
    }

    /// Build a custom bound from closures, validating monotonicity, concavity
    /// and `F(0) >= 0` on a sampled grid over `[0, x_max]`.
    pub fn custom<F, G>(value: F, deriv: G, x_max: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::InvalidBound(format!(
                "validation range x_max = {x_max} must be > 0"
            )));
        }
        let n = CUSTOM_VALIDATION_POINTS;
        let xs: Vec<f64> = (0..n).map(|i| x_max * (i as f64) / ((n - 1) as f64)).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| value(x)).collect();
        validate_samples(&xs, &vals)?;
        let value0 = vals[0];
        let slope0 = deriv(0.0);
        if !(slope0.is_finite() && slope0 >= 0.0) {
            return Err(Error::InvalidBound(format!(
                "right slope at 0 must be finite and >= 0, got {slope0}"
            )));
        }
        let ext_value = value(x_max);
        let ext_slope = deriv(x_max).max(0.0);
        Ok(BoundFn::Custom(CustomBound {
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            value0,
            slope0,
            x_max,
            ext_value,
            ext_slope,
        }))
    }

    /// Build a custom bound from a table of (x, F(x)) samples starting at
    /// x = 0, interpolated with the monotone cubic (pchip) scheme and extended
    /// linearly past the last node.
    pub fn from_table(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 3 {
            return Err(Error::InvalidBound(format!(
                "tabulated bound needs >= 3 aligned samples, got {} x {}",
                xs.len(),
                ys.len()
            )));
        }
        if (xs[0]).abs() > 1e-12 {
            return Err(Error::InvalidBound(format!(
                "tabulated bound must start at x = 0, got {}",
                xs[0]
            )));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidBound(
                    "tabulated x grid must be strictly increasing".into(),
                ));
            }
        }
        validate_samples(xs, ys)?;
        // secants must be nonincreasing for the table itself to be concave
        let mut prev_secant = f64::MAX;
        for i in 0..xs.len() - 1 {
            let s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
            if s > prev_secant + 1e-12 {
                return Err(Error::InvalidBound(format!(
                    "tabulated bound is not concave near x = {}",
                    xs[i]
                )));
            }
            prev_secant = s;
        }
        let slopes = pchip_slopes(xs, ys);
        let nodes = xs.to_vec();
        let vals = ys.to_vec();
        let n = nodes.len();
        let x_max = nodes[n - 1];
        let slope0 = slopes[0];
        let value0 = vals[0];
        let ext_value = vals[n - 1];
        let last_secant = (vals[n - 1] - vals[n - 2]) / (nodes[n - 1] - nodes[n - 2]);
        let ext_slope = slopes[n - 1].min(last_secant).max(0.0);
        let (nodes_d, vals_d, slopes_d) = (nodes.clone(), vals.clone(), slopes.clone());
        let value = move |x: f64| -> f64 {
            let i = segment_index(&nodes, x);
            hermite(
                x,
                nodes[i],
                nodes[i + 1],
                vals[i],
                vals[i + 1],
                slopes[i],
                slopes[i + 1],
            )
            .0
        };
        let deriv = move |x: f64| -> f64 {
            let i = segment_index(&nodes_d, x);
            hermite(
                x,
                nodes_d[i],
                nodes_d[i + 1],
                vals_d[i],
                vals_d[i + 1],
                slopes_d[i],
                slopes_d[i + 1],
            )
            .1
        };
        Ok(BoundFn::Custom(CustomBound {
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            value0,
            slope0,
            x_max,
            ext_value,
            ext_slope,
        }))
    }

    /// F(x), with the affine extension below zero and linear continuation past
    /// a custom bound's validated range.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.value_at_zero() + self.right_slope_at_zero() * x;
        }
        match self {
            BoundFn::Constant { r } => *r,
            BoundFn::Linear { k } => k * x,
            BoundFn::Affine { k, r } => r + k * x,
            BoundFn::CappedLinear { k, r } => (k * x).min(*r),
            BoundFn::Custom(c) => {
                if x <= c.x_max {
                    (c.value)(x)
                } else {
                    c.ext_value + c.ext_slope * (x - c.x_max)
                }
            }
        }
    }

    /// F'(x); returns F'(0+) for x <= 0 and the left derivative at a kink.
    pub fn deriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.right_slope_at_zero();
        }
        match self {
            BoundFn::Constant { .. } => 0.0,
            BoundFn::Linear { k } | BoundFn::Affine { k, .. } => *k,
            BoundFn::CappedLinear { k, r } => {
                if x <= r / k {
                    *k
                } else {
                    0.0
                }
            }
            BoundFn::Custom(c) => {
                if x <= c.x_max {
                    (c.deriv)(x)
                } else {
                    c.ext_slope
                }
            }
        }
    }

    /// F(0).
    pub fn value_at_zero(&self) -> f64 {
        match self {
            BoundFn::Constant { r } | BoundFn::Affine { r, .. } => *r,
            BoundFn::Linear { .. } | BoundFn::CappedLinear { .. } => 0.0,
            BoundFn::Custom(c) => c.value0,
        }
    }

    /// F'(0+), the slope of the extension below zero.
    pub fn right_slope_at_zero(&self) -> f64 {
        match self {
            BoundFn::Constant { .. } => 0.0,
            BoundFn::Linear { k } | BoundFn::Affine { k, .. } | BoundFn::CappedLinear { k, .. } => {
                *k
            }
            BoundFn::Custom(c) => c.slope0,
        }
    }

    /// True when the bound has a derivative jump (the capped-linear kink);
    /// surfaced in output metadata.
    pub fn is_kinked(&self) -> bool {
        matches!(self, BoundFn::CappedLinear { .. })
    }

    /// Location of the derivative jump, if any; solvers align their mesh to it.
    pub fn kink(&self) -> Option<f64> {
        match self {
            BoundFn::CappedLinear { k, r } => Some(r / k),
            _ => None,
        }
    }

    /// True when F is identically zero, in which case no payout is ever
    /// admissible and the value function vanishes.
    pub fn is_degenerate_zero(&self) -> bool {
        match self {
            BoundFn::Constant { r } => *r == 0.0,
            _ => false,
        }
    }
}

fn validate_samples(xs: &[f64], vals: &[f64]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBound("bound evaluates to a non-finite value".into()));
    }
    if vals[0] < -1e-12 {
        return Err(Error::InvalidBound(format!("F(0) = {} < 0", vals[0])));
    }
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let slack = 1e-12 * scale;
    for i in 0..xs.len() - 1 {
        if vals[i + 1] < vals[i] - slack {
            return Err(Error::InvalidBound(format!(
                "bound is decreasing near x = {}",
                xs[i]
            )));
        }
    }
    // concavity via the chord test on consecutive triples
    for i in 1..xs.len() - 1 {
        let lam = (xs[i + 1] - xs[i]) / (xs[i + 1] - xs[i - 1]);
        let chord = lam * vals[i - 1] + (1.0 - lam) * vals[i + 1];
        if vals[i] < chord - slack {
            return Err(Error::InvalidBound(format!(
                "bound is not concave near x = {}",
                xs[i]
            )));
        }
    }
    Ok(())
}
