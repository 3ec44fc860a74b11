//! Exact and semi-exact evaluation of every explicitly known function in the
//! problem: the scale-type function psi and its inflection point, the
//! parabolic cylinder function D_{-lambda}, the Ornstein-Uhlenbeck passage
//! transforms H_K^{(q)} and S(nu, x, y), and the closed forms for phi_F and
//! I_F under affine and capped-linear bounds.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{brent, integrate, ridders_deriv};

/// Characteristic roots of (sigma^2/2) r^2 + m r - q = 0 rearranged so that
/// `gamma` is the growth rate of the increasing mode e^{gamma x} and `theta`
/// the decay rate of the decreasing mode e^{-theta x} for a Brownian motion
/// with drift `m`. Both are positive; rationalized to avoid cancellation.
pub(crate) fn char_roots(m: f64, sigma: f64, q: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let disc = (m * m + 2.0 * q * s2).sqrt();
    let gamma = if m > 0.0 {
        2.0 * q / (disc + m)
    } else {
        (disc - m) / s2
    };
    let theta = if m < 0.0 {
        2.0 * q / (disc - m)
    } else {
        (disc + m) / s2
    };
    (gamma, theta)
}

/// psi for a Brownian motion with drift `m` (any sign), normalized psi'(0)=1.
pub(crate) fn psi_raw(m: f64, sigma: f64, q: f64, x: f64) -> f64 {
    let s2 = sigma * sigma;
    let disc = (m * m + 2.0 * q * s2).sqrt();
    let (gamma, theta) = char_roots(m, sigma, q);
    s2 / (2.0 * disc) * ((gamma * x).exp() - (-theta * x).exp())
}

pub(crate) fn psi_d1_raw(m: f64, sigma: f64, q: f64, x: f64) -> f64 {
    let s2 = sigma * sigma;
    let disc = (m * m + 2.0 * q * s2).sqrt();
    let (gamma, theta) = char_roots(m, sigma, q);
    s2 / (2.0 * disc) * (gamma * (gamma * x).exp() + theta * (-theta * x).exp())
}

pub(crate) fn psi_d2_raw(m: f64, sigma: f64, q: f64, x: f64) -> f64 {
    let s2 = sigma * sigma;
    let disc = (m * m + 2.0 * q * s2).sqrt();
    let (gamma, theta) = char_roots(m, sigma, q);
    s2 / (2.0 * disc)
        * (gamma * gamma * (gamma * x).exp() - theta * theta * (-theta * x).exp())
}

/// The increasing fundamental solution of (sigma^2/2) f'' + mu f' - q f = 0
/// with f(0) = 0, f'(0) = 1. Strictly increasing; concave below its inflection
/// point and convex above.
pub fn psi(params: &ModelParams, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain {
            op: "psi",
            msg: format!("x = {x} < 0"),
        });
    }
    Ok(psi_raw(params.mu, params.sigma, params.q, x))
}

pub fn psi_d1(params: &ModelParams, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain {
            op: "psi_d1",
            msg: format!("x = {x} < 0"),
        });
    }
    Ok(psi_d1_raw(params.mu, params.sigma, params.q, x))
}

pub fn psi_d2(params: &ModelParams, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain {
            op: "psi_d2",
            msg: format!("x = {x} < 0"),
        });
    }
    Ok(psi_d2_raw(params.mu, params.sigma, params.q, x))
}

/// Unique inflection point of psi, located by bisection on the analytic
/// second derivative. At the inflection point psi/psi' = mu/q.
pub fn psi_inflection(params: &ModelParams) -> Result<f64> {
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let f = |x: f64| psi_d2_raw(mu, sigma, q, x);
    // psi''(0) < 0 always; march right until the sign flips
    let mut hi = params.sigma / (2.0 * params.q).sqrt();
    let mut f_hi = f(hi);
    let mut guard = 0;
    while f_hi <= 0.0 {
        hi *= 2.0;
        f_hi = f(hi);
        guard += 1;
        if guard > 200 {
            return Err(Error::Bracket {
                op: "psi_inflection",
                msg: "psi'' never becomes positive".into(),
            });
        }
    }
    brent(f, 0.0, hi, f(0.0), f_hi, 1e-14, 200)
}

/// psi_tilde(x) = 1 + (2q/sigma^2) * integral of psi over [0, x], computed by
/// adaptive quadrature (absolute tolerance 1e-12).
pub fn psi_tilde(params: &ModelParams, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain {
            op: "psi_tilde",
            msg: format!("x = {x} < 0"),
        });
    }
    psi_tilde_raw(params.mu, params.sigma, params.q, x)
}

pub(crate) fn psi_tilde_raw(m: f64, sigma: f64, q: f64, x: f64) -> Result<f64> {
    let integral = integrate(|y| psi_raw(m, sigma, q, y), 0.0, x, 1e-12)?;
    Ok(1.0 + 2.0 * q / (sigma * sigma) * integral)
}

/// log of the integral representation of Gamma(lambda) e^{x^2/4} D_{-lambda}(x):
/// integral over t in (0, inf) of t^{lambda-1} e^{-x t - t^2/2} dt, evaluated
/// through the substitution t = e^s, which removes the endpoint singularity
/// and makes both tails decay exponentially.
fn ln_pc_integral(lambda: f64, x: f64, cutoff: f64, tol: f64) -> Result<f64> {
    let g = |s: f64| {
        let u = s.exp();
        lambda * s - x * u - 0.5 * u * u
    };
    // interior maximum at e^s = u*, the positive root of u^2 + x u - lambda = 0
    let u_star = if x > 0.0 {
        2.0 * lambda / (x + (x * x + 4.0 * lambda).sqrt())
    } else {
        0.5 * (-x + (x * x + 4.0 * lambda).sqrt())
    };
    let s_star = u_star.ln();
    let peak = g(s_star);
    let mut s_lo = s_star;
    let step = 0.5;
    let mut guard = 0;
    while g(s_lo) > peak - cutoff {
        s_lo -= step;
        guard += 1;
        if guard > 4000 {
            return Err(Error::NonConvergence {
                rounds: guard,
                history: vec![g(s_lo)],
            });
        }
    }
    let mut s_hi = s_star;
    guard = 0;
    while g(s_hi) > peak - cutoff {
        s_hi += step;
        guard += 1;
        if guard > 4000 {
            return Err(Error::NonConvergence {
                rounds: guard,
                history: vec![g(s_hi)],
            });
        }
    }
    let val = integrate(|s| (g(s) - peak).exp(), s_lo, s_hi, tol * (s_hi - s_lo))?;
    Ok(peak + val.ln())
}

/// ln D_{-lambda}(x); finite for every real x, so ratios of parabolic cylinder
/// values can be formed without overflow.
pub fn ln_parabolic_cylinder(lambda: f64, x: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            op: "parabolic_cylinder",
            msg: format!("lambda = {lambda} must be > 0"),
        });
    }
    Ok(-ln_gamma(lambda) - x * x / 4.0 + ln_pc_integral(lambda, x, 46.0, 5e-14)?)
}

/// The parabolic cylinder function D_{-lambda}(x), lambda > 0; positive for
/// all real x. Overflows for x large and negative (use the log form there).
pub fn parabolic_cylinder(lambda: f64, x: f64) -> Result<f64> {
    Ok(ln_parabolic_cylinder(lambda, x)?.exp())
}

/// Test oracle: same integral at twice the precision budget and a wider tail
/// cutoff. Kept next to the implementation so accuracy claims stay auditable.
pub fn parabolic_cylinder_oracle(lambda: f64, x: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            op: "parabolic_cylinder_oracle",
            msg: format!("lambda = {lambda} must be > 0"),
        });
    }
    Ok((-ln_gamma(lambda) - x * x / 4.0 + ln_pc_integral(lambda, x, 60.0, 5e-15)?).exp())
}

/// Derivative of D_{-lambda} from the contiguous recurrence
/// D'_{-lambda}(z) = -(z/2) D_{-lambda}(z) - lambda D_{-lambda-1}(z).
/// Test oracle for the finite-difference derivatives used in production.
#[cfg(test)]
pub(crate) fn parabolic_cylinder_deriv(lambda: f64, z: f64) -> Result<f64> {
    Ok(-(z / 2.0) * parabolic_cylinder(lambda, z)? - lambda * parabolic_cylinder(lambda + 1.0, z)?)
}

/// ln of H_K^{(q)}(x; m, sigma) = e^{K (x - m/K)^2 / (2 sigma^2)}
/// D_{-q/K}( ((x - m/K)/sigma) sqrt(2K) ).
///
/// `sigma` is signed: a negative value flips the argument of D_{-q/K} and
/// turns the decreasing eigenfunction into the increasing one.
pub fn ln_h_kq(x: f64, m: f64, sigma: f64, k: f64, q: f64) -> Result<f64> {
    if !(k > 0.0) || !(q > 0.0) || sigma == 0.0 {
        return Err(Error::Domain {
            op: "h_kq",
            msg: format!("need K > 0, q > 0, sigma != 0; got K={k}, q={q}, sigma={sigma}"),
        });
    }
    let c = x - m / k;
    let z = c / sigma * (2.0 * k).sqrt();
    Ok(k * c * c / (2.0 * sigma * sigma) + ln_parabolic_cylinder(q / k, z)?)
}

/// H_K^{(q)}(x; m, sigma); strictly positive.
pub fn h_kq(x: f64, m: f64, sigma: f64, k: f64, q: f64) -> Result<f64> {
    Ok(ln_h_kq(x, m, sigma, k, q)?.exp())
}

/// S(nu, x, y) = (Gamma(nu)/pi) e^{(x^2+y^2)/4}
///               (D_{-nu}(-x) D_{-nu}(y) - D_{-nu}(x) D_{-nu}(-y)).
/// Antisymmetric in (x, y); vanishes on the diagonal.
pub fn s_fn(nu: f64, x: f64, y: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain {
            op: "s_fn",
            msg: format!("nu = {nu} must be > 0"),
        });
    }
    let pref = ln_gamma(nu) - std::f64::consts::PI.ln() + (x * x + y * y) / 4.0;
    let term = |a: f64, b: f64| -> Result<f64> {
        Ok((pref + ln_parabolic_cylinder(nu, -a)? + ln_parabolic_cylinder(nu, b)?).exp())
    };
    Ok(term(x, y)? - term(y, x)?)
}

/// I_F for the purely linear bound F(x) = K x:
/// I_K(x) = (K/(q+K)) (x + mu/q), affine with slope in (0, 1).
pub fn i_k_closed(params: &ModelParams, k: f64, x: f64) -> f64 {
    k / (params.q + k) * (x + params.mu / params.q)
}

/// I_F for the affine bound F(x) = R + K x.
///
/// Substituting the affine ansatz a x + c into the generating equation
/// (sigma^2/2) f'' + (mu - F) f' - q f = -F forces a = K/(q+K) and
/// q c = a mu + R (1 - a), i.e. c = a mu / q + R/(q+K). At K -> 0 this
/// recovers the constant-bound identity I_F = R/q.
pub fn i_affine_closed(params: &ModelParams, k: f64, r: f64, x: f64) -> f64 {
    let a = k / (params.q + k);
    a * (x + params.mu / params.q) + r / (params.q + k)
}

/// phi_F for the affine bound, as the ratio
/// H_K^{(q)}(x; mu - R, sigma) / H_K^{(q)}(0; mu - R, sigma).
pub fn phi_affine(params: &ModelParams, k: f64, r: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain {
            op: "phi_affine",
            msg: format!("x = {x} < 0"),
        });
    }
    let m = params.mu - r;
    Ok((ln_h_kq(x, m, params.sigma, k, params.q)? - ln_h_kq(0.0, m, params.sigma, k, params.q)?)
        .exp())
}

/// d/dx phi_affine; phi' = phi * (ln H)'.
pub fn phi_affine_d1(params: &ModelParams, k: f64, r: f64, x: f64) -> Result<f64> {
    let m = params.mu - r;
    let sigma = params.sigma;
    let q = params.q;
    let (dln, _) = ridders_deriv(
        |t| ln_h_kq(t, m, sigma, k, q).unwrap_or(f64::NAN),
        x,
        0.05 * (1.0 + x.abs()),
    );
    Ok(phi_affine(params, k, r, x.max(0.0))? * dln)
}

/// Threshold quantity Delta = -H(0)/H'(0) for the affine bound; Delta > 0.
/// The derivative uses Ridders-extrapolated central differences on ln H.
pub fn delta_threshold(params: &ModelParams, k: f64, r: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain {
            op: "delta_threshold",
            msg: format!("K = {k} must be > 0"),
        });
    }
    let m = params.mu - r;
    let sigma = params.sigma;
    let q = params.q;
    let (dln, err) = ridders_deriv(
        |t| ln_h_kq(t, m, sigma, k, q).unwrap_or(f64::NAN),
        0.0,
        0.05,
    );
    if !dln.is_finite() || err > 1e-6 {
        return Err(Error::IllConditioned {
            op: "delta_threshold",
            msg: format!("d ln H unstable: value {dln}, error estimate {err}"),
        });
    }
    let delta = -1.0 / dln;
    if !(delta > 0.0) {
        return Err(Error::Inconsistent(format!(
            "Delta = {delta} should be positive (H decreasing)"
        )));
    }
    Ok(delta)
}

/// Zero-barrier regime test specialized to the affine bound:
/// true iff Delta >= K mu / q^2 + R / q.
pub fn affine_zero_barrier_by_delta(params: &ModelParams, k: f64, r: f64) -> Result<bool> {
    let delta = delta_threshold(params, k, r)?;
    Ok(delta >= k * params.mu / (params.q * params.q) + r / params.q)
}

/// Closed forms for the affine bound, bundled for use as a fundamental-pair
/// backend.
#[derive(Debug, Clone)]
pub struct AffineClosedForm {
    pub params: ModelParams,
    pub k: f64,
    pub r: f64,
}

impl AffineClosedForm {
    pub fn new(params: ModelParams, k: f64, r: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::InvalidBound(format!(
                "affine closed form requires K > 0, got {k}"
            )));
        }
        if !(r >= 0.0) {
            return Err(Error::InvalidBound(format!(
                "affine closed form requires R >= 0, got {r}"
            )));
        }
        Ok(Self { params, k, r })
    }

    pub fn phi(&self, x: f64) -> Result<f64> {
        phi_affine(&self.params, self.k, self.r, x)
    }

    pub fn phi_d1(&self, x: f64) -> Result<f64> {
        phi_affine_d1(&self.params, self.k, self.r, x)
    }

    pub fn i_f(&self, x: f64) -> f64 {
        i_affine_closed(&self.params, self.k, self.r, x)
    }

    pub fn i_f_d1(&self) -> f64 {
        self.k / (self.params.q + self.k)
    }
}

/// Reference root equation for the optimal barrier specialized to the affine
/// bound: psi/psi' - (b + mu/q) - R/K + (q/K)(psi/psi' - H/H') = 0.
/// Solved independently of the generic equation as a cross-check.
pub fn affine_bstar_specialized(params: &ModelParams, k: f64, r: f64) -> Result<f64> {
    let b_hat = psi_inflection(params)?;
    let m = params.mu - r;
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let f = |b: f64| -> f64 {
        let ratio_psi = psi_raw(mu, sigma, q, b) / psi_d1_raw(mu, sigma, q, b);
        let (dln, _) = ridders_deriv(
            |t| ln_h_kq(t, m, sigma, k, q).unwrap_or(f64::NAN),
            b,
            0.05 * (1.0 + b),
        );
        let h_over_hprime = 1.0 / dln;
        ratio_psi - (b + mu / q) - r / k + (q / k) * (ratio_psi - h_over_hprime)
    };
    let lo = 1e-8 * b_hat;
    let (f_lo, f_hi) = (f(lo), f(b_hat));
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket {
            op: "affine_bstar_specialized",
            msg: format!("no sign change on (0, b_hat]: f(lo)={f_lo}, f(b_hat)={f_hi}"),
        });
    }
    brent(f, lo, b_hat, f_lo, f_hi, 1e-13, 200)
}

// ---------------------------------------------------------------------------
// Capped-linear bound F(x) = min(Kx, R)
// ---------------------------------------------------------------------------

/// Closed forms for the capped-linear bound. Junction values at x = R/K are
/// computed once at construction from the C^1 pasting of the four passage
/// transforms, so shared references stay read-only afterwards.
#[derive(Debug, Clone)]
pub struct CappedClosedForm {
    pub params: ModelParams,
    pub k: f64,
    pub r: f64,
    /// phi_F(R/K)
    pub phi_at_junction: f64,
    /// I_F(R/K)
    pub if_at_junction: f64,
    /// decay rate of the A transform above the junction
    theta_above: f64,
    /// S(nu, y(R/K), y(0)) denominator shared by B and C
    s_denom: f64,
}

impl CappedClosedForm {
    pub fn new(params: ModelParams, k: f64, r: f64) -> Result<Self> {
        if !(k > 0.0 && r > 0.0) {
            return Err(Error::InvalidBound(format!(
                "capped closed form requires K > 0 and R > 0, got K={k}, R={r}"
            )));
        }
        let xj = r / k;
        let nu = params.q / k;
        let y = |x: f64| (x - params.mu / k) * (2.0 * k).sqrt() / params.sigma;
        let s_denom = s_fn(nu, y(xj), y(0.0))?;
        if s_denom.abs() < 1e-300 {
            return Err(Error::IllConditioned {
                op: "capped_closed_form",
                msg: "S denominator vanished".into(),
            });
        }
        // above the junction the state is a Brownian motion with drift mu - R
        let (_, theta_above) = char_roots(params.mu - r, params.sigma, params.q);

        let mut cf = Self {
            params,
            k,
            r,
            phi_at_junction: f64::NAN,
            if_at_junction: f64::NAN,
            theta_above,
            s_denom,
        };
        let (phi_j, if_j) = cf.solve_junction()?;
        cf.phi_at_junction = phi_j;
        cf.if_at_junction = if_j;
        Ok(cf)
    }

    pub fn junction(&self) -> f64 {
        self.r / self.k
    }

    fn y(&self, x: f64) -> f64 {
        (x - self.params.mu / self.k) * (2.0 * self.k).sqrt() / self.params.sigma
    }

    /// A(x) = E_x[e^{-q tau_{R/K}} 1{tau_{R/K} < inf}] for x >= R/K, where the
    /// state is Brownian with drift mu - R; equals e^{-theta (x - R/K)}.
    pub fn transform_a(&self, x: f64) -> Result<f64> {
        if x < self.junction() - 1e-12 {
            return Err(Error::Domain {
                op: "transform_a",
                msg: format!("x = {x} below the junction {}", self.junction()),
            });
        }
        Ok(self.a_unchecked(x))
    }

    fn a_unchecked(&self, x: f64) -> f64 {
        (-self.theta_above * (x - self.junction())).exp()
    }

    /// B(x) = E_x[e^{-q tau_0} 1{tau_0 < tau_{R/K}}] for 0 <= x <= R/K
    /// (two-sided passage of the Ornstein-Uhlenbeck stretch).
    pub fn transform_b(&self, x: f64) -> Result<f64> {
        if !(-1e-12..=self.junction() + 1e-12).contains(&x) {
            return Err(Error::Domain {
                op: "transform_b",
                msg: format!("x = {x} outside [0, {}]", self.junction()),
            });
        }
        self.b_unchecked(x)
    }

    fn b_unchecked(&self, x: f64) -> Result<f64> {
        let nu = self.params.q / self.k;
        Ok(s_fn(nu, self.y(self.junction()), self.y(x))? / self.s_denom)
    }

    /// C(x) = E_x[e^{-q tau_{R/K}} 1{tau_{R/K} < tau_0}] for 0 <= x <= R/K.
    pub fn transform_c(&self, x: f64) -> Result<f64> {
        if !(-1e-12..=self.junction() + 1e-12).contains(&x) {
            return Err(Error::Domain {
                op: "transform_c",
                msg: format!("x = {x} outside [0, {}]", self.junction()),
            });
        }
        self.c_unchecked(x)
    }

    fn c_unchecked(&self, x: f64) -> Result<f64> {
        let nu = self.params.q / self.k;
        Ok(s_fn(nu, self.y(x), self.y(0.0))? / self.s_denom)
    }

    /// D(x) = E_x[e^{-q tau_{R/K}} 1{tau_{R/K} < inf}] for x <= R/K (upward
    /// passage of the Ornstein-Uhlenbeck stretch, no lower barrier).
    pub fn transform_d(&self, x: f64) -> Result<f64> {
        if x > self.junction() + 1e-12 {
            return Err(Error::Domain {
                op: "transform_d",
                msg: format!("x = {x} above the junction {}", self.junction()),
            });
        }
        self.d_unchecked(x)
    }

    fn d_unchecked(&self, x: f64) -> Result<f64> {
        Ok((self.ln_h_up(x)? - self.ln_h_up(self.junction())?).exp())
    }

    fn ln_h_up(&self, x: f64) -> Result<f64> {
        // negative third argument selects the increasing eigenfunction
        ln_h_kq(x, self.params.mu, -self.params.sigma, self.k, self.params.q)
    }

    fn solve_junction(&self) -> Result<(f64, f64)> {
        let xj = self.junction();
        let h = 0.02 * xj.min(1.0);
        let da = -self.theta_above; // A'(R/K), analytic
        let (db, db_err) = ridders_deriv(|t| self.b_unchecked(t).unwrap_or(f64::NAN), xj, h);
        let (dc, dc_err) = ridders_deriv(|t| self.c_unchecked(t).unwrap_or(f64::NAN), xj, h);
        let (dlnh, dd_err) = ridders_deriv(|t| self.ln_h_up(t).unwrap_or(f64::NAN), xj, h);
        let dd = dlnh; // D(R/K) = 1, so D'(R/K) = (ln H)'(R/K)
        for (name, err) in [("B'", db_err), ("C'", dc_err), ("D'", dd_err)] {
            if err > 1e-6 {
                return Err(Error::IllConditioned {
                    op: "capped_junction",
                    msg: format!("{name} derivative error estimate {err}"),
                });
            }
        }
        let denom_phi = da - dc;
        if denom_phi.abs() < 1e-12 {
            return Err(Error::IllConditioned {
                op: "capped_junction",
                msg: format!("A' - C' = {denom_phi} too small"),
            });
        }
        let phi_j = db / denom_phi;
        let denom_if = da - dd;
        if denom_if.abs() < 1e-12 {
            return Err(Error::IllConditioned {
                op: "capped_junction",
                msg: format!("A' - D' = {denom_if} too small"),
            });
        }
        let ik_j = i_k_closed(&self.params, self.k, xj);
        let a_slope = self.k / (self.params.q + self.k);
        let if_j = (a_slope - dd * ik_j + (self.r / self.params.q) * da) / denom_if;
        if !(phi_j > 0.0 && phi_j < 1.0) {
            return Err(Error::Inconsistent(format!(
                "phi at junction = {phi_j} outside (0, 1)"
            )));
        }
        if !(if_j > 0.0 && if_j < self.r / self.params.q) {
            return Err(Error::Inconsistent(format!(
                "I_F at junction = {if_j} outside (0, R/q)"
            )));
        }
        Ok((phi_j, if_j))
    }

    /// phi_F assembled from the passage transforms and the junction value.
    pub fn phi(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::Domain {
                op: "capped phi",
                msg: format!("x = {x} < 0"),
            });
        }
        if x <= self.junction() {
            Ok(self.b_unchecked(x)? + self.c_unchecked(x)? * self.phi_at_junction)
        } else {
            Ok(self.a_unchecked(x) * self.phi_at_junction)
        }
    }

    /// I_F assembled from I_K, the passage transforms and the junction value.
    /// Valid for every real x at or below the junction and above it.
    pub fn i_f(&self, x: f64) -> Result<f64> {
        let xj = self.junction();
        if x <= xj {
            let ik = i_k_closed(&self.params, self.k, x);
            Ok(ik - self.d_unchecked(x)? * (i_k_closed(&self.params, self.k, xj) - self.if_at_junction))
        } else {
            let a = self.a_unchecked(x);
            Ok(self.r / self.params.q * (1.0 - a) + a * self.if_at_junction)
        }
    }

    pub fn phi_d1(&self, x: f64) -> Result<f64> {
        let xj = self.junction();
        if x <= xj {
            let (d, _) = ridders_deriv(
                |t| {
                    self.b_unchecked(t)
                        .and_then(|b| Ok(b + self.c_unchecked(t)? * self.phi_at_junction))
                        .unwrap_or(f64::NAN)
                },
                x,
                0.02 * (1.0 + xj),
            );
            Ok(d)
        } else {
            Ok(-self.theta_above * self.a_unchecked(x) * self.phi_at_junction)
        }
    }

    pub fn i_f_d1(&self, x: f64) -> Result<f64> {
        let xj = self.junction();
        if x <= xj {
            let gap = i_k_closed(&self.params, self.k, xj) - self.if_at_junction;
            let (dd, _) = ridders_deriv(
                |t| self.d_unchecked(t).unwrap_or(f64::NAN),
                x,
                0.02 * (1.0 + xj),
            );
            Ok(self.k / (self.params.q + self.k) - dd * gap)
        } else {
            Ok(-self.theta_above
                * self.a_unchecked(x)
                * (self.if_at_junction - self.r / self.params.q))
        }
    }

    /// Test-only route for A through psi and psi_tilde of the drifted Brownian
    /// stretch; algebraically identical to the exponential used in production
    /// but numerically ill-suited far from the junction.
    pub fn transform_a_series_form(&self, x: f64) -> Result<f64> {
        let m = self.params.mu - self.r;
        let (sigma, q) = (self.params.sigma, self.params.q);
        let dy = x - self.junction();
        let disc = (m * m + 2.0 * q * sigma * sigma).sqrt();
        let coeff = 2.0 * q / (disc - m);
        Ok(psi_tilde_raw(m, sigma, q, dy)? - coeff * psi_raw(m, sigma, q, dy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(mu: f64, sigma: f64, q: f64) -> ModelParams {
        ModelParams::new(mu, sigma, q).unwrap()
    }

    /// Integrate (sigma^2/2) f'' + mu f' - q f = 0, f(0)=0, f'(0)=1 by RK4.
    fn rk4_psi(params: &ModelParams, x_end: f64, n: usize) -> f64 {
        let h = x_end / n as f64;
        let (mut f, mut v) = (0.0f64, 1.0f64);
        let acc = |f: f64, v: f64| {
            (
                v,
                2.0 / (params.sigma * params.sigma) * (params.q * f - params.mu * v),
            )
        };
        for _ in 0..n {
            let (k1f, k1v) = acc(f, v);
            let (k2f, k2v) = acc(f + 0.5 * h * k1f, v + 0.5 * h * k1v);
            let (k3f, k3v) = acc(f + 0.5 * h * k2f, v + 0.5 * h * k2v);
            let (k4f, k4v) = acc(f + h * k3f, v + h * k3v);
            f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        f
    }

    #[test]
    fn psi_at_zero_and_unit_slope() {
        let params = p(1.0, 1.0, 0.1);
        assert_eq!(psi(&params, 0.0).unwrap(), 0.0);
        let h = 1e-5;
        let fd = (psi(&params, h).unwrap() - psi_raw(1.0, 1.0, 0.1, -h)) / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-8, "psi'(0) = {fd}");
        assert!(psi(&params, -0.5).is_err());
    }

    #[test]
    fn psi_matches_rk4_oracle() {
        let params = p(1.0, 1.0, 0.1);
        let numeric = rk4_psi(&params, 1.0, 20_000);
        let exact = psi(&params, 1.0).unwrap();
        assert!(
            ((numeric - exact) / exact).abs() < 1e-9,
            "{numeric} vs {exact}"
        );
    }

    #[test]
    fn psi_strictly_increasing_concave_convex() {
        let params = p(0.8, 1.2, 0.15);
        let b_hat = psi_inflection(&params).unwrap();
        let mut prev = 0.0;
        for i in 1..200 {
            let x = 10.0 * i as f64 / 200.0;
            let v = psi(&params, x).unwrap();
            assert!(v > prev);
            prev = v;
            let d2 = psi_d2(&params, x).unwrap();
            if x < b_hat - 1e-9 {
                assert!(d2 < 0.0, "psi'' should be negative at {x} < {b_hat}");
            } else if x > b_hat + 1e-9 {
                assert!(d2 > 0.0, "psi'' should be positive at {x} > {b_hat}");
            }
        }
    }

    #[test]
    fn gamma_of_psi_vanishes() {
        // residual of the generating equation with analytic derivatives
        let params = p(1.0, 1.0, 0.1);
        for i in 0..=100 {
            let x = 10.0 * i as f64 / 100.0;
            let res = 0.5 * params.sigma * params.sigma * psi_d2(&params, x).unwrap()
                + params.mu * psi_d1(&params, x).unwrap()
                - params.q * psi(&params, x).unwrap();
            let scale = psi(&params, x).unwrap().abs().max(1.0);
            assert!(res.abs() / scale < 1e-9, "residual {res} at {x}");
        }
    }

    #[test]
    fn inflection_matches_closed_form_and_identity() {
        for (mu, sigma, q) in [
            (1.0, 1.0, 0.1),
            (0.5, 2.0, 0.3),
            (2.0, 0.7, 0.05),
            (1.5, 1.5, 1.0),
        ] {
            let params = p(mu, sigma, q);
            let b_hat = psi_inflection(&params).unwrap();
            let (gamma, theta) = char_roots(mu, sigma, q);
            let closed = 2.0 * (theta / gamma).ln() / (gamma + theta);
            assert!(
                (b_hat - closed).abs() < 1e-12 * (1.0 + closed),
                "bisected {b_hat} vs closed {closed}"
            );
            let ratio = psi(&params, b_hat).unwrap() / psi_d1(&params, b_hat).unwrap();
            assert!(
                ((ratio - mu / q) / (mu / q)).abs() < 1e-9,
                "psi/psi' = {ratio}, mu/q = {}",
                mu / q
            );
        }
    }

    #[test]
    fn inflection_finite_positive_on_grid() {
        for mu in [0.5, 1.0, 2.0] {
            for sigma in [0.5, 1.0, 2.0] {
                for q in [0.05, 0.1, 0.5] {
                    let b_hat = psi_inflection(&p(mu, sigma, q)).unwrap();
                    assert!(b_hat.is_finite() && b_hat > 0.0);
                }
            }
        }
    }

    #[test]
    fn psi_tilde_examples() {
        let params = p(1.0, 1.0, 0.1);
        assert_eq!(psi_tilde(&params, 0.0).unwrap(), 1.0);
        assert!(psi_tilde(&params, 1.0).unwrap() < psi_tilde(&params, 2.0).unwrap());
        // quadrature vs the closed antiderivative of psi
        let (gamma, theta) = char_roots(1.0, 1.0, 0.1);
        let disc = (1.0f64 + 0.2).sqrt();
        let x = 2.0;
        let anti = 1.0 / (2.0 * disc)
            * ((((gamma * x).exp() - 1.0) / gamma) + (((-theta * x).exp() - 1.0) / theta));
        let closed = 1.0 + 0.2 * anti;
        let quad = psi_tilde(&params, x).unwrap();
        assert!((quad - closed).abs() < 1e-10, "{quad} vs {closed}");
        assert!(psi_tilde(&params, -1.0).is_err());
    }

    #[test]
    fn pc_gaussian_reduction_at_zero() {
        // D_{-1}(0) = integral of e^{-t^2/2} over (0, inf) = sqrt(pi/2)
        let v = parabolic_cylinder(1.0, 0.0).unwrap();
        assert!((v - (PI / 2.0).sqrt()).abs() < 1e-12, "{v}");
        // D_0 would be e^{-x^2/4}; lambda = 0 is out of domain
        assert!(parabolic_cylinder(0.0, 1.0).is_err());
    }

    #[test]
    fn pc_known_value_at_zero_general_lambda() {
        // D_{-lambda}(0) = 2^{-lambda/2} sqrt(pi) / Gamma((1+lambda)/2)
        for lambda in [0.25, 0.5, 1.0, 2.5, 5.0] {
            let v = parabolic_cylinder(lambda, 0.0).unwrap();
            let exact = 2.0f64.powf(-lambda / 2.0) * PI.sqrt()
                / statrs::function::gamma::gamma((1.0 + lambda) / 2.0);
            assert!(
                ((v - exact) / exact).abs() < 1e-12,
                "lambda={lambda}: {v} vs {exact}"
            );
        }
    }

    #[test]
    fn pc_matches_high_precision_oracle() {
        for lambda in [0.1, 0.5, 1.0, 5.0] {
            for x in [-6.0, -3.0, -1.0, 0.0, 0.5, 1.0, 3.0, 8.0] {
                let v = parabolic_cylinder(lambda, x).unwrap();
                let oracle = parabolic_cylinder_oracle(lambda, x).unwrap();
                assert!(
                    ((v - oracle) / oracle).abs() < 1e-12,
                    "lambda={lambda}, x={x}: {v} vs {oracle}"
                );
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn pc_derivative_recurrence_vs_ridders() {
        for (lambda, x) in [(0.5, 0.3), (1.0, -1.0), (2.0, 1.5)] {
            let rec = parabolic_cylinder_deriv(lambda, x).unwrap();
            let (fd, _) =
                ridders_deriv(|t| parabolic_cylinder(lambda, t).unwrap(), x, 0.05);
            assert!(
                (rec - fd).abs() < 1e-9 * (1.0 + rec.abs()),
                "lambda={lambda}, x={x}: recurrence {rec} vs ridders {fd}"
            );
        }
    }

    #[test]
    fn h_kq_centered_argument() {
        // at x = m/K the exponential factor is 1 and H = D_{-q/K}(0)
        let (k, q, m, sigma) = (1.0, 0.1, 1.0, 1.0);
        let h = h_kq(m / k, m, sigma, k, q).unwrap();
        let d0 = parabolic_cylinder(q / k, 0.0).unwrap();
        assert!((h - d0).abs() < 1e-13);
        // composition of the two factors away from the center
        let x = 0.0;
        let z = (x - m / k) / sigma * (2.0f64 * k).sqrt();
        let expect = (k * (x - m / k) * (x - m / k) / (2.0 * sigma * sigma)).exp()
            * parabolic_cylinder(q / k, z).unwrap();
        let got = h_kq(x, m, sigma, k, q).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn s_fn_antisymmetry() {
        assert_eq!(s_fn(0.4, 1.3, 1.3).unwrap(), 0.0);
        let a = s_fn(0.4, 1.0, -1.0).unwrap();
        let b = s_fn(0.4, -1.0, 1.0).unwrap();
        assert_eq!(a, -b);
        assert!(s_fn(-0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn s_fn_composition_oracle() {
        let (nu, x, y): (f64, f64, f64) = (0.25, 0.5, -0.5);
        let d = |z: f64| parabolic_cylinder_oracle(nu, z).unwrap();
        let expect = statrs::function::gamma::gamma(nu) / PI
            * ((x * x + y * y) / 4.0).exp()
            * (d(-x) * d(y) - d(x) * d(-y));
        let got = s_fn(nu, x, y).unwrap();
        assert!(
            ((got - expect) / expect).abs() < 1e-10,
            "{got} vs {expect}"
        );
    }

    #[test]
    fn i_k_closed_examples() {
        let params = p(1.0, 1.0, 0.1);
        let slope = 1.0 / (0.1 + 1.0);
        assert!(slope < 1.0);
        let v = i_k_closed(&params, 1.0, 0.0);
        assert!((v - 1.0 / 1.1 * 10.0).abs() < 1e-12, "{v}");
        assert!(
            (i_k_closed(&params, 1.0, 2.0) - i_k_closed(&params, 1.0, 1.0) - slope).abs() < 1e-12
        );
    }

    #[test]
    fn i_affine_reduces_and_satisfies_ode() {
        let params = p(1.0, 1.0, 0.1);
        // R = 0 reduces to I_K
        for x in [0.0, 1.0, 5.0] {
            assert!(
                (i_affine_closed(&params, 1.0, 0.0, x) - i_k_closed(&params, 1.0, x)).abs()
                    < 1e-13
            );
        }
        // residual of the generating equation is identically zero:
        // f affine => f''=0, (mu - R - Kx) a - q (a x + c) + (R + Kx) = 0
        let (k, r) = (1.0, 0.5);
        let a = k / (params.q + k);
        for x in [-3.0, 0.0, 0.7, 4.0, 10.0] {
            let f = i_affine_closed(&params, k, r, x);
            let residual = (params.mu - r - k * x) * a - params.q * f + (r + k * x);
            assert!(residual.abs() < 1e-12, "residual {residual} at {x}");
        }
        // constant-bound limit: K -> 0 gives R/q
        let tiny = i_affine_closed(&params, 1e-12, 0.7, 3.0);
        assert!((tiny - 0.7 / params.q).abs() < 1e-9, "{tiny}");
    }

    #[test]
    fn phi_affine_normalized_decreasing_convex() {
        let params = p(1.0, 1.0, 0.1);
        let (k, r) = (1.0, 0.0);
        assert!((phi_affine(&params, k, r, 0.0).unwrap() - 1.0).abs() < 1e-14);
        let xs: Vec<f64> = (0..=80).map(|i| 8.0 * i as f64 / 80.0).collect();
        let vs: Vec<f64> = xs
            .iter()
            .map(|&x| phi_affine(&params, k, r, x).unwrap())
            .collect();
        for i in 0..vs.len() - 1 {
            assert!(vs[i + 1] < vs[i], "not decreasing at {}", xs[i]);
        }
        for i in 1..vs.len() - 1 {
            assert!(
                vs[i] < 0.5 * (vs[i - 1] + vs[i + 1]) + 1e-14,
                "not convex at {}",
                xs[i]
            );
        }
        assert!(phi_affine(&params, k, r, -1.0).is_err());
    }

    #[test]
    fn phi_affine_solves_its_ode() {
        // (sigma^2/2) phi'' + (mu - R - Kx) phi' - q phi = 0, derivatives by
        // Ridders on the closed form; checks the H exponent convention
        let params = p(1.0, 1.0, 0.1);
        let (k, r) = (0.7, 0.3);
        for x in [0.2, 1.0, 2.5, 5.0] {
            let f = |t: f64| phi_affine(&params, k, r, t).unwrap();
            let (d1, _) = ridders_deriv(f, x, 0.05);
            let (d2, _) = ridders_deriv(|t| ridders_deriv(f, t, 0.05).0, x, 0.07);
            let res = 0.5 * d2 + (params.mu - r - k * x) * d1 - params.q * f(x);
            assert!(res.abs() < 1e-6, "residual {res} at x={x}");
        }
    }

    #[test]
    fn delta_threshold_positive() {
        for mu in [0.5, 1.0, 2.0] {
            for q in [0.05, 0.2, 0.8] {
                for k in [0.5, 1.0, 2.0] {
                    let params = p(mu, 1.0, q);
                    let delta = delta_threshold(&params, k, 0.25).unwrap();
                    assert!(delta > 0.0, "Delta = {delta}");
                }
            }
        }
    }

    #[test]
    fn capped_transform_boundary_values() {
        let params = p(1.0, 1.0, 0.25);
        let cf = CappedClosedForm::new(params, 1.0, 2.0).unwrap();
        let xj = cf.junction();
        assert!((cf.transform_a(xj).unwrap() - 1.0).abs() < 1e-12);
        assert!((cf.transform_d(xj).unwrap() - 1.0).abs() < 1e-12);
        assert!((cf.transform_b(0.0).unwrap() - 1.0).abs() < 1e-10);
        assert!(cf.transform_c(0.0).unwrap().abs() < 1e-10);
        assert!((cf.transform_b(xj).unwrap()).abs() < 1e-10);
        assert!((cf.transform_c(xj).unwrap() - 1.0).abs() < 1e-10);
        // range checks
        assert!(cf.transform_a(0.5 * xj).is_err());
        assert!(cf.transform_b(2.0 * xj).is_err());
        // all transforms live in [0, 1]
        for i in 0..=20 {
            let x = xj * i as f64 / 20.0;
            for v in [
                cf.transform_b(x).unwrap(),
                cf.transform_c(x).unwrap(),
                cf.transform_d(x).unwrap(),
            ] {
                assert!((-1e-10..=1.0 + 1e-10).contains(&v), "{v} at {x}");
            }
            let xa = xj + 3.0 * i as f64 / 20.0;
            let a = cf.transform_a(xa).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn capped_a_exponential_equals_series_form() {
        let params = p(1.0, 1.0, 0.25);
        for (k, r) in [(1.0, 2.0), (0.5, 0.4), (2.0, 1.0)] {
            let cf = CappedClosedForm::new(params, k, r).unwrap();
            for dy in [0.0, 0.3, 1.0, 2.5] {
                let x = cf.junction() + dy;
                let direct = cf.transform_a(x).unwrap();
                let series = cf.transform_a_series_form(x).unwrap();
                assert!(
                    (direct - series).abs() < 1e-9,
                    "K={k}, R={r}, dy={dy}: {direct} vs {series}"
                );
            }
        }
    }

    #[test]
    fn capped_junction_pasting_is_c1() {
        let params = p(1.0, 1.0, 0.25);
        let cf = CappedClosedForm::new(params, 1.0, 2.0).unwrap();
        let xj = cf.junction();
        assert!(cf.if_at_junction < cf.r / params.q);
        // value continuity across the junction
        let h = 1e-7;
        assert!((cf.phi(xj - h).unwrap() - cf.phi(xj + h).unwrap()).abs() < 1e-6);
        assert!((cf.i_f(xj - h).unwrap() - cf.i_f(xj + h).unwrap()).abs() < 1e-6);
        // one-sided derivatives: the below-junction branch (extrapolated
        // Ridders) against the analytic derivative of the branch above
        let d_below = cf.phi_d1(xj).unwrap();
        let d_above = -cf.theta_above * cf.phi_at_junction;
        assert!(
            (d_below - d_above).abs() < 1e-6,
            "phi' jump {d_below} vs {d_above}"
        );
        let i_below = cf.i_f_d1(xj).unwrap();
        let i_above = -cf.theta_above * (cf.if_at_junction - cf.r / params.q);
        assert!(
            (i_below - i_above).abs() < 1e-6,
            "I_F' jump {i_below} vs {i_above}"
        );
    }

    #[test]
    fn capped_transforms_match_simulation() {
        // Monte Carlo check of the one-sided passage transforms: A from above
        // the junction, D from below, both absorbing at R/K
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};

        let params = p(1.0, 1.0, 0.25);
        let (k, r) = (1.0, 2.0);
        let cf = CappedClosedForm::new(params, k, r).unwrap();
        let xj = cf.junction();
        let bound_drift = |u: f64| params.mu - (k * u).min(r);
        // horizon 40 truncates at discount weight e^{-10}; the leftover sits
        // inside the allowances below
        let dt: f64 = 2e-3;
        let tail = (-params.q * 40.0f64).exp();
        let simulate = |x0: f64, seed: u64| -> (f64, f64) {
            let n_paths = 100_000usize;
            let sqdt = dt.sqrt();
            let n_steps = (40.0 / dt) as usize;
            let step_disc = (-params.q * dt).exp();
            let mut payoffs = Vec::with_capacity(n_paths);
            for i in 0..n_paths {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (i as u64));
                let mut u = x0;
                let mut disc = 1.0;
                let mut hit = 0.0;
                for _ in 0..n_steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    u += bound_drift(u) * dt + params.sigma * sqdt * z;
                    disc *= step_disc;
                    let crossed = if x0 > xj { u <= xj } else { u >= xj };
                    if crossed {
                        hit = disc;
                        break;
                    }
                }
                payoffs.push(hit);
            }
            let mean = payoffs.iter().sum::<f64>() / n_paths as f64;
            let var = payoffs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>()
                / (n_paths - 1) as f64;
            (mean, (var / n_paths as f64).sqrt())
        };
        let (mc_a, se_a) = simulate(xj + 1.0, 99);
        let exact_a = cf.transform_a(xj + 1.0).unwrap();
        let allow_a = 3.0 * se_a + 0.6 * params.sigma * dt.sqrt() * cf.theta_above + tail;
        assert!(
            (mc_a - exact_a).abs() <= allow_a,
            "A: MC {mc_a} vs {exact_a} (allowance {allow_a})"
        );
        let (mc_d, se_d) = simulate(xj - 1.0, 7);
        let exact_d = cf.transform_d(xj - 1.0).unwrap();
        let slope_d = crate::numerics::ridders_deriv(
            |t| cf.transform_d(t).unwrap_or(f64::NAN),
            xj - 1.0,
            0.05,
        )
        .0
        .abs();
        let allow_d = 3.0 * se_d + 0.6 * params.sigma * dt.sqrt() * slope_d.max(1.0) + tail;
        assert!(
            (mc_d - exact_d).abs() <= allow_d,
            "D: MC {mc_d} vs {exact_d} (allowance {allow_d})"
        );
    }
}
