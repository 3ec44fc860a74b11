//! Optimal-policy construction: the zero-barrier regime test, root-finding
//! for the optimal barrier, the value of an arbitrary barrier strategy, and
//! assembly of the optimal value function.
//!
//! Everything is generic over a [`Fundamentals`] backend supplying phi_F and
//! I_F with derivatives: finite-difference profiles for arbitrary bounds, or
//! the affine / capped-linear closed forms. psi and its derivatives always
//! come from the explicit formula.

use crate::closed_forms::{
    psi_d1_raw, psi_d2_raw, psi_inflection, psi_raw, AffineClosedForm, CappedClosedForm,
};
use crate::error::{Error, Result};
use crate::model::{BoundFn, ModelParams};
use crate::numerics::{brent, scan_sign_changes};
use crate::ode_engine::{solve_i_f, solve_phi_f, FnProfile, SolveConfig, SolveMeta};

/// Regime test values within this distance of 1 are treated as borderline and
/// assigned to the zero-barrier branch.
pub const BORDERLINE_TOL: f64 = 1e-9;

/// Access to phi_F and I_F (values and first two derivatives) for a fixed
/// model and bound.
pub trait Fundamentals {
    fn params(&self) -> &ModelParams;
    fn bound(&self) -> &BoundFn;
    fn phi(&self, x: f64) -> Result<f64>;
    fn phi_d1(&self, x: f64) -> Result<f64>;
    fn phi_d2(&self, x: f64) -> Result<f64>;
    fn i_f(&self, x: f64) -> Result<f64>;
    fn i_f_d1(&self, x: f64) -> Result<f64>;
    fn i_f_d2(&self, x: f64) -> Result<f64>;
    /// right edge of the trusted evaluation range
    fn max_x(&self) -> f64;
    /// estimated numerical error carried by (phi, I_F); zero for closed forms
    fn residual_norms(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Fundamentals backed by the finite-difference ODE engine.
#[derive(Debug, Clone)]
pub struct ProfileFundamentals {
    params: ModelParams,
    bound: BoundFn,
    pub phi_profile: FnProfile,
    pub if_profile: FnProfile,
}

impl ProfileFundamentals {
    /// Solve both boundary-value problems with domains wide enough to cover
    /// queries up to `x_max`.
    pub fn solve(
        params: ModelParams,
        bound: BoundFn,
        cfg: &SolveConfig,
        x_max: f64,
    ) -> Result<Self> {
        let margin = 10.0 * params.sigma / (2.0 * params.q).sqrt();
        let mut cfg = cfg.clone();
        cfg.truncation_l = Some(
            cfg.truncation_l
                .unwrap_or(0.0)
                .max(x_max + margin)
                .max(margin),
        );
        let phi_profile = solve_phi_f(&params, &bound, &cfg)?;
        let if_profile = solve_i_f(&params, &bound, &cfg)?;
        Ok(Self {
            params,
            bound,
            phi_profile,
            if_profile,
        })
    }
}

impl Fundamentals for ProfileFundamentals {
    fn params(&self) -> &ModelParams {
        &self.params
    }
    fn bound(&self) -> &BoundFn {
        &self.bound
    }
    fn phi(&self, x: f64) -> Result<f64> {
        Ok(self.phi_profile.value_at(x))
    }
    fn phi_d1(&self, x: f64) -> Result<f64> {
        Ok(self.phi_profile.d1_at(x))
    }
    fn phi_d2(&self, x: f64) -> Result<f64> {
        Ok(self.phi_profile.d2_at(x))
    }
    fn i_f(&self, x: f64) -> Result<f64> {
        Ok(self.if_profile.value_at(x))
    }
    fn i_f_d1(&self, x: f64) -> Result<f64> {
        Ok(self.if_profile.d1_at(x))
    }
    fn i_f_d2(&self, x: f64) -> Result<f64> {
        Ok(self.if_profile.d2_at(x))
    }
    fn max_x(&self) -> f64 {
        self.phi_profile
            .domain_right
            .min(self.if_profile.domain_right)
    }
    fn residual_norms(&self) -> (f64, f64) {
        (
            self.phi_profile.meta.residual_norm,
            self.if_profile.meta.residual_norm,
        )
    }
}

/// d2 recovered from the generating equation
/// f'' = 2 (rhs - (mu - F) f' + q f) / sigma^2.
fn d2_from_equation(
    params: &ModelParams,
    bound: &BoundFn,
    x: f64,
    value: f64,
    d1: f64,
    rhs_is_minus_f: bool,
) -> f64 {
    let f_x = bound.eval(x);
    let rhs = if rhs_is_minus_f { -f_x } else { 0.0 };
    2.0 * (rhs - (params.mu - f_x) * d1 + params.q * value) / (params.sigma * params.sigma)
}

/// Fundamentals from the affine closed forms.
#[derive(Debug, Clone)]
pub struct AffineFundamentals {
    form: AffineClosedForm,
    bound: BoundFn,
}

impl AffineFundamentals {
    pub fn new(params: ModelParams, k: f64, r: f64) -> Result<Self> {
        let bound = if r == 0.0 {
            BoundFn::linear(k)?
        } else {
            BoundFn::affine(k, r)?
        };
        Ok(Self {
            form: AffineClosedForm::new(params, k, r)?,
            bound,
        })
    }
}

impl Fundamentals for AffineFundamentals {
    fn params(&self) -> &ModelParams {
        &self.form.params
    }
    fn bound(&self) -> &BoundFn {
        &self.bound
    }
    fn phi(&self, x: f64) -> Result<f64> {
        self.form.phi(x)
    }
    fn phi_d1(&self, x: f64) -> Result<f64> {
        self.form.phi_d1(x)
    }
    fn phi_d2(&self, x: f64) -> Result<f64> {
        Ok(d2_from_equation(
            self.params(),
            &self.bound,
            x,
            self.form.phi(x)?,
            self.form.phi_d1(x)?,
            false,
        ))
    }
    fn i_f(&self, x: f64) -> Result<f64> {
        Ok(self.form.i_f(x))
    }
    fn i_f_d1(&self, _x: f64) -> Result<f64> {
        Ok(self.form.i_f_d1())
    }
    fn i_f_d2(&self, _x: f64) -> Result<f64> {
        Ok(0.0)
    }
    fn max_x(&self) -> f64 {
        f64::INFINITY
    }
}

/// Fundamentals from the capped-linear closed forms.
#[derive(Debug, Clone)]
pub struct CappedFundamentals {
    form: CappedClosedForm,
    bound: BoundFn,
}

impl CappedFundamentals {
    pub fn new(params: ModelParams, k: f64, r: f64) -> Result<Self> {
        Ok(Self {
            form: CappedClosedForm::new(params, k, r)?,
            bound: BoundFn::capped_linear(k, r)?,
        })
    }

    pub fn form(&self) -> &CappedClosedForm {
        &self.form
    }
}

impl Fundamentals for CappedFundamentals {
    fn params(&self) -> &ModelParams {
        &self.form.params
    }
    fn bound(&self) -> &BoundFn {
        &self.bound
    }
    fn phi(&self, x: f64) -> Result<f64> {
        self.form.phi(x)
    }
    fn phi_d1(&self, x: f64) -> Result<f64> {
        self.form.phi_d1(x)
    }
    fn phi_d2(&self, x: f64) -> Result<f64> {
        Ok(d2_from_equation(
            self.params(),
            &self.bound,
            x,
            self.form.phi(x)?,
            self.form.phi_d1(x)?,
            false,
        ))
    }
    fn i_f(&self, x: f64) -> Result<f64> {
        self.form.i_f(x)
    }
    fn i_f_d1(&self, x: f64) -> Result<f64> {
        self.form.i_f_d1(x)
    }
    fn i_f_d2(&self, x: f64) -> Result<f64> {
        Ok(d2_from_equation(
            self.params(),
            &self.bound,
            x,
            self.form.i_f(x)?,
            self.form.i_f_d1(x)?,
            true,
        ))
    }
    fn max_x(&self) -> f64 {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Outcome of the zero-barrier test I_F'(0) - I_F(0) phi_F'(0) <= 1.
#[derive(Debug, Clone, Copy)]
pub struct RegimeTest {
    pub value: f64,
    pub is_zero_barrier: bool,
    pub borderline: bool,
}

pub fn regime_test<F: Fundamentals>(f: &F) -> Result<RegimeTest> {
    let value = f.i_f_d1(0.0)? - f.i_f(0.0)? * f.phi_d1(0.0)?;
    let borderline = (value - 1.0).abs() <= BORDERLINE_TOL;
    Ok(RegimeTest {
        value,
        is_zero_barrier: value <= 1.0 || borderline,
        borderline,
    })
}

/// Root data for the optimal barrier.
#[derive(Debug, Clone, Copy)]
pub struct BarrierRoot {
    pub b_star: f64,
    pub b_hat: f64,
    /// |g - h| at the root
    pub residual: f64,
    /// sign changes of g - h on the scan grid (uniqueness diagnostic)
    pub sign_changes: usize,
}

/// Find the smallest root of g(b) = h(b) on (0, b_hat], where
/// g(b) = I_F(b) - I_F'(b) phi(b)/phi'(b) and
/// h(b) = psi(b)/psi'(b) - phi(b)/phi'(b).
/// Requires the strict positive-barrier regime.
pub fn find_bstar<F: Fundamentals>(f: &F) -> Result<BarrierRoot> {
    let params = *f.params();
    let b_hat = psi_inflection(&params)?;
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let w = |b: f64| -> f64 {
        let phi = f.phi(b).unwrap_or(f64::NAN);
        let dphi = f.phi_d1(b).unwrap_or(f64::NAN);
        let i = f.i_f(b).unwrap_or(f64::NAN);
        let di = f.i_f_d1(b).unwrap_or(f64::NAN);
        let g = i - di * phi / dphi;
        let h = psi_raw(mu, sigma, q, b) / psi_d1_raw(mu, sigma, q, b) - phi / dphi;
        g - h
    };
    let eps = 1e-8 * b_hat;
    let (w_lo, w_hi) = (w(eps), w(b_hat));
    if w_lo <= 0.0 {
        return Err(Error::Bracket {
            op: "find_bstar",
            msg: format!(
                "g - h = {w_lo} at b = {eps}: expected positive near 0; the regime test may sit on the boundary"
            ),
        });
    }
    if w_hi > 0.0 {
        return Err(Error::Bracket {
            op: "find_bstar",
            msg: format!("g - h = {w_hi} at b_hat = {b_hat}: expected <= 0"),
        });
    }
    let (first, sign_changes) = scan_sign_changes(&w, eps, b_hat, 512);
    let (lo, hi, f_lo, f_hi) = first.ok_or_else(|| Error::Bracket {
        op: "find_bstar",
        msg: "scan found no sign change despite bracket endpoints".into(),
    })?;
    let b_star = brent(&w, lo, hi, f_lo, f_hi, 1e-14 * b_hat.max(1.0), 300)?;
    let residual = w(b_star).abs();
    let g_scale = f.i_f(b_star)?.abs().max(1.0);
    if residual > 1e-10 * g_scale {
        return Err(Error::Inconsistent(format!(
            "barrier root residual |g - h| = {residual} exceeds 1e-10 * {g_scale}"
        )));
    }
    Ok(BarrierRoot {
        b_star,
        b_hat,
        residual,
        sign_changes,
    })
}

/// The value of the barrier-b strategy on a grid, with its pasting
/// coefficients.
#[derive(Debug, Clone)]
pub struct BarrierValue {
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub value: FnProfile,
    /// branch-derivative mismatch at b (rounding-level by construction)
    pub d1_jump_at_b: f64,
}

/// Coefficients of the two-branch representation at barrier b:
/// C1 psi below, I_F + C2 phi_F above.
fn pasting_coefficients<F: Fundamentals>(f: &F, b: f64) -> Result<(f64, f64)> {
    let params = f.params();
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let psi_b = psi_raw(mu, sigma, q, b);
    let dpsi_b = psi_d1_raw(mu, sigma, q, b);
    let phi_b = f.phi(b)?;
    let dphi_b = f.phi_d1(b)?;
    let i_b = f.i_f(b)?;
    let di_b = f.i_f_d1(b)?;
    let wronskian = dpsi_b * phi_b - psi_b * dphi_b;
    if !(wronskian > 0.0) {
        return Err(Error::Inconsistent(format!(
            "pasting denominator psi' phi - psi phi' = {wronskian} at b = {b} must be positive"
        )));
    }
    let c1 = (di_b * phi_b - i_b * dphi_b) / wronskian;
    let c2 = (di_b * psi_b - i_b * dpsi_b) / wronskian;
    Ok((c1, c2))
}

/// Assemble the two-branch value profile on `grid` (0 and b inserted):
/// c1 psi below b, I_F + c2 phi_F at and above b.
fn assemble_value<F: Fundamentals>(
    f: &F,
    b: f64,
    c1: f64,
    c2: f64,
    grid: &[f64],
) -> Result<FnProfile> {
    let params = f.params();
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let mut nodes: Vec<f64> = grid.iter().copied().filter(|&x| x >= 0.0).collect();
    nodes.push(0.0);
    if b > 0.0 {
        nodes.push(b);
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * (1.0 + b.abs()));
    if nodes.len() < 2 {
        return Err(Error::Config("value grid needs at least two points".into()));
    }
    let max = *nodes.last().unwrap();
    if max > f.max_x() {
        return Err(Error::Domain {
            op: "assemble_value",
            msg: format!("grid point {max} beyond solved domain {}", f.max_x()),
        });
    }
    let n = nodes.len();
    let mut values = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for (i, &x) in nodes.iter().enumerate() {
        if b > 0.0 && x < b {
            values[i] = c1 * psi_raw(mu, sigma, q, x);
            d1[i] = c1 * psi_d1_raw(mu, sigma, q, x);
            d2[i] = c1 * psi_d2_raw(mu, sigma, q, x);
        } else {
            values[i] = f.i_f(x)? + c2 * f.phi(x)?;
            d1[i] = f.i_f_d1(x)? + c2 * f.phi_d1(x)?;
            d2[i] = f.i_f_d2(x)? + c2 * f.phi_d2(x)?;
        }
    }
    FnProfile::from_samples(nodes, values, d1, d2, SolveMeta::default())
}

/// Value of the generalized barrier strategy at level b >= 0 on `grid`.
pub fn value_at_barrier<F: Fundamentals>(f: &F, b: f64, grid: &[f64]) -> Result<BarrierValue> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Domain {
            op: "value_at_barrier",
            msg: format!("barrier b = {b} must be >= 0"),
        });
    }
    let (c1, c2) = pasting_coefficients(f, b)?;
    let value = assemble_value(f, b, c1, c2, grid)?;
    let params = f.params();
    let d1_below = c1 * psi_d1_raw(params.mu, params.sigma, params.q, b);
    let d1_above = f.i_f_d1(b)? + c2 * f.phi_d1(b)?;
    let v0 = value.value_at(0.0);
    if v0.abs() > 1e-9 {
        return Err(Error::Inconsistent(format!(
            "barrier value V_{b}(0) = {v0} should vanish"
        )));
    }
    Ok(BarrierValue {
        b,
        c1,
        c2,
        value,
        d1_jump_at_b: d1_below - d1_above,
    })
}

/// Which branch of the solution applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    ZeroBarrier,
    PositiveBarrier,
}

/// Solution diagnostics stored with the policy.
#[derive(Debug, Clone)]
pub struct PolicyDiagnostics {
    pub regime_test_value: f64,
    pub borderline: bool,
    pub b_hat: f64,
    pub root_residual: f64,
    pub root_sign_changes: usize,
    pub smooth_fit_d1_jump: f64,
    pub d2_jump_at_bstar: f64,
    pub value_continuity_gap: f64,
    pub phi_residual_norm: f64,
    pub if_residual_norm: f64,
    pub kinked_bound: bool,
}

/// The solved control: regime, barrier, coefficients and the value profile.
#[derive(Debug, Clone)]
pub struct Policy {
    pub regime: Regime,
    pub b_star: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub value: FnProfile,
    pub params: ModelParams,
    pub bound: BoundFn,
    pub diagnostics: PolicyDiagnostics,
}

/// Solve the control problem on the given output grid.
pub fn solve<F: Fundamentals>(f: &F, grid: &[f64]) -> Result<Policy> {
    let params = *f.params();
    let bound = f.bound().clone();
    let test = regime_test(f)?;
    let b_hat = psi_inflection(&params)?;
    let (mu, sigma, q) = (params.mu, params.sigma, params.q);
    let (phi_res, if_res) = f.residual_norms();

    if test.is_zero_barrier {
        // V = I_F - I_F(0) phi_F, i.e. the b = 0 branch with c2 = -I_F(0)
        let c2 = -f.i_f(0.0)?;
        let value = assemble_value(f, 0.0, f64::NAN, c2, grid)?;
        let policy = Policy {
            regime: Regime::ZeroBarrier,
            b_star: 0.0,
            c1: None,
            c2: None,
            value,
            params,
            bound,
            diagnostics: PolicyDiagnostics {
                regime_test_value: test.value,
                borderline: test.borderline,
                b_hat,
                root_residual: 0.0,
                root_sign_changes: 0,
                smooth_fit_d1_jump: 0.0,
                d2_jump_at_bstar: 0.0,
                value_continuity_gap: 0.0,
                phi_residual_norm: phi_res,
                if_residual_norm: if_res,
                kinked_bound: f.bound().is_kinked(),
            },
        };
        check_policy(&policy)?;
        return Ok(policy);
    }

    let root = find_bstar(f)?;
    let b = root.b_star;
    let dpsi_b = psi_d1_raw(mu, sigma, q, b);
    let c1 = 1.0 / dpsi_b;
    let dphi_b = f.phi_d1(b)?;
    let di_b = f.i_f_d1(b)?;
    let c2 = (1.0 - di_b) / dphi_b;
    if !(c1 > 0.0) {
        return Err(Error::Inconsistent(format!("C1 = {c1} must be positive")));
    }
    if c2 > 1e-12 {
        return Err(Error::Inconsistent(format!("C2 = {c2} must be <= 0")));
    }
    let value = assemble_value(f, b, c1, c2, grid)?;
    // pasting gaps at b* from the branch formulas (the right branch is stored)
    let below = (
        c1 * psi_raw(mu, sigma, q, b),
        c1 * dpsi_b,
        c1 * psi_d2_raw(mu, sigma, q, b),
    );
    let above = (
        f.i_f(b)? + c2 * f.phi(b)?,
        di_b + c2 * dphi_b,
        f.i_f_d2(b)? + c2 * f.phi_d2(b)?,
    );
    let policy = Policy {
        regime: Regime::PositiveBarrier,
        b_star: b,
        c1: Some(c1),
        c2: Some(c2),
        value,
        params,
        bound,
        diagnostics: PolicyDiagnostics {
            regime_test_value: test.value,
            borderline: false,
            b_hat,
            root_residual: root.residual,
            root_sign_changes: root.sign_changes,
            smooth_fit_d1_jump: below.1 - above.1,
            d2_jump_at_bstar: below.2 - above.2,
            value_continuity_gap: below.0 - above.0,
            phi_residual_norm: phi_res,
            if_residual_norm: if_res,
            kinked_bound: f.bound().is_kinked(),
        },
    };
    check_policy(&policy)?;
    Ok(policy)
}

/// Structural invariants every returned policy must satisfy.
fn check_policy(policy: &Policy) -> Result<()> {
    let v = &policy.value;
    if v.value_at(0.0).abs() > 1e-9 {
        return Err(Error::Inconsistent(format!(
            "V(0) = {} should vanish",
            v.value_at(0.0)
        )));
    }
    let slack = 1e-7;
    for i in 0..v.values.len() - 1 {
        if v.values[i + 1] < v.values[i] - slack {
            return Err(Error::Inconsistent(format!(
                "V not nondecreasing near x = {}",
                v.nodes[i]
            )));
        }
    }
    for (i, &d2) in v.d2.iter().enumerate() {
        if d2 > 1e-6 {
            return Err(Error::Inconsistent(format!(
                "V not concave: V'' = {d2} at x = {}",
                v.nodes[i]
            )));
        }
    }
    if policy.regime == Regime::PositiveBarrier
        && !(policy.b_star > 0.0 && policy.b_star <= policy.diagnostics.b_hat + 1e-12)
    {
        return Err(Error::Inconsistent(format!(
            "b* = {} outside (0, b_hat = {}]",
            policy.b_star, policy.diagnostics.b_hat
        )));
    }
    Ok(())
}
