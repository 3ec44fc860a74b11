//! Two-point boundary-value solves for the fundamental functions of the
//! controlled diffusion: the decreasing solution `phi_F` of
//! (sigma^2/2) f'' + (mu - F) f' - q f = 0 with f(0) = 1, f(inf) = 0, and the
//! bounded-slope particular solution `I_F` of the same operator with right
//! hand side -F.
//!
//! Both problems are linear, so each solve is one tridiagonal system on a
//! uniform mesh (second-order central differences, ghost-node Robin/Neumann
//! boundaries). The mesh is doubled until two consecutive solutions agree to
//! the requested tolerance, and the truncated domain is doubled until the
//! solution on the inner half stops moving.

use crate::closed_forms::char_roots;
use crate::error::{Error, Result};
use crate::model::{BoundFn, ModelParams};
use crate::numerics::{hermite, segment_index};

/// Solver controls. `truncation_l` / `truncation_m` override the automatic
/// domain cutoffs when set.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// right domain cutoff (> 0); None = automatic
    pub truncation_l: Option<f64>,
    /// left cutoff below zero for I_F (>= 0); None = automatic
    pub truncation_m: Option<f64>,
    /// initial node count (>= 64)
    pub mesh_n: usize,
    /// target sup-norm change between consecutive mesh refinements
    pub tol: f64,
    /// maximum mesh-doubling rounds
    pub refine_max: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            truncation_l: None,
            truncation_m: None,
            mesh_n: 2048,
            tol: 1e-8,
            refine_max: 12,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.truncation_l {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("truncation_l = {l} must be > 0")));
            }
        }
        if let Some(m) = self.truncation_m {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("truncation_m = {m} must be >= 0")));
            }
        }
        if self.mesh_n < 64 {
            return Err(Error::Config(format!(
                "mesh_n = {} must be >= 64",
                self.mesh_n
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol = {} must be > 0", self.tol)));
        }
        Ok(())
    }

    fn guard_tol(&self) -> f64 {
        0.5 * self.tol
    }
}

/// Solve diagnostics carried by a profile.
#[derive(Debug, Clone, Default)]
pub struct SolveMeta {
    /// final right cutoff
    pub truncation_l: f64,
    /// final left cutoff (0 for phi_F)
    pub truncation_m: f64,
    /// final node count
    pub mesh_n: usize,
    /// estimated remaining discretization error (Richardson estimate)
    pub residual_norm: f64,
    /// mesh-doubling rounds used
    pub refine_rounds: usize,
    /// domain-doubling rounds used
    pub domain_doublings: usize,
}

/// A function on a grid: values with first and second derivatives at strictly
/// increasing nodes. Evaluation between nodes is cubic Hermite in (value, d1);
/// the stored d2 at a node is consistent with the generating equation, while
/// off-node d2 comes from the interpolant.
#[derive(Debug, Clone)]
pub struct FnProfile {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub domain_left: f64,
    pub domain_right: f64,
    pub meta: SolveMeta,
}

impl FnProfile {
    pub fn from_samples(
        nodes: Vec<f64>,
        values: Vec<f64>,
        d1: Vec<f64>,
        d2: Vec<f64>,
        meta: SolveMeta,
    ) -> Result<Self> {
        let n = nodes.len();
        if n < 2 || values.len() != n || d1.len() != n || d2.len() != n {
            return Err(Error::Inconsistent(format!(
                "profile arrays must share a length >= 2 (got {n}, {}, {}, {})",
                values.len(),
                d1.len(),
                d2.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Inconsistent(
                "profile nodes must be strictly increasing".into(),
            ));
        }
        let (domain_left, domain_right) = (nodes[0], nodes[n - 1]);
        Ok(Self {
            nodes,
            values,
            d1,
            d2,
            domain_left,
            domain_right,
            meta,
        })
    }

    fn segment(&self, x: f64) -> usize {
        segment_index(&self.nodes, x)
    }

    fn interp(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        hermite(
            x,
            self.nodes[i],
            self.nodes[i + 1],
            self.values[i],
            self.values[i + 1],
            self.d1[i],
            self.d1[i + 1],
        )
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.interp(x).0
    }

    pub fn d1_at(&self, x: f64) -> f64 {
        self.interp(x).1
    }

    /// Second derivative: the stored (equation-consistent) value at a node,
    /// the interpolant's curvature in between.
    pub fn d2_at(&self, x: f64) -> f64 {
        if let Ok(i) = self.nodes.binary_search_by(|n| n.partial_cmp(&x).unwrap()) {
            return self.d2[i];
        }
        self.interp(x).2
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.domain_left..=self.domain_right).contains(&x)
    }
}

// ---------------------------------------------------------------------------
// internals
// ---------------------------------------------------------------------------

/// Positive decay rate of the locally decaying mode e^{-lambda x} of the
/// frozen-coefficient operator at drift mu - F(l).
fn far_field_decay(params: &ModelParams, bound: &BoundFn, l: f64) -> f64 {
    char_roots(params.mu - bound.eval(l), params.sigma, params.q).1
}

fn default_margin(params: &ModelParams) -> f64 {
    10.0 * params.sigma / (2.0 * params.q).sqrt()
}

/// Thomas solve on rows (lower, diag, upper, rhs); consumes diag and rhs.
fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    for i in 1..n {
        let pivot = diag[i - 1];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return Err(Error::IllConditioned {
                op: "tridiagonal solve",
                msg: format!("pivot {pivot} at row {}", i - 1),
            });
        }
        let w = lower[i - 1] / pivot;
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut x = vec![0.0; n];
    let last = diag[n - 1];
    if last.abs() < 1e-300 || !last.is_finite() {
        return Err(Error::IllConditioned {
            op: "tridiagonal solve",
            msg: "singular last pivot".into(),
        });
    }
    x[n - 1] = rhs[n - 1] / last;
    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - upper[i] * x[i + 1]) / diag[i];
    }
    Ok(x)
}

/// Node count keeping the mesh Peclet number |mu - F| h / sigma^2 below 1/2,
/// so the central scheme stays oscillation-free.
fn peclet_nodes(
    params: &ModelParams,
    bound: &BoundFn,
    left: f64,
    right: f64,
    base: usize,
) -> usize {
    let mut max_drift: f64 = 0.0;
    for i in 0..=64 {
        let x = left + (right - left) * i as f64 / 64.0;
        max_drift = max_drift.max((params.mu - bound.eval(x)).abs());
    }
    let h_max = 0.5 * params.sigma * params.sigma / max_drift.max(1e-12);
    let needed = ((right - left) / h_max).ceil() as usize;
    base.max(needed.next_power_of_two())
}

const MESH_N_MAX: usize = 1 << 22;

/// Mesh over [left, right] (left <= 0 <= right) with roughly n0 cells, with
/// zero and any coefficient kink of the bound placed exactly on nodes so no
/// interpolation segment straddles a derivative jump.
fn aligned_mesh(bound: &BoundFn, left: f64, right: f64, n0: usize) -> (f64, f64, usize) {
    let mut h = (right - left) / n0 as f64;
    if let Some(xk) = bound.kink() {
        if xk > h && xk < right - h {
            let j = (xk / h).round().max(1.0);
            h = xk / j;
        }
    }
    let left_cells = if left < 0.0 {
        ((-left) / h).ceil() as usize
    } else {
        0
    };
    let right_cells = (right / h).ceil().max(1.0) as usize;
    (
        -(left_cells as f64) * h,
        right_cells as f64 * h,
        left_cells + right_cells,
    )
}

fn solve_phi_once(params: &ModelParams, bound: &BoundFn, l: f64, n: usize) -> Result<Vec<f64>> {
    let h = l / n as f64;
    let s2 = 0.5 * params.sigma * params.sigma;
    let sig2 = params.sigma * params.sigma;
    let q = params.q;
    let lambda = far_field_decay(params, bound, l);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n + 1];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n + 1];
    diag[0] = 1.0;
    rhs[0] = 1.0;
    for i in 1..n {
        let x = i as f64 * h;
        let drift = params.mu - bound.eval(x);
        lower[i - 1] = s2 / (h * h) - drift / (2.0 * h);
        diag[i] = -2.0 * s2 / (h * h) - q;
        upper[i] = s2 / (h * h) + drift / (2.0 * h);
    }
    // Robin f'(l) + lambda f(l) = 0 via ghost-node elimination
    let drift_l = params.mu - bound.eval(l);
    lower[n - 1] = sig2 / (h * h);
    diag[n] = -(sig2 / (h * h) + sig2 * lambda / h + drift_l * lambda + q);
    thomas(&lower, &mut diag, &upper, &mut rhs)
}

fn solve_if_once(
    params: &ModelParams,
    bound: &BoundFn,
    m: f64,
    l: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let h = (l + m) / n as f64;
    let s2 = 0.5 * params.sigma * params.sigma;
    let sig2 = params.sigma * params.sigma;
    let q = params.q;
    let slope_left = {
        let fp = bound.right_slope_at_zero();
        fp / (q + fp)
    };
    let slope_right = {
        let fp = bound.deriv(l).max(0.0);
        fp / (q + fp)
    };
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n + 1];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n + 1];
    let x0 = -m;
    // Neumann f'(-m) = slope_left via ghost node
    {
        let drift = params.mu - bound.eval(x0);
        diag[0] = -(sig2 / (h * h) + q);
        upper[0] = sig2 / (h * h);
        rhs[0] = -bound.eval(x0) - drift * slope_left + sig2 / h * slope_left;
    }
    for i in 1..n {
        let x = x0 + i as f64 * h;
        let drift = params.mu - bound.eval(x);
        lower[i - 1] = s2 / (h * h) - drift / (2.0 * h);
        diag[i] = -2.0 * s2 / (h * h) - q;
        upper[i] = s2 / (h * h) + drift / (2.0 * h);
        rhs[i] = -bound.eval(x);
    }
    // Neumann f'(l) = slope_right
    {
        let drift = params.mu - bound.eval(l);
        lower[n - 1] = sig2 / (h * h);
        diag[n] = -(sig2 / (h * h) + q);
        rhs[n] = -bound.eval(l) - drift * slope_right - sig2 / h * slope_right;
    }
    thomas(&lower, &mut diag, &upper, &mut rhs)
}

/// Double the mesh until two consecutive solutions agree to `tol` at shared
/// nodes; returns (fine solution, cells, error estimate, rounds).
fn refine<F>(
    solve: F,
    n0: usize,
    tol: f64,
    refine_max: usize,
) -> Result<(Vec<f64>, usize, f64, usize)>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    let mut n = n0;
    let mut coarse = solve(n)?;
    let mut history: Vec<f64> = Vec::new();
    let mut best: Option<(Vec<f64>, usize, f64, usize)> = None;
    for round in 0..refine_max {
        let fine = solve(2 * n)?;
        let mut diff: f64 = 0.0;
        for (i, c) in coarse.iter().enumerate() {
            diff = diff.max((c - fine[2 * i]).abs());
        }
        if diff <= tol {
            // second-order scheme: the fine grid carries about diff/3
            return Ok((fine, 2 * n, diff / 3.0, round + 1));
        }
        // halving stopped helping: rounding noise floor reached
        let bounced = history.last().is_some_and(|&prev| diff > 1.02 * prev);
        history.push(diff);
        if best.as_ref().is_none_or(|b| diff < b.2) {
            best = Some((fine.clone(), 2 * n, diff, round + 1));
        }
        if bounced || 2 * n >= MESH_N_MAX {
            let (vals, nn, d, r) = best.unwrap();
            if d <= 3.0 * tol {
                return Ok((vals, nn, d / 3.0, r));
            }
            return Err(Error::NonConvergence {
                rounds: round + 1,
                history,
            });
        }
        n *= 2;
        coarse = fine;
    }
    Err(Error::NonConvergence {
        rounds: refine_max,
        history,
    })
}

/// Assemble a profile from a solved value vector on the uniform mesh: central
/// first derivatives (imposed slopes at Neumann/Robin ends) and second
/// derivatives recovered from the generating equation.
fn profile_from_solution(
    params: &ModelParams,
    bound: &BoundFn,
    left: f64,
    right: f64,
    values: Vec<f64>,
    rhs_is_minus_f: bool,
    boundary_slopes: (Option<f64>, Option<f64>),
    meta: SolveMeta,
) -> Result<FnProfile> {
    let n = values.len() - 1;
    let h = (right - left) / n as f64;
    let s2 = 0.5 * params.sigma * params.sigma;
    let nodes: Vec<f64> = (0..=n).map(|i| left + i as f64 * h).collect();
    // fourth-order slopes: cubic-Hermite evaluation between nodes needs the
    // stored slopes consistent with the values beyond the scheme's own order,
    // or the interpolant's curvature degrades to O(h)
    let mut d1 = vec![0.0; n + 1];
    for i in 1..n {
        d1[i] = if i >= 2 && i + 2 <= n {
            (-values[i + 2] + 8.0 * values[i + 1] - 8.0 * values[i - 1] + values[i - 2])
                / (12.0 * h)
        } else {
            (values[i + 1] - values[i - 1]) / (2.0 * h)
        };
    }
    d1[0] = boundary_slopes
        .0
        .unwrap_or((-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h));
    d1[n] = boundary_slopes
        .1
        .unwrap_or((3.0 * values[n] - 4.0 * values[n - 1] + values[n - 2]) / (2.0 * h));
    let mut d2 = vec![0.0; n + 1];
    for i in 0..=n {
        let f_x = bound.eval(nodes[i]);
        let rhs = if rhs_is_minus_f { -f_x } else { 0.0 };
        d2[i] = (rhs - (params.mu - f_x) * d1[i] + params.q * values[i]) / s2;
    }
    FnProfile::from_samples(nodes, values, d1, d2, meta)
}

/// Solve for phi_F on [0, L]: value 1 at zero, strictly decreasing, convex,
/// far field closed by the frozen-coefficient Robin condition
/// f'(L) + lambda(L) f(L) = 0 with lambda(L) the positive decay root at L.
pub fn solve_phi_f(params: &ModelParams, bound: &BoundFn, cfg: &SolveConfig) -> Result<FnProfile> {
    cfg.validate()?;
    let mut l = cfg
        .truncation_l
        .unwrap_or_else(|| default_margin(params))
        .max(default_margin(params));
    // pre-enlarge while the frozen decay budget is clearly short; capped
    // because lambda(L) * L plateaus for unbounded bounds
    for _ in 0..2 {
        if far_field_decay(params, bound, l) * l > 30.0 {
            break;
        }
        l *= 2.0;
    }
    let mut doublings = 0usize;
    loop {
        let n0 = peclet_nodes(params, bound, 0.0, l, cfg.mesh_n);
        let (_, l_adj, n0) = aligned_mesh(bound, 0.0, l, n0);
        l = l_adj;
        let (vals, n_fine, est, rounds) = refine(
            |n: usize| solve_phi_once(params, bound, l, n),
            n0,
            cfg.tol,
            cfg.refine_max,
        )?;
        // domain-doubling guard: the solution on [0, l/2] must not move
        let l2 = 2.0 * l;
        let n2_fine = 2 * n_fine; // same spacing, aligned nodes
        let vals2 = solve_phi_once(params, bound, l2, n2_fine)?;
        let mut guard_diff: f64 = 0.0;
        for i in 0..=n_fine / 2 {
            guard_diff = guard_diff.max((vals[i] - vals2[i]).abs());
        }
        if guard_diff <= cfg.guard_tol() {
            let lambda = far_field_decay(params, bound, l);
            let d1_end = -lambda * *vals.last().unwrap();
            let meta = SolveMeta {
                truncation_l: l,
                truncation_m: 0.0,
                mesh_n: n_fine,
                residual_norm: est.max(guard_diff),
                refine_rounds: rounds,
                domain_doublings: doublings,
            };
            let profile = profile_from_solution(
                params,
                bound,
                0.0,
                l,
                vals,
                false,
                (None, Some(d1_end)),
                meta,
            )?;
            check_phi_shape(&profile, cfg)?;
            return Ok(profile);
        }
        if doublings >= 5 {
            return Err(Error::NonConvergence {
                rounds: doublings,
                history: vec![guard_diff],
            });
        }
        l = l2;
        doublings += 1;
    }
}

fn check_phi_shape(profile: &FnProfile, cfg: &SolveConfig) -> Result<()> {
    let slack = 10.0 * cfg.tol.max(profile.meta.residual_norm);
    for i in 0..profile.values.len() - 1 {
        if profile.values[i + 1] > profile.values[i] + slack {
            return Err(Error::Inconsistent(format!(
                "phi not decreasing near x = {}",
                profile.nodes[i]
            )));
        }
    }
    if profile.values.iter().any(|&v| v < -slack || v > 1.0 + slack) {
        return Err(Error::Inconsistent("phi left (0, 1]".into()));
    }
    Ok(())
}

/// Solve for I_F on [-M, L]: slope in [0, 1] on [0, L], concave, Neumann far
/// fields carrying the slopes of the locally affine asymptotic regimes.
pub fn solve_i_f(params: &ModelParams, bound: &BoundFn, cfg: &SolveConfig) -> Result<FnProfile> {
    cfg.validate()?;
    let q = params.q;
    // constant bound: I_F = R/q exactly, M = 0
    if let BoundFn::Constant { r } = bound {
        let l = cfg
            .truncation_l
            .unwrap_or_else(|| default_margin(params))
            .max(default_margin(params));
        let n = cfg.mesh_n.max(64);
        let h = l / n as f64;
        let nodes: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let c = r / q;
        let meta = SolveMeta {
            truncation_l: l,
            truncation_m: 0.0,
            mesh_n: n,
            residual_norm: 0.0,
            refine_rounds: 0,
            domain_doublings: 0,
        };
        return FnProfile::from_samples(
            nodes,
            vec![c; n + 1],
            vec![0.0; n + 1],
            vec![0.0; n + 1],
            meta,
        );
    }
    let slope0 = bound.right_slope_at_zero();
    let mut l = cfg
        .truncation_l
        .unwrap_or_else(|| default_margin(params))
        .max(default_margin(params));
    let mut m = if slope0 == 0.0 {
        cfg.truncation_m.unwrap_or(0.0)
    } else {
        cfg.truncation_m
            .unwrap_or_else(|| default_margin(params) + 5.0 * params.mu / q.max(slope0))
    };
    let mut doublings = 0usize;
    loop {
        let n0 = peclet_nodes(params, bound, -m, l, cfg.mesh_n);
        let (neg_m, l_adj, n0) = aligned_mesh(bound, -m, l, n0);
        m = -neg_m;
        l = l_adj;
        let (vals, n_fine, est, rounds) = refine(
            |n: usize| solve_if_once(params, bound, m, l, n),
            n0,
            cfg.tol,
            cfg.refine_max,
        )?;
        // doubling guard on both cutoffs; the enlarged domain keeps the mesh
        // spacing so nodes align exactly
        let h = (l + m) / n_fine as f64;
        let k_left = if m > 0.0 { (m / h).round() as usize } else { 0 };
        let k_right = (l / h).round() as usize;
        let m2 = m + k_left as f64 * h;
        let l2 = l + k_right as f64 * h;
        let vals2 = solve_if_once(params, bound, m2, l2, n_fine + k_left + k_right)?;
        let mut guard_diff: f64 = 0.0;
        for i in 0..=n_fine {
            let x = -m + i as f64 * h;
            if !(0.0..=l / 2.0).contains(&x) {
                continue;
            }
            guard_diff = guard_diff.max((vals[i] - vals2[i + k_left]).abs());
        }
        if guard_diff <= cfg.guard_tol() {
            let fp_l = bound.deriv(l).max(0.0);
            let meta = SolveMeta {
                truncation_l: l,
                truncation_m: m,
                mesh_n: n_fine,
                residual_norm: est.max(guard_diff),
                refine_rounds: rounds,
                domain_doublings: doublings,
            };
            let profile = profile_from_solution(
                params,
                bound,
                -m,
                l,
                vals,
                true,
                (Some(slope0 / (q + slope0)), Some(fp_l / (q + fp_l))),
                meta,
            )?;
            check_if_shape(&profile, cfg)?;
            return Ok(profile);
        }
        if doublings >= 5 {
            return Err(Error::NonConvergence {
                rounds: doublings,
                history: vec![guard_diff],
            });
        }
        l = l2;
        m = m2;
        doublings += 1;
    }
}

fn check_if_shape(profile: &FnProfile, cfg: &SolveConfig) -> Result<()> {
    let slack = cfg.tol.max(10.0 * profile.meta.residual_norm) + 1e-12;
    for (i, &x) in profile.nodes.iter().enumerate() {
        if x < 0.0 {
            continue;
        }
        let s = profile.d1[i];
        if !(-slack..=1.0 + slack).contains(&s) {
            return Err(Error::Inconsistent(format!(
                "I_F slope {s} outside [0, 1] at x = {x}"
            )));
        }
    }
    Ok(())
}

/// Residual diagnostic: sup over nodes of
/// |(sigma^2/2) d2 + (mu - F) d1 - q value - rhs| using the profile's stored
/// derivative arrays. Measures the profile's internal equation consistency;
/// a profile whose values were altered without refreshing d1/d2 lights up.
pub fn gamma_residual(
    params: &ModelParams,
    bound: &BoundFn,
    profile: &FnProfile,
    rhs_is_minus_f: bool,
) -> f64 {
    let s2 = 0.5 * params.sigma * params.sigma;
    let mut worst: f64 = 0.0;
    for i in 0..profile.nodes.len() {
        let x = profile.nodes[i];
        let f_x = bound.eval(x);
        let rhs = if rhs_is_minus_f { -f_x } else { 0.0 };
        let res = s2 * profile.d2[i] + (params.mu - f_x) * profile.d1[i]
            - params.q * profile.values[i]
            - rhs;
        worst = worst.max(res.abs());
    }
    worst
}
