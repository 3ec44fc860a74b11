//! Independent validation of a solved policy: the residual of the dynamic
//! programming equation with its bang-bang selector, smooth-fit and
//! regularity checks, and a Monte Carlo dominance suite that pits the claimed
//! optimum against a battery of admissible strategies.

use serde::Serialize;

use crate::error::Result;
use crate::mc_sim::{evaluate_strategy, SimConfig, MONITORING_BIAS_COEFF};
use crate::model::BoundFn;
use crate::optimizer::{Policy, Regime};

/// One named check with its measured value and pass line.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured.abs() <= tolerance,
        }
    }
}

/// Smooth-fit and boundary diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothFitReport {
    pub v_at_zero: f64,
    /// V'(b*) - 1 (positive-barrier regime only, else 0)
    pub d1_minus_one_at_bstar: f64,
    pub d1_jump_at_bstar: f64,
    pub d2_jump_at_bstar: f64,
}

/// One dominance experiment: an admissible strategy evaluated by simulation
/// against the analytic optimum.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceRow {
    pub strategy: String,
    pub x0: f64,
    pub analytic_value: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub z_score: f64,
    pub allowance: f64,
    /// MC value does not exceed the analytic optimum beyond noise + bias
    pub consistent: bool,
}

/// Full verification outcome. `overall` holds only when every analytic check
/// passes and no strategy significantly beats the claimed optimum; the
/// dominance rows are statistical evidence, not proof.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub hjb_sup_residual: f64,
    pub hjb_tolerance: f64,
    pub selector_consistency: bool,
    pub smooth_fit: SmoothFitReport,
    pub concavity_violations: usize,
    /// largest observed V' (bounded slope requirement)
    pub slope_sup: f64,
    pub checks: Vec<CheckResult>,
    pub dominance: Vec<DominanceRow>,
    pub overall: bool,
}

impl VerificationReport {
    pub fn first_failure(&self) -> Option<&str> {
        if let Some(c) = self.checks.iter().find(|c| !c.passed) {
            return Some(&c.name);
        }
        if self.dominance.iter().any(|d| !d.consistent) {
            return Some("dominance");
        }
        None
    }
}

/// Tolerance budget for the equation residual: ten times the solver error
/// carried by the fundamental profiles plus an interpolation floor.
pub fn default_hjb_tolerance(policy: &Policy) -> f64 {
    let solver = policy.diagnostics.phi_residual_norm + policy.diagnostics.if_residual_norm;
    (10.0 * solver).max(1e-6)
}

/// Sup over `grid` of the dynamic-programming residual
/// |(sigma^2/2) V'' + mu V' - q V + max(0, F(x)(1 - V'))|.
/// The selector's supremum over rates in [0, F(x)] is F(x)(1 - V')^+.
pub fn hjb_residual(policy: &Policy, grid: &[f64]) -> f64 {
    let p = &policy.params;
    let s2 = 0.5 * p.sigma * p.sigma;
    let mut worst: f64 = 0.0;
    for &x in grid {
        let v = policy.value.value_at(x);
        let d1 = policy.value.d1_at(x);
        let d2 = policy.value.d2_at(x);
        let selector = (policy.bound.eval(x) * (1.0 - d1)).max(0.0);
        let res = s2 * d2 + p.mu * d1 - p.q * v + selector;
        worst = worst.max(res.abs());
    }
    worst
}

/// Active-branch consistency: the sign of 1 - V' must match the bang-bang
/// rule (pay nothing below the barrier, pay at full rate above), away from
/// one mesh cell around the barrier.
pub fn selector_consistency(policy: &Policy) -> bool {
    let v = &policy.value;
    let b = policy.b_star;
    let cell = v
        .nodes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    for (i, &x) in v.nodes.iter().enumerate() {
        if (x - b).abs() <= cell {
            continue;
        }
        let d1 = v.d1[i];
        if x < b && d1 < 1.0 - 1e-9 {
            return false;
        }
        if x > b && d1 > 1.0 + 1e-9 {
            return false;
        }
    }
    true
}

/// Regularity checks: anchored value, smooth fit, pasting jumps, concavity
/// and slope bounds.
pub fn regularity_report(policy: &Policy) -> (SmoothFitReport, Vec<CheckResult>, usize, f64) {
    let v = &policy.value;
    let mut checks = Vec::new();
    let v0 = v.value_at(0.0);
    checks.push(CheckResult::new("value_at_zero", v0, 1e-9));

    let (d1_minus_one, d1_jump, d2_jump) = match policy.regime {
        Regime::PositiveBarrier => {
            let d1_b = v.d1_at(policy.b_star);
            checks.push(CheckResult::new("smooth_fit_slope", d1_b - 1.0, 1e-8));
            checks.push(CheckResult::new(
                "d1_jump_at_bstar",
                policy.diagnostics.smooth_fit_d1_jump,
                1e-8,
            ));
            checks.push(CheckResult::new(
                "d2_jump_at_bstar",
                policy.diagnostics.d2_jump_at_bstar,
                1e-5,
            ));
            checks.push(CheckResult::new(
                "bstar_below_inflection",
                (policy.b_star - policy.diagnostics.b_hat).max(0.0),
                1e-12,
            ));
            // concavity + smooth fit force V' >= 1 up to the barrier
            let mut min_d1_below: f64 = f64::MAX;
            for (i, &x) in v.nodes.iter().enumerate() {
                if x <= policy.b_star {
                    min_d1_below = min_d1_below.min(v.d1[i]);
                }
            }
            checks.push(CheckResult::new(
                "slope_at_least_one_below_bstar",
                (1.0 - min_d1_below).max(0.0),
                1e-9,
            ));
            (
                d1_b - 1.0,
                policy.diagnostics.smooth_fit_d1_jump,
                policy.diagnostics.d2_jump_at_bstar,
            )
        }
        Regime::ZeroBarrier => {
            checks.push(CheckResult::new(
                "slope_at_zero_at_most_one",
                (v.d1_at(0.0) - 1.0).max(0.0),
                1e-9,
            ));
            (0.0, 0.0, 0.0)
        }
    };

    let concavity_violations = v.d2.iter().filter(|&&d2| d2 > 1e-8).count();
    checks.push(CheckResult::new(
        "concavity_violations",
        concavity_violations as f64,
        0.0,
    ));
    let slope_sup = v.d1.iter().cloned().fold(f64::MIN, f64::max);
    let slope_min = v.d1.iter().cloned().fold(f64::MAX, f64::min);
    checks.push(CheckResult::new("slope_nonnegative", (-slope_min).max(0.0), 1e-9));
    // concavity makes V'(0+) the slope bound
    checks.push(CheckResult::new(
        "slope_bounded_by_initial",
        (slope_sup - v.d1_at(0.0)).max(0.0),
        1e-9,
    ));
    (
        SmoothFitReport {
            v_at_zero: v0,
            d1_minus_one_at_bstar: d1_minus_one,
            d1_jump_at_bstar: d1_jump,
            d2_jump_at_bstar: d2_jump,
        },
        checks,
        concavity_violations,
        slope_sup,
    )
}

/// An admissible stationary rate rule for the dominance suite.
#[derive(Debug, Clone)]
pub enum StrategyRule {
    /// full rate above the level, nothing below
    Barrier(f64),
    /// a constant fraction of the admissible cap
    ProportionalCap(f64),
    /// full rate only below the level: pays while close to ruin
    FullRateBelow(f64),
}

impl StrategyRule {
    pub fn rate(&self, bound: &BoundFn, u: f64) -> f64 {
        match self {
            StrategyRule::Barrier(b) => {
                if u > *b {
                    bound.eval(u).max(0.0)
                } else {
                    0.0
                }
            }
            StrategyRule::ProportionalCap(c) => c * bound.eval(u).max(0.0),
            StrategyRule::FullRateBelow(cut) => {
                if u <= *cut {
                    bound.eval(u).max(0.0)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            StrategyRule::Barrier(b) => format!("barrier(b={b:.6})"),
            StrategyRule::ProportionalCap(c) => format!("proportional(c={c:.2})"),
            StrategyRule::FullRateBelow(cut) => format!("full_rate_below({cut:.6})"),
        }
    }
}

/// Default battery: five barriers spanning the inflection point, three
/// proportional rules, one adversarial near-ruin payer.
pub fn default_strategy_battery(b_hat: f64) -> Vec<StrategyRule> {
    vec![
        StrategyRule::Barrier(0.0),
        StrategyRule::Barrier(0.25 * b_hat),
        StrategyRule::Barrier(0.5 * b_hat),
        StrategyRule::Barrier(b_hat),
        StrategyRule::Barrier(2.0 * b_hat),
        StrategyRule::ProportionalCap(0.25),
        StrategyRule::ProportionalCap(0.5),
        StrategyRule::ProportionalCap(0.75),
        StrategyRule::FullRateBelow(0.5 * b_hat),
    ]
}

/// Simulate each strategy from each start and compare with the analytic
/// optimum: no admissible strategy may beat it beyond noise plus the
/// documented discretization bias.
pub fn dominance_suite(
    policy: &Policy,
    strategies: &[StrategyRule],
    x0s: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<DominanceRow>> {
    let slope_scale = policy.value.d1_at(0.0).max(1.0);
    let bias = MONITORING_BIAS_COEFF * policy.params.sigma * cfg.dt.sqrt() * slope_scale;
    let mut rows = Vec::new();
    for rule in strategies {
        for &x0 in x0s {
            let est = evaluate_strategy(
                &policy.params,
                &policy.bound,
                |u| rule.rate(&policy.bound, u),
                x0,
                cfg,
            )?;
            let analytic = policy.value.value_at(x0);
            let allowance = 3.0 * est.stderr + bias + est.discount_tail_bound;
            let z = if est.stderr > 0.0 {
                (est.mean - analytic) / est.stderr
            } else {
                0.0
            };
            rows.push(DominanceRow {
                strategy: rule.describe(),
                x0,
                analytic_value: analytic,
                mc_mean: est.mean,
                mc_stderr: est.stderr,
                z_score: z,
                allowance,
                consistent: est.mean <= analytic + allowance,
            });
        }
    }
    Ok(rows)
}

/// Verification options; `run_dominance` disables the Monte Carlo stage for
/// quick analytic-only audits.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub hjb_tolerance: Option<f64>,
    pub run_dominance: bool,
    pub sim: SimConfig,
    pub x0s: Vec<f64>,
}

/// Run the full verification battery on a solved policy.
pub fn verify_policy(policy: &Policy, opts: &VerifyOptions) -> Result<VerificationReport> {
    let hjb_tol = opts
        .hjb_tolerance
        .unwrap_or_else(|| default_hjb_tolerance(policy));
    let residual = hjb_residual(policy, &policy.value.nodes);
    let selector_ok = selector_consistency(policy);
    let (smooth_fit, mut checks, concavity_violations, slope_sup) = regularity_report(policy);
    checks.insert(0, CheckResult::new("hjb_residual", residual, hjb_tol));
    checks.push(CheckResult::new(
        "selector_consistency",
        if selector_ok { 0.0 } else { 1.0 },
        0.0,
    ));
    let dominance = if opts.run_dominance {
        let battery = default_strategy_battery(policy.diagnostics.b_hat);
        dominance_suite(policy, &battery, &opts.x0s, &opts.sim)?
    } else {
        Vec::new()
    };
    let overall = checks.iter().all(|c| c.passed) && dominance.iter().all(|d| d.consistent);
    Ok(VerificationReport {
        hjb_sup_residual: residual,
        hjb_tolerance: hjb_tol,
        selector_consistency: selector_ok,
        smooth_fit,
        concavity_violations,
        slope_sup,
        checks,
        dominance,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::ode_engine::SolveConfig;
    use crate::optimizer::{solve, AffineFundamentals, ProfileFundamentals};

    fn p(mu: f64, sigma: f64, q: f64) -> ModelParams {
        ModelParams::new(mu, sigma, q).unwrap()
    }

    fn grid(limit: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| limit * i as f64 / n as f64).collect()
    }

    fn solved_policy() -> Policy {
        let params = p(2.0, 1.0, 0.3);
        let bound = crate::model::BoundFn::affine(1.0, 0.25).unwrap();
        let cfg = SolveConfig {
            tol: 1e-7,
            ..SolveConfig::default()
        };
        let f = ProfileFundamentals::solve(params, bound, &cfg, 8.0).unwrap();
        solve(&f, &grid(8.0, 400)).unwrap()
    }

    #[test]
    fn solved_policy_passes_analytic_checks() {
        let policy = solved_policy();
        let residual = hjb_residual(&policy, &policy.value.nodes);
        assert!(residual <= 1e-5, "hjb residual {residual}");
        assert!(selector_consistency(&policy));
        let (_, checks, violations, _) = regularity_report(&policy);
        for c in &checks {
            assert!(c.passed, "{} measured {} > {}", c.name, c.measured, c.tolerance);
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn below_barrier_residual_is_tiny() {
        // the selector vanishes below the barrier and the psi branch is exact
        let policy = solved_policy();
        let p = &policy.params;
        let s2 = 0.5 * p.sigma * p.sigma;
        let mut seen = 0;
        for (i, &x) in policy.value.nodes.iter().enumerate() {
            if x >= policy.b_star {
                continue;
            }
            seen += 1;
            let res = s2 * policy.value.d2[i] + p.mu * policy.value.d1[i]
                - p.q * policy.value.values[i];
            assert!(res.abs() < 1e-6, "linear residual {res} at {x}");
        }
        assert!(seen > 10, "too few below-barrier nodes ({seen})");
    }

    #[test]
    fn corrupted_policy_lights_up() {
        let mut policy = solved_policy();
        let qmin = policy
            .value
            .values
            .iter()
            .skip(1)
            .cloned()
            .fold(f64::MAX, f64::min)
            * policy.params.q;
        for v in &mut policy.value.values {
            *v *= 1.01;
        }
        for d in &mut policy.value.d1 {
            *d *= 1.01;
        }
        for d in &mut policy.value.d2 {
            *d *= 1.01;
        }
        let residual = hjb_residual(&policy, &policy.value.nodes.clone());
        assert!(
            residual >= 0.01 * qmin,
            "corrupted residual {residual} below 0.01 q min V = {}",
            0.01 * qmin
        );
    }

    #[test]
    fn perturbed_barrier_fails_smooth_fit() {
        let policy = solved_policy();
        let mut tampered = policy.clone();
        tampered.b_star *= 1.1;
        let (_, checks, _, _) = regularity_report(&tampered);
        let smooth = checks.iter().find(|c| c.name == "smooth_fit_slope").unwrap();
        assert!(!smooth.passed, "smooth fit should fail after moving b*");
    }

    #[test]
    fn dominance_suite_consistent_on_small_battery() {
        let policy = solved_policy();
        let cfg = SimConfig {
            dt: 2e-3,
            horizon: 20.0 / policy.params.q,
            n_paths: 4_000,
            seed: 7,
            antithetic: true,
            allow_short_horizon: false,
        };
        let battery = vec![
            StrategyRule::Barrier(policy.b_star),
            StrategyRule::ProportionalCap(0.5),
            StrategyRule::FullRateBelow(0.5 * policy.diagnostics.b_hat),
        ];
        let rows = dominance_suite(&policy, &battery, &[1.0], &cfg).unwrap();
        for row in &rows {
            assert!(
                row.consistent,
                "{} at x0={} beats the optimum: MC {} vs analytic {} (allowance {})",
                row.strategy, row.x0, row.mc_mean, row.analytic_value, row.allowance
            );
        }
        // the optimal barrier itself should also be close from below
        let own = &rows[0];
        assert!(
            own.mc_mean >= own.analytic_value - 4.0 * own.mc_stderr - own.allowance,
            "own-strategy MC {} too far below analytic {}",
            own.mc_mean,
            own.analytic_value
        );
    }

    #[test]
    fn verify_policy_end_to_end() {
        let policy = solved_policy();
        let opts = VerifyOptions {
            hjb_tolerance: None,
            run_dominance: false,
            sim: SimConfig::default_for(&policy.params),
            x0s: vec![1.0],
        };
        let report = verify_policy(&policy, &opts).unwrap();
        assert!(report.overall, "failed: {:?}", report.first_failure());
        // closed-form backend passes too
        let params = p(2.0, 1.0, 0.3);
        let f = AffineFundamentals::new(params, 1.0, 0.25).unwrap();
        let pol2 = solve(&f, &grid(8.0, 400)).unwrap();
        let report2 = verify_policy(&pol2, &opts).unwrap();
        assert!(report2.overall, "failed: {:?}", report2.first_failure());
    }
}
