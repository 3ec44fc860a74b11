//! Config-file driven front end.
//!
//! Subcommands: `solve`, `verify`, `simulate`, `compare`. One JSON config
//! describes the problem (parameters, bound, solver and simulation options,
//! output grid); artifacts are a policy report (JSON), profile and report
//! CSVs. Exit codes: 0 success, 2 configuration error, 3 solver error,
//! 4 verification failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::closed_forms::psi_inflection;
use crate::error::{Error, Result};
use crate::mc_sim::{evaluate_strategy_with_payoffs, SimConfig};
use crate::model::{BoundFn, ModelParams};
use crate::ode_engine::{FnProfile, SolveConfig, SolveMeta};
use crate::optimizer::{
    solve, AffineFundamentals, CappedFundamentals, Fundamentals, Policy, PolicyDiagnostics,
    ProfileFundamentals, Regime,
};
use crate::verifier::{verify_policy, StrategyRule, VerificationReport, VerifyOptions};

pub const REPORT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
}

impl ParamsSpec {
    pub fn build(&self) -> Result<ModelParams> {
        ModelParams::new(self.mu, self.sigma, self.q)
    }
}

/// Bound descriptor. Tabulated bounds carry (x, F(x)) samples and are
/// validated and interpolated monotonically at build time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSpec {
    Constant {
        #[serde(rename = "R")]
        r: f64,
    },
    Linear {
        #[serde(rename = "K")]
        k: f64,
    },
    Affine {
        #[serde(rename = "K")]
        k: f64,
        #[serde(rename = "R")]
        r: f64,
    },
    CappedLinear {
        #[serde(rename = "K")]
        k: f64,
        #[serde(rename = "R")]
        r: f64,
    },
    Tabulated {
        xs: Vec<f64>,
        values: Vec<f64>,
    },
}

impl BoundSpec {
    pub fn build(&self) -> Result<BoundFn> {
        match self {
            BoundSpec::Constant { r } => BoundFn::constant(*r),
            BoundSpec::Linear { k } => BoundFn::linear(*k),
            BoundSpec::Affine { k, r } => BoundFn::affine(*k, *r),
            BoundSpec::CappedLinear { k, r } => BoundFn::capped_linear(*k, *r),
            BoundSpec::Tabulated { xs, values } => BoundFn::from_table(xs, values),
        }
    }

    /// closed forms exist for the affine family and the capped-linear bound
    pub fn has_closed_form(&self) -> bool {
        matches!(
            self,
            BoundSpec::Linear { .. } | BoundSpec::Affine { .. } | BoundSpec::CappedLinear { .. }
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    #[serde(default)]
    pub truncation_l: Option<f64>,
    #[serde(default)]
    pub truncation_m: Option<f64>,
    #[serde(default)]
    pub mesh_n: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub refine_max: Option<usize>,
}

impl SolveSpec {
    pub fn build(&self) -> SolveConfig {
        let d = SolveConfig::default();
        SolveConfig {
            truncation_l: self.truncation_l,
            truncation_m: self.truncation_m,
            mesh_n: self.mesh_n.unwrap_or(d.mesh_n),
            tol: self.tol.unwrap_or(d.tol),
            refine_max: self.refine_max.unwrap_or(d.refine_max),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub antithetic: Option<bool>,
    #[serde(default)]
    pub allow_short_horizon: Option<bool>,
}

impl SimSpec {
    pub fn build(&self, params: &ModelParams) -> SimConfig {
        let d = SimConfig::default_for(params);
        SimConfig {
            dt: self.dt.unwrap_or(d.dt),
            horizon: self.horizon.unwrap_or(d.horizon),
            n_paths: self.n_paths.unwrap_or(d.n_paths),
            seed: self.seed.unwrap_or(d.seed),
            antithetic: self.antithetic.unwrap_or(d.antithetic),
            allow_short_horizon: self.allow_short_horizon.unwrap_or(d.allow_short_horizon),
        }
    }
}

/// Output grid: either "start:stop:count" or an explicit object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Compact(String),
    Explicit { start: f64, stop: f64, n: usize },
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>> {
        let (start, stop, n) = match self {
            GridSpec::Explicit { start, stop, n } => (*start, *stop, *n),
            GridSpec::Compact(s) => parse_grid_string(s)?,
        };
        if !(stop > start) || n < 2 {
            return Err(Error::Config(format!(
                "grid needs stop > start and n >= 2, got {start}:{stop}:{n}"
            )));
        }
        Ok((0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect())
    }
}

pub fn parse_grid_string(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "grid spec '{s}' must be start:stop:count"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad grid start '{}'", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad grid stop '{}'", parts[1])))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad grid count '{}'", parts[2])))?;
    Ok((start, stop, n))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub params: ParamsSpec,
    pub bound: BoundSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// starting points for simulation and dominance testing
    #[serde(default)]
    pub x0s: Option<Vec<f64>>,
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ProblemConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.params.build()?;
        cfg.bound.build()?;
        Ok(cfg)
    }

    /// default output grid: [0, max(8, 4 b_hat)] with 801 points
    pub fn grid_points(&self, params: &ModelParams) -> Result<Vec<f64>> {
        match &self.grid {
            Some(g) => g.build(),
            None => {
                let b_hat = psi_inflection(params)?;
                let stop = (4.0 * b_hat).max(8.0);
                Ok((0..801).map(|i| stop * i as f64 / 800.0).collect())
            }
        }
    }

    pub fn x0_points(&self, params: &ModelParams) -> Result<Vec<f64>> {
        match &self.x0s {
            Some(v) if !v.is_empty() => Ok(v.clone()),
            _ => {
                let b_hat = psi_inflection(params)?;
                Ok(vec![0.5 * b_hat, b_hat, 2.0 * b_hat])
            }
        }
    }
}

// ---------------------------------------------------------------------------
// policy artifacts
// ---------------------------------------------------------------------------

/// JSON policy artifact; the value profile lives in the referenced CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub version: u32,
    pub regime: String,
    pub b_star: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub b_hat: f64,
    pub regime_test_value: f64,
    pub borderline: bool,
    pub root_residual: f64,
    pub root_sign_changes: usize,
    pub smooth_fit_d1_jump: f64,
    pub d2_jump_at_bstar: f64,
    pub value_continuity_gap: f64,
    pub phi_residual_norm: f64,
    pub if_residual_norm: f64,
    pub kinked_bound: bool,
    pub params: ParamsSpec,
    pub bound: BoundSpec,
    /// profile CSV file name, relative to the report
    pub profile_csv: String,
}

impl PolicyReport {
    pub fn from_policy(policy: &Policy, bound_spec: &BoundSpec, profile_csv: &str) -> Self {
        let d = &policy.diagnostics;
        Self {
            version: REPORT_VERSION,
            regime: match policy.regime {
                Regime::ZeroBarrier => "zero_barrier".into(),
                Regime::PositiveBarrier => "positive_barrier".into(),
            },
            b_star: policy.b_star,
            c1: policy.c1,
            c2: policy.c2,
            b_hat: d.b_hat,
            regime_test_value: d.regime_test_value,
            borderline: d.borderline,
            root_residual: d.root_residual,
            root_sign_changes: d.root_sign_changes,
            smooth_fit_d1_jump: d.smooth_fit_d1_jump,
            d2_jump_at_bstar: d.d2_jump_at_bstar,
            value_continuity_gap: d.value_continuity_gap,
            phi_residual_norm: d.phi_residual_norm,
            if_residual_norm: d.if_residual_norm,
            kinked_bound: d.kinked_bound,
            params: ParamsSpec {
                mu: policy.params.mu,
                sigma: policy.params.sigma,
                q: policy.params.q,
            },
            bound: bound_spec.clone(),
            profile_csv: profile_csv.to_string(),
        }
    }

    pub fn into_policy(self, profile: FnProfile) -> Result<Policy> {
        let params = self.params.build()?;
        let bound = self.bound.build()?;
        let regime = match self.regime.as_str() {
            "zero_barrier" => Regime::ZeroBarrier,
            "positive_barrier" => Regime::PositiveBarrier,
            other => {
                return Err(Error::Config(format!("unknown regime '{other}' in report")));
            }
        };
        Ok(Policy {
            regime,
            b_star: self.b_star,
            c1: self.c1,
            c2: self.c2,
            value: profile,
            params,
            bound,
            diagnostics: PolicyDiagnostics {
                regime_test_value: self.regime_test_value,
                borderline: self.borderline,
                b_hat: self.b_hat,
                root_residual: self.root_residual,
                root_sign_changes: self.root_sign_changes,
                smooth_fit_d1_jump: self.smooth_fit_d1_jump,
                d2_jump_at_bstar: self.d2_jump_at_bstar,
                value_continuity_gap: self.value_continuity_gap,
                phi_residual_norm: self.phi_residual_norm,
                if_residual_norm: self.if_residual_norm,
                kinked_bound: self.kinked_bound,
            },
        })
    }
}

/// Value-profile CSV with full round-trip precision: x,V,V1,V2.
pub fn write_value_csv(profile: &FnProfile, path: &Path) -> Result<()> {
    let mut out = String::from("x,V,V1,V2\n");
    for i in 0..profile.nodes.len() {
        writeln!(
            out,
            "{},{},{},{}",
            profile.nodes[i], profile.values[i], profile.d1[i], profile.d2[i]
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_value_csv(path: &Path) -> Result<FnProfile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "x,V,V1,V2" {
        return Err(Error::Config(format!(
            "unexpected profile header '{header}' in {}",
            path.display()
        )));
    }
    let (mut nodes, mut values, mut d1, mut d2) = (vec![], vec![], vec![], vec![]);
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Config(format!(
                "profile row {} has {} columns",
                ln + 2,
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad number '{s}' at row {}", ln + 2)))
        };
        nodes.push(parse(cols[0])?);
        values.push(parse(cols[1])?);
        d1.push(parse(cols[2])?);
        d2.push(parse(cols[3])?);
    }
    FnProfile::from_samples(nodes, values, d1, d2, SolveMeta::default())
}

/// Profile export (x, value, d1, d2) for the fundamental solutions.
pub fn write_profile_csv(profile: &FnProfile, path: &Path) -> Result<()> {
    let mut out = String::from("x,value,d1,d2\n");
    for i in 0..profile.nodes.len() {
        writeln!(
            out,
            "{},{},{},{}",
            profile.nodes[i], profile.values[i], profile.d1[i], profile.d2[i]
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "definetti", about = "barrier-control solver with a concave payout-rate cap")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// problem configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// override the simulation seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// override the output grid, as start:stop:count
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// solve the control problem and write the policy artifacts
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// also export the phi_F and I_F profiles as CSV
        #[arg(long)]
        dump_profiles: bool,
    },
    /// verify a solved policy artifact against its configuration
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// path to the policy report JSON
        #[arg(long)]
        policy: PathBuf,
        /// skip the Monte Carlo dominance stage
        #[arg(long)]
        no_dominance: bool,
    },
    /// estimate the value of a barrier or rate rule by simulation
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// barrier level of the bang-bang rule
        #[arg(long, conflicts_with = "rule")]
        barrier: Option<f64>,
        /// rate rule: barrier:B, proportional:C or full_below:CUT
        #[arg(long)]
        rule: Option<String>,
        /// starting points (repeatable); defaults to the config x0s
        #[arg(long = "x0")]
        x0s: Vec<f64>,
        /// dump per-observation payoffs next to the report
        #[arg(long)]
        dump_paths: bool,
    },
    /// tabulate closed-form vs ODE-engine vs Monte Carlo values
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Exit status contract shared with CI.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

fn classify(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParams(_) | Error::InvalidBound(_) | Error::Json(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_SOLVER,
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Solve {
            common,
            dump_profiles,
        } => cmd_solve(&common, dump_profiles),
        Command::Verify {
            common,
            policy,
            no_dominance,
        } => cmd_verify(&common, &policy, no_dominance),
        Command::Simulate {
            common,
            barrier,
            rule,
            x0s,
            dump_paths,
        } => cmd_simulate(&common, barrier, rule.as_deref(), &x0s, dump_paths),
        Command::Compare { common } => cmd_compare(&common),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            classify(&err)
        }
    }
}

fn load_common(common: &CommonArgs) -> Result<(ProblemConfig, ModelParams, BoundFn, Vec<f64>)> {
    let mut config = ProblemConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.sim.seed = Some(seed);
    }
    if let Some(grid) = &common.grid {
        config.grid = Some(GridSpec::Compact(grid.clone()));
    }
    let params = config.params.build()?;
    let bound = config.bound.build()?;
    let grid = config.grid_points(&params)?;
    fs::create_dir_all(&common.out)?;
    Ok((config, params, bound, grid))
}

fn solve_pipeline(
    config: &ProblemConfig,
    params: ModelParams,
    bound: BoundFn,
    grid: &[f64],
) -> Result<(Policy, ProfileFundamentals)> {
    let x_max = grid.iter().cloned().fold(0.0f64, f64::max);
    let fundamentals =
        ProfileFundamentals::solve(params, bound, &config.solve.build(), x_max)?;
    let policy = solve(&fundamentals, grid)?;
    Ok((policy, fundamentals))
}

fn cmd_solve(common: &CommonArgs, dump_profiles: bool) -> Result<i32> {
    let (config, params, bound, grid) = load_common(common)?;
    let (policy, fundamentals) = solve_pipeline(&config, params, bound, &grid)?;
    let csv_name = "value_profile.csv";
    write_value_csv(&policy.value, &common.out.join(csv_name))?;
    let report = PolicyReport::from_policy(&policy, &config.bound, csv_name);
    fs::write(
        common.out.join("policy_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if dump_profiles {
        write_profile_csv(&fundamentals.phi_profile, &common.out.join("phi_profile.csv"))?;
        write_profile_csv(&fundamentals.if_profile, &common.out.join("if_profile.csv"))?;
    }
    println!(
        "solved: regime={} b_star={} (b_hat={}), report in {}",
        report.regime,
        report.b_star,
        report.b_hat,
        common.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_verify(common: &CommonArgs, policy_path: &Path, no_dominance: bool) -> Result<i32> {
    let (config, params, _bound, _grid) = load_common(common)?;
    let report_text = fs::read_to_string(policy_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", policy_path.display())))?;
    let report: PolicyReport = serde_json::from_str(&report_text)
        .map_err(|e| Error::Config(format!("{}: {e}", policy_path.display())))?;
    if report.version != REPORT_VERSION {
        return Err(Error::Config(format!(
            "unsupported report version {}",
            report.version
        )));
    }
    let csv_path = policy_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&report.profile_csv);
    let profile = read_value_csv(&csv_path)?;
    // the verifier audits the artifact against the *config's* model
    let mut policy = report.into_policy(profile)?;
    policy.params = params;
    policy.bound = config.bound.build()?;
    let opts = VerifyOptions {
        hjb_tolerance: None,
        run_dominance: !no_dominance,
        sim: config.sim.build(&params),
        x0s: config.x0_points(&params)?,
    };
    let report = verify_policy(&policy, &opts)?;
    fs::write(
        common.out.join("verification_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(
        common.out.join("verification_report.txt"),
        render_verification(&report),
    )?;
    if report.overall {
        println!("verification passed");
        Ok(EXIT_OK)
    } else {
        let failing = report.first_failure().unwrap_or("unknown");
        eprintln!("verification FAILED: {failing}");
        Ok(EXIT_VERIFY)
    }
}

fn render_verification(report: &VerificationReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "hjb residual {:.6e} (tolerance {:.6e})",
        report.hjb_sup_residual, report.hjb_tolerance
    )
    .unwrap();
    for c in &report.checks {
        writeln!(
            out,
            "{} {:<32} measured {:.6e} tolerance {:.6e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        )
        .unwrap();
    }
    if report.dominance.is_empty() {
        writeln!(out, "dominance suite: skipped").unwrap();
    } else {
        writeln!(
            out,
            "dominance suite ({} experiments): statistical evidence, not proof",
            report.dominance.len()
        )
        .unwrap();
        for d in &report.dominance {
            writeln!(
                out,
                "{} {:<28} x0={:<8} analytic={:.6} mc={:.6} stderr={:.2e} z={:+.2}",
                if d.consistent { "PASS" } else { "FAIL" },
                d.strategy,
                d.x0,
                d.analytic_value,
                d.mc_mean,
                d.mc_stderr,
                d.z_score
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        "overall: {}",
        if report.overall {
            "consistent with optimality"
        } else {
            "FAILED"
        }
    )
    .unwrap();
    out
}

fn parse_rule(spec: &str) -> Result<StrategyRule> {
    let (kind, arg) = spec.split_once(':').ok_or_else(|| {
        Error::Config(format!(
            "rule '{spec}' must be barrier:B, proportional:C or full_below:CUT"
        ))
    })?;
    let value: f64 = arg
        .parse()
        .map_err(|_| Error::Config(format!("bad rule argument '{arg}'")))?;
    match kind {
        "barrier" => Ok(StrategyRule::Barrier(value)),
        "proportional" => Ok(StrategyRule::ProportionalCap(value)),
        "full_below" => Ok(StrategyRule::FullRateBelow(value)),
        other => Err(Error::Config(format!("unknown rule kind '{other}'"))),
    }
}

fn cmd_simulate(
    common: &CommonArgs,
    barrier: Option<f64>,
    rule: Option<&str>,
    x0_flags: &[f64],
    dump_paths: bool,
) -> Result<i32> {
    let (config, params, bound, _grid) = load_common(common)?;
    let rule = match (barrier, rule) {
        (Some(b), None) => StrategyRule::Barrier(b),
        (None, Some(spec)) => parse_rule(spec)?,
        (None, None) => {
            return Err(Error::Config(
                "simulate needs --barrier or --rule".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let x0s = if x0_flags.is_empty() {
        config.x0_points(&params)?
    } else {
        x0_flags.to_vec()
    };
    let sim = config.sim.build(&params);
    let mut out = String::from("x0,estimate,stderr,n_paths,dt,seed\n");
    for &x0 in &x0s {
        let (est, payoffs) =
            evaluate_strategy_with_payoffs(&params, &bound, |u| rule.rate(&bound, u), x0, &sim)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            x0, est.mean, est.stderr, est.n_paths, est.dt, est.seed
        )
        .expect("string write");
        if dump_paths {
            let mut dump = String::from("observation,payoff\n");
            for (i, p) in payoffs.iter().enumerate() {
                writeln!(dump, "{i},{p}").expect("string write");
            }
            fs::write(
                common.out.join(format!("payoffs_x0_{x0}.csv")),
                dump,
            )?;
        }
    }
    fs::write(common.out.join("mc_report.csv"), &out)?;
    println!(
        "simulated {} starting points with {}; report in {}",
        x0s.len(),
        rule.describe(),
        common.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_compare(common: &CommonArgs) -> Result<i32> {
    let (config, params, bound, grid) = load_common(common)?;
    let (policy, fundamentals) = solve_pipeline(&config, params, bound.clone(), &grid)?;
    let closed: Option<Box<dyn Fn(f64) -> Result<(f64, f64)>>> = match &config.bound {
        BoundSpec::Linear { k } => {
            let f = AffineFundamentals::new(params, *k, 0.0)?;
            Some(Box::new(move |x| Ok((f.phi(x)?, f.i_f(x)?))))
        }
        BoundSpec::Affine { k, r } => {
            let f = AffineFundamentals::new(params, *k, *r)?;
            Some(Box::new(move |x| Ok((f.phi(x)?, f.i_f(x)?))))
        }
        BoundSpec::CappedLinear { k, r } => {
            let f = CappedFundamentals::new(params, *k, *r)?;
            Some(Box::new(move |x| Ok((f.phi(x)?, f.i_f(x)?))))
        }
        _ => None,
    };
    let sim = config.sim.build(&params);
    let mut out = String::new();
    if closed.is_some() {
        out.push_str("x,phi_ode,phi_closed,IF_ode,IF_closed,V,V_mc,V_mc_stderr\n");
    } else {
        println!("note: no closed form for this bound; closed-form columns omitted");
        out.push_str("x,phi_ode,IF_ode,V,V_mc,V_mc_stderr\n");
    }
    let (mut max_phi_gap, mut max_if_gap): (f64, f64) = (0.0, 0.0);
    for &x in &grid {
        let phi_ode = fundamentals.phi(x)?;
        let if_ode = fundamentals.i_f(x)?;
        let v = policy.value.value_at(x);
        let mc = crate::mc_sim::estimate_value(&params, &bound, policy.b_star, x, &sim)?;
        if let Some(cf) = &closed {
            let (phi_c, if_c) = cf(x)?;
            max_phi_gap = max_phi_gap.max((phi_ode - phi_c).abs());
            max_if_gap = max_if_gap.max((if_ode - if_c).abs());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                x, phi_ode, phi_c, if_ode, if_c, v, mc.mean, mc.stderr
            )
            .expect("string write");
        } else {
            writeln!(out, "{},{},{},{},{}", x, phi_ode, if_ode, v, mc.mean)
                .expect("string write");
        }
    }
    fs::write(common.out.join("compare.csv"), &out)?;
    let mut summary = String::new();
    if closed.is_some() {
        writeln!(summary, "max |phi_ode - phi_closed| = {max_phi_gap:e}").unwrap();
        writeln!(summary, "max |IF_ode - IF_closed| = {max_if_gap:e}").unwrap();
    } else {
        writeln!(summary, "closed-form columns omitted (no closed form for this bound)").unwrap();
    }
    writeln!(summary, "b_star = {}", policy.b_star).unwrap();
    fs::write(common.out.join("compare_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}
