use definetti::cli::*;
use definetti::ode_engine::SolveConfig;
use definetti::optimizer::{solve, ProfileFundamentals};

const CONFIG: &str = r#"{
  "params": {"mu": 2.0, "sigma": 1.0, "q": 0.3},
  "bound": {"variant": "affine", "K": 1.0, "R": 0.25},
  "solve": {"tol": 1e-7},
  "sim": {"n_paths": 400, "dt": 0.002, "seed": 5},
  "grid": "0:8:201",
  "x0s": [0.8]
}"#;

fn main() {
    let config: ProblemConfig = serde_json::from_str(CONFIG).unwrap();
    let params = config.params.build().unwrap();
    let bound = config.bound.build().unwrap();
    let grid = GridSpec::Compact("0:8:201".into()).build().unwrap();
    let cfg = SolveConfig { tol: 1e-7, ..SolveConfig::default() };
    let fundamentals = ProfileFundamentals::solve(params, bound, &cfg, 8.0).unwrap();
    let direct = solve(&fundamentals, &grid).unwrap();
    println!("direct regime_test_value bits = {}", direct.diagnostics.regime_test_value.to_bits());
    let report = PolicyReport::from_policy(&direct, &config.bound, "value_profile.csv");
    println!("report regime_test_value bits = {}", report.regime_test_value.to_bits());
    let json = serde_json::to_string_pretty(&report).unwrap();
    let parsed: PolicyReport = serde_json::from_str(&json).unwrap();
    println!("parsed regime_test_value bits = {}", parsed.regime_test_value.to_bits());
    for line in json.lines().filter(|l| l.contains("regime_test_value")) {
        println!("json line: {line}");
    }
}
