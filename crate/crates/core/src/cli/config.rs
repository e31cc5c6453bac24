//! Run configuration: a TOML file with `--set section.key=value` overrides.
//!
//! Required keys are `problem.name`, `grid.steps`, `monte_carlo.paths` and
//! `monte_carlo.seed`; everything else has a default, and the resolved
//! values are echoed into each run's manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{LqgSpec, Observation};
use crate::error::{Error, Result};

pub const REQUIRED_KEYS: [&str; 4] = [
    "problem.name",
    "grid.steps",
    "monte_carlo.paths",
    "monte_carlo.seed",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Problem name plus optional LQG parameter overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
}

impl ProblemSection {
    pub fn is_lqg(&self) -> bool {
        matches!(self.name.as_str(), "lqg" | "lqg_deterministic_h")
    }

    fn overrides(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("a", self.a),
            ("b_u", self.b_u),
            ("sigma", self.sigma),
            ("c", self.c),
            ("q", self.q),
            ("r", self.r),
            ("q_t", self.q_t),
            ("horizon", self.horizon),
            ("x0", self.x0),
            ("u_max", self.u_max),
        ]
    }

    /// The LQG spec with overrides applied, or `None` for other problems.
    pub fn lqg_spec(&self) -> Option<LqgSpec> {
        let base = match self.name.as_str() {
            "lqg" => LqgSpec::default(),
            "lqg_deterministic_h" => LqgSpec {
                observation: Observation::Deterministic,
                ..LqgSpec::default()
            },
            _ => return None,
        };
        let or = |v: Option<f64>, d: f64| v.unwrap_or(d);
        Some(LqgSpec {
            a: or(self.a, base.a),
            b_u: or(self.b_u, base.b_u),
            sigma: or(self.sigma, base.sigma),
            c: or(self.c, base.c),
            q: or(self.q, base.q),
            r: or(self.r, base.r),
            q_t: or(self.q_t, base.q_t),
            horizon: or(self.horizon, base.horizon),
            x0: or(self.x0, base.x0),
            u_max: or(self.u_max, base.u_max),
            observation: base.observation,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
    /// Defaults to the problem horizon; must match it when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub paths: usize,
    pub seed: u64,
    /// Total degree of the backward-regression basis.
    #[serde(default = "default_regression_degree")]
    pub regression_degree: usize,
}

fn default_regression_degree() -> usize {
    2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    #[default]
    Zero,
    /// Least-squares fit to the Riccati oracle (LQG problems only).
    Oracle,
    /// Intercepts set to `policy.constant`, other coefficients zero.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// Lags `s` of the observation features `Y_{j−s}`; defaults depend on
    /// the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<usize>>,
    #[serde(default = "default_policy_degree")]
    pub degree: usize,
    #[serde(default)]
    pub init: PolicyInit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constant: Vec<f64>,
}

fn default_policy_degree() -> usize {
    2
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            offsets: None,
            degree: default_policy_degree(),
            init: PolicyInit::Zero,
            constant: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRuleName {
    Plain,
    #[default]
    Gram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepRuleName,
    pub eta: f64,
    /// Paths for the final cost evaluation on fresh noise.
    pub eval_paths: usize,
    /// Seed of the final evaluation; defaults to `monte_carlo.seed + 1000003`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_seed: Option<u64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: 1e-3,
            step_rule: StepRuleName::Gram,
            eta: 0.5,
            eval_paths: 100_000,
            eval_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub fd_eps: Vec<f64>,
    pub perturbation_eps: Vec<f64>,
    /// Constant controls `u` and `ū` for the cost-difference identity; `u`
    /// also serves as the perturbation direction.
    pub identity_controls: [f64; 2],
    pub calculus_points: usize,
    pub convexity_points: usize,
    /// Also probe `h = h(t)` and linearity of `φ`.
    pub sufficient: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            fd_eps: vec![0.2, 0.1, 0.05],
            perturbation_eps: vec![0.4, 0.2, 0.1],
            identity_controls: [0.5, -0.3],
            calculus_points: 100,
            convexity_points: 10_000,
            sufficient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Dump every simulated path from `simulate`.
    pub write_paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_paths: false,
        }
    }
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for part in parts {
        cur = cur.as_table()?.get(part)?;
    }
    Some(cur)
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `section.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!(
            "override key '{key}' must be section.key"
        )));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Parses TOML text, applies overrides and checks required keys.
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        for key in REQUIRED_KEYS {
            if lookup(&table, key).is_none() {
                return Err(Error::Config(format!("missing required key {key}")));
            }
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }

    /// Horizon of the named problem.
    pub fn problem_horizon(&self) -> f64 {
        self.problem.lqg_spec().map_or(1.0, |s| s.horizon)
    }

    /// Fills defaults that depend on other keys and validates ranges.
    fn resolve(mut self) -> Result<Self> {
        if !self.problem.is_lqg() {
            if let Some((name, _)) = self.problem.overrides().iter().find(|(_, v)| v.is_some()) {
                return Err(Error::Config(format!(
                    "problem.{name} only applies to the LQG problems"
                )));
            }
        }
        let horizon = self.problem_horizon();
        match self.grid.horizon {
            Some(h) if (h - horizon).abs() > 1e-12 => {
                return Err(Error::Config(format!(
                    "grid.horizon = {h} differs from the problem horizon {horizon}"
                )))
            }
            _ => self.grid.horizon = Some(horizon),
        }
        if self.grid.steps == 0 {
            return Err(Error::Config("grid.steps must be positive".into()));
        }
        if self.monte_carlo.paths < 2 {
            return Err(Error::Config("monte_carlo.paths must be at least 2".into()));
        }
        if self.policy.offsets.is_none() {
            let d = crate::filter::ObservationFeatureMap::default_for(self.grid.steps);
            self.policy.offsets = Some(d.offsets().to_vec());
        }
        if self.policy.init == PolicyInit::Oracle && !self.problem.is_lqg() {
            return Err(Error::Config(
                "policy.init = \"oracle\" needs an LQG problem".into(),
            ));
        }
        if self.optimizer.eval_seed.is_none() {
            self.optimizer.eval_seed = Some(self.monte_carlo.seed.wrapping_add(1_000_003));
        }
        if !(self.optimizer.eta > 0.0) || self.optimizer.eval_paths < 2 {
            return Err(Error::Config(
                "optimizer.eta must be positive and optimizer.eval_paths at least 2".into(),
            ));
        }
        Ok(self)
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
name = "lqg"
[grid]
steps = 32
[monte_carlo]
paths = 1000
seed = 5
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = Config::from_str_with(MINIMAL, &[]).unwrap();
        assert_eq!(c.grid.horizon, Some(1.0));
        assert_eq!(c.optimizer.eval_seed, Some(1_000_008));
        assert!(c.policy.offsets.is_some());
        assert_eq!(c.problem.lqg_spec(), Some(LqgSpec::default()));
    }

    #[test]
    fn missing_seed_names_the_key() {
        let text = MINIMAL.replace("seed = 5", "");
        let err = Config::from_str_with(&text, &[]).unwrap_err().to_string();
        assert!(err.contains("monte_carlo.seed"), "{err}");
    }

    #[test]
    fn overrides_replace_and_add_keys() {
        let c = Config::from_str_with(
            MINIMAL,
            &[
                "monte_carlo.paths=250".into(),
                "problem.q_t = 2.5".into(),
                "policy.init=constant".into(),
                "policy.constant=[0.4]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.monte_carlo.paths, 250);
        assert_eq!(c.problem.lqg_spec().unwrap().q_t, 2.5);
        assert_eq!(c.policy.init, PolicyInit::Constant);
        assert_eq!(c.policy.constant, vec![0.4]);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        for o in [
            "nokey",
            "flat=1",
            "monte_carlo.paths=\"x\"",
            "grid.horizon=2.0",
        ] {
            let r = Config::from_str_with(MINIMAL, &[o.to_string()]);
            assert!(matches!(r, Err(Error::Config(_))), "{o}");
        }
        let r = Config::from_str_with(
            &MINIMAL.replace("lqg", "lq_scalar"),
            &["problem.a=1".into()],
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(matches!(
            Config::from_str_with("[problem", &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_round_trips() {
        let c = Config::from_str_with(MINIMAL, &[]).unwrap();
        let again = Config::from_str_with(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
    }
}
