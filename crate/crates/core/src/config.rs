//! JSON configuration: plant, agents, network, design overrides and
//! simulation settings.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer};

use crate::classify::BlockIndex;
use crate::design::{LuenbergerPolicy, PolePolicy};
use crate::error::{Error, Result};
use crate::model::{
    validate, AgentOutputs, EigenBlock, JordanSpec, Problem, SensorNetwork, SystemModel, Tolerances, ValidationReport,
    ViolationKind,
};
use crate::sim::{InitialEstimate, InputSignal};
use crate::solvability::Strategy;

/// The configuration bundled with the crate: a 9-state plant with one
/// eigenvalue at 1 (three miniblocks) observed by six agents.
pub const EXAMPLE_JSON: &str = include_str!("../examples/six_agents.json");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub system: SystemConfig,
    pub agents: Vec<AgentConfig>,
    pub network: NetworkConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub eigens: Vec<EigenConfig>,
    #[serde(rename = "B", default)]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    pub lambda: LambdaValue,
    pub dims: Vec<usize>,
}

/// A real eigenvalue, or `{re, im}` which is rejected unless `im` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LambdaValue {
    Real(f64),
    Complex { re: f64, im: f64 },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "L_d", default)]
    pub l_d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_true")]
    pub directed: bool,
    pub adjacency: Vec<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrategyChoice {
    One,
    Two,
    #[default]
    Auto,
}

impl StrategyChoice {
    pub fn fixed(self) -> Option<Strategy> {
        match self {
            StrategyChoice::One => Some(Strategy::One),
            StrategyChoice::Two => Some(Strategy::Two),
            StrategyChoice::Auto => None,
        }
    }
}

impl std::str::FromStr for StrategyChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "1" => Ok(StrategyChoice::One),
            "2" => Ok(StrategyChoice::Two),
            "auto" => Ok(StrategyChoice::Auto),
            other => Err(format!("unknown strategy `{other}` (expected 1, 2 or auto)")),
        }
    }
}

impl<'de> Deserialize<'de> for StrategyChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        let s = match Raw::deserialize(d)? {
            Raw::Num(n) => n.to_string(),
            Raw::Str(s) => s,
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainOverride {
    /// 1-based [l, h].
    pub block: [usize; 2],
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default)]
    pub strategy: StrategyChoice,
    #[serde(default)]
    pub gains: Vec<GainOverride>,
    /// Radius of the equispaced Luenberger pole pattern.
    #[serde(default)]
    pub pole_radius: Option<f64>,
    #[serde(default)]
    pub stability_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Zero,
    Step { value: Vec<f64> },
    Sinusoid { amplitude: Vec<f64>, frequency: Vec<f64>, phase: Vec<f64> },
    Samples { values: Vec<Vec<f64>> },
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEstimateConfig {
    Zero,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_settle_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub input: InputConfig,
    /// Explicit initial state; drawn from the unit sphere when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub xhat0: Option<InitialEstimateConfig>,
    /// Also write every state entry to the trace.
    #[serde(default)]
    pub wide: bool,
}

fn default_horizon() -> usize {
    500
}

fn default_settle_tol() -> f64 {
    1e-4
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            tol: default_settle_tol(),
            seed: 0,
            input: InputConfig::Zero,
            x0: None,
            xhat0: None,
            wide: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesConfig {
    pub structural_zero_tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub eig_match_tol: Option<f64>,
    pub boundary_margin: Option<f64>,
    pub divergence_threshold: Option<f64>,
}

impl ProblemConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse { path, message: e.into_inner().to_string() }
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn bundled_example() -> Self {
        Self::from_json_str(EXAMPLE_JSON).expect("bundled example parses")
    }

    pub fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        let t = &self.tolerances;
        Tolerances {
            structural_zero_tol: t.structural_zero_tol.unwrap_or(d.structural_zero_tol),
            rank_tol: t.rank_tol.unwrap_or(d.rank_tol),
            eig_match_tol: t.eig_match_tol.unwrap_or(d.eig_match_tol),
            stability_margin: self.design.stability_margin.unwrap_or(d.stability_margin),
            boundary_margin: t.boundary_margin.unwrap_or(d.boundary_margin),
            divergence_threshold: t.divergence_threshold.unwrap_or(d.divergence_threshold),
        }
    }

    /// Builds the validated problem, reporting every violation at once.
    pub fn to_problem(&self) -> Result<Problem> {
        let mut rep = ValidationReport::default();
        let eigens: Vec<EigenBlock> = self
            .system
            .eigens
            .iter()
            .enumerate()
            .map(|(l, e)| {
                let lambda = match e.lambda {
                    LambdaValue::Real(v) => v,
                    LambdaValue::Complex { re, im } => {
                        if im != 0.0 {
                            rep.push(
                                format!("system.eigens[{l}].lambda"),
                                ViolationKind::ComplexEigenvalue,
                                "complex eigenvalues are not supported",
                            );
                        }
                        re
                    }
                };
                EigenBlock::new(lambda, e.dims.clone())
            })
            .collect();
        let jordan = JordanSpec::new(eigens);
        let n = jordan.n();
        let b = match &self.system.b {
            Some(rows) => matrix(&mut rep, "system.B", rows, Some(n)),
            None => DMatrix::zeros(n, 0),
        };
        let c: Vec<DMatrix<f64>> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| matrix(&mut rep, &format!("agents[{i}].C"), &a.c, None))
            .collect();
        let adjacency = matrix(&mut rep, "network.adjacency", &self.network.adjacency, None);
        let system = SystemModel::new(jordan, b);
        let outputs = AgentOutputs::new(c);
        let network = SensorNetwork::new(adjacency, self.network.directed);
        rep.violations.extend(validate(&system, &outputs, &network).violations);
        rep.into_result()?;
        Problem::with_tolerances(system, outputs, network, self.tolerances())
    }

    pub fn gain_overrides(&self) -> Result<BTreeMap<BlockIndex, f64>> {
        let mut out = BTreeMap::new();
        for (k, g) in self.design.gains.iter().enumerate() {
            let b = BlockIndex::from_one_based(g.block[0], g.block[1]).ok_or_else(|| Error::Parse {
                path: format!("design.gains[{k}].block"),
                message: "block indices are 1-based".into(),
            })?;
            if out.insert(b, g.k).is_some() {
                return Err(Error::Parse { path: format!("design.gains[{k}]"), message: format!("duplicate gain for block {b}") });
            }
        }
        Ok(out)
    }

    pub fn luenberger_policy(&self) -> Result<LuenbergerPolicy> {
        let mut rep = ValidationReport::default();
        let overrides = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.l_d.as_ref().map(|rows| matrix(&mut rep, &format!("agents[{i}].L_d"), rows, None)))
            .collect();
        rep.into_result()?;
        let d = LuenbergerPolicy::default();
        Ok(LuenbergerPolicy {
            poles: self.design.pole_radius.map_or(d.poles, |radius| PolePolicy::Equispaced { radius }),
            margin: self.design.stability_margin.unwrap_or(d.margin),
            overrides,
        })
    }

    pub fn input_signal(&self) -> InputSignal {
        match &self.simulation.input {
            InputConfig::Zero => InputSignal::Zero,
            InputConfig::Step { value } => InputSignal::Step { value: value.clone() },
            InputConfig::Sinusoid { amplitude, frequency, phase } => InputSignal::Sinusoid {
                amplitude: amplitude.clone(),
                frequency: frequency.clone(),
                phase: phase.clone(),
            },
            InputConfig::Samples { values } => {
                let cols = values.first().map_or(0, Vec::len);
                InputSignal::Samples(DMatrix::from_fn(values.len(), cols, |r, c| values[r].get(c).copied().unwrap_or(f64::NAN)))
            }
        }
    }

    pub fn initial_estimate(&self) -> InitialEstimate {
        match self.simulation.xhat0 {
            None | Some(InitialEstimateConfig::Zero) => InitialEstimate::Zero,
            Some(InitialEstimateConfig::Exact) => InitialEstimate::Exact,
        }
    }
}

/// Row-major nested arrays to a matrix; ragged rows become violations.
fn matrix(rep: &mut ValidationReport, path: &str, rows: &[Vec<f64>], nrows: Option<usize>) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().position(|row| row.len() != ncols) {
        rep.push(format!("{path}[{r}]"), ViolationKind::InputShape, format!("ragged matrix: row has {} entries, expected {ncols}", rows[r].len()));
        return DMatrix::zeros(nrows.unwrap_or(rows.len()), ncols);
    }
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_example_builds() {
        let cfg = ProblemConfig::bundled_example();
        let p = cfg.to_problem().unwrap();
        assert_eq!(p.n(), 9);
        assert_eq!(p.n_agents(), 6);
        assert_eq!(cfg.design.strategy, StrategyChoice::Auto);
        assert_eq!(cfg.gain_overrides().unwrap().len(), 3);
        assert_eq!(cfg.luenberger_policy().unwrap().overrides.iter().flatten().count(), 6);
    }

    #[test]
    fn parse_error_points_at_key() {
        let bad = r#"{"system": {"eigens": [{"lambda": 1, "dims": [2, "x"]}]}, "agents": [], "network": {"adjacency": []}}"#;
        match ProblemConfig::from_json_str(bad) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "system.eigens[0].dims[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn complex_lambda_is_a_violation() {
        let s = r#"{"system": {"eigens": [{"lambda": {"re": 1, "im": 0.5}, "dims": [1]}]},
                    "agents": [{"C": [[1]]}], "network": {"adjacency": [[0]]}}"#;
        let err = ProblemConfig::from_json_str(s).unwrap().to_problem().unwrap_err();
        match err {
            Error::Invalid(rep) => assert!(rep.has(ViolationKind::ComplexEigenvalue)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strategy_accepts_numbers_and_strings() {
        let s: StrategyChoice = serde_json::from_str("2").unwrap();
        assert_eq!(s, StrategyChoice::Two);
        let s: StrategyChoice = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(s, StrategyChoice::Auto);
        assert!(serde_json::from_str::<StrategyChoice>("3").is_err());
    }
}
