//! JSON report documents. All agent, eigenvalue and miniblock indices are
//! 1-based; complex numbers are `{re, im}` objects; infinite interval
//! endpoints are `null`.

use num_complex::Complex64;
use serde::Serialize;

use crate::classify::{check_assumption1, check_assumption2, BlockIndex, MiniblockClassification, ObsClass};
use crate::design::ObserverBank;
use crate::linalg::SpectrumComparison;
use crate::model::Problem;
use crate::sim::AgentMetrics;
use crate::solvability::{BlockReport, GainFeasibility, GainInterval, OracleCheck, SolvabilityReport, Strategy, UndirectedCheck};

/// JSON schema describing [`Report`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

fn complex_list(zs: &[Complex64]) -> Vec<ComplexValue> {
    zs.iter().map(|z| ComplexValue { re: z.re, im: z.im }).collect()
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalDto {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub empty: bool,
}

impl From<GainInterval> for IntervalDto {
    fn from(g: GainInterval) -> Self {
        let finite = |v: f64| (!g.empty && v.is_finite()).then_some(v);
        Self { lo: finite(g.lo), hi: finite(g.hi), empty: g.empty }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSets {
    #[serde(rename = "1")]
    pub unobservable: Vec<usize>,
    #[serde(rename = "2")]
    pub partial: Vec<usize>,
    #[serde(rename = "3")]
    pub full: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifiedBlock {
    pub block: BlockIndex,
    pub lambda: f64,
    pub dim: usize,
    /// First observable column per agent; null when unobservable.
    pub t: Vec<Option<usize>>,
    #[serde(rename = "V")]
    pub v: ClassSets,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentGroups {
    pub agent: usize,
    pub eigenvalue: usize,
    #[serde(rename = "G")]
    pub g: ClassSets,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionStatus {
    pub holds: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationDto {
    pub blocks: Vec<ClassifiedBlock>,
    pub groups: Vec<AgentGroups>,
    pub assumption1: AssumptionStatus,
    pub assumption2: AssumptionStatus,
    pub every_block_fully_observed_somewhere: bool,
}

impl ClassificationDto {
    pub fn new(p: &Problem, cls: &MiniblockClassification) -> Self {
        let blocks = p
            .unstable_blocks()
            .iter()
            .map(|mb| {
                let b = mb.index;
                ClassifiedBlock {
                    block: b,
                    lambda: mb.lambda,
                    dim: mb.dim,
                    t: (0..cls.n_agents()).map(|i| cls.t(i, b)).collect(),
                    v: ClassSets {
                        unobservable: one_based(&cls.v_set(b, ObsClass::Unobservable)),
                        partial: one_based(&cls.v_set(b, ObsClass::Partial)),
                        full: one_based(&cls.v_set(b, ObsClass::Full)),
                    },
                }
            })
            .collect();
        let mut groups = Vec::new();
        for i in 0..cls.n_agents() {
            for ell in 0..cls.r_u() {
                groups.push(AgentGroups {
                    agent: i + 1,
                    eigenvalue: ell + 1,
                    g: ClassSets {
                        unobservable: one_based(&cls.g_set(i, ell, ObsClass::Unobservable)),
                        partial: one_based(&cls.g_set(i, ell, ObsClass::Partial)),
                        full: one_based(&cls.g_set(i, ell, ObsClass::Full)),
                    },
                });
            }
        }
        let a1 = check_assumption1(p, cls);
        let a2 = check_assumption2(p, cls);
        Self {
            blocks,
            groups,
            assumption1: AssumptionStatus {
                holds: a1.holds,
                detail: a1.failing_ell.map(|l| format!("rank deficient at eigenvalue {}", l + 1)),
            },
            assumption2: AssumptionStatus {
                holds: a2.holds,
                detail: a2.failing.map(|(i, l)| format!("agent {} at eigenvalue {}", i + 1, l + 1)),
            },
            every_block_fully_observed_somewhere: a1.every_block_fully_observed_somewhere,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityDto {
    pub feasible: bool,
    pub interval: IntervalDto,
    pub diagnostic: Option<String>,
}

impl FeasibilityDto {
    fn new(needs_gain: bool, f: &GainFeasibility) -> Self {
        Self { feasible: !needs_gain || !f.interval.empty, interval: f.interval.into(), diagnostic: f.diagnostic.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UndirectedDto {
    pub mu_min: f64,
    pub mu_max: f64,
    pub ratio_ok: bool,
    pub interval: IntervalDto,
}

impl From<&UndirectedCheck> for UndirectedDto {
    fn from(u: &UndirectedCheck) -> Self {
        Self { mu_min: u.mu_min, mu_max: u.mu_max, ratio_ok: u.ratio_ok, interval: u.interval.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolvabilityBlockDto {
    pub block: BlockIndex,
    pub lambda: f64,
    pub dim: usize,
    pub needs_gain: bool,
    /// Agents kept in the Laplacian submatrix.
    pub agents: Vec<usize>,
    pub laplacian_submatrix: Vec<Vec<f64>>,
    pub laplacian_spectrum: Vec<ComplexValue>,
    pub strategy1_spectrum: Vec<ComplexValue>,
    pub strategy1: FeasibilityDto,
    pub strategy2: FeasibilityDto,
    pub undirected: Option<UndirectedDto>,
}

impl From<&BlockReport> for SolvabilityBlockDto {
    fn from(b: &BlockReport) -> Self {
        Self {
            block: b.block,
            lambda: b.lambda,
            dim: b.dim,
            needs_gain: b.needs_gain,
            agents: one_based(&b.stack.agents),
            laplacian_submatrix: b.l_sub.clone(),
            laplacian_spectrum: complex_list(&b.laplacian_spectrum),
            strategy1_spectrum: complex_list(&b.strategy1_spectrum),
            strategy1: FeasibilityDto::new(b.needs_gain, &b.strategy1),
            strategy2: FeasibilityDto::new(b.needs_gain, &b.strategy2),
            undirected: b.undirected.as_ref().map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolvabilityDto {
    pub directed: bool,
    pub strategy1_feasible: bool,
    pub strategy2_feasible: bool,
    pub blocks: Vec<SolvabilityBlockDto>,
}

impl From<&SolvabilityReport> for SolvabilityDto {
    fn from(r: &SolvabilityReport) -> Self {
        Self {
            directed: r.directed,
            strategy1_feasible: r.strategy1_feasible,
            strategy2_feasible: r.strategy2_feasible,
            blocks: r.blocks.iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainDto {
    pub block: BlockIndex,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDesignDto {
    pub agent: usize,
    pub order: usize,
    pub consensus_dim: usize,
    pub detectable_dim: usize,
    pub luenberger_radius: f64,
    /// State order of the detectability form.
    pub permutation: Vec<usize>,
    /// State order of the augmented form, strategy 2 only.
    pub augmented_permutation: Option<Vec<usize>>,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDto {
    pub strategy: Strategy,
    pub gains: Vec<GainDto>,
    pub closed_loop_radius: f64,
    pub agents: Vec<AgentDesignDto>,
}

impl DesignDto {
    pub fn new(bank: &ObserverBank, closed_loop_radius: f64) -> Self {
        let agents = bank
            .agents
            .iter()
            .map(|a| AgentDesignDto {
                agent: a.agent + 1,
                order: a.order(),
                consensus_dim: a.n_cons(),
                detectable_dim: a.det.n_d(),
                luenberger_radius: a.luenberger_radius,
                permutation: one_based(a.det.perm.order()),
                augmented_permutation: a.aug.as_ref().map(|g| one_based(g.perm.order())),
                neighbors: a.links.iter().map(|l| l.j + 1).collect(),
            })
            .collect();
        Self {
            strategy: bank.strategy,
            gains: bank.gains.iter().map(|(block, k)| GainDto { block, k }).collect(),
            closed_loop_radius,
            agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetricsDto {
    pub agent: usize,
    pub converged: bool,
    pub settling_time: Option<usize>,
    pub terminal_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationDto {
    pub horizon: usize,
    pub seed: u64,
    pub tol: f64,
    pub x0: Vec<f64>,
    pub metrics: Vec<AgentMetricsDto>,
}

impl SimulationDto {
    pub fn new(horizon: usize, seed: u64, tol: f64, x0: Vec<f64>, metrics: &[AgentMetrics]) -> Self {
        let metrics = metrics
            .iter()
            .enumerate()
            .map(|(i, m)| AgentMetricsDto {
                agent: i + 1,
                converged: m.converged,
                settling_time: m.settling_time,
                terminal_ratio: m.terminal_ratio,
            })
            .collect();
        Self { horizon, seed, tol, x0, metrics }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheckDto {
    pub block: BlockIndex,
    pub strategy: Strategy,
    pub k: f64,
    pub theorem: bool,
    pub radius: Option<f64>,
    pub oracle: Option<bool>,
    pub skipped: Option<String>,
    pub pass: bool,
}

impl From<&OracleCheck> for OracleCheckDto {
    fn from(c: &OracleCheck) -> Self {
        Self {
            block: c.block,
            strategy: c.strategy,
            k: c.k,
            theorem: c.theorem,
            radius: c.radius,
            oracle: c.oracle,
            skipped: c.skipped.clone(),
            pass: c.agrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitCheckDto {
    pub block: BlockIndex,
    pub k: f64,
    pub max_deviation: Option<f64>,
    pub detail: Option<String>,
    pub pass: bool,
}

impl SplitCheckDto {
    pub fn new(block: BlockIndex, k: f64, c: &SpectrumComparison) -> Self {
        Self {
            block,
            k,
            max_deviation: c.max_deviation.is_finite().then_some(c.max_deviation),
            detail: c.detail.clone(),
            pass: c.agree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormCheckDto {
    pub agent: usize,
    pub strategy: Strategy,
    pub detail: Option<String>,
    pub pass: bool,
}

/// Whole-bank check: the assembled error matrix is Schur exactly when every
/// block gain is feasible and every Luenberger loop is Schur.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankCheckDto {
    pub strategy: Strategy,
    pub predicted_schur: bool,
    pub radius: f64,
    pub oracle_schur: Option<bool>,
    pub skipped: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzSummary {
    pub instances: usize,
    pub seed: u64,
    pub checks: usize,
    pub agreements: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VerificationDto {
    pub oracle: Vec<OracleCheckDto>,
    pub spectrum_split: Vec<SplitCheckDto>,
    pub forms: Vec<FormCheckDto>,
    pub banks: Vec<BankCheckDto>,
    pub fuzz: Option<FuzzSummary>,
    pub passed: bool,
}

impl VerificationDto {
    pub fn finish(mut self) -> Self {
        self.passed = self.oracle.iter().all(|c| c.pass)
            && self.spectrum_split.iter().all(|c| c.pass)
            && self.forms.iter().all(|c| c.pass)
            && self.banks.iter().all(|c| c.pass)
            && self.fuzz.as_ref().is_none_or(|f| f.failures.is_empty());
        self
    }

    /// One line per check, for terminal output.
    pub fn table(&self) -> String {
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut out = String::new();
        for c in &self.oracle {
            let verdict = match (c.oracle, &c.skipped) {
                (Some(o), _) => format!("theorem={} oracle={} radius={:.6}", c.theorem, o, c.radius.unwrap_or(f64::NAN)),
                (None, Some(why)) => format!("skipped: {why}"),
                (None, None) => "skipped".into(),
            };
            out.push_str(&format!("{}  oracle  block {} strategy {} k={:.6}  {}\n", mark(c.pass), c.block, c.strategy.number(), c.k, verdict));
        }
        for c in &self.spectrum_split {
            out.push_str(&format!(
                "{}  split   block {} k={:.6}  max deviation {:.3e}\n",
                mark(c.pass),
                c.block,
                c.k,
                c.max_deviation.unwrap_or(f64::INFINITY)
            ));
        }
        for c in &self.forms {
            let d = c.detail.as_deref().unwrap_or("exact");
            out.push_str(&format!("{}  form    agent {} strategy {}  {}\n", mark(c.pass), c.agent, c.strategy.number(), d));
        }
        for c in &self.banks {
            let d = c.skipped.as_deref().map_or_else(|| format!("predicted={} radius={:.6}", c.predicted_schur, c.radius), |s| format!("skipped: {s}"));
            out.push_str(&format!("{}  bank    strategy {}  {}\n", mark(c.pass), c.strategy.number(), d));
        }
        if let Some(f) = &self.fuzz {
            out.push_str(&format!(
                "{}  fuzz    {} instances (seed {}): {}/{} agreements, {} skipped near a boundary\n",
                mark(f.failures.is_empty()),
                f.instances,
                f.seed,
                f.agreements,
                f.checks,
                f.skipped
            ));
            for msg in &f.failures {
                out.push_str(&format!("        {msg}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub n: usize,
    pub m: usize,
    pub agents: usize,
    pub outputs: Vec<usize>,
    pub directed: bool,
    pub eigenvalues: Vec<f64>,
}

impl ProblemSummary {
    pub fn new(p: &Problem) -> Self {
        Self {
            n: p.n(),
            m: p.system.m(),
            agents: p.n_agents(),
            outputs: p.outputs.p(),
            directed: p.network.directed,
            eigenvalues: p.system.jordan.eigens.iter().map(|e| e.lambda).collect(),
        }
    }
}

/// The document written by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub problem: ProblemSummary,
    pub classification: ClassificationDto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solvability: Option<SolvabilityDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationDto>,
}

impl Report {
    pub fn new(command: &str, p: &Problem, cls: &MiniblockClassification) -> Self {
        Self {
            command: command.into(),
            problem: ProblemSummary::new(p),
            classification: ClassificationDto::new(p, cls),
            solvability: None,
            strategy: None,
            design: None,
            simulation: None,
            verification: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_endpoints_become_null() {
        let v = serde_json::to_value(IntervalDto::from(GainInterval::ALL)).unwrap();
        assert_eq!(v, serde_json::json!({"lo": null, "hi": null, "empty": false}));
        let v = serde_json::to_value(IntervalDto::from(GainInterval::EMPTY)).unwrap();
        assert_eq!(v, serde_json::json!({"lo": null, "hi": null, "empty": true}));
    }

    #[test]
    fn schema_is_json() {
        let s: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        assert_eq!(s["type"], "object");
    }
}
