//! The `distobs` command line: analyze, design, simulate and verify.
//!
//! Each command is also available as a library function returning an
//! [`Outcome`], which is what the binary and the C ABI wrap.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::canon::{build_augmented_form, build_detectability_form, verify_form};
use crate::classify::{classify, BlockIndex, MiniblockClassification};
use crate::config::{ProblemConfig, StrategyChoice};
use crate::design::{build_observers, closed_loop_error_matrix, pick_gains, GainAssignment, ObserverBank};
use crate::error::{Error, ExitCode, Result};
use crate::fuzz::{FuzzGenerator, FuzzParams};
use crate::model::Problem;
use crate::report::{
    BankCheckDto, DesignDto, FormCheckDto, FuzzSummary, OracleCheckDto, Report, SimulationDto, SolvabilityDto,
    SplitCheckDto, VerificationDto,
};
use crate::sim::{convergence_metrics, simulate, unit_sphere_sample, write_trace_csv, SimOptions, SimulationTrace};
use crate::solvability::{
    build_report, is_schur, oracle_check, schur_radius, spectrum_split_check, SolvabilityReport, Strategy,
};

/// Gains sampled by the fuzz mode lie in this range.
pub const FUZZ_GAIN_RANGE: (f64, f64) = (-0.5, 2.5);

#[derive(Debug, Parser)]
#[command(name = "distobs", version, about = "Distributed observer design for Jordan-form LTI systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the miniblocks and decide which strategies admit coupling gains.
    Analyze(CommonArgs),
    /// Pick gains and build the observer bank.
    Design(CommonArgs),
    /// Run the plant and the observers; writes trace.csv and report.json.
    Simulate(CommonArgs),
    /// Cross-check every spectral verdict against a dense eigenvalue oracle.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "1|2|auto")]
    pub strategy: Option<StrategyChoice>,
    /// Directory for report.json (and trace.csv); stdout when absent.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Additionally verify this many random instances.
    #[arg(long, value_name = "N")]
    pub fuzz: Option<usize>,
}

/// A report (when one could be produced) together with the command status.
#[derive(Debug)]
pub struct Outcome {
    pub report: Option<Report>,
    pub trace: Option<SimulationTrace>,
    pub error: Option<Error>,
}

impl Outcome {
    fn failed(report: Option<Report>, error: Error) -> Self {
        Self { report, trace: None, error: Some(error) }
    }

    fn ok(report: Report) -> Self {
        Self { report: Some(report), trace: None, error: None }
    }

    pub fn exit_code(&self) -> ExitCode {
        self.error.as_ref().map_or(ExitCode::Ok, Error::exit_code)
    }
}

/// Run settings that may come from the config file or the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub strategy: Option<StrategyChoice>,
    pub seed: Option<u64>,
}

struct Analysis {
    problem: Problem,
    cls: MiniblockClassification,
    solv: SolvabilityReport,
    report: Report,
}

fn analysis(cfg: &ProblemConfig, command: &str) -> std::result::Result<Analysis, Outcome> {
    let problem = cfg.to_problem().map_err(|e| Outcome::failed(None, e))?;
    let cls = classify(&problem);
    let mut report = Report::new(command, &problem, &cls);
    match build_report(&problem, &cls) {
        Ok(solv) => {
            report.solvability = Some(SolvabilityDto::from(&solv));
            Ok(Analysis { problem, cls, solv, report })
        }
        Err(e) => Err(Outcome::failed(Some(report), e)),
    }
}

/// `auto` prefers the non-augmented observer and falls back to the augmented one.
pub fn resolve_strategy(solv: &SolvabilityReport, choice: StrategyChoice) -> Result<Strategy> {
    let candidates: &[Strategy] = match choice.fixed() {
        Some(Strategy::One) => &[Strategy::One],
        Some(Strategy::Two) => &[Strategy::Two],
        None => &[Strategy::One, Strategy::Two],
    };
    if let Some(&s) = candidates.iter().find(|&&s| solv.feasible(s)) {
        return Ok(s);
    }
    let s = *candidates.last().expect("at least one candidate");
    let bad = solv.blocks.iter().find(|b| !b.feasible(s)).expect("an infeasible block exists");
    let reason = match &(match s {
        Strategy::One => &bad.strategy1,
        Strategy::Two => &bad.strategy2,
    })
    .diagnostic
    {
        Some(d) => d.clone(),
        None => "the gain interval is empty".into(),
    };
    Err(Error::Infeasible { block: bad.block, strategy: s.number(), reason })
}

fn strategy_choice(cfg: &ProblemConfig, opts: &RunOptions) -> StrategyChoice {
    opts.strategy.unwrap_or(cfg.design.strategy)
}

pub fn analyze(cfg: &ProblemConfig, opts: &RunOptions) -> Outcome {
    let mut a = match analysis(cfg, "analyze") {
        Ok(a) => a,
        Err(o) => return o,
    };
    match resolve_strategy(&a.solv, strategy_choice(cfg, opts)) {
        Ok(s) => {
            a.report.strategy = Some(s);
            Outcome::ok(a.report)
        }
        Err(e) => Outcome::failed(Some(a.report), e),
    }
}

struct Designed {
    a: Analysis,
    bank: ObserverBank,
}

fn design_bank(cfg: &ProblemConfig, opts: &RunOptions, command: &str) -> std::result::Result<Designed, Outcome> {
    let mut a = analysis(cfg, command)?;
    let built = (|| {
        let s = resolve_strategy(&a.solv, strategy_choice(cfg, opts))?;
        a.report.strategy = Some(s);
        let gains = pick_gains(&a.solv, s, &cfg.gain_overrides()?)?;
        let bank = build_observers(&a.problem, &a.cls, s, &gains, &cfg.luenberger_policy()?)?;
        let (m, _) = closed_loop_error_matrix(&bank);
        let radius = schur_radius(&m)?;
        Ok::<_, Error>((bank, radius))
    })();
    match built {
        Ok((bank, radius)) => {
            a.report.design = Some(DesignDto::new(&bank, radius));
            Ok(Designed { a, bank })
        }
        Err(e) => Err(Outcome::failed(Some(a.report), e)),
    }
}

pub fn design(cfg: &ProblemConfig, opts: &RunOptions) -> Outcome {
    match design_bank(cfg, opts, "design") {
        Ok(d) => Outcome::ok(d.a.report),
        Err(o) => o,
    }
}

/// Full pipeline including the simulation; the trace is returned in the outcome.
pub fn run_simulation(cfg: &ProblemConfig, opts: &RunOptions) -> Outcome {
    let Designed { a, bank } = match design_bank(cfg, opts, "simulate") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let mut report = a.report;
    let sim = &cfg.simulation;
    let seed = opts.seed.unwrap_or(sim.seed);
    let x0 = sim.x0.clone().unwrap_or_else(|| unit_sphere_sample(a.problem.n(), seed));
    let run = simulate(
        &a.problem,
        &bank,
        &cfg.input_signal(),
        &x0,
        &cfg.initial_estimate(),
        &SimOptions { horizon: sim.horizon, keep_internal: false },
    );
    match run {
        Ok(trace) => {
            let metrics = convergence_metrics(&trace.err_norm, sim.tol);
            report.simulation = Some(SimulationDto::new(sim.horizon, seed, sim.tol, x0, &metrics));
            Outcome { report: Some(report), trace: Some(trace), error: None }
        }
        Err(e) => Outcome::failed(Some(report), e),
    }
}

/// Gain used to probe a block: the configured override, the interval
/// midpoint when feasible, otherwise one.
fn probe_gain(solv: &SolvabilityReport, s: Strategy, b: BlockIndex, overrides: &BTreeMap<BlockIndex, f64>) -> f64 {
    if let Some(&k) = overrides.get(&b) {
        return k;
    }
    let iv = solv.block(b).map(|r| r.interval(s));
    match iv {
        Some(iv) if iv.is_bounded() => 0.5 * (iv.lo + iv.hi),
        _ => 1.0,
    }
}

fn verify_problem(p: &Problem, cls: &MiniblockClassification, solv: &SolvabilityReport, cfg: &ProblemConfig) -> Result<VerificationDto> {
    let overrides = cfg.gain_overrides()?;
    let margin = p.tol.boundary_margin;
    let mut v = VerificationDto::default();
    for s in [Strategy::One, Strategy::Two] {
        let mut gains = BTreeMap::new();
        let mut near_boundary = false;
        for br in solv.gain_blocks() {
            let k = probe_gain(solv, s, br.block, &overrides);
            gains.insert(br.block, k);
            let c = oracle_check(br, s, k, margin)?;
            near_boundary |= c.skipped.is_some();
            v.oracle.push(OracleCheckDto::from(&c));
            if s == Strategy::One {
                let split = spectrum_split_check(&br.stack, &br.l_sub_matrix(), br.lambda, k, p.tol.eig_match_tol)?;
                v.spectrum_split.push(SplitCheckDto::new(br.block, k, &split));
            }
        }
        for i in 0..p.n_agents() {
            let res = match s {
                Strategy::One => build_detectability_form(p, cls, i).map(|f| verify_form(&f, p)),
                Strategy::Two => build_augmented_form(p, cls, i).map(|f| verify_form(&f, p)),
            }?;
            v.forms.push(FormCheckDto {
                agent: i + 1,
                strategy: s,
                detail: res.as_ref().err().map(ToString::to_string),
                pass: res.is_ok(),
            });
        }
        v.banks.push(bank_check(p, cls, solv, s, GainAssignment::unchecked(gains), cfg, near_boundary)?);
    }
    Ok(v)
}

fn bank_check(
    p: &Problem,
    cls: &MiniblockClassification,
    solv: &SolvabilityReport,
    s: Strategy,
    gains: GainAssignment,
    cfg: &ProblemConfig,
    near_boundary: bool,
) -> Result<BankCheckDto> {
    let bank = build_observers(p, cls, s, &gains, &cfg.luenberger_policy()?)?;
    let (m, _) = closed_loop_error_matrix(&bank);
    let radius = schur_radius(&m)?;
    let predicted = gains.iter().all(|(b, k)| solv.block(b).is_some_and(|r| r.interval(s).contains(k)))
        && bank.agents.iter().all(|a| is_schur(a.luenberger_radius));
    let skipped = near_boundary.then(|| "a block gain lies within the boundary margin".to_string());
    let oracle_schur = (!near_boundary).then_some(is_schur(radius));
    Ok(BankCheckDto {
        strategy: s,
        predicted_schur: predicted,
        radius,
        oracle_schur,
        skipped,
        pass: oracle_schur.is_none_or(|o| o == predicted),
    })
}

/// Oracle and spectrum-split agreement on `instances` random problems.
pub fn fuzz_verify(instances: usize, seed: u64) -> Result<FuzzSummary> {
    let mut gen = FuzzGenerator::new(seed, FuzzParams::default());
    let mut sum = FuzzSummary { instances, seed, checks: 0, agreements: 0, skipped: 0, failures: Vec::new() };
    for n in 0..instances {
        let p = gen.problem();
        let cls = classify(&p);
        let solv = build_report(&p, &cls)?;
        for br in solv.gain_blocks() {
            for s in [Strategy::One, Strategy::Two] {
                let k = gen.gain_off_boundary(&br.interval(s), FUZZ_GAIN_RANGE, p.tol.boundary_margin);
                let c = oracle_check(br, s, k, p.tol.boundary_margin)?;
                sum.checks += 1;
                if c.oracle.is_none() {
                    sum.skipped += 1;
                } else if c.agrees() {
                    sum.agreements += 1;
                } else {
                    sum.failures.push(format!(
                        "instance {n} block {} strategy {} k={}: theorem {} vs radius {:?}",
                        br.block,
                        s.number(),
                        k,
                        c.theorem,
                        c.radius
                    ));
                }
                if s == Strategy::One {
                    let split = spectrum_split_check(&br.stack, &br.l_sub_matrix(), br.lambda, k, p.tol.eig_match_tol)?;
                    sum.checks += 1;
                    if split.agree {
                        sum.agreements += 1;
                    } else {
                        sum.failures.push(format!(
                            "instance {n} block {} split k={}: {}",
                            br.block,
                            k,
                            split.detail.unwrap_or_default()
                        ));
                    }
                }
            }
        }
    }
    Ok(sum)
}

pub fn verify(cfg: &ProblemConfig, opts: &RunOptions, fuzz: Option<usize>) -> Outcome {
    let mut a = match analysis(cfg, "verify") {
        Ok(a) => a,
        Err(o) => return o,
    };
    let run = (|| {
        let mut v = verify_problem(&a.problem, &a.cls, &a.solv, cfg)?;
        if let Some(n) = fuzz {
            v.fuzz = Some(fuzz_verify(n, opts.seed.unwrap_or(cfg.simulation.seed))?);
        }
        Ok::<_, Error>(v.finish())
    })();
    match run {
        Ok(v) => {
            let passed = v.passed;
            a.report.verification = Some(v);
            if passed {
                Outcome::ok(a.report)
            } else {
                Outcome::failed(Some(a.report), Error::OracleMismatch("at least one check failed".into()))
            }
        }
        Err(e) => Outcome::failed(Some(a.report), e),
    }
}

fn load_config(path: Option<&Path>) -> Result<ProblemConfig> {
    match path {
        Some(p) => ProblemConfig::from_path(p),
        None => Err(Error::Parse { path: "--config".into(), message: "a configuration file is required".into() }),
    }
}

fn write_outputs(outcome: &Outcome, out: Option<&Path>, wide: bool) -> Result<()> {
    let Some(report) = &outcome.report else {
        return Ok(());
    };
    match out {
        None => println!("{}", report.to_json()),
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
            if let Some(trace) = &outcome.trace {
                let f = std::fs::File::create(dir.join("trace.csv"))?;
                write_trace_csv(trace, std::io::BufWriter::new(f), wide)?;
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> ExitCode {
    let (common, fuzz) = match &cli.command {
        Command::Analyze(c) | Command::Design(c) | Command::Simulate(c) => (c, None),
        Command::Verify(v) => (&v.common, v.fuzz),
    };
    let cfg = match load_config(common.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let opts = RunOptions { strategy: common.strategy, seed: common.seed };
    let outcome = match &cli.command {
        Command::Analyze(_) => analyze(&cfg, &opts),
        Command::Design(_) => design(&cfg, &opts),
        Command::Simulate(_) => run_simulation(&cfg, &opts),
        Command::Verify(_) => verify(&cfg, &opts, fuzz),
    };
    if let Some(v) = outcome.report.as_ref().and_then(|r| r.verification.as_ref()) {
        eprint!("{}", v.table());
    }
    if let Err(e) = write_outputs(&outcome, common.out.as_deref(), cfg.simulation.wide) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    outcome.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_resolves_to_the_non_augmented_observer() {
        let cfg = ProblemConfig::bundled_example();
        let o = analyze(&cfg, &RunOptions::default());
        assert!(o.error.is_none());
        assert_eq!(o.report.unwrap().strategy, Some(Strategy::One));
    }

    #[test]
    fn strategy_flag_overrides_config() {
        let cfg = ProblemConfig::bundled_example();
        let opts = RunOptions { strategy: Some(StrategyChoice::Two), seed: None };
        let o = design(&cfg, &opts);
        let d = o.report.unwrap().design.unwrap();
        assert_eq!(d.strategy, Strategy::Two);
        assert_eq!(d.agents.iter().map(|a| a.order).collect::<Vec<_>>(), vec![10, 14, 10, 12, 9, 10]);
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from(["distobs", "verify", "--config", "x.json", "--fuzz", "5", "--seed", "3"]).unwrap();
        match cli.command {
            Command::Verify(v) => {
                assert_eq!(v.fuzz, Some(5));
                assert_eq!(v.common.seed, Some(3));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["distobs", "analyze", "--strategy", "3"]).is_err());
    }
}
