//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use num_complex::Complex64;

use distobs::classify::{classify, BlockIndex, ObsClass};
use distobs::config::ProblemConfig;
use distobs::design::{build_observers, closed_loop_error_matrix, pick_gains, stacked_error, ObserverBank};
use distobs::fuzz::{FuzzGenerator, FuzzParams};
use distobs::model::Problem;
use distobs::sim::{convergence_metrics, simulate, unit_sphere_sample, InitialEstimate, InputSignal, SimOptions};
use distobs::solvability::{
    build_report, feasible_gain, oracle_check, schur_radius, spectrum_split_check, GainInterval, SolvabilityReport,
    Strategy,
};

type Check = Result<String, String>;

const BOUNDARY_BAND: f64 = 1e-3;
const GAIN_RANGE: (f64, f64) = (-0.5, 2.5);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture() -> (ProblemConfig, Problem) {
    let cfg = ProblemConfig::bundled_example();
    let p = cfg.to_problem().expect("bundled example is valid");
    (cfg, p)
}

fn fixture_report() -> (ProblemConfig, Problem, SolvabilityReport) {
    let (cfg, p) = fixture();
    let cls = classify(&p);
    let rep = build_report(&p, &cls).expect("assumptions hold on the example");
    (cfg, p, rep)
}

fn b(h: usize) -> BlockIndex {
    BlockIndex::from_one_based(1, h).unwrap()
}

fn classification() -> Check {
    let (_, p) = fixture();
    let cls = classify(&p);
    let expected: [[&[usize]; 3]; 3] = [
        [&[3, 5], &[2, 4], &[1, 6]],
        [&[4], &[1, 3, 6], &[2, 5]],
        [&[1, 5], &[2, 4], &[3, 6]],
    ];
    for (h, sets) in expected.iter().enumerate() {
        for (k, class) in [ObsClass::Unobservable, ObsClass::Partial, ObsClass::Full].into_iter().enumerate() {
            let got: Vec<usize> = cls.v_set(b(h + 1), class).iter().map(|i| i + 1).collect();
            ensure(got == sets[k], || format!("V_{} of block {} is {:?}, expected {:?}", k + 1, b(h + 1), got, sets[k]))?;
        }
    }
    Ok("9 sets equal".into())
}

/// Distinct values of a real spectrum, merging values closer than `tol`.
fn distinct(spec: &[Complex64], tol: f64) -> Vec<f64> {
    let mut vals: Vec<f64> = spec.iter().map(|z| z.re).collect();
    vals.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for v in vals {
        if out.last().is_none_or(|&l| (v - l).abs() > tol) {
            out.push(v);
        }
    }
    out
}

fn match_printed(got: &[Complex64], printed: &[f64], tol: f64) -> Result<f64, String> {
    ensure(got.iter().all(|z| z.im.abs() <= tol), || format!("complex values in {got:?}"))?;
    let vals = distinct(got, 10.0 * tol);
    let mut want = printed.to_vec();
    want.sort_by(f64::total_cmp);
    ensure(vals.len() == want.len(), || format!("distinct values {vals:?} vs printed {want:?}"))?;
    let dev = vals.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev <= tol, || format!("deviation {dev:.2e} between {vals:?} and {want:?}"))?;
    Ok(dev)
}

fn spectra() -> Check {
    let (_, _, rep) = fixture_report();
    let s1: [&[f64]; 3] = [&[1.8, 0.3704, 2.4296, 0.9, 1.2], &[0.8, 1.0, 1.8, 0.9], &[0.3534, 2.5466, 1.0, 1.8, 1.2]];
    let s2: [&[f64]; 3] = [&[1.8, 0.3704, 2.4296, 1.2], &[0.8, 1.0, 1.8, 0.9], &[0.3534, 2.5466, 1.8, 1.2]];
    let mut worst: f64 = 0.0;
    for h in 0..3 {
        let br = rep.block(b(h + 1)).ok_or("missing block")?;
        worst = worst.max(match_printed(&br.strategy1_spectrum, s1[h], 5e-5)?);
        worst = worst.max(match_printed(&br.laplacian_spectrum, s2[h], 5e-5)?);
        ensure(br.laplacian_spectrum.len() == s2[h].len(), || format!("block {} Laplacian multiplicity", b(h + 1)))?;
    }
    Ok(format!("6 spectra, max |delta| {worst:.2e}"))
}

fn intervals() -> Check {
    let (_, _, rep) = fixture_report();
    let upper = [0.8232, 1.1111, 0.7854];
    let mut worst: f64 = 0.0;
    for (h, &hi) in upper.iter().enumerate() {
        let br = rep.block(b(h + 1)).ok_or("missing block")?;
        for s in [Strategy::One, Strategy::Two] {
            let iv = feasible_gain(br.spectrum(s), br.lambda).interval;
            ensure(!iv.empty, || format!("block {} strategy {} empty", b(h + 1), s.number()))?;
            ensure(iv.lo == 0.0, || format!("block {} lower endpoint {} is not exactly 0", b(h + 1), iv.lo))?;
            worst = worst.max((iv.hi - hi).abs());
            ensure((iv.hi - hi).abs() <= 5e-5, || format!("block {} upper endpoint {} vs {hi}", b(h + 1), iv.hi))?;
        }
    }
    Ok(format!("lower endpoints 0, max upper |delta| {worst:.2e}"))
}

fn fixture_bank(cfg: &ProblemConfig, p: &Problem, rep: &SolvabilityReport, s: Strategy) -> Result<ObserverBank, String> {
    let cls = classify(p);
    let gains = pick_gains(rep, s, &cfg.gain_overrides().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let policy = cfg.luenberger_policy().map_err(|e| e.to_string())?;
    ensure(policy.overrides.iter().all(Option::is_some), || "fixture lacks printed L_d".into())?;
    build_observers(p, &cls, s, &gains, &policy).map_err(|e| e.to_string())
}

fn end_to_end() -> Check {
    let (cfg, p, rep) = fixture_report();
    let x0 = unit_sphere_sample(p.n(), cfg.simulation.seed);
    let mut parts = Vec::new();
    for s in [Strategy::One, Strategy::Two] {
        let bank = fixture_bank(&cfg, &p, &rep, s)?;
        let (m, _) = closed_loop_error_matrix(&bank);
        let radius = schur_radius(&m).map_err(|e| e.to_string())?;
        ensure(radius < 1.0, || format!("strategy {} closed-loop radius {radius}", s.number()))?;
        let opts = SimOptions { horizon: 500, keep_internal: false };
        let tr = simulate(&p, &bank, &InputSignal::Zero, &x0, &InitialEstimate::Zero, &opts).map_err(|e| e.to_string())?;
        let worst = convergence_metrics(&tr.err_norm, cfg.simulation.tol)
            .iter()
            .map(|m| m.terminal_ratio)
            .fold(0.0, f64::max);
        ensure(worst < 1e-4, || format!("strategy {} terminal ratio {worst:e}", s.number()))?;
        parts.push(format!("S{} radius {radius:.4} worst ratio {worst:.1e}", s.number()));
    }
    Ok(parts.join(", "))
}

struct FuzzTally {
    instances: usize,
    directed: usize,
    undirected: usize,
    checks: usize,
}

fn oracle_equivalence() -> Check {
    let mut gen = FuzzGenerator::new(20_240_501, FuzzParams::default());
    let mut tallies = [Strategy::One, Strategy::Two].map(|_| FuzzTally { instances: 0, directed: 0, undirected: 0, checks: 0 });
    let mut generated = 0;
    while tallies.iter().any(|t| t.instances < 200 || t.directed < 50 || t.undirected < 50) {
        generated += 1;
        ensure(generated <= 2000, || "too few instances needing a gain".into())?;
        let p = gen.problem();
        let cls = classify(&p);
        let rep = build_report(&p, &cls).map_err(|e| e.to_string())?;
        if rep.gain_blocks().next().is_none() {
            continue;
        }
        for (t, s) in tallies.iter_mut().zip([Strategy::One, Strategy::Two]) {
            t.instances += 1;
            if p.network.directed {
                t.directed += 1;
            } else {
                t.undirected += 1;
            }
            for br in rep.gain_blocks() {
                let k = gen.gain_off_boundary(&br.interval(s), GAIN_RANGE, BOUNDARY_BAND);
                let c = oracle_check(br, s, k, BOUNDARY_BAND).map_err(|e| e.to_string())?;
                t.checks += 1;
                ensure(c.oracle.is_some(), || format!("check skipped: {:?}", c.skipped))?;
                ensure(c.agrees(), || {
                    format!(
                        "instance {generated} block {} strategy {} k={k}: theorem {} radius {:?}",
                        br.block,
                        s.number(),
                        c.theorem,
                        c.radius
                    )
                })?;
            }
        }
    }
    let t = &tallies;
    Ok(format!(
        "S1 {}/{} checks over {} instances ({} directed), S2 {}/{} over {} instances, 100% agreement",
        t[0].checks, t[0].checks, t[0].instances, t[0].directed, t[1].checks, t[1].checks, t[1].instances
    ))
}

fn spectrum_split() -> Check {
    let mut gen = FuzzGenerator::new(77_003, FuzzParams::default());
    let (mut instances, mut checks, mut worst) = (0, 0, 0.0f64);
    while instances < 200 {
        let p = gen.problem();
        let cls = classify(&p);
        let rep = build_report(&p, &cls).map_err(|e| e.to_string())?;
        if rep.gain_blocks().next().is_none() {
            continue;
        }
        instances += 1;
        for br in rep.gain_blocks() {
            let k = gen.rng_gain();
            let c = spectrum_split_check(&br.stack, &br.l_sub_matrix(), br.lambda, k, 1e-7).map_err(|e| e.to_string())?;
            checks += 1;
            ensure(c.agree, || format!("block {} k={k}: {:?}", br.block, c.detail))?;
            worst = worst.max(c.max_deviation);
        }
    }
    Ok(format!("{checks} blocks over {instances} instances, max deviation {worst:.1e}"))
}

trait GainSampler {
    fn rng_gain(&mut self) -> f64;
}

impl GainSampler for FuzzGenerator {
    fn rng_gain(&mut self) -> f64 {
        use rand::Rng;
        self.rng().random_range(GAIN_RANGE.0..GAIN_RANGE.1)
    }
}

fn close(a: &GainInterval, b: &GainInterval, tol: f64) -> bool {
    if a.empty || b.empty {
        return a.empty == b.empty;
    }
    (a.lo - b.lo).abs() <= tol && (a.hi - b.hi).abs() <= tol
}

fn undirected_collapse() -> Check {
    let params = FuzzParams { directed: Some(false), ..FuzzParams::default() };
    let mut gen = FuzzGenerator::new(4_242, params);
    let (mut instances, mut blocks, mut empty) = (0, 0, 0);
    while instances < 100 {
        let p = gen.problem();
        let cls = classify(&p);
        let rep = build_report(&p, &cls).map_err(|e| e.to_string())?;
        if rep.gain_blocks().next().is_none() {
            continue;
        }
        instances += 1;
        for br in rep.gain_blocks() {
            let u = br.undirected.as_ref().ok_or("undirected closed form missing")?;
            let (i1, i2) = (br.interval(Strategy::One), br.interval(Strategy::Two));
            ensure(close(&i1, &u.interval, 1e-9) && close(&i2, &u.interval, 1e-9), || {
                format!("block {}: S1 {i1} S2 {i2} closed form {}", br.block, u.interval)
            })?;
            ensure(!u.interval.empty == u.ratio_ok, || {
                format!("block {}: interval {} but ratio condition {}", br.block, u.interval, u.ratio_ok)
            })?;
            blocks += 1;
            empty += usize::from(u.interval.empty);
        }
    }
    Ok(format!("{blocks} blocks over {instances} symmetric instances ({empty} infeasible)"))
}

fn norm_rel(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn error_dynamics() -> Check {
    let (cfg, p, rep) = fixture_report();
    let x0 = unit_sphere_sample(p.n(), cfg.simulation.seed);
    let opts = SimOptions { horizon: 50, keep_internal: true };
    let sine = InputSignal::Sinusoid { amplitude: vec![1.0], frequency: vec![1.0], phase: vec![0.0] };
    let (mut step_worst, mut input_worst) = (0.0f64, 0.0f64);
    for s in [Strategy::One, Strategy::Two] {
        let bank = fixture_bank(&cfg, &p, &rep, s)?;
        let (m, layout) = closed_loop_error_matrix(&bank);
        let run = |u: &InputSignal| simulate(&p, &bank, u, &x0, &InitialEstimate::Zero, &opts).map_err(|e| e.to_string());
        let (free, forced) = (run(&InputSignal::Zero)?, run(&sine)?);
        let (fi, ui) = (free.internal.as_ref().unwrap(), forced.internal.as_ref().unwrap());
        let errs: Vec<_> = (0..=50).map(|t| stacked_error(&bank, &free.x[t], &fi[t])).collect();
        ensure(errs[0].len() == layout.dim, || "stacked error has the wrong size".into())?;
        for t in 0..50 {
            let pred = &m * &errs[t];
            let r = norm_rel(&errs[t + 1], &pred);
            step_worst = step_worst.max(r);
            ensure(r <= 1e-9, || format!("strategy {} step {t}: relative mismatch {r:e}", s.number()))?;
        }
        for t in 0..=50 {
            let e = stacked_error(&bank, &forced.x[t], &ui[t]);
            let r = norm_rel(&e, &errs[t]);
            input_worst = input_worst.max(r);
            ensure(r <= 1e-9, || format!("strategy {} t={t}: input changes the error by {r:e}", s.number()))?;
        }
    }
    Ok(format!("step mismatch {step_worst:.1e}, input sensitivity {input_worst:.1e} (relative)"))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 8] = [
        ("classification of the 9-state example", 1, classification),
        ("strategy 1 and 2 spectra of the example", 1, spectra),
        ("gain intervals of the example", 1, intervals),
        ("end-to-end simulation, both strategies, T=500", 5, end_to_end),
        ("theorem verdict vs Schur oracle on fuzzed instances", 60, oracle_equivalence),
        ("spectrum split on fuzzed instances", 30, spectrum_split),
        ("undirected collapse to the closed form", 30, undirected_collapse),
        ("error dynamics exactness and input invariance", 2, error_dynamics),
    ];
    let mut failed = 0;
    for (n, (title, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(*budget);
        let ok = res.is_ok() && within;
        failed += usize::from(!ok);
        let detail = match &res {
            Ok(d) | Err(d) => d,
        };
        println!(
            "{} criterion {}: {title}: {detail} [{:.3} s of {budget} s]",
            if ok { "PASS" } else { "FAIL" },
            n + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
