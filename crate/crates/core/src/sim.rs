//! Synchronous time stepping of the plant and the observer bank.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::design::{AgentState, ObserverBank, Source};
use crate::error::{Error, Result};
use crate::model::Problem;

#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Zero,
    Step { value: Vec<f64> },
    /// u_c(t) = amplitude_c sin(frequency_c t + phase_c).
    Sinusoid { amplitude: Vec<f64>, frequency: Vec<f64>, phase: Vec<f64> },
    /// m x T explicit samples; the last column is held beyond T.
    Samples(DMatrix<f64>),
}

impl InputSignal {
    pub fn check(&self, m: usize) -> Result<()> {
        let ok = match self {
            InputSignal::Zero => true,
            InputSignal::Step { value } => value.len() == m,
            InputSignal::Sinusoid { amplitude, frequency, phase } => {
                amplitude.len() == m && frequency.len() == m && phase.len() == m
            }
            InputSignal::Samples(s) => s.nrows() == m && (m == 0 || s.ncols() > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("input signal does not have {m} channels")))
        }
    }

    pub fn at(&self, t: usize, m: usize) -> DVector<f64> {
        match self {
            InputSignal::Zero => DVector::zeros(m),
            InputSignal::Step { value } => DVector::from_column_slice(value),
            InputSignal::Sinusoid { amplitude, frequency, phase } => {
                DVector::from_fn(m, |c, _| amplitude[c] * (frequency[c] * t as f64 + phase[c]).sin())
            }
            InputSignal::Samples(s) => {
                if m == 0 {
                    DVector::zeros(0)
                } else {
                    s.column(t.min(s.ncols() - 1)).into_owned()
                }
            }
        }
    }
}

/// Initial estimates of all agents.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialEstimate {
    #[default]
    Zero,
    /// Every agent starts at the true state.
    Exact,
    /// One full-state estimate per agent.
    Given(Vec<Vec<f64>>),
}

/// Unit-norm vector drawn uniformly from the sphere.
pub fn unit_sphere_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 || n == 0 {
            return v.into_iter().map(|x| x / norm.max(f64::MIN_POSITIVE)).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: usize,
    pub keep_internal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub horizon: usize,
    /// x(t), t = 0..=T.
    pub x: Vec<Vec<f64>>,
    /// `xhat[i][t]`.
    pub xhat: Vec<Vec<Vec<f64>>>,
    /// `err_norm[i][t]` = ||x(t) - xhat_i(t)||.
    pub err_norm: Vec<Vec<f64>>,
    /// `internal[t][i]` when requested.
    pub internal: Option<Vec<Vec<AgentState>>>,
}

impl SimulationTrace {
    pub fn n_agents(&self) -> usize {
        self.err_norm.len()
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gather(states: &[AgentState], j: usize, src: Source) -> f64 {
    match src {
        Source::U(q) => states[j].cons[q],
        Source::D(q) => states[j].det[q],
    }
}

/// One synchronous update of every observer from the time-t states.
fn step_observers(bank: &ObserverBank, states: &[AgentState], y: &[DVector<f64>], u: &DVector<f64>) -> Vec<AgentState> {
    bank.agents
        .iter()
        .enumerate()
        .map(|(i, ag)| {
            let zc = DVector::from_column_slice(&states[i].cons);
            let zd = DVector::from_column_slice(&states[i].det);
            let a = ag.a_cons();
            let mut consensus = DVector::zeros(ag.n_cons());
            for link in &ag.links {
                for (r, &src) in link.gather.iter().enumerate() {
                    consensus[r] += link.weight * (gather(states, link.j, src) - zc[r]);
                }
            }
            let mut next_c = a * &zc + ag.b_cons() * u + ag.k.component_mul(&(a * consensus));
            if ag.aug.is_none() {
                next_c += &ag.det.f_star * &zd;
            }
            let innov = &y[i] - &ag.det.h_d * &zd;
            let next_d = &ag.det.f_d * &zd + &ag.det.g_d * u + &ag.l_d * innov;
            AgentState { cons: next_c.iter().copied().collect(), det: next_d.iter().copied().collect() }
        })
        .collect()
}

pub fn simulate(
    p: &Problem,
    bank: &ObserverBank,
    input: &InputSignal,
    x0: &[f64],
    xhat0: &InitialEstimate,
    opts: &SimOptions,
) -> Result<SimulationTrace> {
    let n = p.n();
    let m = p.system.m();
    let n_agents = p.n_agents();
    input.check(m)?;
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", x0.len())));
    }
    let mut states: Vec<AgentState> = match xhat0 {
        InitialEstimate::Zero => bank.agents.iter().map(|a| AgentState { cons: vec![0.0; a.n_cons()], det: vec![0.0; a.det.n_d()] }).collect(),
        InitialEstimate::Exact => bank.agents.iter().map(|a| project(a, x0)).collect(),
        InitialEstimate::Given(v) => {
            if v.len() != n_agents || v.iter().any(|e| e.len() != n) {
                return Err(Error::Dimension(format!("initial estimates must be {n_agents} vectors of length {n}")));
            }
            bank.agents.iter().zip(v).map(|(a, e)| project(a, e)).collect()
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let mut tr = SimulationTrace {
        horizon: opts.horizon,
        x: Vec::with_capacity(opts.horizon + 1),
        xhat: vec![Vec::with_capacity(opts.horizon + 1); n_agents],
        err_norm: vec![Vec::with_capacity(opts.horizon + 1); n_agents],
        internal: opts.keep_internal.then(Vec::new),
    };
    for t in 0..=opts.horizon {
        let xs: Vec<f64> = x.iter().copied().collect();
        for (i, ag) in bank.agents.iter().enumerate() {
            let est = ag.recompose(&states[i].cons, &states[i].det);
            let e = norm_diff(&xs, &est);
            if !e.is_finite() || e > p.tol.divergence_threshold {
                return Err(Error::Divergence { t, agent: i + 1, norm: e });
            }
            tr.xhat[i].push(est);
            tr.err_norm[i].push(e);
        }
        tr.x.push(xs);
        if let Some(int) = tr.internal.as_mut() {
            int.push(states.clone());
        }
        if t == opts.horizon {
            break;
        }
        let u = input.at(t, m);
        let y: Vec<DVector<f64>> = (0..n_agents).map(|i| p.c(i) * &x).collect();
        states = step_observers(bank, &states, &y, &u);
        x = p.a() * &x + p.b() * &u;
    }
    Ok(tr)
}

fn project(ag: &crate::design::AgentObserver, xhat: &[f64]) -> AgentState {
    let (cons, det) = ag.project(xhat);
    AgentState { cons, det }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetrics {
    pub converged: bool,
    pub settling_time: Option<usize>,
    pub terminal_ratio: f64,
}

/// Settling time: first t after which the error stays below tol * e(0).
pub fn convergence_metrics(err_norm: &[Vec<f64>], tol: f64) -> Vec<AgentMetrics> {
    err_norm
        .iter()
        .map(|e| {
            let e0 = e.first().copied().unwrap_or(0.0);
            let last = e.last().copied().unwrap_or(0.0);
            if e0 == 0.0 {
                let settled = e.iter().all(|&v| v == 0.0);
                return AgentMetrics { converged: settled, settling_time: settled.then_some(0), terminal_ratio: 0.0 };
            }
            let thresh = tol * e0;
            let settling_time = match e.iter().rposition(|&v| !(v < thresh)) {
                None => Some(0),
                Some(k) if k + 1 < e.len() => Some(k + 1),
                Some(_) => None,
            };
            AgentMetrics { converged: settling_time.is_some(), settling_time, terminal_ratio: last / e0 }
        })
        .collect()
}

/// CSV with columns `t, err_norm_1..err_norm_N`, optionally followed by
/// `x_k` and `xhat_i_k` for every state entry.
pub fn write_trace_csv<W: std::io::Write>(tr: &SimulationTrace, w: W, wide: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = tr.x.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=tr.n_agents()).map(|i| format!("err_norm_{i}")));
    if wide {
        header.extend((1..=n).map(|k| format!("x_{k}")));
        for i in 1..=tr.n_agents() {
            header.extend((1..=n).map(|k| format!("xhat_{i}_{k}")));
        }
    }
    out.write_record(&header)?;
    for t in 0..tr.x.len() {
        let mut row = vec![t.to_string()];
        row.extend(tr.err_norm.iter().map(|e| e[t].to_string()));
        if wide {
            row.extend(tr.x[t].iter().map(f64::to_string));
            for i in 0..tr.n_agents() {
                row.extend(tr.xhat[i][t].iter().map(f64::to_string));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back the `t, err_norm_*` columns of a trace CSV.
pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("err_norm_"))
        .map(|(k, _)| k)
        .collect();
    let mut out = vec![Vec::new(); cols.len()];
    for rec in rd.records() {
        let rec = rec?;
        for (a, &c) in cols.iter().enumerate() {
            let v: f64 = rec[c].parse().map_err(|e| Error::Parse { path: format!("trace.csv:{}", headers[c].to_string()), message: format!("{e}") })?;
            out[a].push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_decay_settles_at_ten() {
        let e: Vec<f64> = (0..30).map(|t| 0.5f64.powi(t)).collect();
        let m = convergence_metrics(&[e], 1e-3);
        assert_eq!(m[0].settling_time, Some(10));
        assert!(m[0].converged);
    }

    #[test]
    fn diverging_trace_does_not_settle() {
        let e: Vec<f64> = (0..30).map(|t| 1.1f64.powi(t)).collect();
        let m = convergence_metrics(&[e], 1e-3);
        assert_eq!(m[0].settling_time, None);
        assert!(!m[0].converged);
        assert!(m[0].terminal_ratio > 1.0);
    }

    #[test]
    fn zero_initial_error_has_zero_ratio() {
        let m = convergence_metrics(&[vec![0.0, 0.0]], 1e-3);
        assert_eq!(m[0].terminal_ratio, 0.0);
    }

    #[test]
    fn sphere_sample_is_unit_and_seeded() {
        let a = unit_sphere_sample(9, 7);
        let b = unit_sphere_sample(9, 7);
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(a, unit_sphere_sample(9, 8));
    }

    #[test]
    fn sinusoid_input_values() {
        let u = InputSignal::Sinusoid { amplitude: vec![2.0], frequency: vec![0.5], phase: vec![0.0] };
        assert!((u.at(3, 1)[0] - 2.0 * 1.5f64.sin()).abs() < 1e-15);
        assert!(u.check(2).is_err());
    }
}
