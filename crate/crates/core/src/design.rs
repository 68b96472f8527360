//! Luenberger gains, coupling gains, and assembled observer banks for both
//! strategies, plus the closed-loop error matrix used as end-to-end oracle.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::canon::{build_augmented_form, build_detectability_form, AugmentedForm, DetectabilityForm};
use crate::classify::{BlockIndex, MiniblockClassification};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Problem;
use crate::solvability::{SolvabilityReport, Strategy};

/// Target closed-loop eigenvalues for the Luenberger observers.
#[derive(Debug, Clone, PartialEq)]
pub enum PolePolicy {
    /// Equispaced on the real segment [-radius, radius]; a single pole sits at 0.
    Equispaced { radius: f64 },
}

impl Default for PolePolicy {
    fn default() -> Self {
        PolePolicy::Equispaced { radius: 0.2 }
    }
}

impl PolePolicy {
    pub fn poles(&self, count: usize) -> Vec<f64> {
        match *self {
            PolePolicy::Equispaced { radius } => match count {
                0 => Vec::new(),
                1 => vec![0.0],
                _ => (0..count)
                    .map(|j| radius * (-1.0 + 2.0 * j as f64 / (count - 1) as f64))
                    .collect(),
            },
        }
    }
}

const KRYLOV_TOL: f64 = 1e-9;

/// One single-input step of the staircase: Krylov basis of (A, b_j) and its
/// orthogonal complement.
struct Step {
    column: usize,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
}

fn krylov_step(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Option<Step> {
    let n = a.nrows();
    let column = (0..b.ncols()).find(|&j| b.column(j).norm() > tol)?;
    let mut basis: Vec<DVector<f64>> = vec![b.column(column).normalize()];
    while basis.len() < n {
        let mut w = a * basis.last().expect("nonempty basis");
        for _ in 0..2 {
            for v in &basis {
                let proj = v.dot(&w);
                w.axpy(-proj, v, 1.0);
            }
        }
        let norm = w.norm();
        if norm <= tol {
            break;
        }
        basis.push(w / norm);
    }
    let q = basis.len();
    let v = DMatrix::from_columns(&basis);
    let mut aug = DMatrix::zeros(n, q + n);
    aug.columns_mut(0, q).copy_from(&v);
    aug.columns_mut(q, n).fill_with_identity();
    let full_q = aug.qr().q();
    let w = full_q.columns(q, n - q).into_owned();
    Some(Step { column, v, w })
}

/// Sum of the controllable dimensions found by the staircase.
fn controllable_dim(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    match krylov_step(a, b, tol) {
        None => 0,
        Some(step) => {
            let a22 = step.w.transpose() * a * &step.w;
            let b2 = step.w.transpose() * b;
            step.v.ncols() + controllable_dim(&a22, &b2, tol)
        }
    }
}

/// Single-input Ackermann formula for a controllable (a, b).
fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[f64]) -> Result<DMatrix<f64>> {
    let q = a.nrows();
    let mut ctrb = DMatrix::zeros(q, q);
    let mut col = b.clone();
    for k in 0..q {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let mut e_q = DVector::zeros(q);
    e_q[q - 1] = 1.0;
    let y = ctrb
        .transpose()
        .lu()
        .solve(&e_q)
        .ok_or_else(|| Error::Placement("singular controllability matrix".into()))?;
    let mut pa = DMatrix::identity(q, q);
    for &p in poles {
        pa = pa * (a - DMatrix::identity(q, q) * p);
    }
    let row = y.transpose() * pa;
    Ok(DMatrix::from_iterator(1, q, row.iter().copied()))
}

fn staircase(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64], tol: f64) -> Result<DMatrix<f64>> {
    let (n, m) = (a.nrows(), b.ncols());
    if n == 0 {
        return Ok(DMatrix::zeros(m, 0));
    }
    let Some(step) = krylov_step(a, b, tol) else {
        // what is left is unobservable in the primal pair and must be stable
        if let Some(z) = linalg::eigenvalues(a)?.into_iter().find(|z| z.norm() >= 1.0) {
            return Err(Error::NotDetectable { eigenvalue: format!("{:.6}{:+.6}i", z.re, z.im) });
        }
        return Ok(DMatrix::zeros(m, n));
    };
    let q = step.v.ncols();
    let a11 = step.v.transpose() * a * &step.v;
    let b1 = step.v.transpose() * b.column(step.column);
    let k1 = ackermann(&a11, &b1, &poles[..q])?;
    let a22 = step.w.transpose() * a * &step.w;
    let b2 = step.w.transpose() * b;
    let k2 = staircase(&a22, &b2, &poles[q..], tol)?;
    let mut k = &k2 * step.w.transpose();
    let row = &k1 * step.v.transpose();
    let mut target = k.row_mut(step.column);
    target += row;
    Ok(k)
}

/// Observer gain L with F - L H having the policy's eigenvalues on the
/// observable part; the unobservable part is left as is and must be stable.
pub fn place_luenberger(f: &DMatrix<f64>, h: &DMatrix<f64>, policy: &PolePolicy, margin: f64) -> Result<DMatrix<f64>> {
    let a = f.transpose();
    let b = h.transpose();
    let tol = KRYLOV_TOL * (1.0 + linalg::max_abs(&a) + linalg::max_abs(&b));
    let poles = policy.poles(controllable_dim(&a, &b, tol));
    let k = staircase(&a, &b, &poles, tol)?;
    let l = k.transpose();
    let radius = linalg::spectral_radius(&(f - &l * h))?;
    if radius >= 1.0 - margin {
        return Err(Error::Placement(format!("closed-loop radius {radius} misses the margin {margin}")));
    }
    Ok(l)
}

/// Coupling gains per miniblock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainAssignment(BTreeMap<BlockIndex, f64>);

impl GainAssignment {
    /// Gains taken as given, without checking them against any interval.
    pub fn unchecked(gains: BTreeMap<BlockIndex, f64>) -> Self {
        Self(gains)
    }

    pub fn get(&self, b: BlockIndex) -> Option<f64> {
        self.0.get(&b).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockIndex, f64)> + '_ {
        self.0.iter().map(|(&b, &k)| (b, k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<BlockIndex, f64> {
        &self.0
    }
}

/// Picks one gain per block that needs one: the override when given
/// (checked against the interval), else the interval midpoint, else lo + 1
/// for a half-bounded interval.
pub fn pick_gains(report: &SolvabilityReport, strategy: Strategy, overrides: &BTreeMap<BlockIndex, f64>) -> Result<GainAssignment> {
    for &b in overrides.keys() {
        if !report.gain_blocks().any(|r| r.block == b) {
            return Err(Error::UnusedGain(b));
        }
    }
    let mut out = BTreeMap::new();
    for blk in report.gain_blocks() {
        let iv = blk.interval(strategy);
        if iv.empty {
            let spec: Vec<String> = blk.spectrum(strategy).iter().map(|z| format!("{:.4}{:+.4}i", z.re, z.im)).collect();
            let mut reason = format!("no gain satisfies the spectral condition for spectrum [{}]", spec.join(", "));
            if let Some(d) = match strategy {
                Strategy::One => &blk.strategy1.diagnostic,
                Strategy::Two => &blk.strategy2.diagnostic,
            } {
                reason = format!("{reason}; {d}");
            }
            return Err(Error::Infeasible { block: blk.block, strategy: strategy.number(), reason });
        }
        let k = match overrides.get(&blk.block) {
            Some(&k) if iv.contains(k) => k,
            Some(&k) => return Err(Error::GainOutOfRange { block: blk.block, k, interval: iv.to_string() }),
            None if iv.is_bounded() => 0.5 * (iv.lo + iv.hi),
            None if iv.lo.is_finite() => iv.lo + 1.0,
            None if iv.hi.is_finite() => iv.hi - 1.0,
            None => 1.0,
        };
        out.insert(blk.block, k);
    }
    Ok(GainAssignment(out))
}

/// Where a gathered entry lives in a neighbour's observer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Index into the neighbour's consensus state.
    U(usize),
    /// Index into the neighbour's detectable-part state.
    D(usize),
}

/// Gather realizing [I 0] P_i^T P_j for one in-neighbour j.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLink {
    pub j: usize,
    pub weight: f64,
    pub gather: Vec<Source>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObserver {
    pub agent: usize,
    pub det: DetectabilityForm,
    /// Present for the augmented strategy.
    pub aug: Option<AugmentedForm>,
    pub l_d: DMatrix<f64>,
    /// Spectral radius of F_d - L_d H_d.
    pub luenberger_radius: f64,
    /// Diagonal of K_i.
    pub k: DVector<f64>,
    pub links: Vec<NeighborLink>,
}

impl AgentObserver {
    /// Dimension of the consensus-driven state.
    pub fn n_cons(&self) -> usize {
        self.aug.as_ref().map_or(self.det.n_u, |a| a.n_u)
    }

    /// F_u or A_u.
    pub fn a_cons(&self) -> &DMatrix<f64> {
        self.aug.as_ref().map_or(&self.det.f_u, |a| &a.a_u)
    }

    pub fn b_cons(&self) -> &DMatrix<f64> {
        self.aug.as_ref().map_or(&self.det.g_u, |a| &a.b_u)
    }

    /// Total observer order.
    pub fn order(&self) -> usize {
        self.n_cons() + self.det.n_d()
    }

    /// In-degree d_i.
    pub fn in_degree(&self) -> f64 {
        self.links.iter().map(|l| l.weight).sum()
    }

    /// Full-state estimate from the observer state.
    pub fn recompose(&self, cons: &[f64], det: &[f64]) -> Vec<f64> {
        match &self.aug {
            None => {
                let z: Vec<f64> = cons.iter().chain(det).copied().collect();
                self.det.perm.backward(&z)
            }
            Some(aug) => {
                let z: Vec<f64> = cons.iter().chain(&det[aug.sd_offset..]).copied().collect();
                aug.perm.backward(&z)
            }
        }
    }

    /// Observer state that reproduces the full-state estimate `xhat`.
    pub fn project(&self, xhat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = self.det.perm.forward(xhat);
        let det = z[self.det.n_u..].to_vec();
        let cons = match &self.aug {
            None => z[..self.det.n_u].to_vec(),
            Some(aug) => aug.perm.forward(xhat)[..aug.n_u].to_vec(),
        };
        (cons, det)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuenbergerPolicy {
    pub poles: PolePolicy,
    pub margin: f64,
    /// Per-agent gains used instead of placement (verified only).
    pub overrides: Vec<Option<DMatrix<f64>>>,
}

impl Default for LuenbergerPolicy {
    fn default() -> Self {
        Self { poles: PolePolicy::default(), margin: 0.01, overrides: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    pub strategy: Strategy,
    pub gains: GainAssignment,
    pub agents: Vec<AgentObserver>,
}

impl ObserverBank {
    pub fn orders(&self) -> Vec<usize> {
        self.agents.iter().map(AgentObserver::order).collect()
    }
}

pub fn build_observers(
    p: &Problem,
    cls: &MiniblockClassification,
    strategy: Strategy,
    gains: &GainAssignment,
    luenberger: &LuenbergerPolicy,
) -> Result<ObserverBank> {
    let n_agents = p.n_agents();
    let mut dets = Vec::with_capacity(n_agents);
    let mut augs = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let det = build_detectability_form(p, cls, i)?;
        if !det.is_detectable(p.tol.rank_tol) {
            return Err(Error::NotDetectable { eigenvalue: format!("in the detectable part of agent {}", i + 1) });
        }
        dets.push(det);
        augs.push(match strategy {
            Strategy::One => None,
            Strategy::Two => Some(build_augmented_form(p, cls, i)?),
        });
    }

    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let det = dets[i].clone();
        let aug = augs[i].clone();
        let l_d = match luenberger.overrides.get(i).and_then(Option::as_ref) {
            Some(l) => {
                if l.shape() != (det.n_d(), p.c(i).nrows()) {
                    return Err(Error::Dimension(format!(
                        "L_d of agent {} is {}x{}, expected {}x{}",
                        i + 1,
                        l.nrows(),
                        l.ncols(),
                        det.n_d(),
                        p.c(i).nrows()
                    )));
                }
                l.clone()
            }
            None => place_luenberger(&det.f_d, &det.h_d, &luenberger.poles, luenberger.margin)?,
        };
        let luenberger_radius = linalg::spectral_radius(&(&det.f_d - &l_d * &det.h_d))?;
        if luenberger_radius >= 1.0 {
            return Err(Error::LuenbergerNotSchur { agent: i + 1, radius: luenberger_radius });
        }

        let segments = aug.as_ref().map_or(&det.u_segments, |a| &a.u_segments);
        let n_cons = aug.as_ref().map_or(det.n_u, |a| a.n_u);
        let mut k = DVector::zeros(n_cons);
        for s in segments {
            let g = gains.get(s.block).ok_or_else(|| Error::Infeasible {
                block: s.block,
                strategy: strategy.number(),
                reason: "no coupling gain assigned".into(),
            })?;
            k.rows_mut(s.start, s.len).fill(g);
        }

        let own_order: Vec<usize> = match &aug {
            None => det.zu_index_map().to_vec(),
            Some(a) => a.perm.order()[..a.n_u].to_vec(),
        };
        let links = p
            .network
            .neighbors(i)
            .map(|(j, weight)| {
                let gather = own_order
                    .iter()
                    .map(|&orig| match &augs[j] {
                        None => {
                            let pos = dets[j].perm.position(orig);
                            if pos < dets[j].n_u {
                                Source::U(pos)
                            } else {
                                Source::D(pos - dets[j].n_u)
                            }
                        }
                        Some(aj) => {
                            let pos = aj.perm.position(orig);
                            if pos < aj.n_u {
                                Source::U(pos)
                            } else {
                                Source::D(aj.sd_offset + pos - aj.n_u)
                            }
                        }
                    })
                    .collect();
                NeighborLink { j, weight, gather }
            })
            .collect();

        agents.push(AgentObserver { agent: i, det, aug, l_d, luenberger_radius, k, links });
    }
    Ok(ObserverBank { strategy, gains: gains.clone(), agents })
}

/// Row layout of the stacked error: all consensus parts, then all
/// detectable parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLayout {
    pub u_offsets: Vec<usize>,
    pub d_offsets: Vec<usize>,
    pub dim: usize,
}

impl ErrorLayout {
    pub fn of(bank: &ObserverBank) -> Self {
        let mut off = 0;
        let mut u_offsets = Vec::new();
        for a in &bank.agents {
            u_offsets.push(off);
            off += a.n_cons();
        }
        let mut d_offsets = Vec::new();
        for a in &bank.agents {
            d_offsets.push(off);
            off += a.det.n_d();
        }
        Self { u_offsets, d_offsets, dim: off }
    }

    pub fn column(&self, j: usize, src: Source) -> usize {
        match src {
            Source::U(q) => self.u_offsets[j] + q,
            Source::D(q) => self.d_offsets[j] + q,
        }
    }
}

/// Matrix M with e(t+1) = M e(t) for the stacked observer error, assembled
/// from the per-agent update laws in error coordinates.
pub fn closed_loop_error_matrix(bank: &ObserverBank) -> (DMatrix<f64>, ErrorLayout) {
    let lay = ErrorLayout::of(bank);
    let mut m = DMatrix::zeros(lay.dim, lay.dim);
    for (i, ag) in bank.agents.iter().enumerate() {
        let (u0, d0) = (lay.u_offsets[i], lay.d_offsets[i]);
        let nu = ag.n_cons();
        let nd = ag.det.n_d();
        let ka = DMatrix::from_diagonal(&ag.k) * ag.a_cons();
        let own = ag.a_cons() - &ka * ag.in_degree();
        m.view_mut((u0, u0), (nu, nu)).copy_from(&own);
        if ag.aug.is_none() {
            m.view_mut((u0, d0), (nu, nd)).copy_from(&ag.det.f_star);
        }
        for link in &ag.links {
            for (c, &src) in link.gather.iter().enumerate() {
                let col = lay.column(link.j, src);
                for r in 0..nu {
                    m[(u0 + r, col)] += link.weight * ka[(r, c)];
                }
            }
        }
        let fd = &ag.det.f_d - &ag.l_d * &ag.det.h_d;
        m.view_mut((d0, d0), (nd, nd)).copy_from(&fd);
    }
    (m, lay)
}

/// Observer state of one agent at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// z_u estimate (strategy 1) or x_u estimate (strategy 2).
    pub cons: Vec<f64>,
    /// z_d estimate.
    pub det: Vec<f64>,
}

/// The stacked error in the closed-loop layout for plant state x.
pub fn stacked_error(bank: &ObserverBank, x: &[f64], states: &[AgentState]) -> DVector<f64> {
    let lay = ErrorLayout::of(bank);
    let mut e = DVector::zeros(lay.dim);
    for (i, ag) in bank.agents.iter().enumerate() {
        let (cons, det) = ag.project(x);
        for (q, v) in cons.iter().enumerate() {
            e[lay.u_offsets[i] + q] = v - states[i].cons[q];
        }
        for (q, v) in det.iter().enumerate() {
            e[lay.d_offsets[i] + q] = v - states[i].det[q];
        }
    }
    e
}
