//! Spectral feasibility of the coupling gains and the brute-force Schur
//! oracle that cross-checks every verdict.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::classify::{check_assumption1, check_assumption2, BlockIndex, MiniblockClassification, ObsClass};
use crate::error::{Error, Result};
use crate::linalg::{self, SpectrumComparison};
use crate::model::{Miniblock, Problem};

/// Laplacian eigenvalues below this (relative to the spectrum scale) count as zero.
pub const ZERO_EIG_TOL: f64 = 1e-9;

/// Radius, relative to the matrix scale, inside which eigenvalues are pooled
/// before multisets are compared.
pub const CLUSTER_RADIUS: f64 = 1e-3;

/// Schur verdicts are taken with this guard below one, so that a unit-modulus
/// eigenvalue computed as 1 - eps is not mistaken for a stable one.
pub const SCHUR_GUARD: f64 = 1e-9;

/// The observer strategy: non-augmented (1) or augmented (2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    One = 1,
    Two = 2,
}

impl Strategy {
    pub fn number(self) -> u8 {
        self as u8
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

/// Agents in V_1 and V_2 of one miniblock with the number of states each
/// cannot reconstruct locally.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStack {
    /// 0-based agents, ascending.
    pub agents: Vec<usize>,
    /// Rows of S_i: d for V_1 agents, t - 1 for V_2 agents.
    pub n: Vec<usize>,
    /// Miniblock dimension d.
    pub d: usize,
}

impl SelectionStack {
    pub fn new(agents: Vec<usize>, n: Vec<usize>, d: usize) -> Self {
        assert_eq!(agents.len(), n.len());
        assert!(n.iter().all(|&k| k <= d));
        Self { agents, n, d }
    }

    pub fn for_block(cls: &MiniblockClassification, mb: &Miniblock) -> Self {
        let mut agents = Vec::new();
        let mut n = Vec::new();
        for i in 0..cls.n_agents() {
            match cls.class(i, mb.index) {
                ObsClass::Unobservable => {
                    agents.push(i);
                    n.push(mb.dim);
                }
                ObsClass::Partial => {
                    agents.push(i);
                    n.push(cls.t(i, mb.index).expect("partial block has t") - 1);
                }
                ObsClass::Full => {}
            }
        }
        Self::new(agents, n, mb.dim)
    }

    /// c = |V_1 u V_2|.
    pub fn c(&self) -> usize {
        self.agents.len()
    }

    /// Positions (into the agent list) with n_j >= level (1-based level).
    pub fn level_rows(&self, level: usize) -> Vec<usize> {
        (0..self.c()).filter(|&k| self.n[k] >= level).collect()
    }

    /// r_1 >= r_2 >= ... >= r_d.
    pub fn r(&self) -> Vec<usize> {
        (1..=self.d).map(|lv| self.level_rows(lv).len()).collect()
    }

    /// Dense S_tilde for `level` (r_level x c).
    pub fn tilde_s(&self, level: usize) -> DMatrix<f64> {
        let rows = self.level_rows(level);
        let mut s = DMatrix::zeros(rows.len(), self.c());
        for (r, &k) in rows.iter().enumerate() {
            s[(r, k)] = 1.0;
        }
        s
    }

    /// Indices of the rows S keeps from a (c*d)-vector ordered agent-major.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.c()).flat_map(|k| (0..self.n[k]).map(move |s| k * self.d + s)).collect()
    }

    pub fn total_rows(&self) -> usize {
        self.n.iter().sum()
    }
}

/// Principal submatrix of L on the agents outside `v3`, in agent order.
pub fn laplacian_submatrix(l: &DMatrix<f64>, v3: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..l.nrows()).filter(|i| !v3.contains(i)).collect();
    (linalg::principal_submatrix(l, &keep), keep)
}

/// Union over levels of the spectra of S_tilde L_sub S_tilde^T, as a multiset.
pub fn strategy1_spectrum(l_sub: &DMatrix<f64>, stack: &SelectionStack) -> Result<Vec<Complex64>> {
    assert_eq!(l_sub.nrows(), stack.c(), "stack does not match the Laplacian submatrix");
    let mut out = Vec::with_capacity(stack.total_rows());
    for level in 1..=stack.d {
        let rows = stack.level_rows(level);
        if rows.is_empty() {
            break;
        }
        out.extend(linalg::eigenvalues(&linalg::principal_submatrix(l_sub, &rows))?);
    }
    linalg::sort_spectrum(&mut out);
    Ok(out)
}

/// Open interval of admissible gains, possibly empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainInterval {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

impl GainInterval {
    pub const EMPTY: GainInterval = GainInterval { lo: 0.0, hi: 0.0, empty: true };
    pub const ALL: GainInterval = GainInterval { lo: f64::NEG_INFINITY, hi: f64::INFINITY, empty: false };

    pub fn new(lo: f64, hi: f64) -> Self {
        if lo < hi {
            Self { lo, hi, empty: false }
        } else {
            Self::EMPTY
        }
    }

    pub fn contains(&self, k: f64) -> bool {
        !self.empty && self.lo < k && k < self.hi
    }

    pub fn intersect(&self, other: &GainInterval) -> GainInterval {
        if self.empty || other.empty {
            return Self::EMPTY;
        }
        Self::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    /// Distance from k to the nearest finite endpoint.
    pub fn distance_to_boundary(&self, k: f64) -> f64 {
        if self.empty {
            return f64::INFINITY;
        }
        [self.lo, self.hi]
            .iter()
            .filter(|e| e.is_finite())
            .map(|e| (k - e).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_bounded(&self) -> bool {
        !self.empty && self.lo.is_finite() && self.hi.is_finite()
    }
}

impl std::fmt::Display for GainInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.empty {
            write!(f, "(empty)")
        } else {
            write!(f, "({}, {})", self.lo, self.hi)
        }
    }
}

/// Gains k with |1 - k mu| < 1/|lambda| for one eigenvalue mu.
///
/// Solves |mu|^2 k^2 - 2 Re(mu) k + (1 - 1/lambda^2) < 0. The product of
/// the roots is c/|mu|^2, so the smaller-magnitude root is taken as c/q to
/// keep it exact (zero when |lambda| = 1).
pub fn gain_interval_for(mu: Complex64, lambda: f64, zero_tol: f64) -> GainInterval {
    let m2 = mu.norm_sqr();
    if mu.norm() <= zero_tol {
        return GainInterval::EMPTY;
    }
    let a = mu.re;
    let c = 1.0 - 1.0 / (lambda * lambda);
    let disc = a * a - m2 * c;
    if disc <= 0.0 || a == 0.0 {
        return GainInterval::EMPTY;
    }
    let q = a + a.signum() * disc.sqrt();
    let (r1, r2) = (q / m2, c / q);
    GainInterval::new(r1.min(r2), r1.max(r2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainFeasibility {
    pub interval: GainInterval,
    /// Set when some eigenvalue is (numerically) zero.
    pub diagnostic: Option<String>,
}

pub const SPANNING_FOREST_DIAGNOSTIC: &str =
    "zero Laplacian eigenvalue: no spanning forest rooted in the fully observing agents";

/// Intersection over the spectrum of the per-eigenvalue gain intervals.
pub fn feasible_gain(spectrum: &[Complex64], lambda: f64) -> GainFeasibility {
    assert!(lambda.abs() >= 1.0, "coupling gains are only needed for |lambda| >= 1");
    let scale = spectrum.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let zero_tol = ZERO_EIG_TOL * scale;
    let has_zero = spectrum.iter().any(|z| z.norm() <= zero_tol);
    let interval = spectrum
        .iter()
        .fold(GainInterval::ALL, |acc, &mu| acc.intersect(&gain_interval_for(mu, lambda, zero_tol)));
    GainFeasibility { interval, diagnostic: has_zero.then(|| SPANNING_FOREST_DIAGNOSTIC.to_string()) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UndirectedCheck {
    pub mu_min: f64,
    pub mu_max: f64,
    pub ratio_ok: bool,
    pub interval: GainInterval,
}

/// Closed form for symmetric L_sub from its extreme eigenvalues.
pub fn undirected_feasibility(l_sub: &DMatrix<f64>, lambda: f64) -> Result<UndirectedCheck> {
    let asym = (l_sub - l_sub.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + linalg::max_abs(l_sub)) {
        return Err(Error::Dimension(format!("Laplacian submatrix is not symmetric (asymmetry {asym:e})")));
    }
    let ev = linalg::symmetric_eigenvalues(l_sub);
    let (mu_m, mu_mx) = match (ev.first(), ev.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Ok(UndirectedCheck { mu_min: f64::NAN, mu_max: f64::NAN, ratio_ok: true, interval: GainInterval::ALL }),
    };
    let al = lambda.abs();
    if mu_m <= ZERO_EIG_TOL * mu_mx.abs().max(1.0) {
        return Ok(UndirectedCheck { mu_min: mu_m, mu_max: mu_mx, ratio_ok: false, interval: GainInterval::EMPTY });
    }
    let ratio_ok = al == 1.0 || mu_mx / mu_m < (al + 1.0) / (al - 1.0);
    let interval = GainInterval::new((1.0 - 1.0 / al) / mu_m, (1.0 + 1.0 / al) / mu_mx);
    Ok(UndirectedCheck { mu_min: mu_m, mu_max: mu_mx, ratio_ok, interval })
}

/// Spectral radius of M.
pub fn schur_radius(m: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_radius(m)
}

/// Schur verdict on a radius, with the guard against unit-modulus round-off.
pub fn is_schur(radius: f64) -> bool {
    radius < 1.0 - SCHUR_GUARD
}

/// Error dynamics of one miniblock: S((I - kL)⊗A)S^T for strategy 1 and
/// (I - kL)⊗A for strategy 2.
pub fn assemble_error_matrix(strategy: Strategy, l_sub: &DMatrix<f64>, stack: &SelectionStack, lambda: f64, k: f64) -> DMatrix<f64> {
    let c = l_sub.nrows();
    let gamma = DMatrix::identity(c, c) - l_sub * k;
    let full = linalg::kron(&gamma, &crate::model::jordan_block(lambda, stack.d));
    match strategy {
        Strategy::Two => full,
        Strategy::One => linalg::principal_submatrix(&full, &stack.kept_indices()),
    }
}

fn match_tol(tol: f64, spectra: &[&[Complex64]]) -> f64 {
    let scale = spectra.iter().flat_map(|s| s.iter()).map(|z| z.norm()).fold(0.0, f64::max);
    tol * (1.0 + scale)
}

/// Compares two spectra as multisets with the crate's pooling rule.
pub fn spectra_agree(a: &[Complex64], b: &[Complex64], tol: f64) -> SpectrumComparison {
    let t = match_tol(tol, &[a, b]);
    let radius = match_tol(CLUSTER_RADIUS, &[a, b]);
    linalg::compare_spectra(a, b, t, radius)
}

/// sigma(S((I-kL)⊗A)S^T) against the union of sigma(lambda S_r (I-kL) S_r^T).
pub fn spectrum_split_check(stack: &SelectionStack, l_sub: &DMatrix<f64>, lambda: f64, k: f64, tol: f64) -> Result<SpectrumComparison> {
    let m = assemble_error_matrix(Strategy::One, l_sub, stack, lambda, k);
    let lhs = linalg::eigenvalues(&m)?;
    let c = l_sub.nrows();
    let gamma = (DMatrix::identity(c, c) - l_sub * k) * lambda;
    let mut rhs = Vec::with_capacity(lhs.len());
    for level in 1..=stack.d {
        let rows = stack.level_rows(level);
        if rows.is_empty() {
            break;
        }
        rhs.extend(linalg::eigenvalues(&linalg::principal_submatrix(&gamma, &rows))?);
    }
    Ok(spectra_agree(&lhs, &rhs, tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: BlockIndex,
    pub lambda: f64,
    pub dim: usize,
    /// V_1, V_2, V_3 as 0-based agents.
    pub v: [Vec<usize>; 3],
    /// False when every agent observes the block completely.
    pub needs_gain: bool,
    pub stack: SelectionStack,
    pub l_sub: Vec<Vec<f64>>,
    pub laplacian_spectrum: Vec<Complex64>,
    pub strategy1_spectrum: Vec<Complex64>,
    pub strategy1: GainFeasibility,
    pub strategy2: GainFeasibility,
    pub undirected: Option<UndirectedCheck>,
}

impl BlockReport {
    pub fn interval(&self, s: Strategy) -> GainInterval {
        match s {
            Strategy::One => self.strategy1.interval,
            Strategy::Two => self.strategy2.interval,
        }
    }

    pub fn feasible(&self, s: Strategy) -> bool {
        !self.needs_gain || !self.interval(s).empty
    }

    pub fn spectrum(&self, s: Strategy) -> &[Complex64] {
        match s {
            Strategy::One => &self.strategy1_spectrum,
            Strategy::Two => &self.laplacian_spectrum,
        }
    }

    pub fn l_sub_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.l_sub, self.stack.c())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityReport {
    pub blocks: Vec<BlockReport>,
    pub strategy1_feasible: bool,
    pub strategy2_feasible: bool,
    pub directed: bool,
}

impl SolvabilityReport {
    pub fn feasible(&self, s: Strategy) -> bool {
        match s {
            Strategy::One => self.strategy1_feasible,
            Strategy::Two => self.strategy2_feasible,
        }
    }

    pub fn block(&self, b: BlockIndex) -> Option<&BlockReport> {
        self.blocks.iter().find(|r| r.block == b)
    }

    /// Blocks that need a coupling gain.
    pub fn gain_blocks(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| b.needs_gain)
    }
}

/// Fails with the assumption number when either standing assumption is violated.
pub fn require_assumptions(p: &Problem, cls: &MiniblockClassification) -> Result<()> {
    let a1 = check_assumption1(p, cls);
    if let Some(ell) = a1.failing_ell {
        return Err(Error::Assumption {
            which: 1,
            detail: format!("outputs are not jointly detectable at eigenvalue {} (lambda = {})", ell + 1, p.system.jordan.eigens[ell].lambda),
        });
    }
    let a2 = check_assumption2(p, cls);
    if let Some((i, ell)) = a2.failing {
        return Err(Error::Assumption {
            which: 2,
            detail: format!(
                "agent {} sees dependent first-observable columns at eigenvalue {}",
                i + 1,
                ell + 1
            ),
        });
    }
    Ok(())
}

pub fn block_report(p: &Problem, cls: &MiniblockClassification, mb: &Miniblock) -> Result<BlockReport> {
    let v = [ObsClass::Unobservable, ObsClass::Partial, ObsClass::Full].map(|k| cls.v_set(mb.index, k));
    let (l_sub, _) = laplacian_submatrix(p.laplacian(), &v[2]);
    let stack = SelectionStack::for_block(cls, mb);
    let needs_gain = stack.c() > 0;
    let laplacian_spectrum = linalg::eigenvalues(&l_sub)?;
    let strategy1_spectrum = strategy1_spectrum(&l_sub, &stack)?;
    let (strategy1, strategy2) = if needs_gain {
        (feasible_gain(&strategy1_spectrum, mb.lambda), feasible_gain(&laplacian_spectrum, mb.lambda))
    } else {
        let all = GainFeasibility { interval: GainInterval::ALL, diagnostic: None };
        (all.clone(), all)
    };
    let undirected = if !p.network.directed && needs_gain {
        Some(undirected_feasibility(&l_sub, mb.lambda)?)
    } else {
        None
    };
    Ok(BlockReport {
        block: mb.index,
        lambda: mb.lambda,
        dim: mb.dim,
        v,
        needs_gain,
        stack,
        l_sub: linalg::to_rows(&l_sub),
        laplacian_spectrum,
        strategy1_spectrum,
        strategy1,
        strategy2,
        undirected,
    })
}

pub fn build_report(p: &Problem, cls: &MiniblockClassification) -> Result<SolvabilityReport> {
    require_assumptions(p, cls)?;
    let blocks = p
        .unstable_blocks()
        .iter()
        .map(|mb| block_report(p, cls, mb))
        .collect::<Result<Vec<_>>>()?;
    let strategy1_feasible = blocks.iter().all(|b| b.feasible(Strategy::One));
    let strategy2_feasible = blocks.iter().all(|b| b.feasible(Strategy::Two));
    Ok(SolvabilityReport { blocks, strategy1_feasible, strategy2_feasible, directed: p.network.directed })
}

/// Theorem verdict against the Schur oracle for one block, strategy and gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub block: BlockIndex,
    pub strategy: Strategy,
    pub k: f64,
    /// k lies inside the feasible interval.
    pub theorem: bool,
    pub radius: Option<f64>,
    pub oracle: Option<bool>,
    /// Why the oracle was not consulted.
    pub skipped: Option<String>,
}

impl OracleCheck {
    pub fn agrees(&self) -> bool {
        self.oracle.is_none_or(|o| o == self.theorem)
    }
}

/// Gains closer than `margin` to an interval endpoint are skipped.
pub fn oracle_check(br: &BlockReport, strategy: Strategy, k: f64, margin: f64) -> Result<OracleCheck> {
    let interval = br.interval(strategy);
    let theorem = interval.contains(k);
    let mut check = OracleCheck { block: br.block, strategy, k, theorem, radius: None, oracle: None, skipped: None };
    if !br.needs_gain {
        check.skipped = Some("block is observed completely by every agent".into());
        return Ok(check);
    }
    let dist = interval.distance_to_boundary(k);
    if dist <= margin {
        check.skipped = Some(format!("k is {dist:.3e} from an interval endpoint (margin {margin:e})"));
        return Ok(check);
    }
    let m = assemble_error_matrix(strategy, &br.l_sub_matrix(), &br.stack, br.lambda, k);
    let radius = schur_radius(&m)?;
    check.radius = Some(radius);
    check.oracle = Some(is_schur(radius));
    Ok(check)
}
