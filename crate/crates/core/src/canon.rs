//! Per-agent state permutations: the detectability form used by both
//! observer strategies, and the whole-miniblock split of the augmented one.

use std::fmt;

use nalgebra::DMatrix;

use crate::classify::{BlockIndex, MiniblockClassification, ObsClass};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{jordan_block, Problem};

/// Permutation stored as `order[new] = original` state index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePerm {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl StatePerm {
    /// Panics unless `order` is a bijection on `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Self {
        Self::try_new(order).expect("not a permutation")
    }

    pub fn try_new(order: Vec<usize>) -> Option<Self> {
        let n = order.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &orig) in order.iter().enumerate() {
            if orig >= n || inverse[orig] != usize::MAX {
                return None;
            }
            inverse[orig] = new;
        }
        Some(Self { order, inverse })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// New position of original state `orig`.
    pub fn position(&self, orig: usize) -> usize {
        self.inverse[orig]
    }

    /// Dense Q with x = Q z.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for (new, &orig) in self.order.iter().enumerate() {
            q[(orig, new)] = 1.0;
        }
        q
    }

    /// Q^T M Q by index copying.
    pub fn conjugate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::principal_submatrix(m, &self.order)
    }

    /// M Q by index copying.
    pub fn permute_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::select_columns(m, &self.order)
    }

    /// Q^T M by index copying.
    pub fn permute_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::select_rows(m, &self.order)
    }

    /// z = Q^T x.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&o| x[o]).collect()
    }

    /// x = Q z.
    pub fn backward(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; z.len()];
        for (new, &orig) in self.order.iter().enumerate() {
            x[orig] = z[new];
        }
        x
    }

    #[doc(hidden)]
    pub fn swap(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
        self.inverse[self.order[a]] = a;
        self.inverse[self.order[b]] = b;
    }
}

/// A contiguous run of states from one miniblock inside a permuted vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub block: BlockIndex,
    /// First state inside the miniblock (0-based).
    pub first: usize,
    pub len: usize,
    /// Position of the run inside its part of the permuted vector.
    pub start: usize,
}

fn push_segment(segs: &mut Vec<Segment>, order: &mut Vec<usize>, part_start: usize, block: BlockIndex, offset: usize, first: usize, len: usize) {
    if len == 0 {
        return;
    }
    segs.push(Segment { block, first, len, start: order.len() - part_start });
    order.extend(offset + first..offset + first + len);
}

/// Kalman detectability form of (A, C_i) preserving the Jordan structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityForm {
    pub agent: usize,
    pub perm: StatePerm,
    pub n_u: usize,
    pub f_u: DMatrix<f64>,
    pub f_star: DMatrix<f64>,
    pub f_d: DMatrix<f64>,
    pub g_u: DMatrix<f64>,
    pub g_d: DMatrix<f64>,
    pub h_d: DMatrix<f64>,
    /// z_u = [x_{i,1}; x_{i,2u}].
    pub u_segments: Vec<Segment>,
    /// z_d = [x_{i,2o}; x_{i,3}; x_s].
    pub d_segments: Vec<Segment>,
}

impl DetectabilityForm {
    pub fn n_d(&self) -> usize {
        self.perm.len() - self.n_u
    }

    /// Original state indices of z_u.
    pub fn zu_index_map(&self) -> &[usize] {
        &self.perm.order()[..self.n_u]
    }

    /// Original state indices of z_d.
    pub fn zd_index_map(&self) -> &[usize] {
        &self.perm.order()[self.n_u..]
    }

    /// PBH test of (F_d, H_d) at every diagonal entry of modulus at least one.
    /// F_d is upper triangular by construction, so its diagonal is its spectrum.
    pub fn is_detectable(&self, rank_tol: f64) -> bool {
        pbh_detectable(&self.f_d, &self.h_d, rank_tol)
    }
}

/// PBH detectability for an upper-triangular `f`.
pub fn pbh_detectable(f: &DMatrix<f64>, h: &DMatrix<f64>, rank_tol: f64) -> bool {
    let n = f.nrows();
    let mut checked: Vec<f64> = Vec::new();
    for k in 0..n {
        let mu = f[(k, k)];
        if mu.abs() < 1.0 || checked.contains(&mu) {
            continue;
        }
        checked.push(mu);
        let mut pbh = DMatrix::zeros(n + h.nrows(), n);
        pbh.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * mu - f));
        pbh.view_mut((n, 0), h.shape()).copy_from(h);
        if linalg::rank(&pbh, rank_tol) < n {
            return false;
        }
    }
    true
}

fn ensure_fresh(p: &Problem, cls: &MiniblockClassification) -> Result<()> {
    if cls.fingerprint() != p.fingerprint() || cls.n_agents() != p.n_agents() {
        return Err(Error::StaleClassification);
    }
    Ok(())
}

pub fn build_detectability_form(p: &Problem, cls: &MiniblockClassification, i: usize) -> Result<DetectabilityForm> {
    ensure_fresh(p, cls)?;
    let mut order = Vec::with_capacity(p.n());
    let mut u_segments = Vec::new();
    let mut d_segments = Vec::new();
    let unstable = p.unstable_blocks();

    for mb in unstable.iter().filter(|b| cls.class(i, b.index) == ObsClass::Unobservable) {
        push_segment(&mut u_segments, &mut order, 0, mb.index, mb.offset, 0, mb.dim);
    }
    for mb in unstable.iter().filter(|b| cls.class(i, b.index) == ObsClass::Partial) {
        let t = cls.t(i, mb.index).unwrap_or(1);
        push_segment(&mut u_segments, &mut order, 0, mb.index, mb.offset, 0, t - 1);
    }
    let n_u = order.len();
    for mb in unstable.iter().filter(|b| cls.class(i, b.index) == ObsClass::Partial) {
        let t = cls.t(i, mb.index).unwrap_or(1);
        push_segment(&mut d_segments, &mut order, n_u, mb.index, mb.offset, t - 1, mb.dim - t + 1);
    }
    for mb in unstable.iter().filter(|b| cls.class(i, b.index) == ObsClass::Full) {
        push_segment(&mut d_segments, &mut order, n_u, mb.index, mb.offset, 0, mb.dim);
    }
    for mb in &p.blocks()[unstable.len()..] {
        push_segment(&mut d_segments, &mut order, n_u, mb.index, mb.offset, 0, mb.dim);
    }

    let perm = StatePerm::new(order);
    let pa = perm.conjugate(p.a());
    let pb = perm.permute_rows(p.b());
    let pc = perm.permute_columns(p.c(i));
    let n = p.n();
    let n_d = n - n_u;
    Ok(DetectabilityForm {
        agent: i,
        n_u,
        f_u: pa.view((0, 0), (n_u, n_u)).into_owned(),
        f_star: pa.view((0, n_u), (n_u, n_d)).into_owned(),
        f_d: pa.view((n_u, n_u), (n_d, n_d)).into_owned(),
        g_u: pb.rows(0, n_u).into_owned(),
        g_d: pb.rows(n_u, n_d).into_owned(),
        h_d: pc.columns(n_u, n_d).into_owned(),
        perm,
        u_segments,
        d_segments,
    })
}

/// Split used by the augmented observer: partly observed miniblocks are kept
/// whole in the consensus part.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedForm {
    pub agent: usize,
    pub perm: StatePerm,
    pub n_u: usize,
    pub a_u: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c_u: DMatrix<f64>,
    pub c_d: DMatrix<f64>,
    /// x_u = [x_{i,1}; x_{i,2}].
    pub u_segments: Vec<Segment>,
    /// x_d = [x_{i,3}; x_s].
    pub d_segments: Vec<Segment>,
    /// dim(x_{i,1}); C_i vanishes on these leading states.
    pub n_unobserved: usize,
    /// dim(x_{i,2o}): x_d is the tail of the detectable observer state from here on.
    pub sd_offset: usize,
}

impl AugmentedForm {
    pub fn n_d(&self) -> usize {
        self.perm.len() - self.n_u
    }

    /// The [0 I] selector mapping the detectable observer state onto x_d.
    pub fn selection_s_d(&self) -> DMatrix<f64> {
        let nd = self.n_d();
        let mut s = DMatrix::zeros(nd, self.sd_offset + nd);
        s.view_mut((0, self.sd_offset), (nd, nd)).fill_with_identity();
        s
    }
}

pub fn build_augmented_form(p: &Problem, cls: &MiniblockClassification, i: usize) -> Result<AugmentedForm> {
    ensure_fresh(p, cls)?;
    let mut order = Vec::with_capacity(p.n());
    let mut u_segments = Vec::new();
    let mut d_segments = Vec::new();
    let unstable = p.unstable_blocks();

    let mut n_unobserved = 0;
    for class in [ObsClass::Unobservable, ObsClass::Partial] {
        for mb in unstable.iter().filter(|b| cls.class(i, b.index) == class) {
            push_segment(&mut u_segments, &mut order, 0, mb.index, mb.offset, 0, mb.dim);
        }
        if class == ObsClass::Unobservable {
            n_unobserved = order.len();
        }
    }
    let n_u = order.len();
    for mb in unstable.iter().filter(|b| cls.class(i, b.index) == ObsClass::Full) {
        push_segment(&mut d_segments, &mut order, n_u, mb.index, mb.offset, 0, mb.dim);
    }
    for mb in &p.blocks()[unstable.len()..] {
        push_segment(&mut d_segments, &mut order, n_u, mb.index, mb.offset, 0, mb.dim);
    }
    let sd_offset: usize = unstable
        .iter()
        .filter(|b| cls.class(i, b.index) == ObsClass::Partial)
        .map(|b| b.dim - cls.t(i, b.index).unwrap_or(1) + 1)
        .sum();

    let perm = StatePerm::new(order);
    let pa = perm.conjugate(p.a());
    let pb = perm.permute_rows(p.b());
    let pc = perm.permute_columns(p.c(i));
    let n_d = p.n() - n_u;
    Ok(AugmentedForm {
        agent: i,
        n_u,
        a_u: pa.view((0, 0), (n_u, n_u)).into_owned(),
        a_d: pa.view((n_u, n_u), (n_d, n_d)).into_owned(),
        b_u: pb.rows(0, n_u).into_owned(),
        b_d: pb.rows(n_u, n_d).into_owned(),
        c_u: pc.columns(0, n_u).into_owned(),
        c_d: pc.columns(n_u, n_d).into_owned(),
        perm,
        u_segments,
        d_segments,
        n_unobserved,
        sd_offset,
    })
}

/// Located disagreement between a stored form and its reassembly.
#[derive(Debug, Clone, PartialEq)]
pub struct FormMismatch {
    pub agent: usize,
    pub what: String,
    pub row: Option<usize>,
    pub col: Option<usize>,
}

impl fmt::Display for FormMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {}: {}", self.agent + 1, self.what)?;
        if let (Some(r), Some(c)) = (self.row, self.col) {
            write!(f, " at ({r}, {c})")?;
        }
        Ok(())
    }
}

/// Forms that can be checked against a dense reassembly.
pub trait PermutedForm {
    fn agent(&self) -> usize;
    fn perm(&self) -> &StatePerm;
    fn u_segments(&self) -> &[Segment];
    fn n_u(&self) -> usize;
    /// Stored blocks as (name, matrix, row offset, column offset) of P^T A P.
    fn a_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize, usize)>;
    fn b_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)>;
    fn c_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)>;
    /// Columns of C P that must vanish.
    fn zero_c_columns(&self) -> usize;
    /// Whether the upper-right block of P^T A P must vanish too.
    fn block_diagonal(&self) -> bool;
}

impl PermutedForm for DetectabilityForm {
    fn agent(&self) -> usize {
        self.agent
    }
    fn perm(&self) -> &StatePerm {
        &self.perm
    }
    fn u_segments(&self) -> &[Segment] {
        &self.u_segments
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn a_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize, usize)> {
        vec![("F_u", &self.f_u, 0, 0), ("F_star", &self.f_star, 0, self.n_u), ("F_d", &self.f_d, self.n_u, self.n_u)]
    }
    fn b_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)> {
        vec![("G_u", &self.g_u, 0), ("G_d", &self.g_d, self.n_u)]
    }
    fn c_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)> {
        vec![("H_d", &self.h_d, self.n_u)]
    }
    fn zero_c_columns(&self) -> usize {
        self.n_u
    }
    fn block_diagonal(&self) -> bool {
        false
    }
}

impl PermutedForm for AugmentedForm {
    fn agent(&self) -> usize {
        self.agent
    }
    fn perm(&self) -> &StatePerm {
        &self.perm
    }
    fn u_segments(&self) -> &[Segment] {
        &self.u_segments
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn a_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize, usize)> {
        vec![("A_u", &self.a_u, 0, 0), ("A_d", &self.a_d, self.n_u, self.n_u)]
    }
    fn b_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)> {
        vec![("B_u", &self.b_u, 0), ("B_d", &self.b_d, self.n_u)]
    }
    fn c_blocks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize)> {
        vec![("C_u", &self.c_u, 0), ("C_d", &self.c_d, self.n_u)]
    }
    fn zero_c_columns(&self) -> usize {
        self.n_unobserved
    }
    fn block_diagonal(&self) -> bool {
        true
    }
}

/// Reassembles P^T A P, P^T B and C_i P with dense products and checks the
/// sparsity pattern and every stored block.
pub fn verify_form<F: PermutedForm>(form: &F, p: &Problem) -> std::result::Result<(), FormMismatch> {
    let agent = form.agent();
    let fail = |what: String, row: Option<usize>, col: Option<usize>| FormMismatch { agent, what, row, col };
    let n = p.n();
    let perm = form.perm();
    if perm.len() != n || StatePerm::try_new(perm.order().to_vec()).is_none() {
        return Err(fail("permutation is not a bijection on the state indices".into(), None, None));
    }
    let q = perm.to_matrix();
    let qaq = q.transpose() * p.a() * &q;
    let qb = q.transpose() * p.b();
    let cq = p.c(agent) * &q;
    let nu = form.n_u();

    for r in nu..n {
        for c in 0..nu {
            if qaq[(r, c)] != 0.0 {
                return Err(fail("lower-left block of P^T A P is not zero".into(), Some(r), Some(c)));
            }
        }
    }
    if form.block_diagonal() {
        for r in 0..nu {
            for c in nu..n {
                if qaq[(r, c)] != 0.0 {
                    return Err(fail("upper-right block of P^T A P is not zero".into(), Some(r), Some(c)));
                }
            }
        }
    }
    // the undetectable part must be diag of leading Jordan pieces
    let pieces: Vec<DMatrix<f64>> = form
        .u_segments()
        .iter()
        .map(|s| jordan_block(p.block(s.block).map_or(f64::NAN, |b| b.lambda), s.len))
        .collect();
    let expected_u = linalg::block_diag(&pieces);
    if expected_u.shape() != (nu, nu) {
        return Err(fail("segment table does not cover the undetectable part".into(), None, None));
    }
    for r in 0..nu {
        for c in 0..nu {
            if qaq[(r, c)] != expected_u[(r, c)] {
                return Err(fail("undetectable block is not the expected Jordan pieces".into(), Some(r), Some(c)));
            }
        }
    }
    for c in 0..form.zero_c_columns() {
        for r in 0..cq.nrows() {
            if cq[(r, c)].abs() > p.tol.structural_zero_tol {
                return Err(fail("output does not vanish on the undetectable part".into(), Some(r), Some(c)));
            }
        }
    }
    for (name, m, r0, c0) in form.a_blocks() {
        check_block(&qaq, m, r0, c0).map_err(|(r, c)| fail(format!("stored {name} differs from P^T A P"), Some(r), Some(c)))?;
    }
    for (name, m, r0) in form.b_blocks() {
        check_block(&qb, m, r0, 0).map_err(|(r, c)| fail(format!("stored {name} differs from P^T B"), Some(r), Some(c)))?;
    }
    for (name, m, c0) in form.c_blocks() {
        check_block(&cq, m, 0, c0).map_err(|(r, c)| fail(format!("stored {name} differs from C P"), Some(r), Some(c)))?;
    }
    Ok(())
}

fn check_block(full: &DMatrix<f64>, stored: &DMatrix<f64>, r0: usize, c0: usize) -> std::result::Result<(), (usize, usize)> {
    if r0 + stored.nrows() > full.nrows() || c0 + stored.ncols() > full.ncols() {
        return Err((r0, c0));
    }
    for r in 0..stored.nrows() {
        for c in 0..stored.ncols() {
            if full[(r0 + r, c0 + c)] != stored[(r, c)] {
                return Err((r0 + r, c0 + c));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::classify;
    use crate::model::{AgentOutputs, EigenBlock, JordanSpec, SensorNetwork, SystemModel};

    fn problem() -> Problem {
        // blocks: (1,1) d=3, (1,2) d=2, stable (2,1) d=1
        let j = JordanSpec::new(vec![EigenBlock::new(1.0, [3, 2]), EigenBlock::new(0.5, [1])]);
        let mut c0 = DMatrix::zeros(2, 6);
        c0[(0, 1)] = 1.0; // (1,1) partly observed from state 2
        c0[(1, 3)] = 2.0; // (1,2) fully observed
        let mut c1 = DMatrix::zeros(1, 6);
        c1[(0, 0)] = 1.0;
        c1[(0, 3)] = 1.0;
        let b = DMatrix::from_fn(6, 1, |r, _| r as f64);
        Problem::new(
            SystemModel::new(j, b),
            AgentOutputs::new(vec![c0, c1]),
            SensorNetwork::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), false),
        )
        .unwrap()
    }

    #[test]
    fn detectability_form_orders_parts() {
        let p = problem();
        let cls = classify(&p);
        let f = build_detectability_form(&p, &cls, 0).unwrap();
        assert_eq!(f.n_u, 1);
        assert_eq!(f.zu_index_map(), &[0]);
        assert_eq!(f.zd_index_map(), &[1, 2, 3, 4, 5]);
        assert_eq!(f.f_star, DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(f.is_detectable(1e-9));
        verify_form(&f, &p).unwrap();
    }

    #[test]
    fn fully_observing_agent_has_empty_undetectable_part() {
        let p = problem();
        let cls = classify(&p);
        let f = build_detectability_form(&p, &cls, 1).unwrap();
        assert_eq!(f.n_u, 0);
        assert_eq!(f.f_star.shape(), (0, 6));
        assert_eq!(f.f_d, p.a().clone());
        verify_form(&f, &p).unwrap();
    }

    #[test]
    fn augmented_form_keeps_partial_blocks_whole() {
        let p = problem();
        let cls = classify(&p);
        let f = build_augmented_form(&p, &cls, 0).unwrap();
        assert_eq!(f.n_u, 3);
        assert_eq!(f.sd_offset, 2);
        assert_eq!(f.perm.order(), &[0, 1, 2, 3, 4, 5]);
        let s = f.selection_s_d();
        assert_eq!(s.shape(), (3, 5));
        assert_eq!(s[(0, 2)], 1.0);
        verify_form(&f, &p).unwrap();
    }

    #[test]
    fn swapped_permutation_is_detected() {
        let p = problem();
        let cls = classify(&p);
        let mut f = build_detectability_form(&p, &cls, 0).unwrap();
        f.perm.swap(0, 3);
        let err = verify_form(&f, &p).unwrap_err();
        assert!(err.row.is_some(), "{err}");
    }

    #[test]
    fn stale_classification_is_rejected() {
        let p = problem();
        let cls = classify(&p);
        let mut q = p.clone();
        q.outputs.c[0][(0, 0)] = 1.0;
        let q = Problem::new(q.system, q.outputs, q.network).unwrap();
        assert!(matches!(build_detectability_form(&q, &cls, 0), Err(Error::StaleClassification)));
    }

    #[test]
    fn perm_roundtrip() {
        let p = StatePerm::new(vec![2, 0, 1]);
        let x = [10.0, 20.0, 30.0];
        assert_eq!(p.forward(&x), vec![30.0, 10.0, 20.0]);
        assert_eq!(p.backward(&p.forward(&x)), x.to_vec());
        assert!(StatePerm::try_new(vec![0, 0, 1]).is_none());
    }

    mod props {
        use super::*;
        use crate::fuzz::{FuzzGenerator, FuzzParams};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn perm_forward_backward_are_inverse(mut order in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
                                                 x in proptest::collection::vec(-10.0f64..10.0, 12)) {
                order.truncate(12);
                let p = StatePerm::new(order);
                prop_assert_eq!(p.backward(&p.forward(&x)), x);
            }

            #[test]
            fn fuzzed_forms_reassemble_exactly(seed in any::<u64>()) {
                let p = FuzzGenerator::new(seed, FuzzParams::default()).problem();
                let cls = classify(&p);
                for i in 0..p.n_agents() {
                    let det = build_detectability_form(&p, &cls, i).unwrap();
                    prop_assert!(verify_form(&det, &p).is_ok());
                    prop_assert!(det.is_detectable(p.tol.rank_tol));
                    let aug = build_augmented_form(&p, &cls, i).unwrap();
                    prop_assert!(verify_form(&aug, &p).is_ok());
                    prop_assert!(aug.n_u >= det.n_u);
                }
            }
        }
    }
}
