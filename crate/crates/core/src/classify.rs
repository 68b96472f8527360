//! Per-agent observability classes of the unstable Jordan miniblocks, and
//! the two standing detectability assumptions.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::linalg;
use crate::model::Problem;

/// Miniblock (l, h), 0-based internally; displayed and serialized 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockIndex {
    pub ell: usize,
    pub h: usize,
}

impl BlockIndex {
    pub const fn new(ell: usize, h: usize) -> Self {
        Self { ell, h }
    }

    /// Builds an index from 1-based labels; `None` when either is zero.
    pub fn from_one_based(ell: usize, h: usize) -> Option<Self> {
        (ell >= 1 && h >= 1).then(|| Self::new(ell - 1, h - 1))
    }

    pub fn one_based(self) -> [usize; 2] {
        [self.ell + 1, self.h + 1]
    }
}

impl fmt::Display for BlockIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.ell + 1, self.h + 1)
    }
}

impl Serialize for BlockIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

/// Observability of one miniblock by one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObsClass {
    /// Output block is zero.
    Unobservable = 1,
    /// First nonzero column beyond the first.
    Partial = 2,
    /// First column nonzero.
    Full = 3,
}

impl ObsClass {
    pub fn k(self) -> usize {
        self as usize
    }

    pub fn from_t(t: Option<usize>) -> Self {
        match t {
            None => ObsClass::Unobservable,
            Some(1) => ObsClass::Full,
            Some(_) => ObsClass::Partial,
        }
    }
}

/// 1-based index of the first column of `block` with an entry above `zero_tol`.
pub fn first_obs_index(block: &DMatrix<f64>, zero_tol: f64) -> Option<usize> {
    (0..block.ncols())
        .find(|&c| block.column(c).iter().any(|v| v.abs() > zero_tol))
        .map(|c| c + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniblockClassification {
    n_agents: usize,
    /// Every miniblock in state order.
    blocks: Vec<BlockIndex>,
    n_unstable: usize,
    /// `t[i][b]`: first observable column of agent i on block b.
    t: Vec<Vec<Option<usize>>>,
    /// Number of miniblocks per unstable eigenvalue.
    g: Vec<usize>,
    fingerprint: u64,
}

impl MiniblockClassification {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Unstable miniblocks in state order.
    pub fn unstable_blocks(&self) -> &[BlockIndex] {
        &self.blocks[..self.n_unstable]
    }

    fn pos(&self, b: BlockIndex) -> usize {
        self.blocks.iter().position(|&x| x == b).expect("block index out of range")
    }

    pub fn t(&self, i: usize, b: BlockIndex) -> Option<usize> {
        self.t[i][self.pos(b)]
    }

    /// Class of an unstable block for agent i.
    pub fn class(&self, i: usize, b: BlockIndex) -> ObsClass {
        let p = self.pos(b);
        assert!(p < self.n_unstable, "stable block {b} is not classified");
        ObsClass::from_t(self.t[i][p])
    }

    /// The set G_{i,k}^l as 0-based miniblock indices h.
    pub fn g_set(&self, i: usize, ell: usize, k: ObsClass) -> Vec<usize> {
        (0..self.g[ell])
            .filter(|&h| self.class(i, BlockIndex::new(ell, h)) == k)
            .collect()
    }

    /// The set V_k^{l,h} as 0-based agent indices.
    pub fn v_set(&self, b: BlockIndex, k: ObsClass) -> Vec<usize> {
        (0..self.n_agents).filter(|&i| self.class(i, b) == k).collect()
    }

    /// True when every agent observes `b` completely (V_3 = all agents).
    pub fn fully_observed(&self, b: BlockIndex) -> bool {
        (0..self.n_agents).all(|i| self.class(i, b) == ObsClass::Full)
    }

    /// Number of unstable eigenvalues r_u.
    pub fn r_u(&self) -> usize {
        self.g.len()
    }
}

pub fn classify(p: &Problem) -> MiniblockClassification {
    let r_u = p.system.jordan.r_u();
    let g: Vec<usize> = (0..r_u).map(|l| p.system.jordan.g(l)).collect();
    let blocks: Vec<BlockIndex> = p.blocks().iter().map(|b| b.index).collect();
    let n_unstable = p.unstable_blocks().len();
    let t = (0..p.n_agents())
        .map(|i| {
            let c = p.c(i);
            p.blocks()
                .iter()
                .map(|mb| first_obs_index(&c.columns(mb.offset, mb.dim).into_owned(), p.tol.structural_zero_tol))
                .collect()
        })
        .collect();
    MiniblockClassification { n_agents: p.n_agents(), blocks, n_unstable, t, g, fingerprint: p.fingerprint() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Check {
    pub holds: bool,
    /// First (0-based) eigenvalue index failing the rank test.
    pub failing_ell: Option<usize>,
    /// Every unstable block has at least one agent observing it completely.
    pub every_block_fully_observed_somewhere: bool,
}

/// Joint detectability via the PBH test on the Jordan structure.
pub fn check_assumption1(p: &Problem, cls: &MiniblockClassification) -> Assumption1Check {
    let mut failing_ell = None;
    for ell in 0..cls.r_u() {
        let firsts: Vec<usize> = p
            .unstable_blocks()
            .iter()
            .filter(|b| b.index.ell == ell)
            .map(|b| b.offset)
            .collect();
        let stacked = stacked_columns(p, &firsts);
        if linalg::rank(&stacked, p.tol.rank_tol) < firsts.len() {
            failing_ell = Some(ell);
            break;
        }
    }
    let every = cls
        .unstable_blocks()
        .iter()
        .all(|&b| !cls.v_set(b, ObsClass::Full).is_empty());
    Assumption1Check { holds: failing_ell.is_none(), failing_ell, every_block_fully_observed_somewhere: every }
}

fn stacked_columns(p: &Problem, cols: &[usize]) -> DMatrix<f64> {
    let rows: usize = p.outputs.c.iter().map(|c| c.nrows()).sum();
    let mut m = DMatrix::zeros(rows, cols.len());
    let mut r0 = 0;
    for c in &p.outputs.c {
        for (k, &col) in cols.iter().enumerate() {
            m.view_mut((r0, k), (c.nrows(), 1)).copy_from(&c.column(col));
        }
        r0 += c.nrows();
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption2Check {
    pub holds: bool,
    /// First failing (agent, eigenvalue), both 0-based.
    pub failing: Option<(usize, usize)>,
}

/// Per agent and unstable eigenvalue, the columns C_i e_t at the first
/// observable state of each (partly) observed miniblock are independent.
pub fn check_assumption2(p: &Problem, cls: &MiniblockClassification) -> Assumption2Check {
    for i in 0..p.n_agents() {
        for ell in 0..cls.r_u() {
            let cols: Vec<usize> = p
                .unstable_blocks()
                .iter()
                .filter(|b| b.index.ell == ell)
                .filter_map(|b| cls.t(i, b.index).map(|t| b.offset + t - 1))
                .collect();
            if cols.is_empty() {
                continue;
            }
            let m = linalg::select_columns(p.c(i), &cols);
            if linalg::rank(&m, p.tol.rank_tol) < cols.len() {
                return Assumption2Check { holds: false, failing: Some((i, ell)) };
            }
        }
    }
    Assumption2Check { holds: true, failing: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentOutputs, EigenBlock, JordanSpec, SensorNetwork, SystemModel};

    fn problem(eigens: Vec<EigenBlock>, c: Vec<DMatrix<f64>>) -> Problem {
        let n_agents = c.len();
        Problem::new(
            SystemModel::autonomous(JordanSpec::new(eigens)),
            AgentOutputs::new(c),
            SensorNetwork::new(DMatrix::zeros(n_agents, n_agents), true),
        )
        .unwrap()
    }

    #[test]
    fn first_obs_index_basics() {
        assert_eq!(first_obs_index(&DMatrix::zeros(3, 3), 0.0), None);
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        assert_eq!(first_obs_index(&m, 0.0), Some(2));
        m[(2, 0)] = 1e-3;
        assert_eq!(first_obs_index(&m, 0.0), Some(1));
        assert_eq!(first_obs_index(&m, 1e-2), Some(2));
    }

    #[test]
    fn zero_output_fails_assumption1() {
        let p = problem(vec![EigenBlock::new(1.5, [2])], vec![DMatrix::zeros(1, 2)]);
        let cls = classify(&p);
        let a1 = check_assumption1(&p, &cls);
        assert!(!a1.holds);
        assert_eq!(a1.failing_ell, Some(0));
        assert!(!a1.every_block_fully_observed_somewhere);
    }

    #[test]
    fn identical_miniblock_columns_fail_assumption1() {
        // two 1x1 miniblocks of lambda = 2 seen through the same output row
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = problem(vec![EigenBlock::new(2.0, [1, 1])], vec![c]);
        let cls = classify(&p);
        assert!(cls.class(0, BlockIndex::new(0, 0)) == ObsClass::Full);
        assert!(!check_assumption1(&p, &cls).holds);
        // the same columns violate assumption 2 for that agent
        assert_eq!(check_assumption2(&p, &cls).failing, Some((0, 0)));
    }

    #[test]
    fn unobserving_agent_satisfies_assumption2_vacuously() {
        let p = problem(
            vec![EigenBlock::new(1.0, [2])],
            vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)],
        );
        let cls = classify(&p);
        assert!(check_assumption2(&p, &cls).holds);
        assert!(check_assumption1(&p, &cls).holds);
    }

    #[test]
    fn stable_blocks_are_not_classified() {
        let c = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let p = problem(vec![EigenBlock::new(1.2, [2]), EigenBlock::new(0.3, [1])], vec![c]);
        let cls = classify(&p);
        assert_eq!(cls.unstable_blocks(), &[BlockIndex::new(0, 0)]);
        assert_eq!(cls.class(0, BlockIndex::new(0, 0)), ObsClass::Partial);
        assert_eq!(cls.t(0, BlockIndex::new(1, 0)), None);
        assert_eq!(cls.g_set(0, 0, ObsClass::Partial), vec![0]);
    }

    #[test]
    fn block_index_display_is_one_based() {
        assert_eq!(BlockIndex::new(0, 2).to_string(), "(1,3)");
        assert_eq!(serde_json::to_string(&BlockIndex::new(1, 0)).unwrap(), "[2,1]");
        assert_eq!(BlockIndex::from_one_based(1, 3), Some(BlockIndex::new(0, 2)));
        assert_eq!(BlockIndex::from_one_based(0, 1), None);
    }
}
