//! Plant, sensor and network types, plus validation and assembly of A and the
//! graph Laplacian.

use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::classify::BlockIndex;
use crate::error::{Error, Result};

/// All miniblocks sharing one eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBlock {
    pub lambda: f64,
    pub dims: Vec<usize>,
}

impl EigenBlock {
    pub fn new(lambda: f64, dims: impl Into<Vec<usize>>) -> Self {
        Self { lambda, dims: dims.into() }
    }

    /// Algebraic multiplicity a_l.
    pub fn multiplicity(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn is_unstable(&self) -> bool {
        self.lambda.abs() >= 1.0
    }
}

/// One Jordan miniblock with its position in the state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Miniblock {
    pub index: BlockIndex,
    pub lambda: f64,
    pub dim: usize,
    pub offset: usize,
}

impl Miniblock {
    pub fn states(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }

    pub fn is_unstable(&self) -> bool {
        self.lambda.abs() >= 1.0
    }

    /// The bidiagonal d x d block.
    pub fn matrix(&self) -> DMatrix<f64> {
        jordan_block(self.lambda, self.dim)
    }
}

pub fn jordan_block(lambda: f64, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            lambda
        } else if c == r + 1 {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JordanSpec {
    pub eigens: Vec<EigenBlock>,
}

impl JordanSpec {
    pub fn new(eigens: Vec<EigenBlock>) -> Self {
        Self { eigens }
    }

    pub fn n(&self) -> usize {
        self.eigens.iter().map(EigenBlock::multiplicity).sum()
    }

    /// Number of distinct eigenvalues r.
    pub fn r(&self) -> usize {
        self.eigens.len()
    }

    /// Number of eigenvalues with modulus at least one.
    pub fn r_u(&self) -> usize {
        self.eigens.iter().filter(|e| e.is_unstable()).count()
    }

    /// Number of miniblocks g_l of eigenvalue `ell` (0-based).
    pub fn g(&self, ell: usize) -> usize {
        self.eigens[ell].dims.len()
    }

    /// Miniblocks in state order (l ascending, then h ascending).
    pub fn miniblocks(&self) -> Vec<Miniblock> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (ell, e) in self.eigens.iter().enumerate() {
            for (h, &dim) in e.dims.iter().enumerate() {
                out.push(Miniblock { index: BlockIndex::new(ell, h), lambda: e.lambda, dim, offset });
                offset += dim;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub jordan: JordanSpec,
    /// n x m input matrix.
    pub b: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(jordan: JordanSpec, b: DMatrix<f64>) -> Self {
        Self { jordan, b }
    }

    /// System with a zero-width input matrix.
    pub fn autonomous(jordan: JordanSpec) -> Self {
        let n = jordan.n();
        Self { jordan, b: DMatrix::zeros(n, 0) }
    }

    pub fn n(&self) -> usize {
        self.jordan.n()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutputs {
    pub c: Vec<DMatrix<f64>>,
}

impl AgentOutputs {
    pub fn new(c: Vec<DMatrix<f64>>) -> Self {
        Self { c }
    }

    pub fn p(&self) -> Vec<usize> {
        self.c.iter().map(|c| c.nrows()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    /// `adjacency[(i, j)] > 0` means agent i receives from agent j.
    pub adjacency: DMatrix<f64>,
    pub directed: bool,
}

impl SensorNetwork {
    pub fn new(adjacency: DMatrix<f64>, directed: bool) -> Self {
        Self { adjacency, directed }
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    /// In-neighbours of agent i with their weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = self.adjacency.row(i);
        (0..self.adjacency.ncols()).filter_map(move |j| (row[j] != 0.0).then(|| (j, row[j])))
    }
}

/// Numerical thresholds shared across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Entries of C with modulus at most this are treated as structural zeros.
    pub structural_zero_tol: f64,
    /// Relative singular-value threshold for rank tests.
    pub rank_tol: f64,
    /// Relative tolerance for spectrum multiset matching.
    pub eig_match_tol: f64,
    /// Required distance of the Luenberger closed-loop radius from one.
    pub stability_margin: f64,
    /// Gains this close to an interval endpoint are not decided by the oracle.
    pub boundary_margin: f64,
    /// Error norm that aborts a simulation.
    pub divergence_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural_zero_tol: 0.0,
            rank_tol: 1e-9,
            eig_match_tol: 1e-7,
            stability_margin: 0.01,
            boundary_margin: 1e-3,
            divergence_threshold: 1e12,
        }
    }
}

pub fn assemble_a(jordan: &JordanSpec) -> DMatrix<f64> {
    let n = jordan.n();
    let mut a = DMatrix::zeros(n, n);
    for mb in jordan.miniblocks() {
        for k in mb.states() {
            a[(k, k)] = mb.lambda;
            if k + 1 < mb.offset + mb.dim {
                a[(k, k + 1)] = 1.0;
            }
        }
    }
    a
}

/// L = D - A with D the diagonal of row sums (in-degrees).
pub fn laplacian(net: &SensorNetwork) -> DMatrix<f64> {
    let adj = &net.adjacency;
    let n = adj.nrows();
    let mut l = -adj.clone();
    for i in 0..n {
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| adj[(i, j)]).sum();
        l[(i, i)] = deg;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySystem,
    EmptyMiniblock,
    EmptyEigenvalue,
    NonFinite,
    ComplexEigenvalue,
    EigenvalueOrder,
    DuplicateEigenvalue,
    InputShape,
    AgentCount,
    OutputWidth,
    AdjacencyShape,
    NegativeWeight,
    NonzeroDiagonal,
    Asymmetric,
    GainShape,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, path: impl Into<String>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), kind, message: message.into() });
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Checks every structural invariant and cross-dimension constraint.
pub fn validate(system: &SystemModel, outputs: &AgentOutputs, net: &SensorNetwork) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let jordan = &system.jordan;

    if jordan.eigens.is_empty() {
        rep.push("system.eigens", ViolationKind::EmptySystem, "no eigenvalues given");
    }
    let mut seen_stable = false;
    for (l, e) in jordan.eigens.iter().enumerate() {
        let path = format!("system.eigens[{l}]");
        if !e.lambda.is_finite() {
            rep.push(format!("{path}.lambda"), ViolationKind::NonFinite, "eigenvalue is not finite");
            continue;
        }
        if e.dims.is_empty() {
            rep.push(format!("{path}.dims"), ViolationKind::EmptyEigenvalue, "eigenvalue without miniblocks");
        }
        for (h, &d) in e.dims.iter().enumerate() {
            if d == 0 {
                rep.push(format!("{path}.dims[{h}]"), ViolationKind::EmptyMiniblock, "miniblock dimension must be positive");
            }
        }
        if e.is_unstable() && seen_stable {
            rep.push(
                format!("{path}.lambda"),
                ViolationKind::EigenvalueOrder,
                "eigenvalues with |lambda| >= 1 must precede those with |lambda| < 1",
            );
        }
        seen_stable |= !e.is_unstable();
        if jordan.eigens[..l].iter().any(|o| o.lambda == e.lambda) {
            rep.push(format!("{path}.lambda"), ViolationKind::DuplicateEigenvalue, "eigenvalues must be pairwise distinct");
        }
    }
    let n = jordan.n();
    if !jordan.eigens.is_empty() && n == 0 {
        rep.push("system.eigens", ViolationKind::EmptySystem, "state dimension is zero");
    }

    if system.b.nrows() != n {
        rep.push(
            "system.B",
            ViolationKind::InputShape,
            format!("input matrix has {} rows, expected {n}", system.b.nrows()),
        );
    }
    if !all_finite(&system.b) {
        rep.push("system.B", ViolationKind::NonFinite, "input matrix has non-finite entries");
    }

    let n_agents = net.adjacency.nrows();
    if net.adjacency.ncols() != n_agents {
        rep.push("network.adjacency", ViolationKind::AdjacencyShape, "adjacency matrix is not square");
    }
    if outputs.c.is_empty() {
        rep.push("agents", ViolationKind::AgentCount, "at least one agent is required");
    }
    if outputs.c.len() != n_agents {
        rep.push(
            "agents",
            ViolationKind::AgentCount,
            format!("{} agents but adjacency is {n_agents}x{n_agents}", outputs.c.len()),
        );
    }
    for (i, c) in outputs.c.iter().enumerate() {
        if c.ncols() != n {
            rep.push(
                format!("agents[{i}].C"),
                ViolationKind::OutputWidth,
                format!("output width mismatch: {} columns, expected {n}", c.ncols()),
            );
        }
        if !all_finite(c) {
            rep.push(format!("agents[{i}].C"), ViolationKind::NonFinite, "output matrix has non-finite entries");
        }
    }

    if net.adjacency.is_square() {
        for i in 0..n_agents {
            for j in 0..n_agents {
                let w = net.adjacency[(i, j)];
                let path = format!("network.adjacency[{i}][{j}]");
                if !w.is_finite() {
                    rep.push(path, ViolationKind::NonFinite, "weight is not finite");
                } else if w < 0.0 {
                    rep.push(path, ViolationKind::NegativeWeight, "edge weights must be nonnegative");
                } else if i == j && w != 0.0 {
                    rep.push(path, ViolationKind::NonzeroDiagonal, "nonzero diagonal: self-loops are not allowed");
                } else if !net.directed && j > i && w != net.adjacency[(j, i)] {
                    rep.push(path, ViolationKind::Asymmetric, "undirected network requires a symmetric adjacency");
                }
            }
        }
    }
    rep
}

/// A validated problem instance with its derived matrices.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: SystemModel,
    pub outputs: AgentOutputs,
    pub network: SensorNetwork,
    pub tol: Tolerances,
    a: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    blocks: Vec<Miniblock>,
}

impl Problem {
    pub fn new(system: SystemModel, outputs: AgentOutputs, network: SensorNetwork) -> Result<Self> {
        Self::with_tolerances(system, outputs, network, Tolerances::default())
    }

    pub fn with_tolerances(
        system: SystemModel,
        outputs: AgentOutputs,
        network: SensorNetwork,
        tol: Tolerances,
    ) -> Result<Self> {
        validate(&system, &outputs, &network).into_result()?;
        let a = assemble_a(&system.jordan);
        let laplacian = laplacian(&network);
        let blocks = system.jordan.miniblocks();
        Ok(Self { system, outputs, network, tol, a, laplacian, blocks })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_agents(&self) -> usize {
        self.outputs.c.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.system.b
    }

    pub fn c(&self, i: usize) -> &DMatrix<f64> {
        &self.outputs.c[i]
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// All miniblocks in state order; unstable ones form a prefix.
    pub fn blocks(&self) -> &[Miniblock] {
        &self.blocks
    }

    pub fn unstable_blocks(&self) -> &[Miniblock] {
        let k = self.blocks.iter().take_while(|b| b.is_unstable()).count();
        &self.blocks[..k]
    }

    pub fn block(&self, idx: BlockIndex) -> Option<&Miniblock> {
        self.blocks.iter().find(|b| b.index == idx)
    }

    /// Hash of the data that classification depends on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.system.jordan.eigens {
            e.lambda.to_bits().hash(&mut h);
            e.dims.hash(&mut h);
        }
        for c in &self.outputs.c {
            c.shape().hash(&mut h);
            for v in c.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        self.tol.structural_zero_tol.to_bits().hash(&mut h);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(adj: &[f64], n: usize, directed: bool) -> SensorNetwork {
        SensorNetwork::new(DMatrix::from_row_slice(n, n, adj), directed)
    }

    #[test]
    fn assemble_single_scalar_block() {
        let j = JordanSpec::new(vec![EigenBlock::new(0.5, [1])]);
        assert_eq!(assemble_a(&j), DMatrix::from_element(1, 1, 0.5));
    }

    #[test]
    fn assemble_single_jordan_block() {
        let j = JordanSpec::new(vec![EigenBlock::new(2.0, [2])]);
        assert_eq!(assemble_a(&j), DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]));
    }

    #[test]
    fn assemble_keeps_miniblocks_separate() {
        let j = JordanSpec::new(vec![EigenBlock::new(1.0, [3, 2, 4])]);
        let a = assemble_a(&j);
        assert_eq!(a.nrows(), 9);
        // superdiagonal ones inside blocks only
        let sup: Vec<f64> = (0..8).map(|k| a[(k, k + 1)]).collect();
        assert_eq!(sup, vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((0..9).all(|k| a[(k, k)] == 1.0));
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 9 + 6);
    }

    #[test]
    fn laplacian_of_empty_graph_is_zero() {
        let l = laplacian(&net(&[0.0; 9], 3, true));
        assert_eq!(l, DMatrix::zeros(3, 3));
    }

    #[test]
    fn laplacian_two_node_undirected() {
        let l = laplacian(&net(&[0.0, 0.7, 0.7, 0.0], 2, false));
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[0.7, -0.7, -0.7, 0.7]));
    }

    #[test]
    fn validation_flags_bad_inputs() {
        let sys = SystemModel::autonomous(JordanSpec::new(vec![EigenBlock::new(1.0, [2])]));
        let outs = AgentOutputs::new(vec![DMatrix::zeros(1, 1)]);
        let rep = validate(&sys, &outs, &net(&[0.3], 1, true));
        assert!(rep.has(ViolationKind::OutputWidth));
        assert!(rep.has(ViolationKind::NonzeroDiagonal));
        assert!(rep.violations.iter().any(|v| v.message.contains("output width mismatch")));
        assert!(rep.violations.iter().any(|v| v.message.contains("nonzero diagonal")));
    }

    #[test]
    fn validation_flags_order_and_duplicates() {
        let j = JordanSpec::new(vec![
            EigenBlock::new(0.5, [1]),
            EigenBlock::new(2.0, [1]),
            EigenBlock::new(2.0, [1]),
        ]);
        let sys = SystemModel::autonomous(j);
        let outs = AgentOutputs::new(vec![DMatrix::zeros(1, 3)]);
        let rep = validate(&sys, &outs, &net(&[0.0], 1, true));
        assert!(rep.has(ViolationKind::EigenvalueOrder));
        assert!(rep.has(ViolationKind::DuplicateEigenvalue));
    }

    #[test]
    fn validation_flags_asymmetric_undirected() {
        let sys = SystemModel::autonomous(JordanSpec::new(vec![EigenBlock::new(1.0, [1])]));
        let outs = AgentOutputs::new(vec![DMatrix::zeros(1, 1); 2]);
        let rep = validate(&sys, &outs, &net(&[0.0, 1.0, 0.5, 0.0], 2, false));
        assert!(rep.has(ViolationKind::Asymmetric));
        assert!(validate(&sys, &outs, &net(&[0.0, 1.0, 0.5, 0.0], 2, true)).is_valid());
    }
}
