//! Random problem instances for property tests and `verify --fuzz`.
//!
//! Every instance satisfies both standing assumptions: each observed
//! miniblock gets its own output row, and every unstable miniblock has at
//! least one agent observing it from its first state.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{AgentOutputs, EigenBlock, JordanSpec, Problem, SensorNetwork, SystemModel};
use crate::solvability::GainInterval;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzParams {
    pub max_agents: usize,
    pub max_block_dim: usize,
    /// None mixes directed and undirected networks.
    pub directed: Option<bool>,
    pub edge_probability: f64,
    pub weight_range: (f64, f64),
}

impl Default for FuzzParams {
    fn default() -> Self {
        Self { max_agents: 5, max_block_dim: 3, directed: None, edge_probability: 0.5, weight_range: (0.1, 2.0) }
    }
}

pub struct FuzzGenerator {
    rng: ChaCha8Rng,
    params: FuzzParams,
}

impl FuzzGenerator {
    pub fn new(seed: u64, params: FuzzParams) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn unstable_lambda(&mut self) -> f64 {
        let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if self.rng.random_bool(0.25) {
            sign
        } else {
            sign * self.rng.random_range(1.0..1.6)
        }
    }

    fn jordan(&mut self) -> JordanSpec {
        let dmax = self.params.max_block_dim;
        let n_unstable = self.rng.random_range(1..=2);
        let mut eigens: Vec<EigenBlock> = Vec::new();
        while eigens.len() < n_unstable {
            let lambda = self.unstable_lambda();
            if eigens.iter().any(|e| (e.lambda - lambda).abs() < 0.05) {
                continue;
            }
            let count = self.rng.random_range(1..=2);
            let dims = (0..count).map(|_| self.rng.random_range(1..=dmax)).collect::<Vec<_>>();
            eigens.push(EigenBlock::new(lambda, dims));
        }
        if self.rng.random_bool(0.5) {
            let lambda = self.rng.random_range(-0.9..0.9);
            let dims = vec![self.rng.random_range(1..=2)];
            eigens.push(EigenBlock::new(lambda, dims));
        }
        JordanSpec::new(eigens)
    }

    fn weight(&mut self) -> f64 {
        let (lo, hi) = self.params.weight_range;
        self.rng.random_range(lo..=hi)
    }

    fn nonzero(&mut self) -> f64 {
        let v: f64 = self.rng.random_range(0.5..1.5);
        if self.rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    }

    pub fn network(&mut self, n_agents: usize, directed: bool) -> SensorNetwork {
        let mut adj = DMatrix::zeros(n_agents, n_agents);
        for i in 0..n_agents {
            for j in 0..n_agents {
                if i == j || (!directed && j < i) {
                    continue;
                }
                if self.rng.random_bool(self.params.edge_probability) {
                    let w = self.weight();
                    adj[(i, j)] = w;
                    if !directed {
                        adj[(j, i)] = w;
                    }
                }
            }
        }
        SensorNetwork::new(adj, directed)
    }

    pub fn problem(&mut self) -> Problem {
        let jordan = self.jordan();
        let n = jordan.n();
        let n_agents = self.rng.random_range(1..=self.params.max_agents);
        let directed = self.params.directed.unwrap_or_else(|| self.rng.random_bool(0.5));
        let miniblocks = jordan.miniblocks();

        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_agents];
        for mb in &miniblocks {
            let forced = mb.is_unstable().then(|| self.rng.random_range(0..n_agents));
            for (i, agent_rows) in rows.iter_mut().enumerate() {
                // t = 0 means the agent does not see the block at all
                let t = if forced == Some(i) {
                    1
                } else if self.rng.random_bool(0.35) {
                    0
                } else {
                    self.rng.random_range(1..=mb.dim)
                };
                if t == 0 {
                    continue;
                }
                let mut row = vec![0.0; n];
                row[mb.offset + t - 1] = self.nonzero();
                for c in t..mb.dim {
                    if self.rng.random_bool(0.5) {
                        row[mb.offset + c] = self.rng.random_range(-1.0..1.0);
                    }
                }
                agent_rows.push(row);
            }
        }
        let c = rows
            .into_iter()
            .map(|r| {
                if r.is_empty() {
                    DMatrix::zeros(0, n)
                } else {
                    DMatrix::from_fn(r.len(), n, |a, b| r[a][b])
                }
            })
            .collect();

        let m = self.rng.random_range(0..=2);
        let b = DMatrix::from_fn(n, m, |_, _| self.rng.random_range(-1.0..1.0));
        let network = self.network(n_agents, directed);
        Problem::new(SystemModel::new(jordan, b), AgentOutputs::new(c), network).expect("generated instance is valid")
    }

    /// Gain in `range` at least `margin` away from every finite endpoint of `interval`.
    pub fn gain_off_boundary(&mut self, interval: &GainInterval, range: (f64, f64), margin: f64) -> f64 {
        loop {
            let k = self.rng.random_range(range.0..range.1);
            if interval.distance_to_boundary(k) > margin {
                return k;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{check_assumption1, check_assumption2, classify};

    #[test]
    fn instances_satisfy_assumptions() {
        let mut g = FuzzGenerator::new(3, FuzzParams::default());
        for _ in 0..100 {
            let p = g.problem();
            let cls = classify(&p);
            assert!(check_assumption1(&p, &cls).holds);
            assert!(check_assumption2(&p, &cls).holds);
            assert!(p.n_agents() <= 5);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = FuzzGenerator::new(11, FuzzParams::default()).problem();
        let b = FuzzGenerator::new(11, FuzzParams::default()).problem();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
