//! Information-flow graphs and shortest-path analysis.
//!
//! Each architecture is abstracted to a directed graph whose nodes are
//! sequence positions (plus medium nodes where they exist) and whose edges
//! are single computation steps that move information. The quantity under
//! test is the maximum over input positions of the shortest hop count to
//! the final output position: a proxy for how many nonlinear steps a
//! gradient must traverse to connect a distant input to the output.
//!
//! Edge rules, stated once and used everywhere:
//!
//! - chain: each position feeds the next (`j -> j+1`); a recurrent state
//!   moves one step per position.
//! - attention: every position feeds every later position directly.
//! - medium stream: consecutive slots of the interleaved stream are chained
//!   (the recurrence again); every token in a window feeds its medium in
//!   one hop (pooling is a direct read); every earlier medium feeds every
//!   later medium in one hop (recalibration reads the whole bank prefix);
//!   each medium feeds the tokens mapped to it in one hop (excitation is a
//!   direct read).
//!
//! Under those rules a pooled token reaches the last output in at most
//! three hops (pool, bank read, excite), and only the trailing tokens of
//! the final block, which no medium summarizes, must walk the chain, so the
//! maximum is roughly the interval rather than the sequence length.

use std::collections::VecDeque;

use thiserror::Error;

use crate::medium::{schedule_mediums, Mapping};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph has a cycle through node {node}")]
    Cyclic { node: usize },
    #[error("input node {node} cannot reach the output")]
    Unreachable { node: usize },
}

/// A directed acyclic information-flow graph with designated input nodes
/// and a single output node.
#[derive(Debug, Clone)]
pub struct InfoFlowGraph {
    /// Forward adjacency: `edges[u]` lists nodes reading from `u`.
    edges: Vec<Vec<usize>>,
    inputs: Vec<usize>,
    output: usize,
}

impl InfoFlowGraph {
    pub fn new(nodes: usize, inputs: Vec<usize>, output: usize) -> Self {
        assert!(output < nodes, "output node out of range");
        assert!(inputs.iter().all(|&i| i < nodes), "input node out of range");
        InfoFlowGraph { edges: vec![Vec::new(); nodes], inputs, output }
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        assert!(from < self.edges.len() && to < self.edges.len(), "edge endpoint out of range");
        self.edges[from].push(to);
    }

    pub fn node_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    /// Confirm the graph is acyclic and every input can reach the output.
    pub fn validate(&self) -> Result<(), GraphError> {
        // Kahn's algorithm; anything left over sits on a cycle.
        let n = self.edges.len();
        let mut indeg = vec![0usize; n];
        for outs in &self.edges {
            for &v in outs {
                indeg[v] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&u| indeg[u] == 0).collect();
        let mut seen = 0usize;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in &self.edges[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if seen != n {
            let node = (0..n).find(|&u| indeg[u] > 0).unwrap();
            return Err(GraphError::Cyclic { node });
        }
        let dist = self.distances_to_output();
        for &i in &self.inputs {
            if dist[i].is_none() {
                return Err(GraphError::Unreachable { node: i });
            }
        }
        Ok(())
    }

    /// Hop count from every node to the output (one reverse breadth-first
    /// search).
    fn distances_to_output(&self) -> Vec<Option<usize>> {
        let n = self.edges.len();
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, outs) in self.edges.iter().enumerate() {
            for &v in outs {
                rev[v].push(u);
            }
        }
        let mut dist = vec![None; n];
        dist[self.output] = Some(0);
        let mut queue = VecDeque::from([self.output]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap();
            for &u in &rev[v] {
                if dist[u].is_none() {
                    dist[u] = Some(dv + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Shortest hop count from each input to the output, in input order.
    pub fn input_path_lengths(&self) -> Vec<usize> {
        let dist = self.distances_to_output();
        self.inputs.iter().map(|&i| dist[i].expect("validate() guarantees reachability")).collect()
    }

    /// The statistic under test: the worst input's shortest path.
    pub fn max_path_length(&self) -> usize {
        self.input_path_lengths().into_iter().max().expect("graphs have at least one input")
    }
}

/// Pure recurrence: information moves one position per step.
pub fn chain_graph(n: usize) -> InfoFlowGraph {
    assert!(n >= 1);
    let mut g = InfoFlowGraph::new(n, (0..n).collect(), n - 1);
    for j in 0..n.saturating_sub(1) {
        g.add_edge(j, j + 1);
    }
    g
}

/// Pairwise attention: every position reads every earlier one directly.
pub fn attention_graph(n: usize) -> InfoFlowGraph {
    assert!(n >= 1);
    let mut g = InfoFlowGraph::new(n, (0..n).collect(), n - 1);
    for i in 0..n {
        for j in i + 1..n {
            g.add_edge(i, j);
        }
    }
    g
}

/// The medium-augmented stream under the edge rules above. Token `j` is
/// node `j`; medium `i` is node `n + i`.
pub fn medium_graph(n: usize, interval: usize) -> InfoFlowGraph {
    assert!(n >= 1);
    let plan = schedule_mediums(n, interval);
    let c = plan.mediums();
    let medium = |i: usize| n + i;
    let mut g = InfoFlowGraph::new(n + c, (0..n).collect(), n - 1);
    // Recurrence along the interleaved stream: map each slot back to its
    // node, then chain consecutive slots.
    let mut slot_node = vec![0usize; plan.stream_len()];
    for j in 0..n {
        slot_node[plan.token_slot(j)] = j;
    }
    for i in 0..c {
        slot_node[plan.medium_slot(i)] = medium(i);
    }
    for s in 0..plan.stream_len() - 1 {
        g.add_edge(slot_node[s], slot_node[s + 1]);
    }
    // Pooling: a window's tokens feed its medium directly.
    for i in 1..c {
        for j in plan.window(i).expect("non-sentry window") {
            g.add_edge(j, medium(i));
        }
    }
    // Recalibration: medium i reads the whole bank prefix directly.
    for i in 1..c {
        for j in 0..i {
            g.add_edge(medium(j), medium(i));
        }
    }
    // Excitation: each token reads its mapped medium directly.
    for j in 0..n {
        g.add_edge(medium(plan.mapped_medium(j, Mapping::Causal)), j);
    }
    g
}

/// One row of the path-length CSV.
#[derive(Debug, Clone)]
pub struct PathRow {
    pub arch: String,
    pub n: usize,
    pub s: usize,
    pub max_path: usize,
}

pub fn path_csv_header() -> &'static str {
    "arch,n,s,max_path"
}

impl PathRow {
    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{}", self.arch, self.n, self.s, self.max_path)
    }
}
