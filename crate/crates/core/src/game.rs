//! Bipartite game graph induced by an MDP, plus parity colorings.
//!
//! System nodes are MDP states. Each state-action pair `(q, a)` becomes an
//! opponent node `q^a` whose successors are the support of `Δ(q, a)`.
//! Opponent nodes are numbered densely: `node(q, a) = offset[q] + a`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Edge, Mdp};

/// Whether opponent nodes are adversarial (sure winning) or random
/// (almost-sure winning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sure,
    AlmostSure,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sure" => Ok(Mode::Sure),
            "almost-sure" | "almost_sure" | "as" => Ok(Mode::AlmostSure),
            _ => Err(format!("unknown mode {s:?} (expected sure or almost-sure)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameGraph {
    mode: Mode,
    /// `offset[q]..offset[q+1]` are the opponent nodes of state `q`.
    offset: Vec<usize>,
    node_state: Vec<usize>,
    succ_off: Vec<usize>,
    succ: Vec<usize>,
    /// Opponent nodes having state `q` as a successor.
    pred_off: Vec<usize>,
    pred: Vec<usize>,
}

impl GameGraph {
    /// Builds the graph from explicit successor lists: `succ[q][a]` is the
    /// support of action `a` at state `q`.
    pub fn from_successors(succ: &[Vec<Vec<usize>>], mode: Mode) -> Self {
        let n = succ.len();
        let mut offset = Vec::with_capacity(n + 1);
        let mut node_state = Vec::new();
        let mut succ_off = vec![0];
        let mut flat = Vec::new();
        for (q, acts) in succ.iter().enumerate() {
            assert!(!acts.is_empty(), "state {q} has no actions");
            offset.push(node_state.len());
            for targets in acts {
                assert!(!targets.is_empty(), "action of state {q} has empty support");
                node_state.push(q);
                for &t in targets {
                    assert!(t < n, "successor {t} out of range");
                    flat.push(t);
                }
                succ_off.push(flat.len());
            }
        }
        offset.push(node_state.len());

        let mut count = vec![0usize; n + 1];
        for &t in &flat {
            count[t + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let pred_off = count.clone();
        let mut pred = vec![0; flat.len()];
        let mut fill = count;
        for v in 0..node_state.len() {
            for &t in &flat[succ_off[v]..succ_off[v + 1]] {
                pred[fill[t]] = v;
                fill[t] += 1;
            }
        }
        GameGraph {
            mode,
            offset,
            node_state,
            succ_off,
            succ: flat,
            pred_off,
            pred,
        }
    }

    pub fn from_mdp(mdp: &Mdp, mode: Mode) -> Self {
        let succ: Vec<Vec<Vec<usize>>> = (0..mdp.num_states())
            .map(|q| {
                mdp.actions(q)
                    .iter()
                    .map(|a| a.successors.iter().map(|&(s, _)| s).collect())
                    .collect()
            })
            .collect();
        GameGraph::from_successors(&succ, mode)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        GameGraph { mode, ..self.clone() }
    }

    pub fn num_states(&self) -> usize {
        self.offset.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.node_state.len()
    }

    pub fn num_actions(&self, q: usize) -> usize {
        self.offset[q + 1] - self.offset[q]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_states()).map(|q| self.num_actions(q)).max().unwrap_or(0)
    }

    pub fn nodes_of(&self, q: usize) -> std::ops::Range<usize> {
        self.offset[q]..self.offset[q + 1]
    }

    pub fn node(&self, e: Edge) -> usize {
        debug_assert!(e.action < self.num_actions(e.state));
        self.offset[e.state] + e.action
    }

    pub fn edge_of(&self, node: usize) -> Edge {
        let q = self.node_state[node];
        Edge::new(q, node - self.offset[q])
    }

    pub fn node_state(&self, node: usize) -> usize {
        self.node_state[node]
    }

    pub fn succ(&self, node: usize) -> &[usize] {
        &self.succ[self.succ_off[node]..self.succ_off[node + 1]]
    }

    pub fn edge_succ(&self, e: Edge) -> &[usize] {
        self.succ(self.node(e))
    }

    /// Opponent nodes with an edge into state `q`.
    pub fn pred(&self, q: usize) -> &[usize] {
        &self.pred[self.pred_off[q]..self.pred_off[q + 1]]
    }

    pub fn is_edge(&self, e: Edge) -> bool {
        e.state < self.num_states() && e.action < self.num_actions(e.state)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_nodes()).map(|v| self.edge_of(v))
    }

    pub fn num_opp_edges(&self) -> usize {
        self.succ.len()
    }

    /// Debug export, one line per edge: `SYS q -> q^a` and `OPP q^a -> q'`.
    pub fn to_edge_list(&self, names: Option<&Mdp>) -> String {
        let sname = |q: usize| match names {
            Some(m) => m.state_name(q).to_string(),
            None => q.to_string(),
        };
        let aname = |e: Edge| match names {
            Some(m) => m.action_name(e).to_string(),
            None => e.action.to_string(),
        };
        let mut out = String::new();
        for v in 0..self.num_nodes() {
            let e = self.edge_of(v);
            let _ = writeln!(out, "SYS {} -> {}^{}", sname(e.state), sname(e.state), aname(e));
        }
        for v in 0..self.num_nodes() {
            let e = self.edge_of(v);
            for &t in self.succ(v) {
                let _ = writeln!(out, "OPP {}^{} -> {}", sname(e.state), aname(e), sname(t));
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjectiveError {
    #[error("Büchi target is empty")]
    EmptyTarget,
    #[error("state {0} out of range")]
    StateOutOfRange(usize),
    #[error("coloring has {got} entries, graph has {want} states")]
    WrongLength { got: usize, want: usize },
}

/// Parity coloring of system states. Opponent nodes implicitly carry the
/// minimal color and never affect the maximum seen along a cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityObjective {
    colors: Vec<u32>,
}

impl ParityObjective {
    pub fn new(colors: Vec<u32>) -> Self {
        ParityObjective { colors }
    }

    pub fn for_graph(graph: &GameGraph, colors: Vec<u32>) -> Result<Self, ObjectiveError> {
        if colors.len() != graph.num_states() {
            return Err(ObjectiveError::WrongLength {
                got: colors.len(),
                want: graph.num_states(),
            });
        }
        Ok(ParityObjective { colors })
    }

    /// Colors `{1, 2}` with the target at 2.
    pub fn buchi(num_states: usize, target: &[usize]) -> Result<Self, ObjectiveError> {
        if target.is_empty() {
            return Err(ObjectiveError::EmptyTarget);
        }
        let mut colors = vec![1; num_states];
        for &q in target {
            if q >= num_states {
                return Err(ObjectiveError::StateOutOfRange(q));
            }
            colors[q] = 2;
        }
        Ok(ParityObjective { colors })
    }

    pub fn color(&self, q: usize) -> u32 {
        self.colors[q]
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn max_color(&self) -> u32 {
        self.colors.iter().copied().max().unwrap_or(0)
    }

    pub fn min_color(&self) -> u32 {
        self.colors.iter().copied().min().unwrap_or(0)
    }

    pub fn is_buchi(&self) -> bool {
        self.colors.iter().all(|&c| c == 1 || c == 2)
    }

    pub fn buchi_set(&self) -> Vec<usize> {
        (0..self.colors.len()).filter(|&q| self.colors[q] == 2).collect()
    }
}

pub fn make_buchi_objective(mdp: &Mdp, target: &[usize]) -> Result<ParityObjective, ObjectiveError> {
    ParityObjective::buchi(mdp.num_states(), target)
}

pub fn derive_game_graph(mdp: &Mdp, mode: Mode) -> GameGraph {
    GameGraph::from_mdp(mdp, mode)
}
