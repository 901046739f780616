//! Subgames and attractors.
//!
//! A subgame keeps a subset of states and a subset of opponent nodes. An
//! opponent node is only kept if its state is. In sure mode the successors of
//! a kept node are implicitly filtered to the kept states; almost-sure
//! subgames are always closed (every kept node has all successors kept).

use crate::game::{GameGraph, Mode};

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Sub {
    pub states: Vec<bool>,
    pub nodes: Vec<bool>,
}

impl Sub {
    pub fn full(g: &GameGraph) -> Self {
        Sub {
            states: vec![true; g.num_states()],
            nodes: vec![true; g.num_nodes()],
        }
    }

    pub fn state_list(&self) -> Vec<usize> {
        mask_to_list(&self.states)
    }

    pub fn covers(&self, set: &[bool]) -> bool {
        self.states.iter().zip(set).all(|(&s, &t)| !s || t)
    }

    /// Removes a set of states (typically a system attractor). Their nodes go
    /// with them; remaining nodes keep only the remaining successors.
    pub fn without_states(&self, g: &GameGraph, remove: &[bool]) -> Sub {
        let states: Vec<bool> = self.states.iter().zip(remove).map(|(&s, &r)| s && !r).collect();
        let nodes = (0..g.num_nodes())
            .map(|v| self.nodes[v] && states[g.node_state(v)])
            .collect();
        Sub { states, nodes }
    }

    /// Removes an opponent attractor, including its attracted nodes.
    pub fn without_opp_attr(&self, g: &GameGraph, attr: &OppAttr) -> Sub {
        let states: Vec<bool> = self
            .states
            .iter()
            .zip(&attr.states)
            .map(|(&s, &r)| s && !r)
            .collect();
        let nodes = (0..g.num_nodes())
            .map(|v| self.nodes[v] && !attr.nodes[v] && states[g.node_state(v)])
            .collect();
        Sub { states, nodes }
    }

    /// Restricts to `keep`, dropping nodes with a successor in a dropped state
    /// and cascading through states left without nodes.
    pub fn restrict(&self, g: &GameGraph, keep: &[bool]) -> Sub {
        let mut states: Vec<bool> = self.states.iter().zip(keep).map(|(&s, &k)| s && k).collect();
        let mut nodes = vec![false; g.num_nodes()];
        let mut count = vec![0usize; g.num_states()];
        for v in 0..g.num_nodes() {
            let q = g.node_state(v);
            if !self.nodes[v] || !states[q] {
                continue;
            }
            let leaves = g.succ(v).iter().any(|&s| self.states[s] && !states[s]);
            if !leaves {
                nodes[v] = true;
                count[q] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..g.num_states()).filter(|&q| states[q] && count[q] == 0).collect();
        for &q in &queue {
            states[q] = false;
        }
        while let Some(s) = queue.pop() {
            for &v in g.pred(s) {
                if !nodes[v] {
                    continue;
                }
                nodes[v] = false;
                let q = g.node_state(v);
                count[q] -= 1;
                if count[q] == 0 && states[q] {
                    states[q] = false;
                    queue.push(q);
                }
            }
        }
        Sub { states, nodes }
    }
}

pub(crate) fn mask_to_list(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

pub(crate) fn list_to_mask(n: usize, list: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in list {
        m[i] = true;
    }
    m
}

/// The playable part of the graph once `forbidden` nodes are deleted: dead
/// states and nodes that can lead into them are pruned to a fixed point.
pub(crate) fn base_arena(g: &GameGraph, forbidden: &[bool]) -> Sub {
    let sub = Sub {
        states: vec![true; g.num_states()],
        nodes: forbidden.iter().map(|&f| !f).collect(),
    };
    sub.restrict(g, &vec![true; g.num_states()])
}

/// System attractor with per-state and per-node levels.
#[derive(Debug, Clone)]
pub(crate) struct SysAttr {
    pub level: Vec<u32>,
    pub node_level: Vec<u32>,
    pub depth: u32,
}

impl SysAttr {
    pub fn contains(&self, q: usize) -> bool {
        self.level[q] != NONE
    }

    pub fn mask(&self) -> Vec<bool> {
        self.level.iter().map(|&l| l != NONE).collect()
    }

    /// `H_i` = nodes of layer-`i` states attracted below level `i`.
    pub fn groups(&self, g: &GameGraph, sub: &Sub) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.depth as usize + 1];
        for v in 0..g.num_nodes() {
            if !sub.nodes[v] {
                continue;
            }
            let l = self.level[g.node_state(v)];
            if l != NONE && l > 0 && self.node_level[v] < l {
                groups[l as usize].push(v);
            }
        }
        groups.into_iter().filter(|h| !h.is_empty()).collect()
    }

    pub fn layers(&self) -> Vec<Vec<usize>> {
        let mut layers = vec![Vec::new(); self.depth as usize + 1];
        for (q, &l) in self.level.iter().enumerate() {
            if l != NONE {
                layers[l as usize].push(q);
            }
        }
        while layers.last().is_some_and(Vec::is_empty) {
            layers.pop();
        }
        layers
    }
}

/// Sure: a node is attracted once all its successors inside the subgame are.
/// Almost-sure: once any successor is. A state is attracted through any node.
pub(crate) fn sys_attr(g: &GameGraph, sub: &Sub, target: &[bool], mode: Mode) -> SysAttr {
    let mut level = vec![NONE; g.num_states()];
    let mut node_level = vec![NONE; g.num_nodes()];
    let mut count: Vec<u32> = match mode {
        Mode::Sure => (0..g.num_nodes())
            .map(|v| g.succ(v).iter().filter(|&&s| sub.states[s]).count() as u32)
            .collect(),
        Mode::AlmostSure => vec![1; g.num_nodes()],
    };
    let mut frontier: Vec<usize> = (0..g.num_states()).filter(|&q| sub.states[q] && target[q]).collect();
    for &q in &frontier {
        level[q] = 0;
    }
    let mut depth = 0;
    let mut cur = 0u32;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &s in &frontier {
            for &v in g.pred(s) {
                if !sub.nodes[v] || node_level[v] != NONE {
                    continue;
                }
                count[v] -= 1;
                if count[v] == 0 {
                    node_level[v] = cur;
                    let q = g.node_state(v);
                    if level[q] == NONE {
                        level[q] = cur + 1;
                        depth = cur + 1;
                        next.push(q);
                    }
                }
            }
        }
        frontier = next;
        cur += 1;
    }
    SysAttr {
        level,
        node_level,
        depth,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OppAttr {
    pub states: Vec<bool>,
    pub nodes: Vec<bool>,
}

/// Opponent attractor. A node is attracted when any successor is; a state
/// when all its subgame nodes are. `protected` states are never attracted.
pub(crate) fn opp_attr(g: &GameGraph, sub: &Sub, target: &[bool], protected: Option<&[bool]>) -> OppAttr {
    let mut states = vec![false; g.num_states()];
    let mut nodes = vec![false; g.num_nodes()];
    let mut count = vec![0u32; g.num_states()];
    for v in 0..g.num_nodes() {
        if sub.nodes[v] {
            count[g.node_state(v)] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..g.num_states()).filter(|&q| sub.states[q] && target[q]).collect();
    for &q in &queue {
        states[q] = true;
    }
    while let Some(s) = queue.pop() {
        for &v in g.pred(s) {
            if !sub.nodes[v] || nodes[v] {
                continue;
            }
            nodes[v] = true;
            let q = g.node_state(v);
            count[q] -= 1;
            if count[q] == 0 && !states[q] && !protected.is_some_and(|p| p[q]) {
                states[q] = true;
                queue.push(q);
            }
        }
    }
    OppAttr { states, nodes }
}
