//! Winning regions and permissive strategy templates.

mod arena;
mod compose;
mod solve;
mod template;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameGraph, Mode, ParityObjective};
use crate::mdp::Edge;
use arena::{base_arena, list_to_mask, mask_to_list, opp_attr, sys_attr, Sub};

pub use compose::{apply_fault, compose_templates, synthesize, FaultKind, FaultOutcome, Objective, ObjectiveSet};
pub use template::{check_conflict_free, follows_template, RunVerdict, RuntimeMask, StrategyTemplate, TemplateJson, Violation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("target set is empty")]
    EmptyTarget,
    #[error("winning region is empty")]
    EmptyWinningRegion,
    #[error("conflict between objectives {objectives:?} cannot be resolved")]
    ConflictUnresolvable { objectives: Vec<usize> },
    #[error("{0} is not an edge of the graph")]
    NotAnEdge(Edge),
    #[error("objective does not match the graph: {0}")]
    BadObjective(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// Attractor layers `Q₀ = target, Q₁, …`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttractorLayers {
    pub layers: Vec<Vec<usize>>,
}

impl AttractorLayers {
    pub fn states(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.layers.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// System attractor of `target`. In almost-sure mode this is the positive
/// attractor inside the region that reaches `target` with probability one.
pub fn sys_attractor(g: &GameGraph, target: &[usize]) -> AttractorLayers {
    let (_, attr) = reach_core(g, &Sub::full(g), &list_to_mask(g.num_states(), target));
    AttractorLayers { layers: attr.layers() }
}

fn reach_core(g: &GameGraph, arena: &Sub, target: &[bool]) -> (Sub, arena::SysAttr) {
    match g.mode() {
        Mode::Sure => {
            let a = sys_attr(g, arena, target, Mode::Sure);
            (arena.clone(), a)
        }
        Mode::AlmostSure => {
            let d = solve::almost_sure_reach(g, arena, target, true);
            let a = sys_attr(g, &d, target, Mode::AlmostSure);
            (d, a)
        }
    }
}

fn nodes_to_edges(g: &GameGraph, nodes: impl IntoIterator<Item = usize>) -> Vec<Edge> {
    nodes.into_iter().map(|v| g.edge_of(v)).collect()
}

/// Edges of region states whose node is not kept by `inner`.
fn leaving_edges(g: &GameGraph, region: &[bool], inner: &Sub) -> BTreeSet<Edge> {
    (0..g.num_nodes())
        .filter(|&v| region[g.node_state(v)] && !inner.nodes[v])
        .map(|v| g.edge_of(v))
        .collect()
}

pub(crate) fn reach_on(g: &GameGraph, arena: &Sub, target: &[bool]) -> StrategyTemplate {
    let (sub, attr) = reach_core(g, arena, target);
    let region = attr.mask();
    let mut unsafe_edges = BTreeSet::new();
    for v in 0..g.num_nodes() {
        let q = g.node_state(v);
        if !region[q] || target[q] {
            continue;
        }
        // a node that never got attracted can leave the region
        if !sub.nodes[v] || attr.node_level[v] == arena::NONE {
            unsafe_edges.insert(g.edge_of(v));
        }
    }
    StrategyTemplate {
        unsafe_edges,
        colive: BTreeSet::new(),
        live_groups: attr.groups(g, &sub).into_iter().map(|h| nodes_to_edges(g, h)).collect(),
        winning_region: mask_to_list(&region),
    }
}

pub(crate) fn buchi_on(g: &GameGraph, arena: &Sub, buchi: &[bool]) -> StrategyTemplate {
    let mode = g.mode();
    let mut w = arena.clone();
    let attr = loop {
        let r = sys_attr(g, &w, buchi, mode);
        let rest: Vec<bool> = (0..g.num_states()).map(|q| w.states[q] && !r.contains(q)).collect();
        if !rest.iter().any(|&b| b) {
            break r;
        }
        let x = opp_attr(g, &w, &rest, None);
        w = w.without_opp_attr(g, &x);
    };
    StrategyTemplate {
        unsafe_edges: leaving_edges(g, &w.states, &w),
        colive: BTreeSet::new(),
        live_groups: attr.groups(g, &w).into_iter().map(|h| nodes_to_edges(g, h)).collect(),
        winning_region: w.state_list(),
    }
}

pub(crate) fn parity_on(g: &GameGraph, arena: &Sub, colors: &[u32]) -> StrategyTemplate {
    let region = solve::winning_region(g, arena, colors);
    let sub = arena.restrict(g, &region);
    let mut b = Builder {
        colive: vec![false; g.num_nodes()],
        groups: Vec::new(),
    };
    b.rec(g, &sub, colors);
    StrategyTemplate {
        unsafe_edges: leaving_edges(g, &sub.states, &sub),
        colive: nodes_to_edges(g, mask_to_list(&b.colive)).into_iter().collect(),
        live_groups: b.groups.into_iter().map(|h| nodes_to_edges(g, h)).collect(),
        winning_region: sub.state_list(),
    }
}

struct Builder {
    colive: Vec<bool>,
    groups: Vec<Vec<usize>>,
}

impl Builder {
    /// `sub` is won by the system from every state.
    fn rec(&mut self, g: &GameGraph, sub: &Sub, colors: &[u32]) {
        let n = g.num_states();
        let Some(d) = sub.state_list().into_iter().map(|q| colors[q]).max() else {
            return;
        };
        let top: Vec<bool> = (0..n).map(|q| sub.states[q] && colors[q] == d).collect();
        if d % 2 == 0 {
            let a = sys_attr(g, sub, &top, g.mode());
            self.groups.extend(a.groups(g, sub));
            let am = a.mask();
            if !sub.covers(&am) {
                self.rec(g, &sub.without_states(g, &am), colors);
            }
        } else {
            let x = opp_attr(g, sub, &top, None);
            let sub1 = sub.without_opp_attr(g, &x);
            let w1 = solve::winning_region(g, &sub1, colors);
            debug_assert!(w1.iter().any(|&b| b), "system must win somewhere below an odd color");
            if !w1.iter().any(|&b| b) {
                return;
            }
            let sub_w1 = sub1.restrict(g, &w1);
            for v in 0..g.num_nodes() {
                if sub.nodes[v] && sub_w1.states[g.node_state(v)] && !sub_w1.nodes[v] {
                    self.colive[v] = true;
                }
            }
            self.rec(g, &sub_w1, colors);
            let b = sys_attr(g, sub, &sub_w1.states, g.mode());
            self.groups.extend(b.groups(g, sub));
            let bm = b.mask();
            if !sub.covers(&bm) {
                self.rec(g, &sub.without_states(g, &bm), colors);
            }
        }
    }
}

fn check_target(g: &GameGraph, target: &[usize]) -> Result<Vec<bool>, SynthError> {
    if target.is_empty() {
        return Err(SynthError::EmptyTarget);
    }
    if let Some(&q) = target.iter().find(|&&q| q >= g.num_states()) {
        return Err(SynthError::BadObjective(format!("state {q} out of range")));
    }
    Ok(list_to_mask(g.num_states(), target))
}

fn nonempty(t: StrategyTemplate) -> Result<StrategyTemplate, SynthError> {
    if t.winning_region.is_empty() {
        Err(SynthError::EmptyWinningRegion)
    } else {
        Ok(t)
    }
}

fn full_arena(g: &GameGraph) -> Sub {
    base_arena(g, &vec![false; g.num_nodes()])
}

/// Template for eventually reaching `target`.
pub fn reach_template(g: &GameGraph, target: &[usize]) -> Result<StrategyTemplate, SynthError> {
    let mask = check_target(g, target)?;
    Ok(reach_on(g, &full_arena(g), &mask))
}

/// Template for visiting `buchi` infinitely often.
pub fn buchi_template(g: &GameGraph, buchi: &[usize]) -> Result<StrategyTemplate, SynthError> {
    let mask = check_target(g, buchi)?;
    nonempty(buchi_on(g, &full_arena(g), &mask))
}

pub fn parity_template(g: &GameGraph, obj: &ParityObjective) -> Result<StrategyTemplate, SynthError> {
    if obj.colors().len() != g.num_states() {
        return Err(SynthError::BadObjective(format!(
            "{} colors for {} states",
            obj.colors().len(),
            g.num_states()
        )));
    }
    nonempty(parity_on(g, &full_arena(g), obj.colors()))
}

/// Winning region of a parity objective, without building a template.
pub fn parity_winning_region(g: &GameGraph, obj: &ParityObjective) -> Vec<usize> {
    let w = solve::winning_region(g, &full_arena(g), obj.colors());
    mask_to_list(&w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sure(succ: &[Vec<Vec<usize>>]) -> GameGraph {
        GameGraph::from_successors(succ, Mode::Sure)
    }

    #[test]
    fn chain_reach_template() {
        let g = sure(&[vec![vec![0]], vec![vec![0]], vec![vec![1]]]);
        let t = reach_template(&g, &[0]).unwrap();
        assert_eq!(t.live_groups, vec![vec![Edge::new(1, 0)], vec![Edge::new(2, 0)]]);
        assert_eq!(t.winning_region, vec![0, 1, 2]);
        assert!(t.unsafe_edges.is_empty());
        let layers = sys_attractor(&g, &[0]).layers;
        assert_eq!(layers, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn reach_whole_region_has_no_groups() {
        let g = sure(&[vec![vec![1]], vec![vec![0]]]);
        let t = reach_template(&g, &[0, 1]).unwrap();
        assert!(t.live_groups.is_empty());
    }

    #[test]
    fn unreachable_target_is_outside() {
        // q1 is absorbing and q0 cannot reach it.
        let g = sure(&[vec![vec![0]], vec![vec![1]]]);
        let layers = sys_attractor(&g, &[1]);
        assert_eq!(layers.states(), vec![1]);
    }

    #[test]
    fn buchi_self_loop() {
        let g = sure(&[vec![vec![0]]]);
        let t = buchi_template(&g, &[0]).unwrap();
        assert_eq!(t, StrategyTemplate::trivial(1));
    }

    #[test]
    fn buchi_edge_into_sink_is_unsafe() {
        // q0 (Büchi) loops or moves to the sink q1.
        let g = sure(&[vec![vec![0], vec![1]], vec![vec![1]]]);
        let t = buchi_template(&g, &[0]).unwrap();
        assert_eq!(t.winning_region, vec![0]);
        assert_eq!(t.unsafe_edges, BTreeSet::from([Edge::new(0, 1)]));
        assert!(t.live_groups.is_empty());
    }

    #[test]
    fn buchi_empty_region() {
        let g = sure(&[vec![vec![1]], vec![vec![1]]]);
        assert_eq!(buchi_template(&g, &[0]), Err(SynthError::EmptyWinningRegion));
        assert_eq!(buchi_template(&g, &[]), Err(SynthError::EmptyTarget));
    }

    #[test]
    fn parity_all_zero_is_empty_template() {
        let g = sure(&[vec![vec![1], vec![0]], vec![vec![0]]]);
        let t = parity_template(&g, &ParityObjective::new(vec![0, 0])).unwrap();
        assert_eq!(t, StrategyTemplate::trivial(2));
    }

    #[test]
    fn parity_odd_color_becomes_colive() {
        // q0 (color 2) <-> q1 (color 3); q0 may also self-loop.
        // Visiting q1 infinitely often loses, so the edge into it is co-live.
        let g = sure(&[vec![vec![0], vec![1]], vec![vec![0]]]);
        let t = parity_template(&g, &ParityObjective::new(vec![2, 3])).unwrap();
        assert_eq!(t.winning_region, vec![0, 1]);
        assert_eq!(t.colive, BTreeSet::from([Edge::new(0, 1)]));
        assert!(t.unsafe_edges.is_empty());
        assert!(check_conflict_free(&g, &t).is_empty());
    }

    #[test]
    fn buchi_parity_agree_on_grid() {
        // 2x2 grid with moves between neighbours, target in a corner
        let succ = vec![
            vec![vec![1], vec![2]],
            vec![vec![0], vec![3]],
            vec![vec![0], vec![3]],
            vec![vec![1], vec![2]],
        ];
        let g = sure(&succ);
        let b = buchi_template(&g, &[3]).unwrap();
        let p = parity_template(&g, &ParityObjective::buchi(4, &[3]).unwrap()).unwrap();
        assert_eq!(b, p);
        assert_eq!(b.live_groups.len(), 2);
    }
}
