//! Winning regions for parity objectives on subgames.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::arena::{opp_attr, sys_attr, Sub};
use crate::game::{GameGraph, Mode};

/// States of `sub` from which the system wins the parity objective
/// (max color seen infinitely often is even).
pub(crate) fn winning_region(g: &GameGraph, sub: &Sub, colors: &[u32]) -> Vec<bool> {
    match g.mode() {
        Mode::Sure => zielonka(g, sub, colors),
        Mode::AlmostSure => almost_sure(g, sub, colors),
    }
}

fn max_color(sub: &Sub, colors: &[u32]) -> Option<u32> {
    sub.state_list().into_iter().map(|q| colors[q]).max()
}

fn zielonka(g: &GameGraph, sub: &Sub, colors: &[u32]) -> Vec<bool> {
    let n = g.num_states();
    let Some(d) = max_color(sub, colors) else {
        return vec![false; n];
    };
    let top: Vec<bool> = (0..n).map(|q| sub.states[q] && colors[q] == d).collect();
    if d % 2 == 0 {
        let a = sys_attr(g, sub, &top, Mode::Sure);
        let rest = sub.without_states(g, &a.mask());
        let w0 = zielonka(g, &rest, colors);
        let w1: Vec<bool> = (0..n).map(|q| rest.states[q] && !w0[q]).collect();
        if !w1.iter().any(|&b| b) {
            return sub.states.clone();
        }
        let b = opp_attr(g, sub, &w1, None);
        zielonka(g, &sub.without_opp_attr(g, &b), colors)
    } else {
        let x = opp_attr(g, sub, &top, None);
        let rest = sub.without_opp_attr(g, &x);
        let w0 = zielonka(g, &rest, colors);
        if !w0.iter().any(|&b| b) {
            return vec![false; n];
        }
        let b = sys_attr(g, sub, &w0, Mode::Sure);
        let bm = b.mask();
        let mut w = zielonka(g, &sub.without_states(g, &bm), colors);
        for q in 0..n {
            w[q] |= bm[q];
        }
        w
    }
}

/// Almost-sure parity on a closed sub-MDP: reach, with probability one, an end
/// component whose maximal color is even.
fn almost_sure(g: &GameGraph, sub: &Sub, colors: &[u32]) -> Vec<bool> {
    let n = g.num_states();
    let mut good = vec![false; n];
    let mut evens: Vec<u32> = sub.state_list().into_iter().map(|q| colors[q]).filter(|c| c % 2 == 0).collect();
    evens.sort_unstable();
    evens.dedup();
    for e in evens {
        let low: Vec<bool> = (0..n).map(|q| colors[q] <= e).collect();
        let part = sub.restrict(g, &low);
        for mec in end_components(g, &part) {
            if mec.iter().any(|&q| colors[q] == e) {
                for q in mec {
                    good[q] = true;
                }
            }
        }
    }
    almost_sure_reach(g, sub, &good, false).states
}

/// Largest closed subgame from which `target` is reached with probability one.
/// With `protect_target`, target states stay even if all their actions leave.
pub(crate) fn almost_sure_reach(g: &GameGraph, sub: &Sub, target: &[bool], protect_target: bool) -> Sub {
    let mut d = sub.clone();
    loop {
        let r = sys_attr(g, &d, target, Mode::AlmostSure);
        let rest: Vec<bool> = (0..g.num_states()).map(|q| d.states[q] && !r.contains(q)).collect();
        if !rest.iter().any(|&b| b) {
            return d;
        }
        let x = opp_attr(g, &d, &rest, protect_target.then_some(target));
        d = d.without_opp_attr(g, &x);
    }
}

/// Maximal end components of a subgame, as state lists.
pub(crate) fn end_components(g: &GameGraph, sub: &Sub) -> Vec<Vec<usize>> {
    let n = g.num_states();
    let mut cur = sub.clone();
    loop {
        let comp = scc_ids(g, &cur);
        let mut keep = vec![false; n];
        let mut changed = false;
        let mut nodes = cur.nodes.clone();
        for v in 0..g.num_nodes() {
            if !nodes[v] {
                continue;
            }
            let q = g.node_state(v);
            let inside = g.succ(v).iter().all(|&s| cur.states[s] && comp[s] == comp[q]);
            if inside {
                keep[q] = true;
            } else {
                nodes[v] = false;
                changed = true;
            }
        }
        let states: Vec<bool> = (0..n).map(|q| cur.states[q] && keep[q]).collect();
        changed |= states != cur.states;
        for v in 0..g.num_nodes() {
            nodes[v] &= states[g.node_state(v)];
        }
        cur = Sub { states, nodes };
        if !changed {
            break;
        }
    }
    let comp = scc_ids(g, &cur);
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for q in cur.state_list() {
        groups.entry(comp[q]).or_default().push(q);
    }
    groups.into_values().collect()
}

fn scc_ids(g: &GameGraph, sub: &Sub) -> Vec<usize> {
    let n = g.num_states();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, g.num_opp_edges());
    for _ in 0..n {
        graph.add_node(());
    }
    for v in 0..g.num_nodes() {
        if !sub.nodes[v] {
            continue;
        }
        let q = g.node_state(v);
        for &s in g.succ(v) {
            if sub.states[s] {
                graph.add_edge(NodeIndex::new(q), NodeIndex::new(s), ());
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    for (i, scc) in tarjan_scc(&graph).into_iter().enumerate() {
        for x in scc {
            comp[x.index()] = i;
        }
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::arena::base_arena;

    fn g(succ: &[Vec<Vec<usize>>], mode: Mode) -> GameGraph {
        GameGraph::from_successors(succ, mode)
    }

    #[test]
    fn buchi_two_cycle() {
        // q0 <-> q1, q1 colored 2: winning everywhere.
        let gr = g(&[vec![vec![1]], vec![vec![0]]], Mode::Sure);
        let w = winning_region(&gr, &Sub::full(&gr), &[1, 2]);
        assert_eq!(w, vec![true, true]);
    }

    #[test]
    fn sure_loses_to_adversarial_branch() {
        // q0 (color 2) -> node {q0, q1}; q1 (color 1) self-loops.
        let succ = vec![vec![vec![0, 1]], vec![vec![1]]];
        let sure = g(&succ, Mode::Sure);
        assert_eq!(winning_region(&sure, &Sub::full(&sure), &[2, 1]), vec![false, false]);
        // q0 (color 1) may loop on itself or move to q1 (color 2), which
        // returns: the adversary loops forever, a random resolution does not.
        let succ = vec![vec![vec![0, 1]], vec![vec![0]]];
        let sure = g(&succ, Mode::Sure);
        assert_eq!(winning_region(&sure, &Sub::full(&sure), &[1, 2]), vec![false, false]);
        let almost = g(&succ, Mode::AlmostSure);
        assert_eq!(winning_region(&almost, &Sub::full(&almost), &[1, 2]), vec![true, true]);
    }

    #[test]
    fn end_components_of_cycle_with_exit() {
        // q0 <-> q1 and q1 -> q2 (absorbing)
        let gr = g(&[vec![vec![1]], vec![vec![0], vec![2]], vec![vec![2]]], Mode::AlmostSure);
        let arena = base_arena(&gr, &vec![false; gr.num_nodes()]);
        let mut mecs = end_components(&gr, &arena);
        mecs.sort();
        assert_eq!(mecs, vec![vec![0, 1], vec![2]]);
    }
}
