use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::arena::{base_arena, list_to_mask, Sub};
use super::template::{check_conflict_free, RuntimeMask, StrategyTemplate, Violation};
use super::{buchi_on, parity_on, reach_on, SynthError};
use crate::game::GameGraph;
use crate::mdp::Edge;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Objective {
    Reach { target: Vec<usize> },
    Buchi { target: Vec<usize> },
    Parity { colors: Vec<u32> },
}

impl Objective {
    fn validate(&self, g: &GameGraph) -> Result<(), SynthError> {
        let n = g.num_states();
        match self {
            Objective::Reach { target } | Objective::Buchi { target } => {
                if target.is_empty() {
                    return Err(SynthError::EmptyTarget);
                }
                if let Some(q) = target.iter().find(|&&q| q >= n) {
                    return Err(SynthError::BadObjective(format!("state {q} out of range")));
                }
            }
            Objective::Parity { colors } => {
                if colors.len() != n {
                    return Err(SynthError::BadObjective(format!("{} colors for {n} states", colors.len())));
                }
            }
        }
        Ok(())
    }

    fn synth_on(&self, g: &GameGraph, arena: &Sub) -> StrategyTemplate {
        let n = g.num_states();
        match self {
            Objective::Reach { target } => reach_on(g, arena, &list_to_mask(n, target)),
            Objective::Buchi { target } => buchi_on(g, arena, &list_to_mask(n, target)),
            Objective::Parity { colors } => parity_on(g, arena, colors),
        }
    }
}

/// A conjunction of objectives plus edges removed by persistent faults.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectiveSet {
    pub objectives: Vec<Objective>,
    pub forbidden: BTreeSet<Edge>,
}

impl ObjectiveSet {
    pub fn single(obj: Objective) -> Self {
        ObjectiveSet {
            objectives: vec![obj],
            forbidden: BTreeSet::new(),
        }
    }
}

fn leaving<'a>(g: &'a GameGraph, region: &'a [bool]) -> impl Iterator<Item = Edge> + 'a {
    (0..g.num_nodes())
        .filter(move |&v| region[g.node_state(v)] && g.succ(v).iter().any(|&s| !region[s]))
        .map(|v| g.edge_of(v))
}

fn combine(g: &GameGraph, templates: &[StrategyTemplate]) -> (StrategyTemplate, Vec<Violation>) {
    let n = g.num_states();
    let mut region = vec![true; n];
    for t in templates {
        let m = list_to_mask(n, &t.winning_region);
        for q in 0..n {
            region[q] &= m[q];
        }
    }
    let mut out = StrategyTemplate {
        winning_region: (0..n).filter(|&q| region[q]).collect(),
        ..Default::default()
    };
    for t in templates {
        out.unsafe_edges.extend(&t.unsafe_edges);
        out.colive.extend(&t.colive);
        for h in &t.live_groups {
            let inside: Vec<Edge> = h.iter().copied().filter(|e| region[e.state]).collect();
            if !inside.is_empty() {
                out.live_groups.push(inside);
            }
        }
    }
    out.unsafe_edges.extend(leaving(g, &region));
    let violations = check_conflict_free(g, &out);
    (out, violations)
}

fn disjoint_pair(templates: &[StrategyTemplate]) -> Vec<usize> {
    for i in 0..templates.len() {
        if templates[i].winning_region.is_empty() {
            return vec![i];
        }
        for j in i + 1..templates.len() {
            let a: BTreeSet<_> = templates[i].winning_region.iter().collect();
            if templates[j].winning_region.iter().all(|q| !a.contains(q)) {
                return vec![i, j];
            }
        }
    }
    (0..templates.len()).collect()
}

/// Conjunction of templates over the same graph: regions intersect, edge sets
/// unite, and edges leaving the common region become unsafe. Live-group edges
/// from outside the common region are dropped.
pub fn compose_templates(g: &GameGraph, templates: &[StrategyTemplate]) -> Result<StrategyTemplate, SynthError> {
    let (out, violations) = combine(g, templates);
    if out.winning_region.is_empty() || !violations.is_empty() {
        return Err(SynthError::ConflictUnresolvable {
            objectives: disjoint_pair(templates),
        });
    }
    Ok(out)
}

/// Synthesizes every objective and composes the results. Conflicts are
/// resolved by deleting the offending edges and synthesizing again.
pub fn synthesize(g: &GameGraph, set: &ObjectiveSet) -> Result<StrategyTemplate, SynthError> {
    for obj in &set.objectives {
        obj.validate(g)?;
    }
    let mut forbidden = vec![false; g.num_nodes()];
    for &e in &set.forbidden {
        if !g.is_edge(e) {
            return Err(SynthError::NotAnEdge(e));
        }
        forbidden[g.node(e)] = true;
    }
    for _ in 0..=g.num_nodes() {
        let arena = base_arena(g, &forbidden);
        let templates: Vec<StrategyTemplate> = if set.objectives.is_empty() {
            vec![StrategyTemplate {
                winning_region: arena.state_list(),
                ..Default::default()
            }]
        } else {
            set.objectives.iter().map(|o| o.synth_on(g, &arena)).collect()
        };
        if templates.len() == 1 && templates[0].winning_region.is_empty() {
            return Err(SynthError::EmptyWinningRegion);
        }
        let (mut out, violations) = combine(g, &templates);
        if out.winning_region.is_empty() {
            return Err(SynthError::ConflictUnresolvable {
                objectives: disjoint_pair(&templates),
            });
        }
        // forbidden edges stay visible as unsafe
        for &e in &set.forbidden {
            if out.in_region(e.state) {
                out.unsafe_edges.insert(e);
            }
        }
        if violations.is_empty() {
            return Ok(out);
        }
        let mut progress = false;
        let mut ban = |e: Edge| {
            let v = g.node(e);
            if !forbidden[v] {
                forbidden[v] = true;
                progress = true;
            }
        };
        for e in &out.unsafe_edges {
            ban(*e);
        }
        for viol in &violations {
            for e in viol.culprits(g, &out) {
                ban(e);
            }
        }
        if !progress {
            return Err(SynthError::ConflictUnresolvable {
                objectives: (0..set.objectives.len()).collect(),
            });
        }
    }
    Err(SynthError::Internal("conflict resolution exceeded its iteration bound".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Persistent,
    Occasional,
}

impl std::str::FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "persistent" => Ok(FaultKind::Persistent),
            "occasional" => Ok(FaultKind::Occasional),
            _ => Err(format!("unknown fault kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultOutcome {
    Template(StrategyTemplate),
    Mask(RuntimeMask),
}

/// Persistent faults delete the edge for good and re-synthesize; occasional
/// ones only mask it at runtime.
pub fn apply_fault(
    g: &GameGraph,
    set: &mut ObjectiveSet,
    template: &StrategyTemplate,
    edge: Edge,
    kind: FaultKind,
) -> Result<FaultOutcome, SynthError> {
    if !g.is_edge(edge) {
        return Err(SynthError::NotAnEdge(edge));
    }
    match kind {
        FaultKind::Occasional => Ok(FaultOutcome::Mask(RuntimeMask {
            edges: BTreeSet::from([edge]),
        })),
        FaultKind::Persistent => {
            if template.unsafe_edges.contains(&edge) {
                set.forbidden.insert(edge);
                return Ok(FaultOutcome::Template(template.clone()));
            }
            let mut next = set.clone();
            next.forbidden.insert(edge);
            let t = synthesize(g, &next).map_err(|e| match e {
                SynthError::EmptyWinningRegion => SynthError::ConflictUnresolvable {
                    objectives: (0..set.objectives.len()).collect(),
                },
                other => other,
            })?;
            *set = next;
            Ok(FaultOutcome::Template(t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Mode;
    use crate::synth::buchi_template;

    fn cycle(n: usize) -> GameGraph {
        let succ: Vec<Vec<Vec<usize>>> = (0..n).map(|q| vec![vec![(q + 1) % n], vec![q]]).collect();
        GameGraph::from_successors(&succ, Mode::Sure)
    }

    #[test]
    fn compose_with_trivial_is_identity() {
        let g = cycle(4);
        let t = buchi_template(&g, &[2]).unwrap();
        assert_eq!(compose_templates(&g, &[t.clone(), StrategyTemplate::trivial(4)]).unwrap(), t);
        assert_eq!(compose_templates(&g, &[t.clone()]).unwrap(), t);
    }

    #[test]
    fn two_targets_on_a_cycle() {
        let g = cycle(4);
        let set = ObjectiveSet {
            objectives: vec![Objective::Buchi { target: vec![0] }, Objective::Buchi { target: vec![2] }],
            forbidden: BTreeSet::new(),
        };
        let t = synthesize(&g, &set).unwrap();
        assert_eq!(t.winning_region, vec![0, 1, 2, 3]);
        assert_eq!(t.live_groups.len(), 6);
    }

    #[test]
    fn disjoint_regions_conflict() {
        // two absorbing states, each the other's only hope: regions {0} and {1}
        let g = GameGraph::from_successors(&[vec![vec![0]], vec![vec![1]]], Mode::Sure);
        let set = ObjectiveSet {
            objectives: vec![Objective::Buchi { target: vec![0] }, Objective::Buchi { target: vec![1] }],
            forbidden: BTreeSet::new(),
        };
        assert_eq!(
            synthesize(&g, &set),
            Err(SynthError::ConflictUnresolvable { objectives: vec![0, 1] })
        );
    }

    #[test]
    fn fault_on_unsafe_edge_is_idempotent() {
        let g = GameGraph::from_successors(&[vec![vec![0], vec![1]], vec![vec![1]]], Mode::Sure);
        let mut set = ObjectiveSet::single(Objective::Buchi { target: vec![0] });
        let t = synthesize(&g, &set).unwrap();
        let out = apply_fault(&g, &mut set, &t, Edge::new(0, 1), FaultKind::Persistent).unwrap();
        assert_eq!(out, FaultOutcome::Template(t.clone()));
        assert_eq!(synthesize(&g, &set).unwrap(), t);
    }

    #[test]
    fn occasional_fault_leaves_template() {
        let g = cycle(3);
        let mut set = ObjectiveSet::single(Objective::Buchi { target: vec![0] });
        let t = synthesize(&g, &set).unwrap();
        let before = serde_json::to_vec(&t).unwrap();
        let out = apply_fault(&g, &mut set, &t, Edge::new(1, 0), FaultKind::Occasional).unwrap();
        assert_eq!(out, FaultOutcome::Mask(RuntimeMask { edges: BTreeSet::from([Edge::new(1, 0)]) }));
        assert_eq!(serde_json::to_vec(&t).unwrap(), before);
        assert!(set.forbidden.is_empty());
    }

    #[test]
    fn persistent_fault_matches_fresh_synthesis() {
        let g = cycle(4);
        let mut set = ObjectiveSet::single(Objective::Buchi { target: vec![0] });
        let t = synthesize(&g, &set).unwrap();
        // the only way forward from q2
        let out = apply_fault(&g, &mut set, &t, Edge::new(2, 0), FaultKind::Persistent).unwrap();
        let FaultOutcome::Template(t2) = out else { panic!() };
        let fresh = synthesize(
            &g,
            &ObjectiveSet {
                objectives: vec![Objective::Buchi { target: vec![0] }],
                forbidden: BTreeSet::from([Edge::new(2, 0)]),
            },
        )
        .unwrap();
        assert_eq!(t2, fresh);
        assert_eq!(t2.winning_region, vec![0, 3]);
    }
}
