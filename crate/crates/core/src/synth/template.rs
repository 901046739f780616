use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::game::GameGraph;
use crate::mdp::{Edge, Mdp, MdpError};

/// `Γ = (S, D, H)` over the winning region it was computed for.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrategyTemplate {
    pub unsafe_edges: BTreeSet<Edge>,
    pub colive: BTreeSet<Edge>,
    pub live_groups: Vec<Vec<Edge>>,
    pub winning_region: Vec<usize>,
}

impl StrategyTemplate {
    /// The template that allows everything, winning everywhere.
    pub fn trivial(num_states: usize) -> Self {
        StrategyTemplate {
            winning_region: (0..num_states).collect(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.unsafe_edges.is_empty() && self.colive.is_empty() && self.live_groups.is_empty()
    }

    pub fn in_region(&self, q: usize) -> bool {
        self.winning_region.binary_search(&q).is_ok()
    }

    pub fn live_edges(&self) -> BTreeSet<Edge> {
        self.live_groups.iter().flatten().copied().collect()
    }

    /// States with an outgoing edge in group `i`.
    pub fn group_sources(&self, i: usize) -> BTreeSet<usize> {
        self.live_groups[i].iter().map(|e| e.state).collect()
    }

    pub fn to_json(&self, mdp: &Mdp) -> TemplateJson {
        let pair = |e: &Edge| (mdp.state_name(e.state).to_string(), mdp.action_name(*e).to_string());
        TemplateJson {
            unsafe_edges: self.unsafe_edges.iter().map(pair).collect(),
            colive: self.colive.iter().map(pair).collect(),
            live_groups: self.live_groups.iter().map(|h| h.iter().map(pair).collect()).collect(),
            winning_region: self
                .winning_region
                .iter()
                .map(|&q| mdp.state_name(q).to_string())
                .collect(),
        }
    }

    pub fn to_json_string(&self, mdp: &Mdp) -> String {
        serde_json::to_string_pretty(&self.to_json(mdp)).expect("template serializes")
    }

    pub fn from_json(json: &TemplateJson, mdp: &Mdp) -> Result<Self, MdpError> {
        let edge = |(q, a): &(String, String)| mdp.edge_by_names(q, a);
        let mut winning_region = json
            .winning_region
            .iter()
            .map(|q| mdp.state_by_name(q).ok_or_else(|| MdpError::UnknownState(q.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        winning_region.sort_unstable();
        winning_region.dedup();
        Ok(StrategyTemplate {
            unsafe_edges: json.unsafe_edges.iter().map(edge).collect::<Result<_, _>>()?,
            colive: json.colive.iter().map(edge).collect::<Result<_, _>>()?,
            live_groups: json
                .live_groups
                .iter()
                .map(|h| h.iter().map(edge).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()?,
            winning_region,
        })
    }

    pub fn from_json_str(s: &str, mdp: &Mdp) -> Result<Self, MdpError> {
        let json: TemplateJson = serde_json::from_str(s).map_err(|e| MdpError::Json(e.to_string()))?;
        StrategyTemplate::from_json(&json, mdp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateJson {
    #[serde(rename = "unsafe")]
    pub unsafe_edges: Vec<(String, String)>,
    pub colive: Vec<(String, String)>,
    pub live_groups: Vec<Vec<(String, String)>>,
    pub winning_region: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Every action of a winning state is unsafe or co-live.
    NoAllowedAction { state: usize },
    /// A source of the group has only unsafe or co-live group actions.
    GroupBlocked { group: usize, state: usize },
    /// A live-group edge is also co-live.
    ColiveInGroup { group: usize, edge: Edge },
    /// A live-group edge is also unsafe.
    UnsafeInGroup { group: usize, edge: Edge },
}

impl Violation {
    /// Co-live edges whose removal could resolve this violation.
    pub(crate) fn culprits(&self, g: &GameGraph, t: &StrategyTemplate) -> Vec<Edge> {
        match *self {
            Violation::NoAllowedAction { state } => (0..g.num_actions(state))
                .map(|a| Edge::new(state, a))
                .filter(|e| t.colive.contains(e))
                .collect(),
            Violation::GroupBlocked { group, state } => t.live_groups[group]
                .iter()
                .filter(|e| e.state == state && t.colive.contains(e))
                .copied()
                .collect(),
            Violation::ColiveInGroup { edge, .. } => vec![edge],
            Violation::UnsafeInGroup { .. } => vec![],
        }
    }
}

pub fn check_conflict_free(g: &GameGraph, t: &StrategyTemplate) -> Vec<Violation> {
    let blocked = |e: &Edge| t.unsafe_edges.contains(e) || t.colive.contains(e);
    let mut out = Vec::new();
    for &q in &t.winning_region {
        if (0..g.num_actions(q)).all(|a| blocked(&Edge::new(q, a))) {
            out.push(Violation::NoAllowedAction { state: q });
        }
    }
    for (i, h) in t.live_groups.iter().enumerate() {
        let mut ok: BTreeMap<usize, bool> = BTreeMap::new();
        for e in h {
            *ok.entry(e.state).or_insert(false) |= !blocked(e);
            if t.colive.contains(e) {
                out.push(Violation::ColiveInGroup { group: i, edge: *e });
            }
            if t.unsafe_edges.contains(e) {
                out.push(Violation::UnsafeInGroup { group: i, edge: *e });
            }
        }
        for (state, fine) in ok {
            if !fine {
                out.push(Violation::GroupBlocked { group: i, state });
            }
        }
    }
    out
}

/// Recount of a finite run against a template.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunVerdict {
    pub safety_ok: bool,
    pub unsafe_uses: u64,
    pub colive_counts: BTreeMap<Edge, u64>,
    /// Live-group counters at the end of the run.
    pub live_debts: Vec<u64>,
    /// Largest value each live-group counter reached along the run.
    pub max_live_debts: Vec<u64>,
}

/// Replays the counter definitions over `run`, a sequence of taken
/// state-action pairs.
pub fn follows_template(run: &[Edge], t: &StrategyTemplate) -> RunVerdict {
    let groups: Vec<(BTreeSet<usize>, BTreeSet<Edge>)> = t
        .live_groups
        .iter()
        .map(|h| (h.iter().map(|e| e.state).collect(), h.iter().copied().collect()))
        .collect();
    let mut v = RunVerdict {
        safety_ok: true,
        live_debts: vec![0; groups.len()],
        max_live_debts: vec![0; groups.len()],
        ..Default::default()
    };
    for e in run {
        if t.unsafe_edges.contains(e) {
            v.safety_ok = false;
            v.unsafe_uses += 1;
        }
        if t.colive.contains(e) {
            *v.colive_counts.entry(*e).or_insert(0) += 1;
        }
        for (i, (src, edges)) in groups.iter().enumerate() {
            if edges.contains(e) {
                v.live_debts[i] = 0;
            } else if src.contains(&e.state) {
                v.live_debts[i] += 1;
                v.max_live_debts[i] = v.max_live_debts[i].max(v.live_debts[i]);
            }
        }
    }
    v
}

/// Edges an occasional fault disables for the steps it is active.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuntimeMask {
    pub edges: BTreeSet<Edge>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Mode;

    fn two_action_graph() -> GameGraph {
        GameGraph::from_successors(&[vec![vec![0], vec![1]], vec![vec![0]]], Mode::Sure)
    }

    #[test]
    fn all_unsafe_state_is_a_violation() {
        let g = two_action_graph();
        let mut t = StrategyTemplate::trivial(2);
        t.unsafe_edges.insert(Edge::new(0, 0));
        t.unsafe_edges.insert(Edge::new(0, 1));
        assert_eq!(check_conflict_free(&g, &t), vec![Violation::NoAllowedAction { state: 0 }]);
    }

    #[test]
    fn colive_group_is_a_violation() {
        let g = two_action_graph();
        let mut t = StrategyTemplate::trivial(2);
        t.live_groups.push(vec![Edge::new(0, 1)]);
        t.colive.insert(Edge::new(0, 1));
        let v = check_conflict_free(&g, &t);
        assert!(v.contains(&Violation::GroupBlocked { group: 0, state: 0 }));
    }

    #[test]
    fn run_recount() {
        let mut t = StrategyTemplate::trivial(2);
        t.unsafe_edges.insert(Edge::new(1, 0));
        t.colive.insert(Edge::new(0, 0));
        t.live_groups.push(vec![Edge::new(0, 1)]);
        let clean = follows_template(&[], &t);
        assert!(clean.safety_ok && clean.colive_counts.is_empty() && clean.live_debts == vec![0]);

        let run = [Edge::new(0, 0), Edge::new(0, 0), Edge::new(0, 1), Edge::new(1, 0), Edge::new(0, 0)];
        let v = follows_template(&run, &t);
        assert!(!v.safety_ok);
        assert_eq!(v.unsafe_uses, 1);
        assert_eq!(v.colive_counts[&Edge::new(0, 0)], 3);
        assert_eq!(v.live_debts, vec![1]);
        assert_eq!(v.max_live_debts, vec![2]);
    }
}
