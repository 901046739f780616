//! Finite Markov decision processes with dense state/action indices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::SUM_TOLERANCE;

/// A state-action pair `(q, a)`, i.e. a system edge `q → q^a` of the game graph.
/// `action` is the local index into `A(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub state: usize,
    pub action: usize,
}

impl Edge {
    pub fn new(state: usize, action: usize) -> Self {
        Edge { state, action }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.state, self.action)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("MDP has no states")]
    Empty,
    #[error("state {0:?} has no actions")]
    NoActions(String),
    #[error("transition {state:?}|{action:?}: probabilities sum to {sum}")]
    BadSum { state: String, action: String, sum: f64 },
    #[error("transition {state:?}|{action:?}: non-positive probability {p}")]
    NonPositive { state: String, action: String, p: f64 },
    #[error("transition {state:?}|{action:?}: successor index {succ} out of range")]
    BadSuccessor { state: String, action: String, succ: usize },
    #[error("transition {state:?}|{action:?}: duplicate successor {succ:?}")]
    DuplicateSuccessor { state: String, action: String, succ: String },
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("unknown action {action:?} at state {state:?}")]
    UnknownAction { state: String, action: String },
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("missing transition for {state:?}|{action:?}")]
    MissingTransition { state: String, action: String },
    #[error("malformed transition key {0:?} (expected \"state|action\")")]
    BadKey(String),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    /// Successor states with strictly positive probabilities summing to one.
    pub successors: Vec<(usize, f64)>,
}

/// `M = ⟨Q, A, Δ, q₀⟩` with states and actions addressed by dense indices.
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    state_names: Vec<String>,
    actions: Vec<Vec<Action>>,
    initial: usize,
    state_index: HashMap<String, usize>,
}

impl Mdp {
    pub fn new(
        state_names: Vec<String>,
        actions: Vec<Vec<Action>>,
        initial: usize,
    ) -> Result<Self, MdpError> {
        if state_names.is_empty() {
            return Err(MdpError::Empty);
        }
        assert_eq!(state_names.len(), actions.len(), "one action list per state");
        let n = state_names.len();
        let mut state_index = HashMap::with_capacity(n);
        for (i, name) in state_names.iter().enumerate() {
            if state_index.insert(name.clone(), i).is_some() {
                return Err(MdpError::DuplicateName(name.clone()));
            }
        }
        if initial >= n {
            return Err(MdpError::UnknownState(format!("#{initial}")));
        }
        for (q, acts) in actions.iter().enumerate() {
            let qn = &state_names[q];
            if acts.is_empty() {
                return Err(MdpError::NoActions(qn.clone()));
            }
            let mut seen_actions = HashMap::new();
            for act in acts {
                if seen_actions.insert(act.name.as_str(), ()).is_some() {
                    return Err(MdpError::DuplicateName(format!("{qn}|{}", act.name)));
                }
                let mut seen = vec![false; 0];
                seen.resize(n, false);
                let mut sum = 0.0;
                for &(s, p) in &act.successors {
                    if s >= n {
                        return Err(MdpError::BadSuccessor {
                            state: qn.clone(),
                            action: act.name.clone(),
                            succ: s,
                        });
                    }
                    if !(p > 0.0) || p > 1.0 {
                        return Err(MdpError::NonPositive {
                            state: qn.clone(),
                            action: act.name.clone(),
                            p,
                        });
                    }
                    if std::mem::replace(&mut seen[s], true) {
                        return Err(MdpError::DuplicateSuccessor {
                            state: qn.clone(),
                            action: act.name.clone(),
                            succ: state_names[s].clone(),
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > SUM_TOLERANCE {
                    return Err(MdpError::BadSum {
                        state: qn.clone(),
                        action: act.name.clone(),
                        sum,
                    });
                }
            }
        }
        Ok(Mdp {
            state_names,
            actions,
            initial,
            state_index,
        })
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_name(&self, q: usize) -> &str {
        &self.state_names[q]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn state_by_name(&self, name: &str) -> Option<usize> {
        self.state_index.get(name).copied()
    }

    pub fn actions(&self, q: usize) -> &[Action] {
        &self.actions[q]
    }

    pub fn num_actions(&self, q: usize) -> usize {
        self.actions[q].len()
    }

    pub fn action_name(&self, e: Edge) -> &str {
        &self.actions[e.state][e.action].name
    }

    pub fn action_by_name(&self, q: usize, name: &str) -> Option<usize> {
        self.actions[q].iter().position(|a| a.name == name)
    }

    pub fn successors(&self, q: usize, a: usize) -> &[(usize, f64)] {
        &self.actions[q][a].successors
    }

    /// Probability `pr(q′ | q, a)`.
    pub fn prob(&self, q: usize, a: usize, succ: usize) -> f64 {
        self.successors(q, a)
            .iter()
            .find(|(s, _)| *s == succ)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn max_degree(&self) -> usize {
        self.actions.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_states())
            .flat_map(move |q| (0..self.num_actions(q)).map(move |a| Edge::new(q, a)))
    }

    pub fn num_edges(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }

    /// True if every transition has a single successor.
    pub fn is_deterministic(&self) -> bool {
        self.actions
            .iter()
            .flatten()
            .all(|a| a.successors.len() == 1)
    }

    pub fn edge_by_names(&self, state: &str, action: &str) -> Result<Edge, MdpError> {
        let q = self
            .state_by_name(state)
            .ok_or_else(|| MdpError::UnknownState(state.to_string()))?;
        let a = self
            .action_by_name(q, action)
            .ok_or_else(|| MdpError::UnknownAction {
                state: state.to_string(),
                action: action.to_string(),
            })?;
        Ok(Edge::new(q, a))
    }

    pub fn to_json(&self) -> MdpJson {
        let mut actions = BTreeMap::new();
        let mut trans = BTreeMap::new();
        for (q, acts) in self.actions.iter().enumerate() {
            let qn = &self.state_names[q];
            actions.insert(qn.clone(), acts.iter().map(|a| a.name.clone()).collect());
            for act in acts {
                trans.insert(
                    format!("{qn}|{}", act.name),
                    act.successors
                        .iter()
                        .map(|&(s, p)| (self.state_names[s].clone(), p))
                        .collect(),
                );
            }
        }
        MdpJson {
            states: self.state_names.clone(),
            actions,
            trans,
            initial: self.state_names[self.initial].clone(),
        }
    }

    pub fn from_json(json: &MdpJson) -> Result<Self, MdpError> {
        let index: HashMap<&str, usize> = json
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| MdpError::UnknownState(name.to_string()))
        };
        for key in json.trans.keys() {
            let (q, a) = key.split_once('|').ok_or_else(|| MdpError::BadKey(key.clone()))?;
            lookup(q)?;
            let known = json.actions.get(q).is_some_and(|acts| acts.iter().any(|x| x == a));
            if !known {
                return Err(MdpError::UnknownAction {
                    state: q.to_string(),
                    action: a.to_string(),
                });
            }
        }
        for key in json.actions.keys() {
            lookup(key)?;
        }
        let mut actions = Vec::with_capacity(json.states.len());
        for qn in &json.states {
            let names = json.actions.get(qn).cloned().unwrap_or_default();
            let mut acts = Vec::with_capacity(names.len());
            for an in names {
                let key = format!("{qn}|{an}");
                let list = json.trans.get(&key).ok_or_else(|| MdpError::MissingTransition {
                    state: qn.clone(),
                    action: an.clone(),
                })?;
                let successors = list
                    .iter()
                    .map(|(s, p)| Ok((lookup(s)?, *p)))
                    .collect::<Result<Vec<_>, MdpError>>()?;
                acts.push(Action { name: an, successors });
            }
            actions.push(acts);
        }
        let initial = lookup(&json.initial)?;
        Mdp::new(json.states.clone(), actions, initial)
    }

    pub fn from_json_str(s: &str) -> Result<Self, MdpError> {
        let json: MdpJson = serde_json::from_str(s).map_err(|e| MdpError::Json(e.to_string()))?;
        Mdp::from_json(&json)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("MDP serializes")
    }
}

/// On-disk MDP schema:
/// `{"states":[..], "actions":{q:[a..]}, "trans":{"q|a":[["q'",p],..]}, "initial":"q0"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpJson {
    pub states: Vec<String>,
    pub actions: BTreeMap<String, Vec<String>>,
    pub trans: BTreeMap<String, Vec<(String, f64)>>,
    pub initial: String,
}
