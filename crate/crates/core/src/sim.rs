//! Shielded simulation: nominal policies, the step loop, commands applied
//! between steps, and the JSON-lines trace.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{sample_weights, SUM_TOLERANCE};
use crate::game::{GameGraph, Mode};
use crate::mdp::{Edge, Mdp, MdpError};
use crate::shield::{CounterSnapshot, Shield, ShieldError, ShieldParams};
use crate::synth::{apply_fault, synthesize, FaultKind, FaultOutcome, Objective, ObjectiveSet, StrategyTemplate};

/// A stationary nominal policy. The shield only reads it.
pub trait Policy {
    fn weights(&self, q: usize) -> &[f64];
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy has {got} states, MDP has {want}")]
    WrongStates { got: usize, want: usize },
    #[error("policy at state {0:?} is not a distribution over its actions")]
    BadDistribution(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    weights: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(mdp: &Mdp, weights: Vec<Vec<f64>>) -> Result<Self, PolicyError> {
        if weights.len() != mdp.num_states() {
            return Err(PolicyError::WrongStates {
                got: weights.len(),
                want: mdp.num_states(),
            });
        }
        for (q, w) in weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if w.len() != mdp.num_actions(q) || w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(PolicyError::BadDistribution(mdp.state_name(q).to_string()));
            }
        }
        Ok(TabularPolicy { weights })
    }

    pub fn uniform(mdp: &Mdp) -> Self {
        TabularPolicy {
            weights: (0..mdp.num_states())
                .map(|q| vec![1.0 / mdp.num_actions(q) as f64; mdp.num_actions(q)])
                .collect(),
        }
    }

    pub fn all_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// `{"state": {"action": weight}}`.
    pub fn to_json(&self, mdp: &Mdp) -> BTreeMap<String, BTreeMap<String, f64>> {
        (0..mdp.num_states())
            .map(|q| {
                let per = (0..mdp.num_actions(q))
                    .map(|a| (mdp.action_name(Edge::new(q, a)).to_string(), self.weights[q][a]))
                    .collect();
                (mdp.state_name(q).to_string(), per)
            })
            .collect()
    }

    pub fn from_json(json: &BTreeMap<String, BTreeMap<String, f64>>, mdp: &Mdp) -> Result<Self, PolicyError> {
        let mut weights: Vec<Vec<f64>> = (0..mdp.num_states()).map(|q| vec![0.0; mdp.num_actions(q)]).collect();
        let mut seen = vec![false; mdp.num_states()];
        for (qn, per) in json {
            for (an, &w) in per {
                let e = mdp.edge_by_names(qn, an)?;
                weights[e.state][e.action] = w;
                seen[e.state] = true;
            }
        }
        if let Some(q) = seen.iter().position(|s| !s) {
            return Err(PolicyError::BadDistribution(mdp.state_name(q).to_string()));
        }
        TabularPolicy::new(mdp, weights)
    }
}

impl Policy for TabularPolicy {
    fn weights(&self, q: usize) -> &[f64] {
        &self.weights[q]
    }
}

/// A state given by name, or by grid cell `[x, y]` (named `"x,y"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Cell([i64; 2]),
    Name(String),
}

impl StateRef {
    pub fn name(&self) -> String {
        match self {
            StateRef::Cell([x, y]) => format!("{x},{y}"),
            StateRef::Name(n) => n.clone(),
        }
    }

    pub fn resolve(&self, mdp: &Mdp) -> Result<usize, MdpError> {
        let n = self.name();
        mdp.state_by_name(&n).ok_or(MdpError::UnknownState(n))
    }
}

/// Changes applied between steps, shared by schedules and the session protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetParams {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
    },
    AddObjective {
        buchi: Vec<StateRef>,
    },
    RemoveObjective {
        id: u64,
    },
    SetFault {
        state: StateRef,
        action: String,
        kind: FaultKind,
        active: bool,
    },
    Reset {},
}

/// A command applied once `at` steps have been taken since the run started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub at: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("no objective with id {0}")]
    UnknownObjective(u64),
}

impl From<crate::synth::SynthError> for RunError {
    fn from(e: crate::synth::SynthError) -> Self {
        RunError::Shield(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub state: usize,
    pub nominal: Vec<f64>,
    pub shielded: Vec<f64>,
    pub action: usize,
    pub next: usize,
    pub counters: CounterSnapshot,
}

impl StepRecord {
    /// One JSON line with state and action names.
    pub fn to_trace_line(&self, mdp: &Mdp) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            t: u64,
            state: &'a str,
            nominal: &'a [f64],
            shielded: &'a [f64],
            action: &'a str,
            next: &'a str,
            counters: &'a CounterSnapshot,
        }
        serde_json::to_string(&Line {
            t: self.t,
            state: mdp.state_name(self.state),
            nominal: &self.nominal,
            shielded: &self.shielded,
            action: mdp.action_name(Edge::new(self.state, self.action)),
            next: mdp.state_name(self.next),
            counters: &self.counters,
        })
        .expect("trace line serializes")
    }
}

/// Everything needed to build a run.
#[derive(Clone)]
pub struct RunSpec {
    pub mdp: Arc<Mdp>,
    pub mode: Mode,
    pub objectives: ObjectiveSet,
    pub policy: Arc<TabularPolicy>,
    pub params: ShieldParams,
    pub seed: u64,
    /// Start state; `None` draws one uniformly from the winning region.
    pub start: Option<usize>,
}

/// A shielded run of a nominal policy on an MDP.
/// Uniform pick from `region` on a random stream reserved for start states.
pub fn draw_start(region: &[usize], seed: u64) -> usize {
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(u64::MAX);
    region[pick.gen_range(0..region.len())]
}

/// The two uniforms used by step `t`: one for the action, one for the
/// successor. Each step has its own stream so that runs with the same seed
/// stay aligned whatever happens in between.
pub fn step_uniforms(rng: &mut ChaCha8Rng, t: u64) -> (f64, f64) {
    rng.set_stream(t);
    rng.set_word_pos(0);
    (rng.gen(), rng.gen())
}

pub struct ShieldedRun {
    mdp: Arc<Mdp>,
    graph: Arc<GameGraph>,
    objectives: ObjectiveSet,
    objective_ids: Vec<u64>,
    next_id: u64,
    shield: Shield,
    policy: Arc<TabularPolicy>,
    seed: u64,
    rng: ChaCha8Rng,
    steps: u64,
    since_reset: u64,
    start: usize,
    state: usize,
}

impl ShieldedRun {
    pub fn new(spec: RunSpec) -> Result<Self, RunError> {
        let graph = Arc::new(GameGraph::from_mdp(&spec.mdp, spec.mode));
        let template = synthesize(&graph, &spec.objectives)?;
        Self::with_template(spec, graph, template)
    }

    /// Uses a precomputed template for `spec.objectives`.
    pub fn with_template(spec: RunSpec, graph: Arc<GameGraph>, template: StrategyTemplate) -> Result<Self, RunError> {
        let shield = Shield::new(&graph, template, spec.params)?;
        let region = &shield.template().winning_region;
        let start = match spec.start {
            Some(q) => q,
            None => {
                if region.is_empty() {
                    return Err(crate::synth::SynthError::EmptyWinningRegion.into());
                }
                draw_start(region, spec.seed)
            }
        };
        if !shield.template().in_region(start) {
            return Err(ShieldError::OutsideCombinedRegion { state: start }.into());
        }
        let n = spec.objectives.objectives.len() as u64;
        Ok(ShieldedRun {
            mdp: spec.mdp,
            graph,
            objectives: spec.objectives,
            objective_ids: (0..n).collect(),
            next_id: n,
            shield,
            policy: spec.policy,
            seed: spec.seed,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            steps: 0,
            since_reset: 0,
            start,
            state: start,
        })
    }

    pub fn mdp(&self) -> &Arc<Mdp> {
        &self.mdp
    }

    pub fn graph(&self) -> &Arc<GameGraph> {
        &self.graph
    }

    pub fn shield(&self) -> &Shield {
        &self.shield
    }

    pub fn template(&self) -> &StrategyTemplate {
        self.shield.template()
    }

    pub fn objectives(&self) -> &ObjectiveSet {
        &self.objectives
    }

    pub fn objective_ids(&self) -> &[u64] {
        &self.objective_ids
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Steps since the run was created.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn steps_since_reset(&self) -> u64 {
        self.since_reset
    }

    fn draw(&mut self) -> (f64, f64) {
        step_uniforms(&mut self.rng, self.steps)
    }

    /// One shielded step; returns `(state, action, next, shielded weights)`.
    fn advance(&mut self) -> Result<(usize, usize, usize, Vec<f64>), RunError> {
        let q = self.state;
        let shielded = self.shield.distribution(q, self.policy.weights(q))?;
        let (ua, us) = self.draw();
        let a = sample_weights(&shielded, ua);
        let succ = self.mdp.successors(q, a);
        let probs: Vec<f64> = succ.iter().map(|&(_, p)| p).collect();
        let next = succ[sample_weights(&probs, us)].0;
        self.shield.update(Edge::new(q, a));
        self.state = next;
        self.steps += 1;
        self.since_reset += 1;
        Ok((q, a, next, shielded))
    }

    pub fn step(&mut self) -> Result<StepRecord, RunError> {
        let t = self.steps;
        let (state, action, next, shielded) = self.advance()?;
        Ok(StepRecord {
            t,
            state,
            nominal: self.policy.weights(state).to_vec(),
            shielded,
            action,
            next,
            counters: self.shield.snapshot(),
        })
    }

    /// A step without the record; returns the taken edge and successor.
    pub fn step_fast(&mut self) -> Result<(Edge, usize), RunError> {
        let (q, a, next, _) = self.advance()?;
        Ok((Edge::new(q, a), next))
    }

    /// Like [`Self::step_fast`], also returning the total variation between
    /// the nominal and shielded distributions.
    pub fn step_with_tv(&mut self) -> Result<(Edge, usize, f64), RunError> {
        let (q, a, next, shielded) = self.advance()?;
        let tv = crate::dist::tv_weights(self.policy.weights(q), &shielded).expect("same actions");
        Ok((Edge::new(q, a), next, tv))
    }

    pub fn set_params(&mut self, gamma: Option<f64>, theta: Option<f64>) -> Result<(), RunError> {
        Ok(self.shield.set_params(gamma, theta)?)
    }

    fn install(&mut self, set: ObjectiveSet, template: StrategyTemplate) -> Result<(), RunError> {
        if !template.in_region(self.state) {
            return Err(ShieldError::OutsideCombinedRegion { state: self.state }.into());
        }
        self.objectives = set;
        self.shield.replace_template(template);
        Ok(())
    }

    /// Adds a Büchi objective; returns its id. An empty target changes nothing.
    pub fn add_buchi(&mut self, target: Vec<usize>) -> Result<Option<u64>, RunError> {
        if target.is_empty() {
            return Ok(None);
        }
        let mut set = self.objectives.clone();
        set.objectives.push(Objective::Buchi { target });
        let t = synthesize(&self.graph, &set)?;
        self.install(set, t)?;
        let id = self.next_id;
        self.next_id += 1;
        self.objective_ids.push(id);
        Ok(Some(id))
    }

    pub fn remove_objective(&mut self, id: u64) -> Result<(), RunError> {
        let i = self
            .objective_ids
            .iter()
            .position(|&x| x == id)
            .ok_or(RunError::UnknownObjective(id))?;
        let mut set = self.objectives.clone();
        set.objectives.remove(i);
        let t = synthesize(&self.graph, &set)?;
        self.install(set, t)?;
        self.objective_ids.remove(i);
        Ok(())
    }

    pub fn set_fault(&mut self, e: Edge, kind: FaultKind, active: bool) -> Result<(), RunError> {
        if !self.graph.is_edge(e) {
            return Err(ShieldError::Synth(crate::synth::SynthError::NotAnEdge(e)).into());
        }
        match (kind, active) {
            (FaultKind::Occasional, _) => {
                self.shield.set_mask(e, active);
                Ok(())
            }
            (FaultKind::Persistent, true) => {
                let mut set = self.objectives.clone();
                let template = self.shield.template().clone();
                match apply_fault(&self.graph, &mut set, &template, e, kind)? {
                    FaultOutcome::Template(t) => self.install(set, t),
                    FaultOutcome::Mask(_) => unreachable!("persistent faults re-synthesize"),
                }
            }
            (FaultKind::Persistent, false) => {
                let mut set = self.objectives.clone();
                if !set.forbidden.remove(&e) {
                    return Ok(());
                }
                let t = synthesize(&self.graph, &set)?;
                self.install(set, t)
            }
        }
    }

    /// Back to the start state with fresh counters. The random stream keeps
    /// advancing with the total step count.
    pub fn reset(&mut self) {
        self.shield.reset_counters();
        self.state = self.start;
        self.since_reset = 0;
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<Option<u64>, RunError> {
        match cmd {
            Command::SetParams { gamma, theta } => self.set_params(*gamma, *theta).map(|_| None),
            Command::AddObjective { buchi } => {
                let target = buchi
                    .iter()
                    .map(|r| r.resolve(&self.mdp))
                    .collect::<Result<Vec<_>, _>>()?;
                self.add_buchi(target)
            }
            Command::RemoveObjective { id } => self.remove_objective(*id).map(|_| None),
            Command::SetFault {
                state,
                action,
                kind,
                active,
            } => {
                let e = self.mdp.edge_by_names(&state.name(), action)?;
                self.set_fault(e, *kind, *active).map(|_| None)
            }
            Command::Reset {} => {
                self.reset();
                Ok(None)
            }
        }
    }

    /// Runs `steps` steps, applying scheduled commands when their step count
    /// is reached, and hands each record to `sink`. A command that fails
    /// leaves the run as it was; its error is returned with the others and the
    /// run goes on. Only a failing step aborts.
    pub fn run_schedule<F>(
        &mut self,
        steps: u64,
        schedule: &[ScheduledCommand],
        mut sink: F,
    ) -> Result<Vec<(u64, RunError)>, RunError>
    where
        F: FnMut(&StepRecord),
    {
        let mut pending: Vec<&ScheduledCommand> = schedule.iter().collect();
        pending.sort_by_key(|c| c.at);
        let mut failed = Vec::new();
        let mut next = 0;
        let end = self.steps + steps;
        loop {
            while next < pending.len() && pending[next].at <= self.steps {
                if let Err(e) = self.apply(&pending[next].command) {
                    failed.push((self.steps, e));
                }
                next += 1;
            }
            if self.steps >= end {
                break;
            }
            let rec = self.step()?;
            sink(&rec);
        }
        Ok(failed)
    }
}
