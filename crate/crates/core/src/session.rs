//! Interactive sessions: the message protocol and a session that answers it.
//! No IO here; the server moves lines between sockets and [`Session::handle`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eval::{MetricsRecord, Method, Prepared};
use crate::factorybot::{Cell, GridInstance};
use crate::mdp::{Edge, MdpError};
use crate::shield::{CounterSnapshot, ShieldError, ShieldParams};
use crate::sim::{Command, RunError, ScheduledCommand, ShieldedRun, StateRef};
use crate::synth::{FaultKind, Objective, SynthError};

fn default_gamma() -> f64 {
    0.1
}

fn default_theta() -> f64 {
    0.01
}

/// Client to server. Every message may also carry `"session": id`, which the
/// server uses for routing and strips before parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    CreateSession {
        /// Name of an instance file in the server's instance directory.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_ref: Option<String>,
        /// An inline instance, in the instance file format.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<serde_json::Value>,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        /// Keep trace lines for `get_trace`.
        #[serde(default)]
        trace: bool,
    },
    Step {
        n: u64,
    },
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
    GetSnapshot {},
    GetTrace {},
}

impl ClientMessage {
    /// The run command this message stands for, if any.
    pub fn command(&self) -> Option<Command> {
        Some(match self.clone() {
            ClientMessage::SetParams { gamma, theta } => Command::SetParams { gamma, theta },
            ClientMessage::AddObjective { buchi } => Command::AddObjective { buchi },
            ClientMessage::RemoveObjective { id } => Command::RemoveObjective { id },
            ClientMessage::SetFault {
                state,
                action,
                kind,
                active,
            } => Command::SetFault {
                state,
                action,
                kind,
                active,
            },
            ClientMessage::Reset {} => Command::Reset {},
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    SessionCreated { id: String, seed: u64 },
    Snapshot(Box<Snapshot>),
    Error { code: String, msg: String },
    Trace { lines: Vec<String> },
}

impl Reply {
    pub fn error(code: &str, msg: impl Into<String>) -> Self {
        Reply::Error {
            code: code.into(),
            msg: msg.into(),
        }
    }

    pub fn from_run_error(e: &RunError) -> Self {
        let code = match e {
            RunError::Shield(ShieldError::InvalidParams(_)) => "invalid_params",
            RunError::Shield(ShieldError::NoSafeAction { .. }) => "no_safe_action",
            RunError::Shield(ShieldError::OutsideCombinedRegion { .. }) => "outside_combined_region",
            RunError::Shield(ShieldError::Synth(SynthError::ConflictUnresolvable { .. })) => "conflict_unresolvable",
            RunError::Shield(ShieldError::Synth(SynthError::EmptyWinningRegion)) => "empty_winning_region",
            RunError::Shield(ShieldError::Synth(SynthError::NotAnEdge(_))) => "not_an_edge",
            RunError::Shield(_) => "shield",
            RunError::Mdp(MdpError::UnknownState(_)) => "unknown_state",
            RunError::Mdp(MdpError::UnknownAction { .. }) => "unknown_action",
            RunError::Mdp(_) => "mdp",
            RunError::UnknownObjective(_) => "unknown_objective",
        };
        Reply::error(code, e.to_string())
    }
}

/// `(x, y, action)`.
pub type EdgeView = (usize, usize, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridView {
    pub size: usize,
    pub walls: Vec<[usize; 2]>,
    pub buchi: Vec<[usize; 2]>,
    pub rewards: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub steps: u64,
    pub buchi_visits: u64,
    pub buchi_freq: f64,
    pub avg_reward: f64,
    pub max_avg_reward: f64,
    pub reward_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveView {
    pub id: u64,
    pub buchi: Vec<[usize; 2]>,
    /// Steps since the last reset that started in the target.
    pub visits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateView {
    #[serde(rename = "unsafe")]
    pub unsafe_edges: Vec<EdgeView>,
    pub colive: Vec<EdgeView>,
    pub live: Vec<Vec<EdgeView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: String,
    pub seed: u64,
    /// Steps since the last reset.
    pub step: u64,
    pub total_steps: u64,
    pub grid: GridView,
    pub agent: [usize; 2],
    /// Visits per cell since the last reset, indexed `[y][x]`.
    pub heatmap: Vec<Vec<u64>>,
    pub counters: CounterSnapshot,
    pub params: ShieldParams,
    pub metrics: SessionMetrics,
    pub objectives: Vec<ObjectiveView>,
    pub template: TemplateView,
    /// Masked and forbidden edges.
    pub faults: Vec<EdgeView>,
}

fn xy((x, y): Cell) -> [usize; 2] {
    [x, y]
}

pub struct Session {
    id: String,
    prep: Arc<Prepared>,
    run: ShieldedRun,
    heatmap: Vec<u64>,
    buchi_visits: u64,
    reward_sum: f64,
    /// Per objective id, visits since the last reset.
    objective_visits: Vec<(u64, u64)>,
    trace: Option<Vec<String>>,
    /// Every message that changed the run, with the step it applied at.
    script: Vec<ScheduledCommand>,
}

impl Session {
    pub fn new(id: impl Into<String>, prep: Arc<Prepared>, params: ShieldParams, seed: u64, trace: bool) -> Result<Self, RunError> {
        let run = prep.shielded_run(params, seed).map_err(|e| match e {
            crate::eval::EvalError::Run(r) => r,
            other => RunError::Shield(ShieldError::InvalidParams(other.to_string())),
        })?;
        let mut s = Session {
            id: id.into(),
            heatmap: vec![0; prep.mdp.num_states()],
            objective_visits: run.objective_ids().iter().map(|&i| (i, 0)).collect(),
            prep,
            run,
            buchi_visits: 0,
            reward_sum: 0.0,
            trace: trace.then(Vec::new),
            script: Vec::new(),
        };
        s.heatmap[s.run.state()] = 1;
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.run.seed()
    }

    pub fn run(&self) -> &ShieldedRun {
        &self.run
    }

    pub fn instance(&self) -> &GridInstance {
        &self.prep.solved.instance
    }

    /// The commands applied so far, replayable with `stars simulate`.
    pub fn script(&self) -> &[ScheduledCommand] {
        &self.script
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    fn target_of(&self, id: u64) -> Vec<usize> {
        let i = self.run.objective_ids().iter().position(|&x| x == id);
        match i.map(|i| &self.run.objectives().objectives[i]) {
            Some(Objective::Buchi { target }) => target.clone(),
            _ => Vec::new(),
        }
    }

    fn sync_objectives(&mut self) {
        let old = std::mem::take(&mut self.objective_visits);
        self.objective_visits = self
            .run
            .objective_ids()
            .iter()
            .map(|&id| (id, old.iter().find(|o| o.0 == id).map_or(0, |o| o.1)))
            .collect();
    }

    pub fn step(&mut self, n: u64) -> Result<(), RunError> {
        let targets: Vec<Vec<bool>> = self
            .objective_visits
            .iter()
            .map(|&(id, _)| {
                let mut m = vec![false; self.heatmap.len()];
                for q in self.target_of(id) {
                    m[q] = true;
                }
                m
            })
            .collect();
        for _ in 0..n {
            let q = self.run.state();
            if self.prep.buchi[q] {
                self.buchi_visits += 1;
            }
            for (o, m) in self.objective_visits.iter_mut().zip(&targets) {
                if m[q] {
                    o.1 += 1;
                }
            }
            let rec = self.run.step()?;
            self.reward_sum += self.prep.reward()[rec.state][rec.action];
            self.heatmap[rec.next] += 1;
            if let Some(t) = &mut self.trace {
                t.push(rec.to_trace_line(&self.prep.mdp));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, cmd: Command) -> Result<(), RunError> {
        self.run.apply(&cmd)?;
        if let Command::Reset {} = cmd {
            self.heatmap.iter_mut().for_each(|c| *c = 0);
            self.heatmap[self.run.state()] = 1;
            self.buchi_visits = 0;
            self.reward_sum = 0.0;
            self.objective_visits.iter_mut().for_each(|o| o.1 = 0);
        }
        self.sync_objectives();
        Ok(())
    }

    /// Answers one message. `create_session` belongs to the server and is
    /// refused here.
    pub fn handle(&mut self, msg: ClientMessage) -> Reply {
        let at = self.run.steps();
        let result = match &msg {
            ClientMessage::CreateSession { .. } => {
                return Reply::error("bad_request", "create_session is handled by the server")
            }
            ClientMessage::GetSnapshot {} => Ok(()),
            ClientMessage::GetTrace {} => {
                return match &self.trace {
                    Some(t) => Reply::Trace { lines: t.clone() },
                    None => Reply::error("no_trace", "session was created without trace capture"),
                }
            }
            ClientMessage::Step { n } => self.step(*n),
            other => {
                let cmd = other.command().expect("remaining messages are commands");
                self.script.push(ScheduledCommand { at, command: cmd.clone() });
                self.apply(cmd)
            }
        };
        match result {
            Ok(()) => Reply::Snapshot(Box::new(self.snapshot())),
            Err(e) => Reply::from_run_error(&e),
        }
    }

    fn edge_view(&self, e: Edge) -> EdgeView {
        let (x, y) = self.prep.solved.grid.cells[e.state];
        (x, y, self.prep.mdp.action_name(e).to_string())
    }

    pub fn metrics(&self) -> SessionMetrics {
        let steps = self.run.steps_since_reset();
        let avg = if steps == 0 { 0.0 } else { self.reward_sum / steps as f64 };
        let max = self.prep.solved.max_avg_reward;
        SessionMetrics {
            steps,
            buchi_visits: self.buchi_visits,
            buchi_freq: if steps == 0 { 0.0 } else { self.buchi_visits as f64 / steps as f64 },
            avg_reward: avg,
            max_avg_reward: max,
            reward_gap: max - avg,
        }
    }

    /// The session's metrics as a CSV row; the instance column carries the
    /// session id so rows of different sessions stay apart.
    pub fn metrics_record(&self) -> MetricsRecord {
        let m = self.metrics();
        let inst = &self.prep.solved.instance;
        let p = self.run.shield().params();
        MetricsRecord {
            instance_id: format!("{}/{}", self.id, self.prep.id()),
            category: inst.category.to_string(),
            size: inst.size,
            gamma: p.gamma,
            theta: p.theta,
            steps: m.steps,
            seed: self.seed(),
            buchi_freq: m.buchi_freq,
            avg_reward: m.avg_reward,
            max_avg_reward: m.max_avg_reward,
            reward_gap: m.reward_gap,
            method: Method::Stars,
            unsafe_samples: 0,
            colive_violations: 0,
            live_violations: 0,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let inst = &self.prep.solved.instance;
        let cells = &self.prep.solved.grid.cells;
        let mut heatmap = vec![vec![0; inst.size]; inst.size];
        for (q, &c) in self.heatmap.iter().enumerate() {
            heatmap[cells[q].1][cells[q].0] = c;
        }
        let t = self.run.template();
        let mut faults: Vec<Edge> = self.run.shield().mask().iter().copied().collect();
        faults.extend(self.run.objectives().forbidden.iter().copied());
        faults.sort();
        faults.dedup();
        Snapshot {
            session: self.id.clone(),
            seed: self.seed(),
            step: self.run.steps_since_reset(),
            total_steps: self.run.steps(),
            grid: GridView {
                size: inst.size,
                walls: inst.walls.iter().map(|&c| xy(c)).collect(),
                buchi: inst.buchi.iter().map(|&c| xy(c)).collect(),
                rewards: inst.rewards.iter().map(|(&(x, y), &v)| (x, y, v)).collect(),
            },
            agent: xy(cells[self.run.state()]),
            heatmap,
            counters: self.run.shield().snapshot(),
            params: self.run.shield().params(),
            metrics: self.metrics(),
            objectives: self
                .objective_visits
                .iter()
                .map(|&(id, visits)| ObjectiveView {
                    id,
                    buchi: self.target_of(id).into_iter().map(|q| xy(cells[q])).collect(),
                    visits,
                })
                .collect(),
            template: TemplateView {
                unsafe_edges: t.unsafe_edges.iter().map(|&e| self.edge_view(e)).collect(),
                colive: t.colive.iter().map(|&e| self.edge_view(e)).collect(),
                live: t
                    .live_groups
                    .iter()
                    .map(|h| h.iter().map(|&e| self.edge_view(e)).collect())
                    .collect(),
            },
            faults: faults.into_iter().map(|e| self.edge_view(e)).collect(),
        }
    }
}

/// Turns a message script into the schedule `stars simulate` takes, plus the
/// total number of steps. Messages other than steps and commands are skipped.
pub fn script_to_schedule(messages: &[ClientMessage]) -> (Vec<ScheduledCommand>, u64) {
    let mut at = 0;
    let mut out = Vec::new();
    for m in messages {
        if let ClientMessage::Step { n } = m {
            at += n;
        } else if let Some(command) = m.command() {
            out.push(ScheduledCommand { at, command });
        }
    }
    (out, at)
}
