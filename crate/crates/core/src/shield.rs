//! Runtime shield: history counters and the shielded action distribution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{normalize_in_place, tv_weights, DistError, Distribution};
use crate::game::GameGraph;
use crate::mdp::Edge;
use crate::synth::{compose_templates, StrategyTemplate, SynthError};

pub const DEFAULT_EPS_PERTURB: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShieldError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no safe action at state {state}")]
    NoSafeAction { state: usize },
    #[error("state {state} lies outside the combined winning region")]
    OutsideCombinedRegion { state: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldParams {
    pub gamma: f64,
    pub theta: f64,
    #[serde(default = "default_eps")]
    pub eps_perturb: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_PERTURB
}

impl ShieldParams {
    pub fn new(gamma: f64, theta: f64) -> Self {
        ShieldParams {
            gamma,
            theta,
            eps_perturb: DEFAULT_EPS_PERTURB,
        }
    }

    pub fn validate(&self, max_degree: usize) -> Result<(), ShieldError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ShieldError::InvalidParams(format!("gamma {} not in (0, 1]", self.gamma)));
        }
        let cap = 1.0 / max_degree.max(1) as f64;
        if !(self.theta > 0.0 && self.theta < cap) {
            return Err(ShieldError::InvalidParams(format!(
                "theta {} not in (0, 1/{max_degree})",
                self.theta
            )));
        }
        if !(self.eps_perturb > 0.0 && self.eps_perturb.is_finite()) {
            return Err(ShieldError::InvalidParams(format!("eps_perturb {} must be > 0", self.eps_perturb)));
        }
        Ok(())
    }

    /// `K = max(1, (1/θ − 1)/γ)`, the bound on live counters.
    pub fn live_bound(&self) -> f64 {
        ((1.0 / self.theta - 1.0) / self.gamma).max(1.0)
    }

    /// Largest number of times a co-live edge can be sampled.
    pub fn colive_bound(&self) -> u64 {
        1 + (1.0 / self.gamma).ceil() as u64
    }
}

#[derive(Debug, Clone, Default)]
struct ActionRole {
    blocked: bool,
    colive: Option<usize>,
    groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// Counters of the co-live edges, in template order.
    pub colive: Vec<u64>,
    pub live: Vec<u64>,
}

/// Template, parameters, occasional-fault mask and the history counters.
#[derive(Debug, Clone)]
pub struct Shield {
    template: StrategyTemplate,
    params: ShieldParams,
    max_degree: usize,
    mask: BTreeSet<Edge>,
    colive_edges: Vec<Edge>,
    colive_counters: Vec<u64>,
    live_counters: Vec<u64>,
    roles: Vec<Vec<ActionRole>>,
    /// Groups having the state as a source.
    src_groups: Vec<Vec<usize>>,
}

impl Shield {
    pub fn new(g: &GameGraph, template: StrategyTemplate, params: ShieldParams) -> Result<Self, ShieldError> {
        params.validate(g.max_degree())?;
        let mut s = Shield {
            template: StrategyTemplate::default(),
            params,
            max_degree: g.max_degree(),
            mask: BTreeSet::new(),
            colive_edges: Vec::new(),
            colive_counters: Vec::new(),
            live_counters: Vec::new(),
            roles: (0..g.num_states()).map(|q| vec![ActionRole::default(); g.num_actions(q)]).collect(),
            src_groups: vec![Vec::new(); g.num_states()],
        };
        s.install(template);
        Ok(s)
    }

    fn install(&mut self, template: StrategyTemplate) {
        for r in self.roles.iter_mut().flatten() {
            *r = ActionRole::default();
        }
        for v in &mut self.src_groups {
            v.clear();
        }
        for e in &template.unsafe_edges {
            self.roles[e.state][e.action].blocked = true;
        }
        for e in &self.mask {
            self.roles[e.state][e.action].blocked = true;
        }
        self.colive_edges = template.colive.iter().copied().collect();
        for (i, e) in self.colive_edges.iter().enumerate() {
            self.roles[e.state][e.action].colive = Some(i);
        }
        for (i, h) in template.live_groups.iter().enumerate() {
            for e in h {
                self.roles[e.state][e.action].groups.push(i);
                if self.src_groups[e.state].last() != Some(&i) {
                    self.src_groups[e.state].push(i);
                }
            }
        }
        self.colive_counters = vec![0; self.colive_edges.len()];
        self.live_counters = vec![0; template.live_groups.len()];
        self.template = template;
    }

    pub fn template(&self) -> &StrategyTemplate {
        &self.template
    }

    pub fn params(&self) -> ShieldParams {
        self.params
    }

    pub fn mask(&self) -> &BTreeSet<Edge> {
        &self.mask
    }

    pub fn colive_counter(&self, e: Edge) -> u64 {
        self.roles[e.state][e.action]
            .colive
            .map_or(0, |i| self.colive_counters[i])
    }

    pub fn live_counters(&self) -> &[u64] {
        &self.live_counters
    }

    pub fn colive_counters(&self) -> BTreeMap<Edge, u64> {
        self.colive_edges.iter().copied().zip(self.colive_counters.iter().copied()).collect()
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            colive: self.colive_counters.clone(),
            live: self.live_counters.clone(),
        }
    }

    pub fn is_blocked(&self, e: Edge) -> bool {
        self.roles[e.state][e.action].blocked
    }

    fn adjusted(&self, q: usize, mu: &[f64], out: &mut [f64]) -> Result<(), DistError> {
        let gamma = self.params.gamma;
        for (a, role) in self.roles[q].iter().enumerate() {
            out[a] = if role.blocked {
                0.0
            } else {
                let mut w = mu[a];
                if let Some(i) = role.colive {
                    w -= gamma * self.colive_counters[i] as f64;
                }
                for &h in &role.groups {
                    w += gamma * self.live_counters[h] as f64;
                }
                w
            };
        }
        normalize_in_place(out)?;
        for w in out.iter_mut() {
            if *w <= self.params.theta {
                *w = 0.0;
            }
        }
        normalize_in_place(out)
    }

    /// Shielded weights for the nominal weights `mu` at state `q`.
    pub fn distribution(&self, q: usize, mu: &[f64]) -> Result<Vec<f64>, ShieldError> {
        let roles = &self.roles[q];
        if mu.len() != roles.len() {
            return Err(DistError::DomainMismatch(mu.len(), roles.len()).into());
        }
        if roles.iter().all(|r| r.blocked) {
            return Err(ShieldError::NoSafeAction { state: q });
        }
        let mut out = vec![0.0; mu.len()];
        if self.adjusted(q, mu, &mut out).is_ok() {
            return Ok(out);
        }
        let eps = self.params.eps_perturb;
        let perturbed: Vec<f64> = mu
            .iter()
            .zip(roles)
            .map(|(&w, r)| if r.blocked { w } else { w + eps })
            .collect();
        self.adjusted(q, &perturbed, &mut out)
            .map_err(|_| ShieldError::NoSafeAction { state: q })?;
        Ok(out)
    }

    /// Records that `e` was taken.
    pub fn update(&mut self, e: Edge) {
        let role = &self.roles[e.state][e.action];
        if let Some(i) = role.colive {
            self.colive_counters[i] += 1;
        }
        for &h in &self.src_groups[e.state] {
            if role.groups.contains(&h) {
                self.live_counters[h] = 0;
            } else {
                self.live_counters[h] += 1;
            }
        }
    }

    pub fn reset_counters(&mut self) {
        self.colive_counters.iter_mut().for_each(|c| *c = 0);
        self.live_counters.iter_mut().for_each(|c| *c = 0);
    }

    pub fn set_params(&mut self, gamma: Option<f64>, theta: Option<f64>) -> Result<(), ShieldError> {
        let next = ShieldParams {
            gamma: gamma.unwrap_or(self.params.gamma),
            theta: theta.unwrap_or(self.params.theta),
            eps_perturb: self.params.eps_perturb,
        };
        next.validate(self.max_degree)?;
        self.params = next;
        Ok(())
    }

    /// Toggles an occasional fault on `e`.
    pub fn set_mask(&mut self, e: Edge, active: bool) {
        let changed = if active { self.mask.insert(e) } else { self.mask.remove(&e) };
        if changed {
            self.roles[e.state][e.action].blocked = active || self.template.unsafe_edges.contains(&e);
        }
    }

    /// Swaps in a new template. Counters of co-live edges and of live groups
    /// (matched by their edge sets) that survive are carried over.
    pub fn replace_template(&mut self, template: StrategyTemplate) {
        let old_colive = self.colive_counters();
        let mut old_live: BTreeMap<Vec<Edge>, u64> = BTreeMap::new();
        for (h, &c) in self.template.live_groups.iter().zip(&self.live_counters) {
            let mut key = h.clone();
            key.sort_unstable();
            old_live.entry(key).or_insert(c);
        }
        self.install(template);
        for (i, e) in self.colive_edges.iter().enumerate() {
            self.colive_counters[i] = old_colive.get(e).copied().unwrap_or(0);
        }
        for (i, h) in self.template.live_groups.iter().enumerate() {
            let mut key = h.clone();
            key.sort_unstable();
            self.live_counters[i] = old_live.get(&key).copied().unwrap_or(0);
        }
    }

    /// Composes `extra` into the current template.
    pub fn add_template(&mut self, g: &GameGraph, extra: &StrategyTemplate, current: usize) -> Result<(), ShieldError> {
        let combined = compose_templates(g, &[self.template.clone(), extra.clone()])?;
        if !combined.in_region(current) {
            return Err(ShieldError::OutsideCombinedRegion { state: current });
        }
        self.replace_template(combined);
        Ok(())
    }
}

/// Free-function form of [`Shield::distribution`].
pub fn shield_distribution(mu: &Distribution, q: usize, shield: &Shield) -> Result<Distribution, ShieldError> {
    let w = shield.distribution(q, mu.weights())?;
    Ok(Distribution::new(w)?)
}

/// `(1/l) Σ cost(q_i) · D_TV(nominal_i, shielded_i)`.
pub fn shielding_cost<'a, I, C>(steps: I, cost: C) -> f64
where
    I: IntoIterator<Item = (usize, &'a [f64], &'a [f64])>,
    C: Fn(usize) -> f64,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (q, nominal, shielded) in steps {
        total += cost(q) * tv_weights(nominal, shielded).expect("same action set");
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
