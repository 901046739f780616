//! The Büchi frequency guarantee for sure-mode shields on deterministic MDPs.

use super::metrics::{buchi_frequency, EvalError};
use crate::game::{GameGraph, Mode};
use crate::shield::ShieldParams;
use crate::synth::StrategyTemplate;

/// `(1/|Q|) * min(1, (gamma / (1/theta - 1))^(n-1))`.
pub fn frequency_bound(num_states: usize, n_groups: usize, gamma: f64, theta: f64) -> f64 {
    let ratio = gamma / (1.0 / theta - 1.0);
    let exp = n_groups as i32 - 1;
    ratio.powi(exp).min(1.0) / num_states as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub n_groups: usize,
    pub bound: f64,
    pub measured: f64,
    /// Allowance for cutting the run at a finite length.
    pub slack: f64,
    pub pass: bool,
}

/// Compares the measured frequency of `states` in `buchi` with the bound.
pub fn frequency_bound_check(
    g: &GameGraph,
    template: &StrategyTemplate,
    params: ShieldParams,
    states: &[usize],
    buchi: &[bool],
) -> Result<BoundCheck, EvalError> {
    if g.mode() != Mode::Sure {
        return Err(EvalError::PreconditionViolation("shield is not in sure mode".into()));
    }
    if (0..g.num_nodes()).any(|v| g.succ(v).len() != 1) {
        return Err(EvalError::PreconditionViolation("MDP is not deterministic".into()));
    }
    if !template.colive.is_empty() {
        return Err(EvalError::PreconditionViolation("template has co-live edges".into()));
    }
    let n_groups = template.live_groups.len();
    let bound = frequency_bound(g.num_states(), n_groups, params.gamma, params.theta);
    let measured = buchi_frequency(states, buchi)?;
    let slack = 2.0 / states.len() as f64;
    Ok(BoundCheck {
        n_groups,
        bound,
        measured,
        slack,
        pass: measured >= bound - slack,
    })
}
