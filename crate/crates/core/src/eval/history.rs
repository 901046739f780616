//! Exact probabilities of bounded histories, with or without a shield.

use std::collections::BTreeMap;

use super::metrics::EvalError;
use crate::mdp::{Edge, Mdp};
use crate::shield::Shield;
use crate::sim::Policy;
use crate::synth::StrategyTemplate;

/// Enumeration guard on `|Q|^l * maxdeg^l`.
pub const MAX_HISTORIES: f64 = 1e7;

/// `q0 a0 q1 a1 ... q_l`, interleaved.
pub type History = Vec<usize>;

/// Every history of `horizon` steps from `start` with positive probability.
/// With a shield, its counters are replayed along each branch.
pub fn history_probabilities(
    mdp: &Mdp,
    policy: &dyn Policy,
    start: usize,
    horizon: usize,
    shield: Option<&Shield>,
) -> Result<BTreeMap<History, f64>, EvalError> {
    let size = (mdp.num_states() as f64 * mdp.max_degree() as f64).powi(horizon as i32);
    if size > MAX_HISTORIES {
        return Err(EvalError::TooLarge(size));
    }
    let mut out = BTreeMap::new();
    let mut path = vec![start];
    expand(mdp, policy, horizon, shield.cloned(), 1.0, &mut path, &mut out)?;
    Ok(out)
}

fn expand(
    mdp: &Mdp,
    policy: &dyn Policy,
    left: usize,
    shield: Option<Shield>,
    prob: f64,
    path: &mut History,
    out: &mut BTreeMap<History, f64>,
) -> Result<(), EvalError> {
    if left == 0 {
        *out.entry(path.clone()).or_insert(0.0) += prob;
        return Ok(());
    }
    let q = *path.last().expect("nonempty");
    let weights = match &shield {
        Some(s) => s.distribution(q, policy.weights(q))?,
        None => policy.weights(q).to_vec(),
    };
    for (a, &x) in weights.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        let next_shield = shield.as_ref().map(|s| {
            let mut s = s.clone();
            s.update(Edge::new(q, a));
            s
        });
        for &(succ, y) in mdp.successors(q, a) {
            path.push(a);
            path.push(succ);
            expand(mdp, policy, left - 1, next_shield.clone(), prob * x * y, path, out)?;
            path.truncate(path.len() - 2);
        }
    }
    Ok(())
}

/// Sums out the last step of every history.
pub fn marginalize(probs: &BTreeMap<History, f64>) -> BTreeMap<History, f64> {
    let mut out = BTreeMap::new();
    for (h, &p) in probs {
        let cut = h.len().saturating_sub(2).max(1);
        *out.entry(h[..cut].to_vec()).or_insert(0.0) += p;
    }
    out
}

/// Histories that stay in the winning region and never take an unsafe edge,
/// i.e. the prefixes a winning run can have.
pub fn is_winning_prefix(h: &History, t: &StrategyTemplate) -> bool {
    h.iter().step_by(2).all(|&q| t.in_region(q))
        && h.chunks(2)
            .filter(|c| c.len() == 2)
            .all(|c| !t.unsafe_edges.contains(&Edge::new(c[0], c[1])))
}

/// Smallest nominal probability of an action taken along `h`.
pub fn min_action_prob(h: &History, policy: &dyn Policy) -> f64 {
    h.chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| policy.weights(c[0])[c[1]])
        .fold(1.0, f64::min)
}

/// `Pr_nominal * (1 - ((1 - l*gamma/x) / (1 + n_groups*l*gamma))^l)`, the
/// largest drop in probability the shield may cause on a winning prefix of
/// length `l` whose smallest nominal action probability is `x`.
pub fn interference_bound(pr_nominal: f64, x: f64, l: usize, gamma: f64, n_groups: usize) -> f64 {
    let lf = l as f64;
    let base = ((1.0 - lf * gamma / x) / (1.0 + n_groups as f64 * lf * gamma)).max(0.0);
    pr_nominal * (1.0 - base.powi(l as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{GameGraph, Mode};
    use crate::mdp::tests::{act, names};
    use crate::shield::ShieldParams;
    use crate::sim::TabularPolicy;

    fn chain() -> Mdp {
        let actions = vec![
            vec![act("a", &[(1, 0.5), (2, 0.5)]), act("b", &[(0, 1.0)])],
            vec![act("a", &[(0, 1.0)])],
            vec![act("a", &[(2, 0.3), (0, 0.7)])],
        ];
        Mdp::new(names(3), actions, 0).unwrap()
    }

    #[test]
    fn horizon_zero() {
        let m = chain();
        let p = TabularPolicy::uniform(&m);
        let h = history_probabilities(&m, &p, 0, 0, None).unwrap();
        assert_eq!(h, BTreeMap::from([(vec![0], 1.0)]));
    }

    #[test]
    fn deterministic_single_history() {
        let actions = vec![vec![act("a", &[(1, 1.0)])], vec![act("a", &[(0, 1.0)])]];
        let m = Mdp::new(names(2), actions, 0).unwrap();
        let p = TabularPolicy::uniform(&m);
        let h = history_probabilities(&m, &p, 0, 3, None).unwrap();
        assert_eq!(h, BTreeMap::from([(vec![0, 0, 1, 0, 0, 0, 1], 1.0)]));
    }

    #[test]
    fn sums_to_one_and_marginalizes() {
        let m = chain();
        let p = TabularPolicy::new(&m, vec![vec![0.3, 0.7], vec![1.0], vec![1.0]]).unwrap();
        let g = GameGraph::from_mdp(&m, Mode::AlmostSure);
        let t = crate::synth::buchi_template(&g, &[2]).unwrap();
        let s = Shield::new(&g, t, ShieldParams::new(0.2, 0.05)).unwrap();
        for shield in [None, Some(&s)] {
            let h3 = history_probabilities(&m, &p, 0, 3, shield).unwrap();
            let h4 = history_probabilities(&m, &p, 0, 4, shield).unwrap();
            assert!((h4.values().sum::<f64>() - 1.0).abs() < 1e-9);
            let marg = marginalize(&h4);
            assert_eq!(marg.len(), h3.len());
            for (k, v) in &h3 {
                assert!((marg[k] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guard() {
        let m = chain();
        let p = TabularPolicy::uniform(&m);
        assert!(matches!(history_probabilities(&m, &p, 0, 20, None), Err(EvalError::TooLarge(_))));
    }

    #[test]
    fn bound_formula() {
        assert_eq!(interference_bound(0.5, 0.5, 0, 0.1, 1), 0.0);
        // (1 - 0.2/0.5)/(1 + 0.2) = 0.5, squared = 0.25
        assert!((interference_bound(1.0, 0.5, 2, 0.1, 1) - 0.75).abs() < 1e-12);
        assert_eq!(interference_bound(0.4, 0.1, 2, 0.1, 1), 0.4);
    }
}
