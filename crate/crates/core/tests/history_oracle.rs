//! Exact history probabilities against Monte-Carlo frequencies.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stars::dist::sample_weights;
use stars::eval::history_probabilities;
use stars::mdp::Action;
use stars::shield::{Shield, ShieldParams};
use stars::sim::{Policy, TabularPolicy};
use stars::synth::buchi_template;
use stars::{Edge, GameGraph, Mdp, Mode};

fn act(name: &str, succ: &[(usize, f64)]) -> Action {
    Action {
        name: name.into(),
        successors: succ.to_vec(),
    }
}

fn mdp() -> Mdp {
    let actions = vec![
        vec![act("a", &[(1, 0.6), (2, 0.4)]), act("b", &[(0, 1.0)])],
        vec![act("a", &[(0, 0.5), (2, 0.5)]), act("b", &[(1, 1.0)])],
        vec![act("a", &[(0, 1.0)]), act("b", &[(2, 0.3), (1, 0.7)])],
    ];
    Mdp::new(vec!["q0".into(), "q1".into(), "q2".into()], actions, 0).unwrap()
}

fn sample(m: &Mdp, p: &TabularPolicy, shield: Option<&Shield>, horizon: usize, n: usize, seed: u64) -> BTreeMap<Vec<usize>, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    let mut probs = Vec::new();
    for _ in 0..n {
        let mut s = shield.cloned();
        let mut q = 0;
        let mut h = vec![0];
        for _ in 0..horizon {
            let w = match &s {
                Some(s) => s.distribution(q, p.weights(q)).unwrap(),
                None => p.weights(q).to_vec(),
            };
            let a = sample_weights(&w, rng.gen());
            if let Some(s) = &mut s {
                s.update(Edge::new(q, a));
            }
            let succ = m.successors(q, a);
            probs.clear();
            probs.extend(succ.iter().map(|x| x.1));
            q = succ[sample_weights(&probs, rng.gen())].0;
            h.extend([a, q]);
        }
        *counts.entry(h).or_insert(0) += 1;
    }
    counts
}

fn within_three_sigma(exact: &BTreeMap<Vec<usize>, f64>, counts: &BTreeMap<Vec<usize>, usize>, n: usize) {
    for h in counts.keys() {
        assert!(exact.contains_key(h), "sampled impossible history {h:?}");
    }
    for (h, &p) in exact {
        let c = counts.get(h).copied().unwrap_or(0) as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let est = c / n as f64;
        assert!((est - p).abs() <= 3.0 * sigma + 1e-12, "{h:?}: exact {p}, estimate {est}, sigma {sigma}");
    }
}

#[test]
fn nominal_histories_match_sampling() {
    let m = mdp();
    let p = TabularPolicy::new(&m, vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
    let exact = history_probabilities(&m, &p, 0, 3, None).unwrap();
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-9);
    let n = 1_000_000;
    within_three_sigma(&exact, &sample(&m, &p, None, 3, n, 1), n);
}

#[test]
fn shielded_histories_match_sampling() {
    let m = mdp();
    let p = TabularPolicy::new(&m, vec![vec![0.2, 0.8], vec![0.3, 0.7], vec![0.1, 0.9]]).unwrap();
    let g = GameGraph::from_mdp(&m, Mode::AlmostSure);
    let t = buchi_template(&g, &[2]).unwrap();
    let shield = Shield::new(&g, t, ShieldParams::new(0.3, 0.05)).unwrap();
    let exact = history_probabilities(&m, &p, 0, 3, Some(&shield)).unwrap();
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-9);
    let n = 1_000_000;
    within_three_sigma(&exact, &sample(&m, &p, Some(&shield), 3, n, 2), n);
}
