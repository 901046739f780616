use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use stars::mdp::Action;
use stars::shield::ShieldParams;
use stars::sim::{RunSpec, ShieldedRun, TabularPolicy};
use stars::synth::{sys_attractor, Objective, ObjectiveSet};
use stars::{normalize, tv_distance, Distribution, Edge, GameGraph, Mdp, Mode};

/// Per state, per action: successors with raw positive weights.
type RawMdp = Vec<Vec<Vec<(usize, u32)>>>;

fn raw_mdp(max_states: usize, max_actions: usize, max_succ: usize) -> impl Strategy<Value = RawMdp> {
    (1..=max_states).prop_flat_map(move |n| {
        let action = prop::collection::vec((0..n, 1u32..100), 1..=max_succ);
        prop::collection::vec(prop::collection::vec(action, 1..=max_actions), n)
    })
}

fn build(raw: &RawMdp) -> Mdp {
    let names = (0..raw.len()).map(|i| format!("s{i}")).collect();
    let actions = raw
        .iter()
        .map(|acts| {
            acts.iter()
                .enumerate()
                .map(|(i, succ)| {
                    let mut merged: Vec<(usize, u32)> = Vec::new();
                    for &(s, w) in succ {
                        match merged.iter_mut().find(|m| m.0 == s) {
                            Some(m) => m.1 += w,
                            None => merged.push((s, w)),
                        }
                    }
                    let total: u32 = merged.iter().map(|m| m.1).sum();
                    let mut successors: Vec<(usize, f64)> =
                        merged.iter().map(|&(s, w)| (s, w as f64 / total as f64)).collect();
                    // make the sum exact
                    let rest: f64 = successors[1..].iter().map(|s| s.1).sum();
                    successors[0].1 = 1.0 - rest;
                    Action {
                        name: format!("a{i}"),
                        successors,
                    }
                })
                .collect()
        })
        .collect();
    Mdp::new(names, actions, 0).unwrap()
}

/// `(q0, a0, q1, ...)` paths with `k` transitions of positive probability.
fn mdp_paths(m: &Mdp, q: usize, k: usize, out: &mut BTreeSet<Vec<usize>>, path: &mut Vec<usize>) {
    if k == 0 {
        out.insert(path.clone());
        return;
    }
    for a in 0..m.num_actions(q) {
        for &(s, p) in m.successors(q, a) {
            assert!(p > 0.0);
            path.extend([a, s]);
            mdp_paths(m, s, k - 1, out, path);
            path.truncate(path.len() - 2);
        }
    }
}

/// The same through the game graph: system node, then its opponent node,
/// then the opponent's successor.
fn game_paths(g: &GameGraph, q: usize, k: usize, out: &mut BTreeSet<Vec<usize>>, path: &mut Vec<usize>) {
    if k == 0 {
        out.insert(path.clone());
        return;
    }
    for node in g.nodes_of(q) {
        let e = g.edge_of(node);
        assert_eq!(e.state, q);
        for &s in g.succ(node) {
            path.extend([e.action, s]);
            game_paths(g, s, k - 1, out, path);
            path.truncate(path.len() - 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mdp_json_round_trip_is_exact(raw in raw_mdp(6, 3, 3)) {
        let m = build(&raw);
        let back = Mdp::from_json_str(&m.to_json_string()).unwrap();
        prop_assert_eq!(&back, &m);
        for e in m.edges() {
            for (x, y) in m.successors(e.state, e.action).iter().zip(back.successors(e.state, e.action)) {
                prop_assert_eq!(x.1.to_bits(), y.1.to_bits());
            }
        }
    }

    #[test]
    fn game_graph_paths_are_mdp_paths(raw in raw_mdp(6, 2, 2), k in 0usize..=6) {
        let m = build(&raw);
        for mode in [Mode::Sure, Mode::AlmostSure] {
            let g = GameGraph::from_mdp(&m, mode);
            prop_assert_eq!(g.num_nodes(), m.num_edges());
            for q in 0..m.num_states() {
                let (mut a, mut b) = (BTreeSet::new(), BTreeSet::new());
                mdp_paths(&m, q, k, &mut a, &mut vec![q]);
                game_paths(&g, q, k, &mut b, &mut vec![q]);
                prop_assert_eq!(&a, &b);
            }
        }
    }

    #[test]
    fn attractor_is_monotone(raw in raw_mdp(6, 3, 3), t1 in prop::collection::btree_set(0usize..6, 1..4), extra in prop::collection::btree_set(0usize..6, 0..3)) {
        let m = build(&raw);
        let n = m.num_states();
        let small: Vec<usize> = t1.iter().copied().filter(|&q| q < n).collect();
        let mut large: BTreeSet<usize> = small.iter().copied().collect();
        large.extend(extra.iter().copied().filter(|&q| q < n));
        let large: Vec<usize> = large.into_iter().collect();
        for mode in [Mode::Sure, Mode::AlmostSure] {
            let g = GameGraph::from_mdp(&m, mode);
            let a: BTreeSet<usize> = sys_attractor(&g, &small).states().into_iter().collect();
            let b: BTreeSet<usize> = sys_attractor(&g, &large).states().into_iter().collect();
            prop_assert!(small.iter().all(|q| a.contains(q)));
            prop_assert!(a.is_subset(&b), "{:?} not within {:?}", a, b);
        }
    }

    #[test]
    fn normalize_and_tv(raw in prop::collection::vec(-1.0f64..1.0, 1..6), other in prop::collection::vec(0.01f64..1.0, 1..6)) {
        if let Ok(d) = normalize(&raw) {
            prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.weights().iter().all(|&w| w >= 0.0));
            let len = raw.len().min(other.len());
            if len == raw.len() && len == other.len() {
                let e = normalize(&other).unwrap();
                let tv = tv_distance(&d, &e).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
                prop_assert!((tv - tv_distance(&e, &d).unwrap()).abs() < 1e-15);
            }
            prop_assert_eq!(tv_distance(&d, &d).unwrap(), 0.0);
        } else {
            prop_assert!(raw.iter().all(|&w| w <= 0.0));
        }
        let _ = Distribution::uniform(3);
    }

    /// Along any shielded run: distributions are proper, unsafe edges keep
    /// weight zero, kept weights clear the threshold, and co-live edges stay
    /// within their sample bound.
    #[test]
    fn shield_invariants_along_runs(
        raw in raw_mdp(6, 3, 2),
        target in prop::collection::btree_set(0usize..6, 1..3),
        gamma in 0.05f64..1.0,
        theta in 0.001f64..0.3,
        seed in any::<u64>(),
    ) {
        let m = Arc::new(build(&raw));
        let n = m.num_states();
        let theta = theta.min(0.99 / m.max_degree() as f64);
        let target: Vec<usize> = target.into_iter().filter(|&q| q < n).collect();
        prop_assume!(!target.is_empty());
        let policy = Arc::new(TabularPolicy::uniform(&m));
        let spec = RunSpec {
            mdp: m.clone(),
            mode: Mode::Sure,
            objectives: ObjectiveSet::single(Objective::Buchi { target }),
            policy,
            params: ShieldParams::new(gamma, theta),
            seed,
            start: None,
        };
        let Ok(mut run) = ShieldedRun::new(spec) else { return Ok(()) };
        let t = run.template().clone();
        let bound = ShieldParams::new(gamma, theta).colive_bound();
        for _ in 0..300 {
            let q = run.state();
            prop_assert!(t.in_region(q));
            let rec = run.step().unwrap();
            prop_assert!((rec.shielded.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, &w) in rec.shielded.iter().enumerate() {
                if t.unsafe_edges.contains(&Edge::new(q, a)) {
                    prop_assert_eq!(w, 0.0);
                }
                prop_assert!(w == 0.0 || w > theta);
            }
            prop_assert!(rec.counters.colive.iter().all(|&c| c <= bound));
        }
    }
}
