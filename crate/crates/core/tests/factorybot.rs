use stars::factorybot::{generate_instance, Category, SolvedInstance, DEFAULT_SOFTENING};
use stars::{buchi_template, GameGraph, Mode};

#[test]
fn deterministic_grids_are_fully_winning() {
    for seed in 0..10 {
        for cat in [Category::Far, Category::Close] {
            let inst = generate_instance(5 + seed as usize % 5, cat, seed).unwrap();
            let s = SolvedInstance::new("g", inst, DEFAULT_SOFTENING).unwrap();
            let g = GameGraph::from_mdp(&s.grid.mdp, Mode::Sure);
            let t = buchi_template(&g, &s.buchi_states()).unwrap();
            assert_eq!(t.winning_region.len(), s.grid.mdp.num_states());
            assert!(t.unsafe_edges.is_empty());
        }
    }
}

#[test]
fn optimum_is_at_most_one() {
    for seed in 0..10 {
        let inst = generate_instance(7, Category::Far, seed).unwrap();
        let s = SolvedInstance::new("g", inst, DEFAULT_SOFTENING).unwrap();
        assert!(s.max_avg_reward > 0.0 && s.max_avg_reward <= 1.0 + 1e-9);
    }
}
