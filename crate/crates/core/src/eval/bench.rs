//! Synthesis timing on synthetic layered game graphs.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::game::{GameGraph, Mode};
use crate::synth::{buchi_template, SynthError};

/// `n` states in layers of about `sqrt(n)`. Every state has a forward action
/// into one or two states of the next layer and a sideways action into its
/// own or the previous layer; the last layer feeds the first, which is the
/// target.
pub fn layered_graph(n: usize, seed: u64) -> (GameGraph, Vec<usize>) {
    let width = ((n as f64).sqrt().ceil() as usize).max(1);
    let layers = n.div_ceil(width);
    let layer_of = |q: usize| q / width;
    let layer_range = |l: usize| (l * width)..((l + 1) * width).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut succ = Vec::with_capacity(n);
    for q in 0..n {
        let l = layer_of(q);
        let next = layer_range((l + 1) % layers);
        let mut fwd = vec![rng.gen_range(next.clone())];
        if rng.gen_bool(0.5) {
            fwd.push(rng.gen_range(next));
        }
        fwd.sort_unstable();
        fwd.dedup();
        let back = layer_range(if rng.gen_bool(0.5) { l } else { (l + layers - 1) % layers });
        let side = vec![rng.gen_range(back)];
        succ.push(vec![fwd, side]);
    }
    let target = layer_range(0).collect();
    (GameGraph::from_successors(&succ, Mode::Sure), target)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub states: usize,
    pub nodes: usize,
    pub seconds: f64,
    pub states_per_sec: f64,
    pub winning: usize,
}

pub fn time_buchi_synthesis(n: usize, seed: u64) -> Result<BenchRow, SynthError> {
    let (g, target) = layered_graph(n, seed);
    let start = Instant::now();
    let t = buchi_template(&g, &target)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchRow {
        states: n,
        nodes: g.num_nodes(),
        seconds,
        states_per_sec: n as f64 / seconds.max(1e-9),
        winning: t.winning_region.len(),
    })
}

pub fn scalability_bench(sizes: &[usize], seed: u64) -> Result<Vec<BenchRow>, SynthError> {
    sizes.iter().map(|&n| time_buchi_synthesis(n, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_layered_graph_is_winning() {
        let row = time_buchi_synthesis(1000, 1).unwrap();
        assert_eq!(row.states, 1000);
        assert_eq!(row.nodes, 2000);
        assert_eq!(row.winning, 1000);
    }
}
