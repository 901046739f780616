//! Parameter sweeps over benchmark instances.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::metrics::{EvalError, Method, MetricsRecord};
use crate::dist::sample_weights;
use crate::factorybot::{naive_shield, SolvedInstance};
use crate::game::{GameGraph, Mode};
use crate::mdp::{Edge, Mdp};
use crate::shield::ShieldParams;
use crate::sim::{draw_start, step_uniforms, Policy, RunSpec, ShieldedRun, TabularPolicy};
use crate::synth::{synthesize, Objective, ObjectiveSet, StrategyTemplate};

/// An instance with everything a run needs, computed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub solved: SolvedInstance,
    pub mdp: Arc<Mdp>,
    pub graph: Arc<GameGraph>,
    pub objectives: ObjectiveSet,
    pub template: StrategyTemplate,
    pub policy: Arc<TabularPolicy>,
    pub buchi: Vec<bool>,
}

impl Prepared {
    /// Single Büchi objective on the instance's target cells; sure mode
    /// without slip, almost-sure otherwise.
    pub fn new(solved: SolvedInstance) -> Result<Self, EvalError> {
        let objectives = ObjectiveSet::single(Objective::Buchi {
            target: solved.buchi_states(),
        });
        Self::with_objectives(solved, objectives)
    }

    pub fn with_objectives(solved: SolvedInstance, objectives: ObjectiveSet) -> Result<Self, EvalError> {
        let mode = if solved.instance.slip > 0.0 { Mode::AlmostSure } else { Mode::Sure };
        let mdp = Arc::new(solved.grid.mdp.clone());
        let graph = Arc::new(GameGraph::from_mdp(&mdp, mode));
        let template = synthesize(&graph, &objectives).map_err(crate::sim::RunError::from)?;
        let mut buchi = vec![false; mdp.num_states()];
        for q in solved.buchi_states() {
            buchi[q] = true;
        }
        Ok(Prepared {
            policy: Arc::new(solved.policy.clone()),
            solved,
            mdp,
            graph,
            objectives,
            template,
            buchi,
        })
    }

    pub fn id(&self) -> &str {
        &self.solved.id
    }

    pub fn reward(&self) -> &[Vec<f64>] {
        &self.solved.grid.reward
    }

    pub fn run_spec(&self, params: ShieldParams, seed: u64) -> RunSpec {
        RunSpec {
            mdp: self.mdp.clone(),
            mode: self.graph.mode(),
            objectives: self.objectives.clone(),
            policy: self.policy.clone(),
            params,
            seed,
            start: None,
        }
    }

    pub fn shielded_run(&self, params: ShieldParams, seed: u64) -> Result<ShieldedRun, EvalError> {
        Ok(ShieldedRun::with_template(
            self.run_spec(params, seed),
            self.graph.clone(),
            self.template.clone(),
        )?)
    }
}

/// Aggregates of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps: u64,
    pub buchi_visits: u64,
    pub reward_sum: f64,
    pub unsafe_samples: u64,
    /// Largest number of samples of a single co-live edge.
    pub max_colive_samples: u64,
    pub colive_violations: u64,
    pub max_live_counter: u64,
    pub live_violations: u64,
    /// Sum over steps of the total variation between nominal and shielded.
    pub tv_sum: f64,
}

impl RunStats {
    pub fn buchi_freq(&self) -> f64 {
        self.buchi_visits as f64 / self.steps.max(1) as f64
    }

    pub fn avg_reward(&self) -> f64 {
        self.reward_sum / self.steps.max(1) as f64
    }

    pub fn avg_cost(&self) -> f64 {
        self.tv_sum / self.steps.max(1) as f64
    }
}

/// Mixes an instance name into a seed so that instances draw independent
/// streams while every parameter value of one instance shares them.
pub fn run_seed(instance_id: &str, seed: u64) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in instance_id.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Runs the shield for `steps` steps, checking the template obligations on
/// every sample. The live-counter check applies when no state is a source
/// of two groups.
pub fn run_stars(prep: &Prepared, params: ShieldParams, steps: u64, seed: u64) -> Result<RunStats, EvalError> {
    let mut run = prep.shielded_run(params, seed)?;
    let t = run.template().clone();
    let is_unsafe: Vec<Vec<bool>> = (0..prep.mdp.num_states())
        .map(|q| {
            (0..prep.mdp.num_actions(q))
                .map(|a| t.unsafe_edges.contains(&Edge::new(q, a)))
                .collect()
        })
        .collect();
    let live_bound = params.live_bound();
    let colive_bound = params.colive_bound();
    let reward = prep.reward();
    let mut st = RunStats::default();
    for _ in 0..steps {
        let q = run.state();
        if prep.buchi[q] {
            st.buchi_visits += 1;
        }
        let (e, _, tv) = run.step_with_tv()?;
        st.steps += 1;
        st.tv_sum += tv;
        st.reward_sum += reward[e.state][e.action];
        if is_unsafe[e.state][e.action] {
            st.unsafe_samples += 1;
        }
        let live = run.shield().live_counters().iter().copied().max().unwrap_or(0);
        st.max_live_counter = st.max_live_counter.max(live);
        if live as f64 > live_bound {
            st.live_violations += 1;
        }
    }
    for (_, c) in run.shield().colive_counters() {
        st.max_colive_samples = st.max_colive_samples.max(c);
        if c > colive_bound {
            st.colive_violations += 1;
        }
    }
    Ok(st)
}

/// Runs a fixed stationary policy from a start drawn like the shielded run's.
pub fn run_policy(
    mdp: &Mdp,
    policy: &TabularPolicy,
    region: &[usize],
    buchi: &[bool],
    reward: &[Vec<f64>],
    steps: u64,
    seed: u64,
) -> RunStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = draw_start(region, seed);
    let mut st = RunStats::default();
    let mut probs = Vec::new();
    for t in 0..steps {
        if buchi[q] {
            st.buchi_visits += 1;
        }
        let (ua, us) = step_uniforms(&mut rng, t);
        let a = sample_weights(policy.weights(q), ua);
        let succ = mdp.successors(q, a);
        probs.clear();
        probs.extend(succ.iter().map(|s| s.1));
        st.reward_sum += reward[q][a];
        st.steps += 1;
        q = succ[sample_weights(&probs, us)].0;
    }
    st
}

fn record(prep: &Prepared, method: Method, gamma: f64, theta: f64, steps: u64, seed: u64, st: &RunStats) -> MetricsRecord {
    let avg = st.avg_reward();
    MetricsRecord {
        instance_id: prep.id().to_string(),
        category: prep.solved.instance.category.to_string(),
        size: prep.solved.instance.size,
        gamma,
        theta,
        steps,
        seed,
        buchi_freq: st.buchi_freq(),
        avg_reward: avg,
        max_avg_reward: prep.solved.max_avg_reward,
        reward_gap: prep.solved.max_avg_reward - avg,
        method,
        unsafe_samples: st.unsafe_samples,
        colive_violations: st.colive_violations,
        live_violations: st.live_violations,
    }
}

/// Maps over sweep cells, in parallel when the `parallel` feature is on.
fn map_cells<T, F>(cells: &[(usize, f64, u64)], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&(usize, f64, u64)) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return cells.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    cells.iter().map(f).collect()
}

/// All (instance, gamma, seed) runs, in that order. A failing cell yields an
/// error entry and the sweep goes on.
pub fn sweep_gamma(
    preps: &[Prepared],
    gammas: &[f64],
    theta: f64,
    steps: u64,
    seeds: &[u64],
) -> Vec<Result<MetricsRecord, EvalError>> {
    let cells: Vec<(usize, f64, u64)> = (0..preps.len())
        .flat_map(|i| gammas.iter().flat_map(move |&g| seeds.iter().map(move |&s| (i, g, s))))
        .collect();
    map_cells(&cells, |&(i, gamma, seed)| {
        let prep = &preps[i];
        let st = run_stars(prep, ShieldParams::new(gamma, theta), steps, run_seed(prep.id(), seed))?;
        Ok(record(prep, Method::Stars, gamma, theta, steps, seed, &st))
    })
}

/// Baseline runs over (instance, p_mix, seed).
pub fn sweep_naive(preps: &[Prepared], pmix: &[f64], steps: u64, seeds: &[u64]) -> Vec<Result<MetricsRecord, EvalError>> {
    let cells: Vec<(usize, f64, u64)> = (0..preps.len())
        .flat_map(|i| pmix.iter().flat_map(move |&p| seeds.iter().map(move |&s| (i, p, s))))
        .collect();
    map_cells(&cells, |&(i, p, seed)| {
        let prep = &preps[i];
        let policy = naive_shield(&prep.mdp, &prep.policy, p, &prep.template)?;
        let st = run_policy(
            &prep.mdp,
            &policy,
            &prep.template.winning_region,
            &prep.buchi,
            prep.reward(),
            steps,
            run_seed(prep.id(), seed),
        );
        Ok(record(prep, Method::Naive, p, 0.0, steps, seed, &st))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub eps: f64,
    pub stars_runs: usize,
    pub naive_runs: usize,
    /// `None` marks an empty bucket.
    pub stars_mean: Option<f64>,
    pub naive_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub buckets: Vec<Bucket>,
    pub stars_max: f64,
    pub naive_max: f64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean Büchi frequency per method among runs with reward gap at most `eps`,
/// plus each method's largest frequency over its grid (mean over runs at
/// each grid value, then the best value).
pub fn bucket_compare(stars: &[MetricsRecord], naive: &[MetricsRecord], eps_grid: &[f64]) -> Comparison {
    let within = |rs: &[MetricsRecord], eps: f64| -> Vec<f64> {
        rs.iter().filter(|r| r.reward_gap <= eps).map(|r| r.buchi_freq).collect()
    };
    let buckets = eps_grid
        .iter()
        .map(|&eps| {
            let s = within(stars, eps);
            let n = within(naive, eps);
            Bucket {
                eps,
                stars_runs: s.len(),
                naive_runs: n.len(),
                stars_mean: mean(&s),
                naive_mean: mean(&n),
            }
        })
        .collect();
    Comparison {
        buckets,
        stars_max: best_grid_mean(stars),
        naive_max: best_grid_mean(naive),
    }
}

fn best_grid_mean(rs: &[MetricsRecord]) -> f64 {
    let mut values: Vec<f64> = rs.iter().map(|r| r.gamma).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .iter()
        .filter_map(|&v| {
            let xs: Vec<f64> = rs.iter().filter(|r| r.gamma == v).map(|r| r.buchi_freq).collect();
            mean(&xs)
        })
        .fold(0.0, f64::max)
}

/// Runs both methods on the same instances and seeds and buckets the results.
pub fn compare_naive(
    preps: &[Prepared],
    gammas: &[f64],
    theta: f64,
    pmix: &[f64],
    eps_grid: &[f64],
    steps: u64,
    seeds: &[u64],
) -> Result<(Comparison, Vec<MetricsRecord>, Vec<MetricsRecord>), EvalError> {
    let stars: Vec<MetricsRecord> = sweep_gamma(preps, gammas, theta, steps, seeds)
        .into_iter()
        .collect::<Result<_, _>>()?;
    let naive: Vec<MetricsRecord> = sweep_naive(preps, pmix, steps, seeds).into_iter().collect::<Result<_, _>>()?;
    Ok((bucket_compare(&stars, &naive, eps_grid), stars, naive))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// One-sided p-value for "positive differences are more likely".
    pub p_value: f64,
}

pub fn sign_test(diffs: impl IntoIterator<Item = f64>) -> SignTest {
    let (mut pos, mut neg, mut ties) = (0, 0, 0);
    for d in diffs {
        if d > 0.0 {
            pos += 1;
        } else if d < 0.0 {
            neg += 1;
        } else {
            ties += 1;
        }
    }
    let n = (pos + neg) as u64;
    let p_value = if n == 0 || pos == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, n).expect("valid binomial");
        b.sf(pos as u64 - 1)
    };
    SignTest {
        positive: pos,
        negative: neg,
        ties,
        p_value,
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
