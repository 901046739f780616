//! Seeded grid-world benchmark: instance generation, MDP construction,
//! average-reward nominal policies and the uniform-perturbation baseline.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, Mdp, MdpError};
use crate::sim::TabularPolicy;
use crate::synth::StrategyTemplate;

pub const MIN_SIZE: usize = 5;
pub const MAX_SIZE: usize = 13;
pub const WALL_DENSITY: f64 = 0.15;
pub const MAX_ATTEMPTS: usize = 10_000;
pub const DEFAULT_SOFTENING: f64 = 0.01;

const RVI_TOLERANCE: f64 = 1e-8;
const RVI_MAX_SWEEPS: usize = 1_000_000;
const APERIODICITY: f64 = 0.5;
const TIE: f64 = 1e-9;

/// `(x, y)`, with `y` growing downwards.
pub type Cell = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size {0} outside [5, 13]")]
    BadSize(usize),
    #[error("no valid instance after {attempts} attempts (seed {seed})")]
    GenerationExhausted { seed: u64, attempts: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("value iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("softening {0} outside (0, 1/max_degree)")]
    BadSoftening(f64),
    #[error("mixing weight {0} outside [0, 1]")]
    BadMix(f64),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Far,
    Close,
}

impl Category {
    /// Allowed reward-to-target distance as fractions of the grid size.
    pub fn distance_fractions(self) -> (f64, f64) {
        match self {
            Category::Far => (0.7, 0.9),
            Category::Close => (0.1, 0.2),
        }
    }

    /// Integer distance bounds for a grid of `size`.
    pub fn distance_bounds(self, size: usize) -> (usize, usize) {
        let (lo, hi) = self.distance_fractions();
        ((lo * size as f64).ceil() as usize, (hi * size as f64).floor() as usize)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Far => "far",
            Category::Close => "close",
        })
    }
}

impl FromStr for Category {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, GridError> {
        match s.to_ascii_lowercase().as_str() {
            "far" => Ok(Category::Far),
            "close" => Ok(Category::Close),
            other => Err(GridError::Invalid(format!("unknown category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridInstance {
    pub size: usize,
    pub walls: BTreeSet<Cell>,
    pub buchi: BTreeSet<Cell>,
    pub rewards: BTreeMap<Cell, f64>,
    pub slip: f64,
    pub category: Category,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    size: usize,
    walls: Vec<[usize; 2]>,
    buchi: Vec<[usize; 2]>,
    rewards: Vec<(usize, usize, f64)>,
    slip: f64,
    category: Category,
    seed: u64,
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

fn neighbors(size: usize, (x, y): Cell) -> impl Iterator<Item = Cell> {
    let moves = [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)];
    moves.into_iter().filter_map(move |(dx, dy)| {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < size && (ny as usize) < size).then_some((nx as usize, ny as usize))
    })
}

impl GridInstance {
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size).flat_map(move |y| (0..self.size).map(move |x| (x, y)))
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        self.cells().filter(|c| !self.walls.contains(c)).collect()
    }

    pub fn reward(&self, c: Cell) -> f64 {
        self.rewards.get(&c).copied().unwrap_or(0.0)
    }

    /// Cells with positive reward.
    pub fn reward_cells(&self) -> Vec<Cell> {
        self.rewards.iter().filter(|(_, &v)| v > 0.0).map(|(&c, _)| c).collect()
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.0 < self.size && c.1 < self.size && !self.walls.contains(&c)
    }

    /// Whether every free cell reaches every other.
    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&start) = free.first() else {
            return false;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for n in neighbors(self.size, c) {
                if self.is_free(n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.len() == free.len()
    }

    /// Structural checks needed to build an MDP.
    pub fn check_structure(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::Invalid(m.to_string()));
        if !(0.0..1.0).contains(&self.slip) {
            return bad("slip outside [0, 1)");
        }
        let in_grid = |c: &Cell| c.0 < self.size && c.1 < self.size;
        if !self.walls.iter().all(in_grid) || !self.buchi.iter().all(in_grid) || !self.rewards.keys().all(in_grid) {
            return bad("cell outside the grid");
        }
        if self.buchi.is_empty() {
            return bad("empty target region");
        }
        if self.buchi.iter().any(|c| self.walls.contains(c)) || self.rewards.keys().any(|c| self.walls.contains(c)) {
            return bad("wall overlaps a region");
        }
        if self.rewards.values().any(|&v| !(v >= 0.0)) {
            return bad("negative reward");
        }
        if !self.is_connected() {
            return bad("free cells are not connected");
        }
        Ok(())
    }

    /// Full benchmark validity, including the placement rule.
    pub fn validate(&self) -> Result<(), GridError> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&self.size) {
            return Err(GridError::BadSize(self.size));
        }
        self.check_structure()?;
        let r = self.reward_cells();
        if r.is_empty() {
            return Err(GridError::Invalid("no reward cell".into()));
        }
        if r.iter().any(|c| self.buchi.contains(c)) {
            return Err(GridError::Invalid("reward cell inside the target region".into()));
        }
        let (lo, hi) = self.category.distance_bounds(self.size);
        for &rc in &r {
            for &bc in &self.buchi {
                let d = manhattan(rc, bc);
                if d < lo || d > hi {
                    return Err(GridError::Invalid(format!(
                        "reward cell {rc:?} at distance {d} from {bc:?}, outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let cells = |s: &BTreeSet<Cell>| s.iter().map(|&(x, y)| [x, y]).collect();
        let j = InstanceJson {
            size: self.size,
            walls: cells(&self.walls),
            buchi: cells(&self.buchi),
            rewards: self.rewards.iter().map(|(&(x, y), &v)| (x, y, v)).collect(),
            slip: self.slip,
            category: self.category,
            seed: self.seed,
        };
        serde_json::to_string(&j).expect("instance serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, GridError> {
        let j: InstanceJson = serde_json::from_str(s).map_err(|e| GridError::Invalid(e.to_string()))?;
        let cells = |v: Vec<[usize; 2]>| v.into_iter().map(|[x, y]| (x, y)).collect();
        let inst = GridInstance {
            size: j.size,
            walls: cells(j.walls),
            buchi: cells(j.buchi),
            rewards: j.rewards.into_iter().map(|(x, y, v)| ((x, y), v)).collect(),
            slip: j.slip,
            category: j.category,
            seed: j.seed,
        };
        inst.check_structure()?;
        Ok(inst)
    }
}

/// Grows a contiguous blob of `k` cells from `start` among `allowed`.
fn grow_blob(rng: &mut ChaCha8Rng, size: usize, start: Cell, k: usize, allowed: impl Fn(Cell) -> bool) -> BTreeSet<Cell> {
    let mut blob = BTreeSet::from([start]);
    while blob.len() < k {
        let frontier: Vec<Cell> = blob
            .iter()
            .flat_map(|&c| neighbors(size, c))
            .filter(|&n| allowed(n) && !blob.contains(&n))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match frontier.choose(rng) {
            Some(&n) => {
                blob.insert(n);
            }
            None => break,
        }
    }
    blob
}

/// Rejection-samples an instance: 15% walls, a target region of 1 to 3
/// contiguous cells, and a reward region of 1 to 3 contiguous cells whose
/// distance to every target cell satisfies the category's rule.
pub fn generate_instance(size: usize, category: Category, seed: u64) -> Result<GridInstance, GridError> {
    if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
        return Err(GridError::BadSize(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_walls = (WALL_DENSITY * (size * size) as f64).round() as usize;
    let (lo, hi) = category.distance_bounds(size);
    let all: Vec<Cell> = (0..size).flat_map(|y| (0..size).map(move |x| (x, y))).collect();
    for _ in 0..MAX_ATTEMPTS {
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut rng);
        let mut inst = GridInstance {
            size,
            walls: shuffled[..n_walls].iter().copied().collect(),
            buchi: BTreeSet::new(),
            rewards: BTreeMap::new(),
            slip: 0.0,
            category,
            seed,
        };
        if !inst.is_connected() {
            continue;
        }
        let free = inst.free_cells();
        let b_start = *free.choose(&mut rng).expect("connected grid has cells");
        let b_size = rng.gen_range(1..=3);
        let buchi = grow_blob(&mut rng, size, b_start, b_size, |c| inst.is_free(c));
        let eligible: BTreeSet<Cell> = free
            .iter()
            .copied()
            .filter(|c| !buchi.contains(c))
            .filter(|&c| buchi.iter().all(|&b| (lo..=hi).contains(&manhattan(c, b))))
            .collect();
        let pool: Vec<Cell> = eligible.iter().copied().collect();
        let Some(&r_start) = pool.choose(&mut rng) else {
            continue;
        };
        let r_size = rng.gen_range(1..=3);
        let reward = grow_blob(&mut rng, size, r_start, r_size, |c| eligible.contains(&c));
        inst.buchi = buchi;
        inst.rewards = reward.into_iter().map(|c| (c, 1.0)).collect();
        debug_assert!(inst.validate().is_ok());
        return Ok(inst);
    }
    Err(GridError::GenerationExhausted {
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

pub const MOVES: [(&str, i64, i64); 4] = [("up", 0, -1), ("down", 0, 1), ("left", -1, 0), ("right", 1, 0)];

/// An MDP built from a grid, with the cell of each state and the reward of
/// each state-action pair.
#[derive(Debug, Clone)]
pub struct GridMdp {
    pub mdp: Mdp,
    pub cells: Vec<Cell>,
    pub reward: Vec<Vec<f64>>,
    index: BTreeMap<Cell, usize>,
}

impl GridMdp {
    pub fn state_of(&self, c: Cell) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn states_of(&self, cells: &BTreeSet<Cell>) -> Vec<usize> {
        cells.iter().filter_map(|&c| self.state_of(c)).collect()
    }
}

pub fn cell_name((x, y): Cell) -> String {
    format!("{x},{y}")
}

fn step(inst: &GridInstance, (x, y): Cell, dx: i64, dy: i64) -> Option<Cell> {
    let nx = x as i64 + dx;
    let ny = y as i64 + dy;
    if nx < 0 || ny < 0 {
        return None;
    }
    let c = (nx as usize, ny as usize);
    inst.is_free(c).then_some(c)
}

/// States are free cells in row-major order, named `"x,y"`. Moves into walls
/// or off the grid are not actions. A slipping move goes to each lateral
/// neighbour with probability `slip/2`; illegal laterals are dropped and the
/// rest renormalized.
pub fn grid_to_mdp(inst: &GridInstance) -> Result<GridMdp, GridError> {
    inst.check_structure()?;
    let cells = inst.free_cells();
    let index: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut actions = Vec::with_capacity(cells.len());
    let mut reward = Vec::with_capacity(cells.len());
    for &c in &cells {
        let mut acts = Vec::new();
        let mut rew = Vec::new();
        for (name, dx, dy) in MOVES {
            let Some(target) = step(inst, c, dx, dy) else {
                continue;
            };
            let mut succ = vec![(index[&target], 1.0 - inst.slip)];
            if inst.slip > 0.0 {
                for (lx, ly) in [(dy, dx), (-dy, -dx)] {
                    if let Some(l) = step(inst, c, lx, ly) {
                        succ.push((index[&l], inst.slip / 2.0));
                    }
                }
            }
            let total: f64 = succ.iter().map(|s| s.1).sum();
            for s in &mut succ {
                s.1 /= total;
            }
            acts.push(Action {
                name: name.to_string(),
                successors: succ,
            });
            rew.push(inst.reward(target));
        }
        actions.push(acts);
        reward.push(rew);
    }
    let names = cells.iter().map(|&c| cell_name(c)).collect();
    let initial = inst.buchi.iter().next().map_or(0, |c| index[c]);
    let mdp = Mdp::new(names, actions, initial)?;
    Ok(GridMdp {
        mdp,
        cells,
        reward,
        index,
    })
}

#[derive(Debug, Clone)]
pub struct AvgRewardSolution {
    pub gain: f64,
    /// Deterministic optimizer, one action per state.
    pub argmax: Vec<usize>,
    pub bias: Vec<f64>,
    pub sweeps: usize,
}

/// Relative value iteration on the aperiodic transform
/// `tau * I + (1 - tau) * P`, stopped when the span of the update is below
/// 1e-8. Ties in the greedy action go to the lowest action index.
pub fn relative_value_iteration(mdp: &Mdp, reward: &[Vec<f64>]) -> Result<AvgRewardSolution, GridError> {
    let n = mdp.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let q_value = |h: &[f64], q: usize, a: usize| {
        let exp: f64 = mdp.successors(q, a).iter().map(|&(s, p)| p * h[s]).sum();
        reward[q][a] + APERIODICITY * h[q] + (1.0 - APERIODICITY) * exp
    };
    for sweep in 1..=RVI_MAX_SWEEPS {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for q in 0..n {
            let best = (0..mdp.num_actions(q)).map(|a| q_value(&h, q, a)).fold(f64::NEG_INFINITY, f64::max);
            next[q] = best;
            let d = best - h[q];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let anchor = next[0];
        for q in 0..n {
            h[q] = next[q] - anchor;
        }
        if hi - lo < RVI_TOLERANCE {
            let argmax = (0..n)
                .map(|q| {
                    let vals: Vec<f64> = (0..mdp.num_actions(q)).map(|a| q_value(&h, q, a)).collect();
                    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    vals.iter().position(|&v| v >= best - TIE).expect("nonempty")
                })
                .collect();
            return Ok(AvgRewardSolution {
                gain: (lo + hi) / 2.0,
                argmax,
                bias: h,
                sweeps: sweep,
            });
        }
    }
    Err(GridError::NoConvergence(RVI_MAX_SWEEPS))
}

/// Puts `1 - eps*(|A(q)|-1)` on the chosen action and `eps` on the others.
pub fn soften(mdp: &Mdp, argmax: &[usize], eps: f64) -> Result<TabularPolicy, GridError> {
    let weights = (0..mdp.num_states())
        .map(|q| {
            let k = mdp.num_actions(q);
            let mut w = vec![eps; k];
            w[argmax[q]] = 1.0 - eps * (k as f64 - 1.0);
            w
        })
        .collect();
    TabularPolicy::new(mdp, weights).map_err(|e| GridError::Invalid(e.to_string()))
}

/// Optimal gain and the softened optimal policy. `eps = 0` yields the
/// deterministic optimizer.
pub fn solve_avg_reward_policy(mdp: &Mdp, reward: &[Vec<f64>], eps: f64) -> Result<(TabularPolicy, f64), GridError> {
    if !(eps >= 0.0 && eps * mdp.max_degree() as f64 <= 1.0 && (eps == 0.0 || eps * (mdp.max_degree() as f64) < 1.0)) {
        return Err(GridError::BadSoftening(eps));
    }
    let sol = relative_value_iteration(mdp, reward)?;
    Ok((soften(mdp, &sol.argmax, eps)?, sol.gain))
}

/// Largest achievable long-run average reward on the instance.
pub fn max_avg_reward(inst: &GridInstance) -> Result<f64, GridError> {
    let gm = grid_to_mdp(inst)?;
    Ok(relative_value_iteration(&gm.mdp, &gm.reward)?.gain)
}

/// The perturbation baseline: mixes the policy with the uniform distribution
/// over actions the template does not mark unsafe.
pub fn naive_shield(
    mdp: &Mdp,
    policy: &TabularPolicy,
    p_mix: f64,
    template: &StrategyTemplate,
) -> Result<TabularPolicy, GridError> {
    if !(0.0..=1.0).contains(&p_mix) {
        return Err(GridError::BadMix(p_mix));
    }
    let weights = (0..mdp.num_states())
        .map(|q| {
            let k = mdp.num_actions(q);
            let safe: Vec<bool> = (0..k)
                .map(|a| !template.unsafe_edges.contains(&crate::mdp::Edge::new(q, a)))
                .collect();
            let n_safe = safe.iter().filter(|&&s| s).count();
            let sigma = &policy.all_weights()[q];
            (0..k)
                .map(|a| {
                    let u = if n_safe == 0 {
                        1.0 / k as f64
                    } else if safe[a] {
                        1.0 / n_safe as f64
                    } else {
                        0.0
                    };
                    (1.0 - p_mix) * sigma[a] + p_mix * u
                })
                .collect()
        })
        .collect();
    TabularPolicy::new(mdp, weights).map_err(|e| GridError::Invalid(e.to_string()))
}

/// A generated instance together with its MDP, nominal policy and optimum.
#[derive(Debug, Clone)]
pub struct SolvedInstance {
    pub id: String,
    pub instance: GridInstance,
    pub grid: GridMdp,
    pub policy: TabularPolicy,
    pub max_avg_reward: f64,
}

impl SolvedInstance {
    pub fn new(id: impl Into<String>, instance: GridInstance, eps: f64) -> Result<Self, GridError> {
        let grid = grid_to_mdp(&instance)?;
        let sol = relative_value_iteration(&grid.mdp, &grid.reward)?;
        let policy = soften(&grid.mdp, &sol.argmax, eps)?;
        Ok(SolvedInstance {
            id: id.into(),
            instance,
            grid,
            policy,
            max_avg_reward: sol.gain,
        })
    }

    pub fn buchi_states(&self) -> Vec<usize> {
        self.grid.states_of(&self.instance.buchi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(rewards: &[f64]) -> GridInstance {
        // a 5x5 grid walled off except for the top row prefix
        let len = rewards.len();
        let size = 5;
        let walls = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .filter(|&(x, y)| y > 0 || x >= len)
            .collect();
        GridInstance {
            size,
            walls,
            buchi: BTreeSet::from([(0, 0)]),
            rewards: rewards.iter().enumerate().map(|(x, &v)| ((x, 0), v)).collect(),
            slip: 0.0,
            category: Category::Close,
            seed: 0,
        }
    }

    #[test]
    fn bounds_round_inwards() {
        assert_eq!(Category::Far.distance_bounds(5), (4, 4));
        assert_eq!(Category::Close.distance_bounds(5), (1, 1));
        assert_eq!(Category::Close.distance_bounds(10), (1, 2));
        assert_eq!(Category::Far.distance_bounds(13), (10, 11));
    }

    #[test]
    fn generated_instances_satisfy_placement() {
        for size in MIN_SIZE..=MAX_SIZE {
            for cat in [Category::Far, Category::Close] {
                for seed in 0..4 {
                    let inst = generate_instance(size, cat, seed).unwrap();
                    inst.validate().unwrap();
                    assert_eq!(inst.walls.len(), (0.15 * (size * size) as f64).round() as usize);
                    assert!((1..=3).contains(&inst.buchi.len()));
                }
            }
        }
    }

    #[test]
    fn small_close_instance_distances() {
        let inst = generate_instance(5, Category::Close, 1).unwrap();
        for r in inst.reward_cells() {
            for &b in &inst.buchi {
                assert!((1..=2).contains(&manhattan(r, b)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(7, Category::Far, 11).unwrap();
        let b = generate_instance(7, Category::Far, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_instance(7, Category::Far, 12).unwrap());
    }

    #[test]
    fn size_precondition() {
        assert_eq!(generate_instance(4, Category::Far, 0), Err(GridError::BadSize(4)));
        assert_eq!(generate_instance(14, Category::Far, 0), Err(GridError::BadSize(14)));
    }

    #[test]
    fn json_round_trip() {
        let inst = generate_instance(6, Category::Close, 3).unwrap();
        let s = inst.to_json_string();
        assert!(s.starts_with("{\"size\":6,\"walls\":[["));
        assert!(s.contains("\"category\":\"close\""));
        assert_eq!(GridInstance::from_json_str(&s).unwrap(), inst);
    }

    #[test]
    fn deterministic_without_slip() {
        let inst = generate_instance(6, Category::Far, 0).unwrap();
        let gm = grid_to_mdp(&inst).unwrap();
        assert!(gm.mdp.is_deterministic());
        assert_eq!(gm.mdp.num_states(), 36 - inst.walls.len());
    }

    #[test]
    fn corner_has_two_actions() {
        let inst = GridInstance {
            size: 5,
            walls: BTreeSet::new(),
            buchi: BTreeSet::from([(2, 2)]),
            rewards: BTreeMap::new(),
            slip: 0.0,
            category: Category::Far,
            seed: 0,
        };
        let gm = grid_to_mdp(&inst).unwrap();
        let q = gm.state_of((0, 0)).unwrap();
        assert_eq!(gm.mdp.num_actions(q), 2);
        assert_eq!(gm.mdp.state_name(q), "0,0");
        assert_eq!(gm.mdp.state_name(gm.state_of((4, 0)).unwrap()), "4,0");
        assert_eq!(gm.state_of((4, 0)), Some(4));
    }

    #[test]
    fn slip_splits_laterally() {
        let mut inst = GridInstance {
            size: 5,
            walls: BTreeSet::new(),
            buchi: BTreeSet::from([(0, 0)]),
            rewards: BTreeMap::from([((2, 1), 1.0)]),
            slip: 0.2,
            category: Category::Far,
            seed: 0,
        };
        let gm = grid_to_mdp(&inst).unwrap();
        let q = gm.state_of((2, 2)).unwrap();
        let up = gm.mdp.action_by_name(q, "up").unwrap();
        let mut probs: Vec<(String, f64)> = gm
            .mdp
            .successors(q, up)
            .iter()
            .map(|&(s, p)| (gm.mdp.state_name(s).to_string(), p))
            .collect();
        probs.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(probs.len(), 3);
        assert_eq!(probs[0].0, "1,2");
        assert!((probs[0].1 - 0.1).abs() < 1e-12);
        assert_eq!(probs[1].0, "2,1");
        assert!((probs[1].1 - 0.8).abs() < 1e-12);
        assert!((probs[2].1 - 0.1).abs() < 1e-12);
        assert_eq!(gm.reward[q][up], 1.0);
        // at the left border a lateral slip of "up" is dropped and renormalized
        inst.walls.clear();
        let gm = grid_to_mdp(&inst).unwrap();
        let q = gm.state_of((0, 2)).unwrap();
        let up = gm.mdp.action_by_name(q, "up").unwrap();
        let p: Vec<f64> = gm.mdp.successors(q, up).iter().map(|s| s.1).collect();
        assert_eq!(p.len(), 2);
        assert!((p[0] - 0.8 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_cell_gain() {
        let mdp = Mdp::new(
            vec!["c".into()],
            vec![vec![Action {
                name: "stay".into(),
                successors: vec![(0, 1.0)],
            }]],
            0,
        )
        .unwrap();
        let (_, g) = solve_avg_reward_policy(&mdp, &[vec![1.0]], 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-8);
    }

    #[test]
    fn corridor_gain_sits_on_best_cell() {
        // a two-cell corridor can only bounce, so the gain is the mean of both
        let two = corridor(&[0.0, 1.0]);
        assert!((max_avg_reward(&two).unwrap() - 0.5).abs() < 1e-7);
        // with three cells the agent oscillates between the two rightmost
        let three = corridor(&[0.0, 1.0, 1.0]);
        assert!((max_avg_reward(&three).unwrap() - 1.0).abs() < 1e-7);
        let gm = grid_to_mdp(&three).unwrap();
        let sol = relative_value_iteration(&gm.mdp, &gm.reward).unwrap();
        assert_eq!(gm.mdp.action_name(crate::mdp::Edge::new(0, sol.argmax[0])), "right");
    }

    #[test]
    fn corridor_with_stay_sits_on_reward() {
        let act = |name: &str, to: usize| Action {
            name: name.into(),
            successors: vec![(to, 1.0)],
        };
        let mdp = Mdp::new(
            vec!["a".into(), "b".into()],
            vec![vec![act("stay", 0), act("go", 1)], vec![act("go", 0), act("stay", 1)]],
            0,
        )
        .unwrap();
        let reward = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let sol = relative_value_iteration(&mdp, &reward).unwrap();
        assert!((sol.gain - 1.0).abs() < 1e-8);
        assert_eq!(sol.argmax, vec![1, 1]);
    }

    #[test]
    fn softened_policy_has_full_support() {
        let inst = generate_instance(7, Category::Far, 2).unwrap();
        let gm = grid_to_mdp(&inst).unwrap();
        let (p, _) = solve_avg_reward_policy(&gm.mdp, &gm.reward, DEFAULT_SOFTENING).unwrap();
        let (d, _) = solve_avg_reward_policy(&gm.mdp, &gm.reward, 0.0).unwrap();
        for q in 0..gm.mdp.num_states() {
            let w = &p.all_weights()[q];
            assert!(w.iter().all(|&x| x > 0.0));
            let tv: f64 = w.iter().zip(&d.all_weights()[q]).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv <= DEFAULT_SOFTENING * (gm.mdp.max_degree() as f64 - 1.0) + 1e-12);
        }
        assert!(solve_avg_reward_policy(&gm.mdp, &gm.reward, 0.5).is_err());
    }

    #[test]
    fn naive_mixing_extremes() {
        let inst = generate_instance(5, Category::Far, 4).unwrap();
        let s = SolvedInstance::new("x", inst, DEFAULT_SOFTENING).unwrap();
        let mdp = &s.grid.mdp;
        let mut t = StrategyTemplate::trivial(mdp.num_states());
        assert_eq!(naive_shield(mdp, &s.policy, 0.0, &t).unwrap(), s.policy);
        let q = (0..mdp.num_states()).find(|&q| mdp.num_actions(q) >= 2).unwrap();
        let other = if q == 0 { 1 } else { 0 };
        t.unsafe_edges.insert(crate::mdp::Edge::new(q, 0));
        let u = naive_shield(mdp, &s.policy, 1.0, &t).unwrap();
        let k = mdp.num_actions(q);
        assert_eq!(u.all_weights()[q][0], 0.0);
        assert!((u.all_weights()[q][1] - 1.0 / (k - 1) as f64).abs() < 1e-12);
        let ko = mdp.num_actions(other);
        assert_eq!(u.all_weights()[other], vec![1.0 / ko as f64; ko]);
        assert!(naive_shield(mdp, &s.policy, 1.5, &t).is_err());
    }
}
