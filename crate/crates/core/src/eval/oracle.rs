//! Exhaustive checks over pure memoryless strategies, for small graphs.

use thiserror::Error;

use crate::game::{GameGraph, Mode};
use crate::mdp::Edge;
use crate::synth::StrategyTemplate;

/// Refuse to enumerate more strategies than this.
pub const MAX_STRATEGIES: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("enumeration too large ({0} cases)")]
    TooLarge(u64),
}

fn strategy_count(g: &GameGraph) -> Result<u64, OracleError> {
    let mut total: u64 = 1;
    for q in 0..g.num_states() {
        total = total.saturating_mul(g.num_actions(q) as u64);
    }
    if total > MAX_STRATEGIES || g.num_states() > 16 {
        return Err(OracleError::TooLarge(total));
    }
    Ok(total)
}

/// All pure memoryless system strategies as action vectors.
fn strategies(g: &GameGraph) -> Result<Vec<Vec<usize>>, OracleError> {
    strategy_count(g)?;
    let mut out = vec![Vec::new()];
    for q in 0..g.num_states() {
        out = out
            .into_iter()
            .flat_map(|s: Vec<usize>| {
                (0..g.num_actions(q)).map(move |a| {
                    let mut t = s.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    Ok(out)
}

/// Successor bitmasks of the one-player graph fixed by `sigma`.
fn adjacency(g: &GameGraph, sigma: &[usize]) -> Vec<u32> {
    (0..g.num_states())
        .map(|q| {
            g.edge_succ(Edge::new(q, sigma[q]))
                .iter()
                .fold(0u32, |m, &s| m | 1 << s)
        })
        .collect()
}

fn image(adj: &[u32], set: u32) -> u32 {
    let mut out = 0;
    let mut rest = set;
    while rest != 0 {
        let s = rest.trailing_zeros() as usize;
        out |= adj[s];
        rest &= rest - 1;
    }
    out
}

/// States reachable from `from` (inclusive) within `allowed`.
fn reach(adj: &[u32], from: u32, allowed: u32) -> u32 {
    let mut seen = from & allowed;
    loop {
        let next = seen | (image(adj, seen) & allowed);
        if next == seen {
            return seen;
        }
        seen = next;
    }
}

/// Nonempty `c` such that every state reaches every other, by at least one
/// step, without leaving `c`.
fn strongly_connected(adj: &[u32], c: u32) -> bool {
    let mut rest = c;
    while rest != 0 {
        let s = rest.trailing_zeros() as usize;
        if reach(adj, adj[s] & c, c) != c {
            return false;
        }
        rest &= rest - 1;
    }
    c != 0
}

fn bottom_sccs(adj: &[u32], from: u32) -> Vec<u32> {
    let n = adj.len();
    let all = (1u32 << n) - 1;
    let reachable = reach(adj, from, all);
    let mut out = Vec::new();
    let mut done = 0u32;
    for s in 0..n {
        let bit = 1 << s;
        if reachable & bit == 0 || done & bit != 0 {
            continue;
        }
        let fwd = reach(adj, bit, all);
        // s sits in a bottom component iff everything it reaches reaches back
        let bottom = (0..n).filter(|t| fwd & (1 << t) != 0).all(|t| reach(adj, 1 << t, all) & bit != 0);
        if bottom {
            out.push(fwd);
            done |= fwd;
        }
    }
    out
}

fn max_color(colors: &[u32], set: u32) -> u32 {
    (0..colors.len())
        .filter(|&q| set & (1 << q) != 0)
        .map(|q| colors[q])
        .max()
        .unwrap_or(0)
}

fn wins_from(g: &GameGraph, colors: &[u32], adj: &[u32], q: usize) -> bool {
    let n = g.num_states();
    let all = (1u32 << n) - 1;
    match g.mode() {
        Mode::Sure => {
            let r = reach(adj, 1 << q, all);
            // every run from q loops in some strongly connected set
            subsets(r).all(|c| !strongly_connected(adj, c) || max_color(colors, c) % 2 == 0)
        }
        Mode::AlmostSure => bottom_sccs(adj, 1 << q)
            .into_iter()
            .all(|b| max_color(colors, b) % 2 == 0),
    }
}

fn subsets(mask: u32) -> impl Iterator<Item = u32> {
    // all nonempty submasks, descending
    let mut cur = mask;
    let mut done = mask == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = cur;
        if cur == 0 {
            done = true;
            return None;
        }
        cur = (cur - 1) & mask;
        if cur == 0 {
            done = true;
        }
        Some(out)
    })
}

/// Winning region by enumeration of pure memoryless system strategies.
pub fn brute_winning_region(g: &GameGraph, colors: &[u32]) -> Result<Vec<usize>, OracleError> {
    let n = g.num_states();
    let mut won = vec![false; n];
    for sigma in strategies(g)? {
        let adj = adjacency(g, &sigma);
        for q in 0..n {
            if !won[q] && wins_from(g, colors, &adj, q) {
                won[q] = true;
            }
        }
    }
    Ok((0..n).filter(|&q| won[q]).collect())
}

struct TemplateMasks {
    unsafe_at: Vec<u32>,
    colive_at: Vec<u32>,
    /// per group: source states, and per state the group's actions there
    groups: Vec<(u32, Vec<u32>)>,
}

impl TemplateMasks {
    fn new(g: &GameGraph, t: &StrategyTemplate) -> Self {
        let n = g.num_states();
        let mut unsafe_at = vec![0u32; n];
        let mut colive_at = vec![0u32; n];
        for e in &t.unsafe_edges {
            unsafe_at[e.state] |= 1 << e.action;
        }
        for e in &t.colive {
            colive_at[e.state] |= 1 << e.action;
        }
        let groups = t
            .live_groups
            .iter()
            .map(|h| {
                let mut per = vec![0u32; n];
                let mut src = 0u32;
                for e in h {
                    per[e.state] |= 1 << e.action;
                    src |= 1 << e.state;
                }
                (src, per)
            })
            .collect();
        TemplateMasks {
            unsafe_at,
            colive_at,
            groups,
        }
    }

    fn uses(at: &[u32], sigma: &[usize], q: usize) -> bool {
        at[q] & (1 << sigma[q]) != 0
    }

    /// A run looping forever in `c` satisfies the co-live and live parts.
    fn loop_ok(&self, sigma: &[usize], c: u32) -> bool {
        let states = || (0..sigma.len()).filter(move |&q| c & (1 << q) != 0);
        if states().any(|q| Self::uses(&self.colive_at, sigma, q)) {
            return false;
        }
        self.groups
            .iter()
            .all(|(src, per)| src & c == 0 || states().any(|q| Self::uses(per, sigma, q)))
    }

    /// No unsafe edge is taken on any run from `q`.
    fn safe_from(&self, adj: &[u32], sigma: &[usize], q: usize) -> bool {
        let n = sigma.len();
        let r = reach(adj, 1 << q, (1u32 << n) - 1);
        (0..n).all(|s| r & (1 << s) == 0 || !Self::uses(&self.unsafe_at, sigma, s))
    }
}

/// Checks that every run following the template from the winning region
/// wins: in sure mode for every run, in almost-sure mode for the bottom
/// components a memoryless strategy ends up in. Returns the number of
/// strategies that follow the template from every winning state.
pub fn check_template_soundness(
    g: &GameGraph,
    colors: &[u32],
    t: &StrategyTemplate,
) -> Result<Result<u64, String>, OracleError> {
    let n = g.num_states();
    let all = (1u32 << n) - 1;
    let masks = TemplateMasks::new(g, t);
    let mut followers = 0;
    for sigma in strategies(g)? {
        let adj = adjacency(g, &sigma);
        let mut follows_everywhere = true;
        for &q in &t.winning_region {
            if !masks.safe_from(&adj, &sigma, q) {
                follows_everywhere = false;
                continue;
            }
            let r = reach(&adj, 1 << q, all);
            match g.mode() {
                Mode::Sure => {
                    for c in subsets(r) {
                        if !strongly_connected(&adj, c) {
                            continue;
                        }
                        let ok = masks.loop_ok(&sigma, c);
                        follows_everywhere &= ok;
                        if ok && max_color(colors, c) % 2 == 1 {
                            return Ok(Err(format!(
                                "strategy {sigma:?} follows the template from {q} but loops in {c:#b} with odd color"
                            )));
                        }
                    }
                }
                Mode::AlmostSure => {
                    for b in bottom_sccs(&adj, 1 << q) {
                        let ok = masks.loop_ok(&sigma, b);
                        follows_everywhere &= ok;
                        if ok && max_color(colors, b) % 2 == 1 {
                            return Ok(Err(format!(
                                "strategy {sigma:?} follows the template from {q} but ends in {b:#b} with odd color"
                            )));
                        }
                    }
                }
            }
        }
        if follows_everywhere {
            followers += 1;
        }
    }
    Ok(Ok(followers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_enumerates_all() {
        assert_eq!(subsets(0b101).collect::<Vec<_>>(), vec![0b101, 0b100, 0b001]);
        assert_eq!(subsets(0).count(), 0);
    }

    #[test]
    fn brute_region_of_branching_graph() {
        let succ = vec![vec![vec![0, 1]], vec![vec![0]]];
        let sure = GameGraph::from_successors(&succ, Mode::Sure);
        assert_eq!(brute_winning_region(&sure, &[1, 2]).unwrap(), Vec::<usize>::new());
        let almost = sure.with_mode(Mode::AlmostSure);
        assert_eq!(brute_winning_region(&almost, &[1, 2]).unwrap(), vec![0, 1]);
    }
}
