//! Transition records, offline collection, pruning and subsampling.

mod io;

use std::fmt;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use io::{load, save, from_text, to_text};

use crate::env::{EnvModel, OracleValue};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
    /// Truncated by the horizon or by pruning; still bootstrapped.
    pub timeout: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Offline,
    Active,
    Mixed,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Offline => "offline",
            Provenance::Active => "active",
            Provenance::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "offline" => Ok(Provenance::Offline),
            "active" => Ok(Provenance::Active),
            "mixed" => Ok(Provenance::Mixed),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// Episodes of transitions plus a free-form processing log.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub provenance: Provenance,
    pub episodes: Vec<Vec<Transition>>,
    /// One line per collection, pruning or merge step.
    pub log: Vec<String>,
}

const WARNING: &str = "warning: ";

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize, provenance: Provenance) -> Self {
        Dataset {
            state_dim,
            action_dim,
            provenance,
            episodes: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_transitions() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    /// Log lines flagged as warnings (for example an empty pruning result).
    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.log.iter().filter_map(|l| l.strip_prefix(WARNING))
    }

    fn warn(&mut self, msg: impl fmt::Display) {
        self.log.push(format!("{WARNING}{msg}"));
    }

    /// Check structural invariants; `r_max` additionally bounds rewards.
    pub fn validate(&self, r_max: Option<f64>) -> Result<()> {
        for (e, ep) in self.episodes.iter().enumerate() {
            if ep.is_empty() {
                return Err(Error::input(format!("episode {e} is empty")));
            }
            for (t, tr) in ep.iter().enumerate() {
                let at = || format!("episode {e}, step {t}");
                if tr.s.len() != self.state_dim || tr.s2.len() != self.state_dim || tr.a.len() != self.action_dim {
                    return Err(Error::input(format!("{}: dimension mismatch", at())));
                }
                if tr.done && tr.timeout {
                    return Err(Error::input(format!("{}: done and timeout both set", at())));
                }
                if (tr.done || tr.timeout) && t + 1 != ep.len() {
                    return Err(Error::input(format!("{}: episode continues after its end flag", at())));
                }
                let finite = tr.r.is_finite() && tr.s.iter().chain(&tr.a).chain(&tr.s2).all(|x| x.is_finite());
                if !finite {
                    return Err(Error::input(format!("{}: non-finite value", at())));
                }
                if let Some(r_max) = r_max {
                    if tr.r < 0.0 || tr.r > r_max {
                        return Err(Error::input(format!("{}: reward {} outside [0, {r_max}]", at(), tr.r)));
                    }
                }
                if let Some(next) = ep.get(t + 1) {
                    if next.s != tr.s2 {
                        return Err(Error::input(format!("{}: next state does not continue the trajectory", at())));
                    }
                }
            }
        }
        Ok(())
    }

    /// `D_all = self ∪ other`.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        if self.state_dim != other.state_dim || self.action_dim != other.action_dim {
            return Err(Error::input("cannot merge datasets of different dimensions"));
        }
        let provenance = if self.provenance == other.provenance {
            self.provenance
        } else {
            Provenance::Mixed
        };
        let mut out = self.clone();
        out.provenance = provenance;
        out.episodes.extend(other.episodes.iter().cloned());
        out.log.extend(other.log.iter().cloned());
        out.log.push(format!(
            "merge {} + {} episodes ({} transitions)",
            self.n_episodes(),
            other.n_episodes(),
            out.n_transitions()
        ));
        Ok(out)
    }
}

/// Behaviour policy for offline collection.
#[derive(Clone, Copy, Debug)]
pub enum Behavior<'a> {
    UniformRandom,
    /// Follow the oracle's greedy action, replaced by a uniform random
    /// action with probability `epsilon`.
    NoisyOracle { oracle: &'a OracleValue, epsilon: f64 },
}

/// Where collected episodes start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// The environment's initial distribution ρ.
    #[default]
    Rho,
    /// Uniform over the valid state space.
    Uniform,
}

/// Roll out `n_episodes` episodes, each ending in `done` or at the horizon (as a timeout).
pub fn collect_offline(
    env: &EnvModel,
    behavior: Behavior<'_>,
    n_episodes: usize,
    start: StartMode,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::input("n_episodes must be at least 1"));
    }
    let mut ds = Dataset::new(env.state_dim(), env.action_dim(), Provenance::Offline);
    let horizon = env.horizon();
    for _ in 0..n_episodes {
        let mut s = match start {
            StartMode::Rho => env.sample_initial(rng),
            StartMode::Uniform => env.sample_state(rng),
        };
        let mut ep = Vec::new();
        for t in 0..horizon {
            let a = match behavior {
                Behavior::UniformRandom => env.sample_action(rng),
                Behavior::NoisyOracle { oracle, epsilon } => {
                    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                        env.sample_action(rng)
                    } else {
                        oracle.action_at(&s).to_vec()
                    }
                }
            };
            let out = env.step(&s, &a, rng)?;
            let timeout = !out.done && t + 1 == horizon;
            ep.push(Transition {
                s: std::mem::take(&mut s),
                a,
                r: out.r,
                s2: out.s2.clone(),
                done: out.done,
                timeout,
            });
            if out.done {
                break;
            }
            s = out.s2;
        }
        ds.episodes.push(ep);
    }
    let label = match behavior {
        Behavior::UniformRandom => "uniform_random".to_string(),
        Behavior::NoisyOracle { epsilon, .. } => format!("noisy_oracle(epsilon={epsilon})"),
    };
    ds.log.push(format!(
        "collect {} episodes ({} transitions) env={} behavior={label}",
        n_episodes,
        ds.n_transitions(),
        env.name()
    ));
    Ok(ds)
}

/// Closed axis-aligned box in state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    /// From the config layout `[xmin, xmax, ymin, ymax, ...]`.
    pub fn from_bounds(bounds: &[f64]) -> Result<Region> {
        if bounds.is_empty() || bounds.len() % 2 != 0 {
            return Err(Error::input("region bounds must come in (min, max) pairs"));
        }
        let (lo, hi): (Vec<f64>, Vec<f64>) = bounds.chunks(2).map(|p| (p[0], p[1])).unzip();
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::input(format!("region {bounds:?} has min > max")));
        }
        Ok(Region { lo, hi })
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Drop whole episodes that visit a region.
    Remove,
    /// Cut episodes just before their first entry; the last kept step becomes a timeout.
    Truncate,
}

fn in_any(regions: &[Region], s: &[f64]) -> bool {
    regions.iter().any(|r| r.contains(s))
}

pub fn prune_region(ds: &Dataset, regions: &[Region], mode: PruneMode) -> Result<Dataset> {
    if regions.iter().any(|r| r.lo.len() != ds.state_dim) {
        return Err(Error::input("region dimension differs from the state dimension"));
    }
    let before = ds.n_transitions();
    let mut out = Dataset {
        episodes: Vec::with_capacity(ds.n_episodes()),
        ..ds.clone()
    };
    for ep in &ds.episodes {
        // index of the first transition that starts or lands inside a region
        let first = ep
            .iter()
            .position(|t| in_any(regions, &t.s) || in_any(regions, &t.s2));
        match (first, mode) {
            (None, _) => out.episodes.push(ep.clone()),
            (Some(_), PruneMode::Remove) => {}
            (Some(k), PruneMode::Truncate) => {
                if k == 0 {
                    continue;
                }
                let mut kept = ep[..k].to_vec();
                let last = kept.last_mut().expect("k > 0");
                last.done = false;
                last.timeout = true;
                out.episodes.push(kept);
            }
        }
    }
    let after = out.n_transitions();
    let fraction = if before == 0 { 1.0 } else { after as f64 / before as f64 };
    let boxes: Vec<String> = regions.iter().map(|r| format!("{:?}..{:?}", r.lo, r.hi)).collect();
    out.log.push(format!(
        "prune mode={} regions=[{}] retained_fraction={fraction} ({after}/{before} transitions, {} episodes)",
        match mode {
            PruneMode::Remove => "remove",
            PruneMode::Truncate => "truncate",
        },
        boxes.join(", "),
        out.n_episodes()
    ));
    if out.is_empty() {
        out.warn("pruning removed every transition");
    }
    Ok(out)
}

/// Keep `⌈fraction · n⌉` whole episodes chosen uniformly, in their original order.
pub fn subsample_episodes(ds: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = ds.n_episodes();
    let keep = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(n);
    let mut chosen = index::sample(rng, n, keep).into_vec();
    chosen.sort_unstable();
    let mut out = Dataset {
        episodes: chosen.iter().map(|&i| ds.episodes[i].clone()).collect(),
        ..ds.clone()
    };
    out.log.push(format!("subsample fraction={fraction} kept {keep}/{n} episodes"));
    if out.is_empty() && !ds.is_empty() {
        out.warn("subsampling removed every transition");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{oracle::solve_oracle, ChainMdp, Maze2d};
    use crate::rng::{SeedTree, DATA};

    fn chain_data(episodes: usize) -> Dataset {
        let env = EnvModel::Chain(ChainMdp { slip: 0.1, ..ChainMdp::new(5, 0.9) });
        let mut rng = SeedTree::new(0).stream(DATA);
        collect_offline(&env, Behavior::UniformRandom, episodes, StartMode::Rho, &mut rng).unwrap()
    }

    #[test]
    fn uniform_chain_episodes_are_coherent() {
        let ds = chain_data(10);
        assert_eq!(ds.n_episodes(), 10);
        ds.validate(Some(1.0)).unwrap();
        for ep in &ds.episodes {
            let last = ep.last().unwrap();
            assert!(last.done || last.timeout);
        }
    }

    #[test]
    fn single_step_horizon() {
        let env = EnvModel::Chain(ChainMdp { horizon: 1, ..ChainMdp::new(5, 0.9) });
        let mut rng = SeedTree::new(0).stream(DATA);
        let ds = collect_offline(&env, Behavior::UniformRandom, 1, StartMode::Rho, &mut rng).unwrap();
        assert_eq!(ds.n_transitions(), 1);
        assert!(ds.episodes[0][0].timeout);
        assert!(collect_offline(&env, Behavior::UniformRandom, 0, StartMode::Rho, &mut rng).is_err());
    }

    #[test]
    fn noisy_oracle_reaches_maze_goal() {
        let env = EnvModel::Maze2d(Maze2d::default());
        let (_, oracle) = solve_oracle(&env, 41).unwrap();
        let mut rng = SeedTree::new(4).stream(DATA);
        let behavior = Behavior::NoisyOracle { oracle: &oracle, epsilon: 0.3 };
        let ds = collect_offline(&env, behavior, 20, StartMode::Rho, &mut rng).unwrap();
        let reached = ds.episodes.iter().filter(|ep| ep.last().unwrap().done).count();
        assert!(reached > 0);
        ds.validate(Some(1.0)).unwrap();
    }

    fn maze_data() -> Dataset {
        let env = EnvModel::Maze2d(Maze2d::default());
        let mut rng = SeedTree::new(9).stream(DATA);
        collect_offline(&env, Behavior::UniformRandom, 60, StartMode::Uniform, &mut rng).unwrap()
    }

    #[test]
    fn prune_identity_and_annihilation() {
        let ds = maze_data();
        let nowhere = Region::from_bounds(&[2.0, 3.0, 2.0, 3.0]).unwrap();
        let same = prune_region(&ds, &[nowhere], PruneMode::Remove).unwrap();
        assert_eq!(same.episodes, ds.episodes);
        let all = Region::from_bounds(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        let empty = prune_region(&ds, &[all], PruneMode::Remove).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.warnings().count(), 1);
    }

    #[test]
    fn truncate_keeps_prefix_outside_region() {
        let ds = maze_data();
        let corridor = Region::from_bounds(&[0.7, 1.0, 0.3, 0.7]).unwrap();
        for mode in [PruneMode::Truncate, PruneMode::Remove] {
            let pruned = prune_region(&ds, std::slice::from_ref(&corridor), mode).unwrap();
            let frac = pruned.n_transitions() as f64 / ds.n_transitions() as f64;
            assert!(frac > 0.0 && frac < 1.0, "{frac}");
            for t in pruned.transitions() {
                assert!(!corridor.contains(&t.s) && !corridor.contains(&t.s2));
            }
            pruned.validate(Some(1.0)).unwrap();
            assert!(pruned.log.last().unwrap().contains("retained_fraction"));
        }
        let truncated = prune_region(&ds, &[corridor], PruneMode::Truncate).unwrap();
        let cut = truncated
            .episodes
            .iter()
            .zip(&ds.episodes)
            .any(|(a, b)| a.len() < b.len() && a.last().unwrap().timeout);
        assert!(cut || truncated.n_episodes() < ds.n_episodes());
    }

    #[test]
    fn subsampling_counts_and_determinism() {
        let ds = chain_data(100);
        let mut rng = SeedTree::new(1).stream(DATA);
        assert_eq!(subsample_episodes(&ds, 1.0, &mut rng).unwrap().episodes, ds.episodes);
        let a = subsample_episodes(&ds, 0.2, &mut SeedTree::new(2).stream(DATA)).unwrap();
        let b = subsample_episodes(&ds, 0.2, &mut SeedTree::new(2).stream(DATA)).unwrap();
        assert_eq!(a.n_episodes(), 20);
        assert_eq!(a, b);
        assert!(a.n_transitions() <= ds.n_transitions());
        assert!(subsample_episodes(&ds, 0.0, &mut rng).is_err());
        assert_eq!(subsample_episodes(&ds, 0.015, &mut rng).unwrap().n_episodes(), 2);
    }

    #[test]
    fn validation_catches_broken_invariants() {
        let mut ds = chain_data(3);
        ds.episodes[0].last_mut().unwrap().done = true;
        ds.episodes[0].last_mut().unwrap().timeout = true;
        assert!(ds.validate(None).is_err());
        let mut ds = chain_data(3);
        if ds.episodes[0].len() > 1 {
            ds.episodes[0][0].s2 = vec![99.0];
            assert!(ds.validate(None).is_err());
        }
    }

    #[test]
    fn merge_marks_mixed_provenance() {
        let off = chain_data(2);
        let mut act = chain_data(1);
        act.provenance = Provenance::Active;
        let all = off.merge(&act).unwrap();
        assert_eq!(all.provenance, Provenance::Mixed);
        assert_eq!(all.n_episodes(), 3);
    }
}
