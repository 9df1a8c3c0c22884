//! Desk-scale MDPs with exact ground truth.
//!
//! Every environment exposes the same surface through [`EnvModel`]:
//! sampling, the noise-free successor used by lookahead policies, and the
//! finite list of weighted outcomes consumed by the grid oracle.

mod chain;
mod lipschitz;
mod maze;
pub mod oracle;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use chain::{ChainMdp, ChainStart};
pub use lipschitz::LipschitzRandomMdp;
pub use maze::{Maze2d, Rect};
pub use oracle::{solve_oracle, DiscreteModel, Grid, OracleValue};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilists' Gauss-Hermite rule for `E[f(z)]`, `z ~ N(0, 1)`.
const GH_NODES: [f64; 5] = [
    -2.856_970_013_872_806,
    -1.355_626_179_974_266,
    0.0,
    1.355_626_179_974_266,
    2.856_970_013_872_806,
];
const GH_WEIGHTS: [f64; 5] = [
    0.011_257_411_327_720_69,
    0.222_075_922_005_612_6,
    0.533_333_333_333_333_3,
    0.222_075_922_005_612_6,
    0.011_257_411_327_720_69,
];

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub s2: Vec<f64>,
    pub r: f64,
    pub done: bool,
}

/// Continuous action box `[lo, hi]` per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.lo.len()
            && a.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn clip(&self, a: &mut [f64]) {
        for (x, (l, h)) in a.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *x = x.clamp(*l, *h);
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum EnvModel {
    #[serde(rename = "chain")]
    Chain(ChainMdp),
    #[serde(rename = "maze2d")]
    Maze2d(Maze2d),
    #[serde(rename = "lipschitz")]
    Lipschitz(LipschitzRandomMdp),
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

impl EnvModel {
    pub fn name(&self) -> &'static str {
        match self {
            EnvModel::Chain(_) => "chain",
            EnvModel::Maze2d(_) => "maze2d",
            EnvModel::Lipschitz(_) => "lipschitz",
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma())?;
        if self.horizon() == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match self {
            EnvModel::Chain(c) => {
                if c.n_states == 0 {
                    return Err(Error::Config("chain needs at least one state".into()));
                }
                if !(0.0..=1.0).contains(&c.slip) {
                    return Err(Error::Config(format!("slip {} outside [0, 1]", c.slip)));
                }
            }
            EnvModel::Maze2d(m) => {
                if !(m.max_step > 0.0 && m.noise >= 0.0 && m.goal_radius > 0.0) {
                    return Err(Error::Config(
                        "maze needs max_step > 0, noise >= 0 and goal_radius > 0".into(),
                    ));
                }
                for r in m.walls.iter().chain(std::iter::once(&m.start_box)) {
                    if !(0.0 <= r[0] && r[0] < r[1] && r[1] <= 1.0 && 0.0 <= r[2] && r[2] < r[3] && r[3] <= 1.0)
                    {
                        return Err(Error::Config(format!("box {r:?} is not inside the unit square")));
                    }
                }
                let b = m.start_box;
                for s in [[b[0], b[2]], [b[1], b[3]], [(b[0] + b[1]) / 2.0, (b[2] + b[3]) / 2.0]] {
                    if m.in_wall(&s) {
                        return Err(Error::Config("start box overlaps a wall".into()));
                    }
                }
            }
            EnvModel::Lipschitz(l) => {
                if !(l.kappa >= 0.0 && l.kappa <= 1.0 && l.tau > 0.0 && l.r_max >= 0.0) {
                    return Err(Error::Config(
                        "lipschitz env needs kappa in [0, 1], tau > 0, r_max >= 0".into(),
                    ));
                }
                if l.actions.is_empty() || l.actions.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(Error::Config("lipschitz actions must be a non-empty subset of [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvModel::Maze2d(_) => 2,
            _ => 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.state_dim()
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvModel::Chain(c) => c.gamma,
            EnvModel::Maze2d(m) => m.gamma,
            EnvModel::Lipschitz(l) => l.gamma,
        }
    }

    pub fn r_max(&self) -> f64 {
        match self {
            EnvModel::Lipschitz(l) => l.r_max,
            _ => 1.0,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvModel::Chain(c) => c.horizon,
            EnvModel::Maze2d(m) => m.horizon,
            EnvModel::Lipschitz(l) => l.horizon,
        }
    }

    /// Transition-Lipschitz constant in L1 (twice total variation).
    ///
    /// Exact for the chain and the Lipschitz env. For the maze it is the
    /// wall-free value; walls make the true kernel discontinuous.
    pub fn lipschitz_p(&self) -> f64 {
        match self {
            // distinct states are at distance ≥ 1 and L1 distance is ≤ 2
            EnvModel::Chain(_) => 2.0,
            EnvModel::Maze2d(m) => m.nominal_lipschitz(),
            EnvModel::Lipschitz(l) => l.declared_lipschitz(),
        }
    }

    /// Finite action set used by lookahead policies.
    pub fn actions(&self) -> Vec<Vec<f64>> {
        match self {
            EnvModel::Chain(_) => vec![vec![-1.0], vec![1.0]],
            EnvModel::Maze2d(m) => m.action_set(),
            EnvModel::Lipschitz(l) => l.actions.iter().map(|&a| vec![a]).collect(),
        }
    }

    /// Continuous action box, if the environment accepts one.
    pub fn action_box(&self) -> Option<ActionBox> {
        match self {
            EnvModel::Chain(_) => None,
            EnvModel::Maze2d(m) => Some(ActionBox {
                lo: vec![-m.max_step; 2],
                hi: vec![m.max_step; 2],
            }),
            EnvModel::Lipschitz(_) => Some(ActionBox {
                lo: vec![0.0],
                hi: vec![1.0],
            }),
        }
    }

    pub fn state_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            EnvModel::Chain(c) => (vec![0.0], vec![c.goal() as f64]),
            EnvModel::Maze2d(_) => (vec![0.0, 0.0], vec![1.0, 1.0]),
            EnvModel::Lipschitz(_) => (vec![0.0], vec![1.0]),
        }
    }

    pub fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(Error::input(format!(
                "state has dimension {}, env expects {}",
                s.len(),
                self.state_dim()
            )));
        }
        let (lo, hi) = self.state_bounds();
        let inside = s
            .iter()
            .zip(lo.iter().zip(&hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h);
        let valid = inside
            && match self {
                EnvModel::Chain(_) => s[0].fract() == 0.0,
                EnvModel::Maze2d(m) => !m.in_wall(s),
                EnvModel::Lipschitz(_) => true,
            };
        if valid {
            Ok(())
        } else {
            Err(Error::input(format!("state {s:?} is outside the state space")))
        }
    }

    pub fn check_action(&self, a: &[f64]) -> Result<()> {
        let ok = match (self, self.action_box()) {
            (_, Some(b)) => b.contains(a),
            (EnvModel::Chain(_), None) => a == [-1.0] || a == [1.0],
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("action {a:?} is not admissible")))
        }
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            EnvModel::Chain(c) => match c.start {
                ChainStart::First => vec![0.0],
                ChainStart::Uniform => vec![rng.random_range(0..c.n_states) as f64],
            },
            EnvModel::Maze2d(m) => {
                let b = m.start_box;
                vec![
                    b[0] + (b[1] - b[0]) * rng.random::<f64>(),
                    b[2] + (b[3] - b[2]) * rng.random::<f64>(),
                ]
            }
            EnvModel::Lipschitz(_) => vec![rng.random::<f64>()],
        }
    }

    /// Uniform draw from the whole (free) state space.
    pub fn sample_state(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            EnvModel::Chain(c) => vec![rng.random_range(0..c.n_states) as f64],
            EnvModel::Maze2d(m) => loop {
                let s = vec![rng.random::<f64>(), rng.random::<f64>()];
                if !m.in_wall(&s) {
                    break s;
                }
            },
            EnvModel::Lipschitz(_) => vec![rng.random::<f64>()],
        }
    }

    /// Uniform over the action box, or over the finite set without one.
    pub fn sample_action(&self, rng: &mut Rng) -> Vec<f64> {
        match self.action_box() {
            Some(b) => b.sample(rng),
            None => {
                let acts = self.actions();
                acts[rng.random_range(0..acts.len())].clone()
            }
        }
    }

    /// Deterministic quadrature points standing in for ρ when computing `J`.
    pub fn rho_points(&self) -> Vec<Vec<f64>> {
        match self {
            EnvModel::Chain(c) => match c.start {
                ChainStart::First => vec![vec![0.0]],
                ChainStart::Uniform => (0..c.n_states).map(|i| vec![i as f64]).collect(),
            },
            EnvModel::Maze2d(m) => {
                let b = m.start_box;
                let k = 5;
                let mid = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / k as f64;
                (0..k)
                    .flat_map(|j| (0..k).map(move |i| vec![mid(b[0], b[1], i), mid(b[2], b[3], j)]))
                    .collect()
            }
            EnvModel::Lipschitz(_) => (0..20).map(|i| vec![(i as f64 + 0.5) / 20.0]).collect(),
        }
    }

    /// Regular grid of valid states, `per_dim` points per axis (chains use every state).
    pub fn eval_grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        match self {
            EnvModel::Chain(c) => (0..c.n_states).map(|i| vec![i as f64]).collect(),
            EnvModel::Maze2d(m) => {
                let at = |i: usize| (i as f64 + 0.5) / per_dim as f64;
                (0..per_dim)
                    .flat_map(|j| (0..per_dim).map(move |i| vec![at(i), at(j)]))
                    .filter(|s| !m.in_wall(s))
                    .collect()
            }
            EnvModel::Lipschitz(_) => (0..per_dim)
                .map(|i| vec![(i as f64 + 0.5) / per_dim as f64])
                .collect(),
        }
    }

    /// Simulate one transition.
    pub fn step(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<StepOutcome> {
        self.check_state(s)?;
        self.check_action(a)?;
        Ok(self.step_unchecked(s, a, rng))
    }

    pub(crate) fn step_unchecked(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> StepOutcome {
        match self {
            EnvModel::Chain(c) => {
                let dir = if a[0] > 0.0 { 1 } else { -1 };
                let slipped = c.slip > 0.0 && rng.random::<f64>() < c.slip;
                c.nominal(s[0] as usize, if slipped { -dir } else { dir })
            }
            EnvModel::Maze2d(m) => {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                m.apply(s, [a[0] + m.noise * zx, a[1] + m.noise * zy])
            }
            EnvModel::Lipschitz(l) => l.realise(s[0], a[0], rng.sample(StandardNormal)),
        }
    }

    /// Noise-free successor: no slip, zero action noise.
    pub fn expected_step(&self, s: &[f64], a: &[f64]) -> StepOutcome {
        match self {
            EnvModel::Chain(c) => c.nominal(s[0] as usize, if a[0] > 0.0 { 1 } else { -1 }),
            EnvModel::Maze2d(m) => m.apply(s, [a[0], a[1]]),
            EnvModel::Lipschitz(l) => l.realise(s[0], a[0], 0.0),
        }
    }

    /// Weighted outcomes approximating the transition kernel (exact for the chain,
    /// Gauss-Hermite over the noise otherwise). Weights sum to one.
    pub fn outcomes(&self, s: &[f64], a: &[f64]) -> Vec<(f64, StepOutcome)> {
        match self {
            EnvModel::Chain(c) => c.outcomes(s[0] as usize, if a[0] > 0.0 { 1 } else { -1 }),
            EnvModel::Maze2d(m) => {
                if m.noise == 0.0 {
                    return vec![(1.0, m.apply(s, [a[0], a[1]]))];
                }
                let mut out = Vec::with_capacity(25);
                for (zx, wx) in GH_NODES.iter().zip(GH_WEIGHTS) {
                    for (zy, wy) in GH_NODES.iter().zip(GH_WEIGHTS) {
                        let d = [a[0] + m.noise * zx, a[1] + m.noise * zy];
                        out.push((wx * wy, m.apply(s, d)));
                    }
                }
                out
            }
            EnvModel::Lipschitz(l) => GH_NODES
                .iter()
                .zip(GH_WEIGHTS)
                .map(|(z, w)| (w, l.realise(s[0], a[0], *z)))
                .collect(),
        }
    }

    /// Map an arbitrary grid node onto the closest valid state.
    pub fn project_state(&self, s: &[f64]) -> Vec<f64> {
        match self {
            EnvModel::Chain(c) => vec![s[0].round().clamp(0.0, c.goal() as f64)],
            EnvModel::Maze2d(m) => m.project_free(s),
            EnvModel::Lipschitz(_) => vec![s[0].clamp(0.0, 1.0)],
        }
    }

    /// Oracle grid. Chains always use one node per state.
    pub fn oracle_grid(&self, resolution: usize) -> Result<Grid> {
        if resolution < 2 {
            return Err(Error::input("oracle resolution must be at least 2"));
        }
        let (lo, hi) = self.state_bounds();
        let n = match self {
            EnvModel::Chain(c) => vec![c.n_states],
            _ => vec![resolution; self.state_dim()],
        };
        Ok(Grid::new(lo, hi, n))
    }

    /// Candidate actions for exploration: `policy_action` first, then
    /// perturbations `spread · half-width · N(0, I)` clipped to the box
    /// (or uniform draws from the finite set when there is no box).
    pub fn exploration_candidates(
        &self,
        policy_action: &[f64],
        n: usize,
        spread: f64,
        rng: &mut Rng,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n.max(1));
        out.push(policy_action.to_vec());
        match self.action_box() {
            Some(b) => {
                for _ in 1..n {
                    let mut a: Vec<f64> = policy_action
                        .iter()
                        .zip(b.lo.iter().zip(&b.hi))
                        .map(|(x, (l, h))| {
                            let z: f64 = rng.sample(StandardNormal);
                            x + spread * 0.5 * (h - l) * z
                        })
                        .collect();
                    b.clip(&mut a);
                    out.push(a);
                }
            }
            None => {
                let acts = self.actions();
                for _ in 1..n {
                    out.push(acts[rng.random_range(0..acts.len())].clone());
                }
            }
        }
        out
    }
}

/// Settings for [`empirical_lipschitz`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzProbe {
    /// Next-state draws per sampled `(s, a)`.
    pub draws: usize,
    /// Histogram bins per state dimension (chains bin by state).
    pub bins: usize,
    /// Pairs closer than this in `‖Δs‖ + ‖Δa‖` are skipped.
    pub min_separation: f64,
}

impl Default for LipschitzProbe {
    fn default() -> Self {
        LipschitzProbe {
            draws: 4000,
            bins: 20,
            min_separation: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    pub pairs_used: usize,
    pub pairs_excluded: usize,
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Binned Monte-Carlo lower estimate of `L_p`:
/// `max ‖P̂(·|s,a) − P̂(·|s',a')‖₁ / (‖s−s'‖ + ‖a−a'‖)` over sampled pairs.
pub fn empirical_lipschitz(
    env: &EnvModel,
    samples: usize,
    probe: LipschitzProbe,
    rng: &mut Rng,
) -> Result<LipschitzEstimate> {
    if samples < 2 {
        return Err(Error::input("empirical_lipschitz needs at least 2 samples"));
    }
    let (lo, hi) = env.state_bounds();
    let bins: Vec<usize> = match env {
        EnvModel::Chain(c) => vec![c.n_states],
        _ => vec![probe.bins; env.state_dim()],
    };
    let bin_of = |s: &[f64]| -> usize {
        let mut idx = 0;
        for d in 0..s.len() {
            let width = hi[d] - lo[d];
            let t = if width > 0.0 { (s[d] - lo[d]) / width } else { 0.0 };
            let b = match env {
                EnvModel::Chain(_) => s[d].round() as usize,
                _ => ((t * bins[d] as f64) as usize).min(bins[d] - 1),
            };
            idx = idx * bins[d] + b;
        }
        idx
    };
    let total_bins: usize = bins.iter().product();
    let mut points = Vec::with_capacity(samples);
    for _ in 0..samples {
        let s = env.sample_state(rng);
        let a = env.sample_action(rng);
        let mut hist = vec![0.0; total_bins];
        for _ in 0..probe.draws {
            hist[bin_of(&env.step_unchecked(&s, &a, rng).s2)] += 1.0;
        }
        for h in &mut hist {
            *h /= probe.draws as f64;
        }
        points.push((s, a, hist));
    }
    let mut best = 0.0f64;
    let (mut used, mut excluded) = (0, 0);
    for i in 0..samples {
        for j in i + 1..samples {
            let (si, ai, hi_) = &points[i];
            let (sj, aj, hj) = &points[j];
            let dist = norm(si, sj) + norm(ai, aj);
            if !(dist >= probe.min_separation) {
                excluded += 1;
                continue;
            }
            used += 1;
            let l1: f64 = hi_.iter().zip(hj).map(|(x, y)| (x - y).abs()).sum();
            best = best.max(l1 / dist);
        }
    }
    Ok(LipschitzEstimate {
        estimate: best,
        pairs_used: used,
        pairs_excluded: excluded,
    })
}
