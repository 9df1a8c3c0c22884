//! Ground truth by value iteration on a regular grid.
//!
//! Each `(node, action)` pair becomes one sparse row: the expected reward,
//! plus successor weights over grid nodes (multilinear interpolation of
//! every non-terminal outcome, scaled by its probability). Terminal
//! outcomes contribute reward only, matching the `(1 − done)` mask of the
//! fitted targets.

use super::EnvModel;
use crate::error::{Error, Result};
use crate::value::ValueFunction;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Self {
        assert!(lo.len() == hi.len() && lo.len() == n.len() && n.iter().all(|&k| k >= 1));
        Grid { lo, hi, n }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord(&self, d: usize, k: usize) -> f64 {
        if self.n[d] == 1 {
            self.lo[d]
        } else {
            self.lo[d] + (self.hi[d] - self.lo[d]) * k as f64 / (self.n[d] - 1) as f64
        }
    }

    /// Multi-index of node `i`, first axis fastest.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        self.n
            .iter()
            .map(|&k| {
                let q = i % k;
                i /= k;
                q
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.n)
            .rev()
            .fold(0, |acc, (&q, &k)| acc * k + q)
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .enumerate()
            .map(|(d, &k)| self.coord(d, k))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        if self.n[d] == 1 {
            0.0
        } else {
            (self.hi[d] - self.lo[d]) / (self.n[d] - 1) as f64
        }
    }

    /// Flat index of the node nearest to `s` (clamped into the box).
    pub fn nearest(&self, s: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|d| {
                let h = self.spacing(d);
                if h == 0.0 {
                    0
                } else {
                    (((s[d] - self.lo[d]) / h).round().max(0.0) as usize).min(self.n[d] - 1)
                }
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Multilinear interpolation weights at `s` (clamped into the box).
    pub fn interpolate(&self, s: &[f64], out: &mut Vec<(u32, f64)>) {
        out.clear();
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            if self.n[k] == 1 {
                continue;
            }
            let t = ((s[k] - self.lo[k]) / (self.hi[k] - self.lo[k])).clamp(0.0, 1.0)
                * (self.n[k] - 1) as f64;
            let i0 = (t.floor() as usize).min(self.n[k] - 2);
            base[k] = i0;
            frac[k] = t - i0 as f64;
        }
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                if up && self.n[k] == 1 {
                    w = 0.0;
                    break;
                }
                idx[k] = base[k] + up as usize;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if w > 0.0 {
                out.push((self.flat_index(&idx) as u32, w));
            }
        }
    }

    pub fn interpolate_values(&self, values: &[f64], s: &[f64]) -> f64 {
        let mut w = Vec::with_capacity(1 << self.dim());
        self.interpolate(s, &mut w);
        w.iter().map(|&(i, x)| x * values[i as usize]).sum()
    }
}

#[derive(Clone, Debug)]
struct Row {
    reward: f64,
    successors: Vec<(u32, f64)>,
}

/// Finite MDP induced by an environment on a grid.
#[derive(Clone, Debug)]
pub struct DiscreteModel {
    grid: Grid,
    gamma: f64,
    actions: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    rows: Vec<Row>,
}

pub const VI_TOLERANCE: f64 = 1e-6;
const MAX_SWEEPS: usize = 200_000;

impl DiscreteModel {
    pub fn build(env: &EnvModel, grid: Grid) -> Result<Self> {
        if grid.dim() != env.state_dim() {
            return Err(Error::input("grid dimension differs from the state dimension"));
        }
        let actions = env.actions();
        let states: Vec<Vec<f64>> = (0..grid.len()).map(|i| env.project_state(&grid.node(i))).collect();
        let mut rows = Vec::with_capacity(states.len() * actions.len());
        let mut weights = Vec::new();
        for s in &states {
            for a in &actions {
                let mut reward = 0.0;
                let mut succ: Vec<(u32, f64)> = Vec::new();
                for (p, out) in env.outcomes(s, a) {
                    reward += p * out.r;
                    if out.done {
                        continue;
                    }
                    grid.interpolate(&out.s2, &mut weights);
                    succ.extend(weights.iter().map(|&(i, w)| (i, p * w)));
                }
                succ.sort_unstable_by_key(|e| e.0);
                succ.dedup_by(|b, a| {
                    if a.0 == b.0 {
                        a.1 += b.1;
                        true
                    } else {
                        false
                    }
                });
                rows.push(Row {
                    reward,
                    successors: succ,
                });
            }
        }
        Ok(DiscreteModel {
            grid,
            gamma: env.gamma(),
            actions,
            states,
            rows,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }

    /// The valid state each node stands for.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn q(&self, node: usize, action: usize, v: &[f64]) -> f64 {
        let row = &self.rows[node * self.actions.len() + action];
        row.reward + self.gamma * row.successors.iter().map(|&(j, w)| w * v[j as usize]).sum::<f64>()
    }

    /// `(T V, greedy policy)` with ties broken by lowest action index.
    pub fn bellman_optimal(&self, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut tv = Vec::with_capacity(self.n_nodes());
        let mut pi = Vec::with_capacity(self.n_nodes());
        for i in 0..self.n_nodes() {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for a in 0..self.actions.len() {
                let q = self.q(i, a, v);
                if q > best {
                    best = q;
                    arg = a;
                }
            }
            tv.push(best);
            pi.push(arg);
        }
        (tv, pi)
    }

    /// `T^π V` for a deterministic node policy.
    pub fn bellman_policy(&self, policy: &[usize], v: &[f64]) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.q(i, policy[i], v)).collect()
    }

    pub fn value_iteration(&self) -> Result<OracleValue> {
        let mut v = vec![0.0; self.n_nodes()];
        for sweep in 1..=MAX_SWEEPS {
            let (tv, pi) = self.bellman_optimal(&v);
            let residual = sup_diff(&tv, &v);
            v = tv;
            if residual <= VI_TOLERANCE {
                return Ok(OracleValue {
                    grid: self.grid.clone(),
                    values: v,
                    policy: pi,
                    actions: self.actions.clone(),
                    residual,
                    sweeps: sweep,
                });
            }
        }
        Err(Error::numerical(
            "value iteration did not converge",
            format!("{MAX_SWEEPS} sweeps, gamma={}", self.gamma),
        ))
    }

    /// `V^π` by iterating `T^π` to a residual of `tol`.
    pub fn evaluate_policy(&self, policy: &[usize], tol: f64) -> Result<Vec<f64>> {
        if policy.len() != self.n_nodes() || policy.iter().any(|&a| a >= self.actions.len()) {
            return Err(Error::input("policy must give a valid action for every node"));
        }
        let mut v = vec![0.0; self.n_nodes()];
        for _ in 0..MAX_SWEEPS {
            let tv = self.bellman_policy(policy, &v);
            let residual = sup_diff(&tv, &v);
            v = tv;
            if residual <= tol {
                return Ok(v);
            }
        }
        Err(Error::numerical("policy evaluation did not converge", format!("tol={tol}")))
    }

    /// `J = E_ρ[V(s)]` over the environment's quadrature points for ρ.
    pub fn expected_return(&self, env: &EnvModel, values: &[f64]) -> f64 {
        let pts = env.rho_points();
        pts.iter().map(|s| self.grid.interpolate_values(values, s)).sum::<f64>() / pts.len() as f64
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Optimal values and greedy actions on the oracle grid.
#[derive(Clone, Debug)]
pub struct OracleValue {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub actions: Vec<Vec<f64>>,
    /// Final Bellman residual `‖T V − V‖∞`.
    pub residual: f64,
    pub sweeps: usize,
}

impl OracleValue {
    pub fn value_at(&self, s: &[f64]) -> f64 {
        self.grid.interpolate_values(&self.values, s)
    }

    /// Greedy action of the node nearest to `s`.
    pub fn action_at(&self, s: &[f64]) -> &[f64] {
        &self.actions[self.policy[self.grid.nearest(s)]]
    }
}

impl ValueFunction for OracleValue {
    fn value(&self, s: &[f64]) -> f64 {
        self.value_at(s)
    }
}

/// Solve the environment on its oracle grid.
pub fn solve_oracle(env: &EnvModel, resolution: usize) -> Result<(DiscreteModel, OracleValue)> {
    let model = DiscreteModel::build(env, env.oracle_grid(resolution)?)?;
    let oracle = model.value_iteration()?;
    Ok((model, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, Maze2d};
    use std::collections::VecDeque;

    #[test]
    fn two_state_chain_values() {
        let env = EnvModel::Chain(ChainMdp::new(2, 0.5));
        let (_, oracle) = solve_oracle(&env, 2).unwrap();
        assert!((oracle.values[0] - 0.5).abs() < 1e-6);
        assert!((oracle.values[1] - 1.0).abs() < 1e-6);
        assert_eq!(oracle.actions[oracle.policy[0]], vec![1.0]);
        assert!(oracle.residual <= VI_TOLERANCE);
    }

    #[test]
    fn absorbing_goal_and_single_state() {
        let env = EnvModel::Chain(ChainMdp { goal_terminal: false, ..ChainMdp::new(2, 0.5) });
        let (_, oracle) = solve_oracle(&env, 2).unwrap();
        assert!((oracle.values[1] - 2.0).abs() < 1e-5);
        let single = EnvModel::Chain(ChainMdp { goal_terminal: false, ..ChainMdp::new(1, 0.5) });
        let (_, oracle) = solve_oracle(&single, 2).unwrap();
        assert!((oracle.values[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn chain_values_are_discounted_distance() {
        let gamma = 0.99;
        let env = EnvModel::Chain(ChainMdp::new(5, gamma));
        let (_, oracle) = solve_oracle(&env, 2).unwrap();
        for i in 0..5 {
            assert!((oracle.values[i] - gamma.powi(4 - i as i32)).abs() < 1e-4);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let grid = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![5, 9]);
        let values: Vec<f64> = grid.nodes().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for s in [[0.3, 0.1], [0.0, -1.0], [1.0, 1.0], [0.77, -0.42]] {
            let v = grid.interpolate_values(&values, &s);
            assert!((v - (2.0 * s[0] - s[1] + 0.5)).abs() < 1e-12);
        }
        assert_eq!(grid.flat_index(&grid.multi_index(31)), 31);
    }

    #[test]
    fn maze_values_follow_path_distance() {
        let maze = Maze2d::default();
        let env = EnvModel::Maze2d(maze.clone());
        let (model, oracle) = solve_oracle(&env, 41).unwrap();
        let grid = model.grid();
        let n = grid.shape()[0];
        let blocked = |i: usize| maze.in_wall(&grid.node(i));
        // breadth-first distance over free nodes (8-neighbour moves) from goal nodes
        let mut dist = vec![usize::MAX; grid.len()];
        let mut queue = VecDeque::new();
        for i in 0..grid.len() {
            if maze.in_goal(&grid.node(i)) {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let ij = grid.multi_index(i);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (ij[0] as i64 + dx, ij[1] as i64 + dy);
                    if x < 0 || y < 0 || x >= n as i64 || y >= n as i64 {
                        continue;
                    }
                    let j = grid.flat_index(&[x as usize, y as usize]);
                    if !blocked(j) && dist[j] == usize::MAX {
                        dist[j] = dist[i] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        let free: Vec<usize> = (0..grid.len()).filter(|&i| !blocked(i)).collect();
        let best = free
            .iter()
            .copied()
            .max_by(|&a, &b| oracle.values[a].total_cmp(&oracle.values[b]))
            .unwrap();
        // one full step from the goal disk at most (in grid units)
        let reach = ((maze.goal_radius + maze.max_step) / grid.spacing(0)).ceil() as usize;
        assert!(dist[best] <= reach);
        // monotone in path distance, allowing a few nodes of slack for the
        // difference between grid moves and continuous steps
        let mut violations = 0;
        let mut pairs = 0;
        for &i in free.iter().step_by(7) {
            for &j in free.iter().step_by(11) {
                if dist[i] + 8 <= dist[j] {
                    pairs += 1;
                    if oracle.values[i] <= oracle.values[j] {
                        violations += 1;
                    }
                }
            }
        }
        assert!(pairs > 1000);
        assert_eq!(violations, 0, "{violations}/{pairs}");
    }

    #[test]
    fn policy_evaluation_of_optimal_policy_matches_values() {
        let env = EnvModel::Maze2d(Maze2d::default());
        let (model, oracle) = solve_oracle(&env, 21).unwrap();
        let v = model.evaluate_policy(&oracle.policy, 1e-9).unwrap();
        // VI stops at residual ≤ 1e−6, so the gap to V^π is ≤ 1e−6·γ/(1−γ)
        assert!(sup_diff(&v, &oracle.values) < 1e-4);
        assert!(model.evaluate_policy(&[0; 3], 1e-9).is_err());
    }
}
