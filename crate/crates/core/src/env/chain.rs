use serde::{Deserialize, Serialize};

use super::StepOutcome;

/// Where chain episodes start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStart {
    /// Always state 0.
    #[default]
    First,
    /// Uniform over all states.
    Uniform,
}

/// Tabular chain `0 → 1 → … → n−1` with actions `[-1]` and `[+1]`.
///
/// A move is reversed with probability `slip`. Acting in the last state
/// pays 1; with `goal_terminal` that step ends the episode, otherwise the
/// goal is absorbing and pays 1 forever.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainMdp {
    pub n_states: usize,
    #[serde(default)]
    pub slip: f64,
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub goal_terminal: bool,
    #[serde(default)]
    pub start: ChainStart,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_true() -> bool {
    true
}

fn default_horizon() -> usize {
    50
}

impl ChainMdp {
    pub fn new(n_states: usize, gamma: f64) -> Self {
        ChainMdp {
            n_states,
            slip: 0.0,
            gamma,
            goal_terminal: true,
            start: ChainStart::First,
            horizon: default_horizon(),
        }
    }

    pub fn goal(&self) -> usize {
        self.n_states - 1
    }

    fn shift(&self, s: usize, dir: i64) -> usize {
        (s as i64 + dir).clamp(0, self.goal() as i64) as usize
    }

    /// Nominal (no-slip) outcome.
    pub(super) fn nominal(&self, s: usize, dir: i64) -> StepOutcome {
        self.resolve(s, dir)
    }

    fn resolve(&self, s: usize, dir: i64) -> StepOutcome {
        if s == self.goal() {
            StepOutcome {
                s2: vec![s as f64],
                r: 1.0,
                done: self.goal_terminal,
            }
        } else {
            StepOutcome {
                s2: vec![self.shift(s, dir) as f64],
                r: 0.0,
                done: false,
            }
        }
    }

    pub(super) fn outcomes(&self, s: usize, dir: i64) -> Vec<(f64, StepOutcome)> {
        if self.slip > 0.0 {
            vec![
                (1.0 - self.slip, self.resolve(s, dir)),
                (self.slip, self.resolve(s, -dir)),
            ]
        } else {
            vec![(1.0, self.resolve(s, dir))]
        }
    }
}
