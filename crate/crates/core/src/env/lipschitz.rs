use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::StepOutcome;

/// One-dimensional MDP with a declared transition-Lipschitz constant.
///
/// `s' = clip((1−κ) s + κ a + τ z, 0, 1)` with `z ~ N(0, 1)` and reward
/// `r_max · (1 + sin(2π(f_s s + f_a a) + φ)) / 2`. The unclipped kernel moves
/// its mean by at most `max(κ, 1−κ)(|Δs| + |Δa|)`, and clipping cannot
/// increase total variation, which gives the declared `L_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzRandomMdp {
    pub kappa: f64,
    pub tau: f64,
    pub gamma: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_actions")]
    pub actions: Vec<f64>,
    #[serde(default = "default_freq")]
    pub reward_freq: [f64; 2],
    #[serde(default)]
    pub reward_phase: f64,
}

fn default_r_max() -> f64 {
    1.0
}

fn default_horizon() -> usize {
    100
}

fn default_actions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_freq() -> [f64; 2] {
    [1.0, 0.5]
}

impl Default for LipschitzRandomMdp {
    fn default() -> Self {
        LipschitzRandomMdp {
            kappa: 0.5,
            tau: 0.1,
            gamma: 0.9,
            r_max: default_r_max(),
            horizon: default_horizon(),
            actions: default_actions(),
            reward_freq: default_freq(),
            reward_phase: 0.0,
        }
    }
}

impl LipschitzRandomMdp {
    pub fn reward(&self, s: f64, a: f64) -> f64 {
        let phase = TAU * (self.reward_freq[0] * s + self.reward_freq[1] * a) + self.reward_phase;
        self.r_max * 0.5 * (1.0 + phase.sin())
    }

    pub fn mean_next(&self, s: f64, a: f64) -> f64 {
        (1.0 - self.kappa) * s + self.kappa * a
    }

    pub fn declared_lipschitz(&self) -> f64 {
        self.kappa.max(1.0 - self.kappa) * (2.0 / PI).sqrt() / self.tau
    }

    pub(super) fn realise(&self, s: f64, a: f64, z: f64) -> StepOutcome {
        StepOutcome {
            s2: vec![(self.mean_next(s, a) + self.tau * z).clamp(0.0, 1.0)],
            r: self.reward(s, a),
            done: false,
        }
    }
}
