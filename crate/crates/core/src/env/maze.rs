use serde::{Deserialize, Serialize};

use super::StepOutcome;

/// Axis-aligned box `[xmin, xmax, ymin, ymax]`.
pub type Rect = [f64; 4];

/// Point-mass navigation in the unit square with rectangular walls.
///
/// The commanded displacement is perturbed by isotropic Gaussian noise, then
/// applied one axis at a time; a move that would cross into a wall stops on
/// its face. Entering the goal disk pays 1 and ends the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Maze2d {
    pub walls: Vec<Rect>,
    pub start_box: Rect,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub max_step: f64,
    pub noise: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for Maze2d {
    /// A horizontal wall from the left edge separates start (bottom left)
    /// from goal (top left); the only passage is on the right.
    fn default() -> Self {
        Maze2d {
            walls: vec![[0.0, 0.7, 0.4, 0.6]],
            start_box: [0.05, 0.25, 0.05, 0.25],
            goal: [0.15, 0.85],
            goal_radius: 0.08,
            max_step: 0.08,
            noise: 0.01,
            gamma: 0.99,
            horizon: 100,
        }
    }
}

fn strictly_inside(r: &Rect, x: f64, y: f64) -> bool {
    x > r[0] && x < r[1] && y > r[2] && y < r[3]
}

impl Maze2d {
    pub fn in_wall(&self, s: &[f64]) -> bool {
        self.walls.iter().any(|w| strictly_inside(w, s[0], s[1]))
    }

    pub fn in_goal(&self, s: &[f64]) -> bool {
        let dx = s[0] - self.goal[0];
        let dy = s[1] - self.goal[1];
        dx * dx + dy * dy <= self.goal_radius * self.goal_radius
    }

    /// Nearest point outside every wall interior (identity for free states).
    pub fn project_free(&self, s: &[f64]) -> Vec<f64> {
        let mut p = [s[0].clamp(0.0, 1.0), s[1].clamp(0.0, 1.0)];
        for w in &self.walls {
            if strictly_inside(w, p[0], p[1]) {
                let faces = [
                    (p[0] - w[0], 0, w[0]),
                    (w[1] - p[0], 0, w[1]),
                    (p[1] - w[2], 1, w[2]),
                    (w[3] - p[1], 1, w[3]),
                ];
                let (_, axis, value) = faces
                    .into_iter()
                    .filter(|f| f.2 >= 0.0 && f.2 <= 1.0)
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("wall has an in-bounds face");
                p[axis] = value;
            }
        }
        p.to_vec()
    }

    fn slide_x(&self, x: f64, y: f64, dx: f64) -> f64 {
        let mut x1 = (x + dx).clamp(0.0, 1.0);
        for w in &self.walls {
            if !(y > w[2] && y < w[3]) {
                continue;
            }
            if dx > 0.0 && x <= w[0] && x1 > w[0] {
                x1 = w[0];
            } else if dx < 0.0 && x >= w[1] && x1 < w[1] {
                x1 = w[1];
            }
        }
        x1
    }

    fn slide_y(&self, x: f64, y: f64, dy: f64) -> f64 {
        let mut y1 = (y + dy).clamp(0.0, 1.0);
        for w in &self.walls {
            if !(x > w[0] && x < w[1]) {
                continue;
            }
            if dy > 0.0 && y <= w[2] && y1 > w[2] {
                y1 = w[2];
            } else if dy < 0.0 && y >= w[3] && y1 < w[3] {
                y1 = w[3];
            }
        }
        y1
    }

    /// Apply a realised displacement from `s`.
    pub(super) fn apply(&self, s: &[f64], d: [f64; 2]) -> StepOutcome {
        let x = self.slide_x(s[0], s[1], d[0]);
        let y = self.slide_y(x, s[1], d[1]);
        let s2 = vec![x, y];
        let done = self.in_goal(&s2);
        StepOutcome {
            r: if done { 1.0 } else { 0.0 },
            done,
            s2,
        }
    }

    /// Lipschitz constant of the wall-free Gaussian kernel in total variation (L1).
    pub fn nominal_lipschitz(&self) -> f64 {
        (2.0 / std::f64::consts::PI).sqrt() / self.noise
    }

    /// The eight compass moves at full step, then "stay".
    pub fn action_set(&self) -> Vec<Vec<f64>> {
        let m = self.max_step;
        let mut out = Vec::with_capacity(9);
        for dy in [-1.0, 0.0, 1.0] {
            for dx in [-1.0, 0.0, 1.0] {
                if dx != 0.0 || dy != 0.0 {
                    out.push(vec![dx * m, dy * m]);
                }
            }
        }
        out.push(vec![0.0, 0.0]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_push_stops_at_face() {
        let maze = Maze2d::default();
        // directly below the wall, pushing up
        let out = maze.apply(&[0.3, 0.36], [0.0, 0.08]);
        assert_eq!(out.s2, vec![0.3, 0.4]);
        assert_eq!(out.r, 0.0);
        assert!(!out.done);
        // sliding along the face is unobstructed in x
        let out = maze.apply(&[0.3, 0.4], [0.05, 0.05]);
        assert!((out.s2[0] - 0.35).abs() < 1e-15);
        assert_eq!(out.s2[1], 0.4);
        // past the wall end the vertical move is free
        let out = maze.apply(&[0.69, 0.38], [0.03, 0.05]);
        assert!((out.s2[0] - 0.72).abs() < 1e-15 && (out.s2[1] - 0.43).abs() < 1e-15);
    }

    #[test]
    fn outer_bounds_and_goal() {
        let maze = Maze2d::default();
        assert_eq!(maze.apply(&[0.02, 0.02], [-0.08, -0.08]).s2, vec![0.0, 0.0]);
        let out = maze.apply(&[0.15, 0.78], [0.0, 0.05]);
        assert!(out.done && out.r == 1.0);
    }

    #[test]
    fn projection_leaves_free_states() {
        let maze = Maze2d::default();
        assert_eq!(maze.project_free(&[0.3, 0.2]), vec![0.3, 0.2]);
        assert_eq!(maze.project_free(&[0.3, 0.45]), vec![0.3, 0.4]);
        assert_eq!(maze.project_free(&[0.65, 0.5]), vec![0.7, 0.5]);
        assert_eq!(maze.action_set().len(), 9);
    }
}
