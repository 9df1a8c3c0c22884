//! Fitted value iteration with a GP value model.
//!
//! Iteration `k` fits the GP on targets `y⁽ᵏ⁾` at the transition start
//! states, then refreshes `y⁽ᵏ⁺¹⁾ = r + γ(1 − d) μ⁽ᵏ⁾(s′)` over the whole
//! dataset. Timeouts bootstrap like any other non-terminal step.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::kernel::KernelSpec;
use crate::value::ValueFunction;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FviConfig {
    /// Number of fits `K`; the first uses the initial targets.
    pub iterations: usize,
    pub gamma: f64,
    /// Refactorize every iteration instead of reusing the factor.
    pub refit_full: bool,
    /// Observation-noise variance σ² of the GP.
    pub target_noise: f64,
    /// Reward bound; bootstrapped values are clamped into `[0, r_max/(1−γ)]`.
    pub r_max: f64,
}

impl FviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("fvi iterations must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("fvi gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.target_noise > 0.0) || !(self.r_max >= 0.0) {
            return Err(Error::Config("fvi needs target_noise > 0 and r_max >= 0".into()));
        }
        Ok(())
    }

    pub fn value_cap(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }
}

/// `r + γ(1 − done) μ(s′)` for every transition, in dataset order.
pub fn bellman_targets(ds: &Dataset, mu: &(impl ValueFunction + ?Sized), gamma: f64) -> Vec<f64> {
    let transitions: Vec<_> = ds.transitions().collect();
    transitions
        .par_iter()
        .map(|t| if t.done { t.r } else { t.r + gamma * mu.value(&t.s2) })
        .collect()
}

/// Targets with the bootstrap clamped into `[0, cap]`; also returns how many were clamped.
fn clamped_targets(ds: &Dataset, mu: &(impl ValueFunction + ?Sized), gamma: f64, cap: f64) -> (Vec<f64>, usize) {
    let transitions: Vec<_> = ds.transitions().collect();
    let out: Vec<(f64, bool)> = transitions
        .par_iter()
        .map(|t| {
            if t.done {
                (t.r, false)
            } else {
                let v = mu.value(&t.s2);
                let c = v.clamp(0.0, cap);
                (t.r + gamma * c, c != v)
            }
        })
        .collect();
    let clamps = out.iter().filter(|o| o.1).count();
    (out.into_iter().map(|o| o.0).collect(), clamps)
}

/// Unique start states in first-seen order, with each transition's group.
#[derive(Clone, Debug)]
pub struct Dedup {
    pub points: Vec<Vec<f64>>,
    pub counts: Vec<u32>,
    pub group: Vec<usize>,
}

impl Dedup {
    pub fn new(ds: &Dataset) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut counts = Vec::new();
        let mut group = Vec::with_capacity(ds.n_transitions());
        for t in ds.transitions() {
            let key: Vec<u64> = t.s.iter().map(|x| x.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                points.push(t.s.clone());
                counts.push(0);
                points.len() - 1
            });
            counts[g] += 1;
            group.push(g);
        }
        Dedup { points, counts, group }
    }

    pub fn average(&self, targets: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.points.len()];
        for (&g, y) in self.group.iter().zip(targets) {
            sums[g] += y;
        }
        sums.iter().zip(&self.counts).map(|(s, &c)| s / c as f64).collect()
    }

    /// Whether `gp` was fitted on exactly these inputs and multiplicities.
    pub fn matches(&self, gp: &GpPosterior) -> bool {
        gp.len() == self.points.len()
            && gp.counts() == self.counts.as_slice()
            && gp.points().zip(&self.points).all(|(a, b)| a == b.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FviReport {
    /// `Δ_k = max |y⁽ᵏ⁺¹⁾ − y⁽ᵏ⁾|`, one entry per fit.
    pub deltas: Vec<f64>,
    /// Bootstrapped values that fell outside `[0, r_max/(1−γ)]` and were clamped.
    pub clamped: usize,
    pub n_transitions: usize,
    pub n_unique_states: usize,
    /// Whether the initial factor was reused from a previous posterior.
    pub reused_factor: bool,
}

fn sup_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fvi(spec: &KernelSpec, cfg: &FviConfig, ds: &Dataset) -> Result<(GpPosterior, FviReport)> {
    fvi_resume(spec, cfg, ds, None)
}

/// FVI whose initial targets bootstrap from `init` (when given) instead of `y⁽⁰⁾ = r`.
///
/// If `init` was fitted on the same deduplicated inputs its factor is reused.
pub fn fvi_resume(
    spec: &KernelSpec,
    cfg: &FviConfig,
    ds: &Dataset,
    init: Option<&GpPosterior>,
) -> Result<(GpPosterior, FviReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::input("fitted value iteration needs a non-empty dataset"));
    }
    let cap = cfg.value_cap();
    let dedup = Dedup::new(ds);
    let mut clamped = 0;
    let mut y = match init {
        Some(gp) => {
            let (y, c) = clamped_targets(ds, gp, cfg.gamma, cap);
            clamped += c;
            y
        }
        None => ds.transitions().map(|t| t.r).collect(),
    };
    check_bounds(&y, cap)?;
    let reuse = init.filter(|gp| gp.spec() == spec && gp.noise_variance() == cfg.target_noise && dedup.matches(gp));
    let mut gp = match reuse {
        Some(gp) => gp.with_targets(&dedup.average(&y))?,
        None => GpPosterior::fit_weighted(*spec, cfg.target_noise, &dedup.points, &dedup.average(&y), &dedup.counts)?,
    };
    let mut deltas = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let (next, c) = clamped_targets(ds, &gp, cfg.gamma, cap);
        clamped += c;
        check_bounds(&next, cap)?;
        deltas.push(sup_change(&next, &y));
        y = next;
        if k + 1 == cfg.iterations {
            break;
        }
        let avg = dedup.average(&y);
        gp = if cfg.refit_full {
            GpPosterior::fit_weighted(*spec, cfg.target_noise, &dedup.points, &avg, &dedup.counts)?
        } else {
            gp.with_targets(&avg)?
        };
    }
    Ok((
        gp,
        FviReport {
            deltas,
            clamped,
            n_transitions: ds.n_transitions(),
            n_unique_states: dedup.points.len(),
            reused_factor: reuse.is_some(),
        },
    ))
}

fn check_bounds(y: &[f64], cap: f64) -> Result<()> {
    let tol = 1e-9 * cap.max(1.0);
    match y.iter().position(|v| !(*v >= -tol && *v <= cap + tol)) {
        Some(i) => Err(Error::numerical(
            "Bellman target left [0, r_max/(1-gamma)]",
            format!("target {i} = {}, cap {cap}", y[i]),
        )),
        None => Ok(()),
    }
}

/// Largest ratio `Δ_{k+1}/Δ_k` among steps where `Δ_k` exceeds `floor`.
pub fn contraction_ratio(deltas: &[f64], floor: f64) -> Option<f64> {
    deltas
        .windows(2)
        .filter(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .reduce(f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Provenance, Transition};
    use crate::value::ConstantValue;

    fn tr(s: f64, r: f64, s2: f64, done: bool) -> Transition {
        Transition {
            s: vec![s],
            a: vec![1.0],
            r,
            s2: vec![s2],
            done,
            timeout: false,
        }
    }

    fn two_state() -> Dataset {
        let mut ds = Dataset::new(1, 1, Provenance::Offline);
        ds.episodes.push(vec![tr(0.0, 0.0, 1.0, false), tr(1.0, 1.0, 1.0, true)]);
        ds
    }

    fn cfg(iterations: usize, gamma: f64) -> FviConfig {
        FviConfig {
            iterations,
            gamma,
            refit_full: true,
            target_noise: 1e-8,
            r_max: 1.0,
        }
    }

    #[test]
    fn terminal_mask_and_zero_init() {
        let ds = two_state();
        let y = bellman_targets(&ds, &ConstantValue(123.0), 0.5);
        assert_eq!(y[1], 1.0);
        assert_eq!(bellman_targets(&ds, &ConstantValue(0.0), 0.5), vec![0.0, 1.0]);
    }

    #[test]
    fn one_refit_bootstraps_gamma() {
        let ds = two_state();
        let spec = KernelSpec::rbf(0.3, 1.0).unwrap();
        let (gp, _) = fvi(&spec, &cfg(1, 0.5), &ds).unwrap();
        let y = bellman_targets(&ds, &gp, 0.5);
        assert!((y[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn single_iteration_is_reward_regression() {
        let ds = two_state();
        let spec = KernelSpec::rbf(0.7, 1.0).unwrap();
        let c = FviConfig { target_noise: 0.1, ..cfg(1, 0.5) };
        let (gp, report) = fvi(&spec, &c, &ds).unwrap();
        let direct = GpPosterior::fit(spec, 0.1, &[vec![0.0], vec![1.0]], &[0.0, 1.0]).unwrap();
        for s in [[0.0], [0.4], [1.0]] {
            assert_eq!(gp.mean(&s).unwrap(), direct.mean(&s).unwrap());
        }
        assert_eq!(report.deltas.len(), 1);
    }

    #[test]
    fn warm_start_matches_full_refit() {
        let ds = two_state();
        let spec = KernelSpec::rbf(0.5, 1.0).unwrap();
        let c = FviConfig { target_noise: 0.01, ..cfg(8, 0.9) };
        let (full, a) = fvi(&spec, &c, &ds).unwrap();
        let (warm, b) = fvi(&spec, &FviConfig { refit_full: false, ..c }, &ds).unwrap();
        for s in [[0.0], [0.5], [1.0]] {
            assert!((full.mean(&s).unwrap() - warm.mean(&s).unwrap()).abs() < 1e-10);
        }
        for (x, y) in a.deltas.iter().zip(&b.deltas) {
            assert!((x - y).abs() < 1e-10);
        }
        let (_, resumed) = fvi_resume(&spec, &c, &ds, Some(&full)).unwrap();
        assert!(resumed.reused_factor);
    }

    #[test]
    fn duplicates_are_merged_with_counts() {
        let mut ds = two_state();
        ds.episodes.push(vec![tr(0.0, 0.0, 1.0, false), tr(1.0, 1.0, 1.0, true)]);
        let dedup = Dedup::new(&ds);
        assert_eq!(dedup.points.len(), 2);
        assert_eq!(dedup.counts, vec![2, 2]);
        assert_eq!(dedup.group, vec![0, 1, 0, 1]);
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let spec = KernelSpec::rbf(0.5, 1.0).unwrap();
        let empty = Dataset::new(1, 1, Provenance::Offline);
        assert!(fvi(&spec, &cfg(3, 0.9), &empty).is_err());
        assert!(fvi(&spec, &cfg(0, 0.9), &two_state()).is_err());
        assert!(fvi(&spec, &cfg(3, 1.0), &two_state()).is_err());
    }

    #[test]
    fn contraction_ratio_skips_converged_steps() {
        assert_eq!(contraction_ratio(&[1.0, 0.5, 0.25, 1e-12, 1e-11], 1e-9), Some(0.5));
        assert_eq!(contraction_ratio(&[1.0], 1e-9), None);
    }
}
