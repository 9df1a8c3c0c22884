//! Gap-versus-budget slopes and constant calibration.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{unit_grid, QueryRule, SyntheticTruth};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, VarianceTracker};
use crate::kernel::KernelSpec;
use crate::rng::{Rng, SeedTree, VERIFY};

/// Median gap per budget and the log-log slope with a bootstrap interval.
#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub budgets: Vec<usize>,
    pub median_gaps: Vec<f64>,
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Zero gaps left out of the medians, which have no logarithm.
    pub excluded_zero: usize,
    pub n_seeds: usize,
}

impl RateReport {
    pub fn ci_excludes_zero(&self) -> bool {
        self.ci_high < 0.0 || self.ci_low > 0.0
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn medians(gaps: &[Vec<f64>], seeds: &[usize], n_budgets: usize) -> Option<Vec<f64>> {
    (0..n_budgets)
        .map(|b| {
            let mut col: Vec<f64> = seeds.iter().map(|&s| gaps[s][b]).filter(|g| *g > 0.0).collect();
            (!col.is_empty()).then(|| median(&mut col))
        })
        .collect()
}

fn log_slope(budgets: &[usize], med: &[f64]) -> f64 {
    let x: Vec<f64> = budgets.iter().map(|&t| (t as f64).ln()).collect();
    let y: Vec<f64> = med.iter().map(|g| g.ln()).collect();
    least_squares_slope(&x, &y)
}

/// Slope of `ln median gap` against `ln T`; `gaps[seed][budget]`.
///
/// The interval is the 2.5 and 97.5 percentiles over `n_boot` resamples of
/// whole seeds.
pub fn rate_report(budgets: &[usize], gaps: &[Vec<f64>], n_boot: usize, rng: &mut Rng) -> Result<RateReport> {
    if budgets.len() < 2 || gaps.is_empty() || gaps.iter().any(|g| g.len() != budgets.len()) {
        return Err(Error::input("rate report needs two budgets and one gap per seed and budget"));
    }
    let n_seeds = gaps.len();
    let all: Vec<usize> = (0..n_seeds).collect();
    let median_gaps =
        medians(gaps, &all, budgets.len()).ok_or_else(|| Error::input("every gap at some budget is zero"))?;
    let slope = log_slope(budgets, &median_gaps);
    let mut boot = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let pick: Vec<usize> = (0..n_seeds).map(|_| rng.random_range(0..n_seeds)).collect();
        if let Some(m) = medians(gaps, &pick, budgets.len()) {
            boot.push(log_slope(budgets, &m));
        }
    }
    boot.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if boot.is_empty() {
        (slope, slope)
    } else {
        let at = |q: f64| boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (at(0.025), at(0.975))
    };
    Ok(RateReport {
        budgets: budgets.to_vec(),
        median_gaps,
        slope,
        ci_low,
        ci_high,
        excluded_zero: gaps.iter().flatten().filter(|g| **g <= 0.0).count(),
        n_seeds,
    })
}

/// Fix the constant on the first budget: `C = gap₀ / shape₀`.
///
/// Returns `C` and the ratios `C·shape_b / gap_b`; a ratio of at least one
/// means the calibrated bound covers that budget.
pub fn calibrate(shapes: &[f64], gaps: &[f64]) -> Result<(f64, Vec<f64>)> {
    if shapes.is_empty() || shapes.len() != gaps.len() || !(shapes[0] > 0.0) {
        return Err(Error::input("calibration needs matching shapes and a positive first shape"));
    }
    let c = gaps[0] / shapes[0];
    let ratios = shapes
        .iter()
        .zip(gaps)
        .map(|(s, g)| if *g > 0.0 { c * s / g } else { f64::INFINITY })
        .collect();
    Ok((c, ratios))
}

/// Regression harness with a known truth: the gap at budget `T` is the
/// sup error of `μ_T` over a grid on `[0, 1]^dim`.
#[derive(Clone, Debug, Serialize)]
pub struct SyntheticRateConfig {
    pub spec: KernelSpec,
    pub noise_variance: f64,
    pub dim: usize,
    pub n_anchors: usize,
    pub grid_per_dim: usize,
    pub budgets: Vec<usize>,
    pub seeds: usize,
    pub rule: QueryRule,
}

/// `(gaps, info gains)`, each indexed `[seed][budget]`.
///
/// One run per seed to the largest budget; smaller budgets are its prefixes.
/// Greedy queries maximise variance over the grid, random ones are uniform
/// on the cube.
pub fn synthetic_rate_gaps(cfg: &SyntheticRateConfig, seeds: &SeedTree) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if cfg.budgets.windows(2).any(|w| w[0] >= w[1]) || cfg.budgets.first() == Some(&0) {
        return Err(Error::input("budgets must be positive and increasing"));
    }
    let grid = unit_grid(cfg.dim, cfg.grid_per_dim);
    let max_t = *cfg.budgets.last().ok_or_else(|| Error::input("no budgets"))?;
    let sigma = cfg.noise_variance.sqrt();
    let (mut gaps, mut gains) = (Vec::new(), Vec::new());
    for seed in 0..cfg.seeds {
        let mut rng = seeds.indexed(VERIFY, seed as u64);
        let truth = SyntheticTruth::random(cfg.spec, cfg.dim, cfg.n_anchors, &mut rng)?;
        let f: Vec<f64> = grid.iter().map(|g| truth.value(g)).collect();
        let mut gp = GpPosterior::prior(cfg.spec, cfg.noise_variance)?;
        let mut tracker = match cfg.rule {
            QueryRule::Greedy => Some(VarianceTracker::new(&gp, &grid)?),
            _ => None,
        };
        let (mut g_row, mut i_row) = (Vec::new(), Vec::new());
        let mut next = cfg.budgets.iter().peekable();
        for t in 1..=max_t {
            let x = match (&tracker, cfg.rule) {
                (Some(tr), _) => grid[tr.argmax()].clone(),
                (None, QueryRule::Repeat) => grid[0].clone(),
                (None, _) => (0..cfg.dim).map(|_| rng.random::<f64>()).collect(),
            };
            let eta: f64 = StandardNormal.sample(&mut rng);
            let y = truth.value(&x) + sigma * eta;
            match tracker.as_mut() {
                Some(tr) => gp.observe_tracked(&x, y, tr)?,
                None => gp.observe(&x, y)?,
            };
            if next.peek() == Some(&&t) {
                next.next();
                let mut sup: f64 = 0.0;
                for (g, fv) in grid.iter().zip(&f) {
                    sup = sup.max((gp.mean(g)? - fv).abs());
                }
                g_row.push(sup);
                i_row.push(gp.info_gain());
            }
        }
        gaps.push(g_row);
        gains.push(i_row);
    }
    Ok((gaps, gains))
}
