//! Numerical checks of the concentration, information-gain and rate
//! statements behind the active loop.
//!
//! Everything here works on a synthetic truth whose RKHS norm is known
//! exactly, or on logs produced by [`crate::active::run_active`].

mod envbound;
mod rate;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::env::{EnvModel, Grid};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, VarianceTracker};
use crate::kernel::KernelSpec;
use crate::rng::Rng;

pub use envbound::{budget_records, summarize_env_bound, BudgetRecord, EnvBoundConfig, EnvBoundSummary};
pub use rate::{
    calibrate, least_squares_slope, rate_report, synthetic_rate_gaps, RateReport, SyntheticRateConfig,
};

/// Confidence width multiplier `B + σ√(2(γ + ln(1/δ)))`.
pub fn beta(b_norm: f64, sigma: f64, gamma_t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sigma >= 0.0) || !(gamma_t >= 0.0) || !(b_norm >= 0.0) {
        return Err(Error::input("beta needs non-negative B, sigma and information gain"));
    }
    Ok(b_norm + sigma * (2.0 * (gamma_t + (1.0 / delta).ln())).sqrt())
}

/// `C (β + L/(1−γ)) √(γ_T / T)`.
pub fn gap_bound(c: f64, beta_t: f64, l: f64, gamma: f64, gamma_t: f64, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::input("the gap bound needs at least one round"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::input(format!("discount must lie in (0, 1), got {gamma}")));
    }
    Ok(c * bound_shape(beta_t, l, gamma, gamma_t, t))
}

pub(crate) fn bound_shape(beta_t: f64, l: f64, gamma: f64, gamma_t: f64, t: usize) -> f64 {
    (beta_t + l / (1.0 - gamma)) * (gamma_t.max(0.0) / t as f64).sqrt()
}

/// Bellman Lipschitz constant `γ(1 + L_p)`.
pub fn lipschitz_l(gamma: f64, l_p: f64) -> f64 {
    gamma * (1.0 + l_p)
}

/// Largest noise variance for which `min(1, x) ≤ ln(1 + x/σ²)` holds for all `x ∈ [0, 1]`.
///
/// The per-step inequality is tight at `x = 1`, which needs `ln(1 + 1/σ²) ≥ 1`.
pub fn variance_sum_noise_limit() -> f64 {
    1.0 / (std::f64::consts::E - 1.0)
}

/// A function `f = Σ α_i k(·, x_i)` with exactly known RKHS norm.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    pub spec: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// `√(αᵀ K α)`.
    pub b_norm: f64,
}

impl SyntheticTruth {
    pub fn new(spec: KernelSpec, anchors: Vec<Vec<f64>>, alpha: Vec<f64>) -> Result<Self> {
        if anchors.len() != alpha.len() || anchors.is_empty() {
            return Err(Error::input("need one weight per anchor and at least one anchor"));
        }
        let k = spec.gram(&anchors)?;
        let n = anchors.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += alpha[i] * k.get(i, j) * alpha[j];
            }
        }
        Ok(SyntheticTruth {
            spec,
            anchors,
            alpha,
            b_norm: q.max(0.0).sqrt(),
        })
    }

    /// Anchors uniform in `[0, 1]^dim`, weights standard normal.
    pub fn random(spec: KernelSpec, dim: usize, n_anchors: usize, rng: &mut Rng) -> Result<Self> {
        let anchors: Vec<Vec<f64>> = (0..n_anchors)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let alpha = (0..n_anchors).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(spec, anchors, alpha)
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(&self.alpha)
            .map(|(x, a)| a * self.spec.eval_unchecked(x, s))
            .sum()
    }
}

/// Regular grid over `[0, 1]^dim` with `per_dim` nodes per axis.
pub fn unit_grid(dim: usize, per_dim: usize) -> Vec<Vec<f64>> {
    Grid::new(vec![0.0; dim], vec![1.0; dim], vec![per_dim; dim]).nodes()
}

/// How query points are chosen from a candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRule {
    /// Largest posterior variance, lowest index on ties.
    Greedy,
    Random,
    /// The first candidate, over and over.
    Repeat,
}

/// Query indices into `candidates` under `rule`, conditioning a fresh prior as it goes.
pub fn query_sequence<P: AsRef<[f64]>>(
    rule: QueryRule,
    spec: &KernelSpec,
    noise_variance: f64,
    candidates: &[P],
    t: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::input("query sequences need candidates"));
    }
    match rule {
        QueryRule::Random => Ok((0..t).map(|_| rng.random_range(0..candidates.len())).collect()),
        QueryRule::Repeat => Ok(vec![0; t]),
        QueryRule::Greedy => {
            let mut gp = GpPosterior::prior(*spec, noise_variance)?;
            let mut tracker = VarianceTracker::new(&gp, candidates)?;
            let mut out = Vec::with_capacity(t);
            for _ in 0..t {
                let i = tracker.argmax();
                gp.observe_tracked(candidates[i].as_ref(), 0.0, &mut tracker)?;
                out.push(i);
            }
            Ok(out)
        }
    }
}

/// Both sides of `Σ min(1, σ²_{t−1}(s_t)) ≤ 2γ_t`, prefix by prefix.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceSumReport {
    pub t: usize,
    pub variance_sum: f64,
    /// `2γ_T`.
    pub cap: f64,
    pub prefix_sums: Vec<f64>,
    pub prefix_caps: Vec<f64>,
    /// First prefix length whose sum exceeds its cap.
    pub first_violation: Option<usize>,
    /// Whether the noise variance is at most [`variance_sum_noise_limit`].
    pub noise_in_regime: bool,
}

impl VarianceSumReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }

    fn from_terms(terms: impl Iterator<Item = (f64, f64)>, noise_variance: f64) -> Self {
        let (mut sum, mut gain) = (0.0, 0.0);
        let (mut prefix_sums, mut prefix_caps) = (Vec::new(), Vec::new());
        let mut first_violation = None;
        for (var, inc) in terms {
            sum += var.min(1.0);
            gain += inc;
            prefix_sums.push(sum);
            prefix_caps.push(2.0 * gain);
            // absolute slack for accumulated rounding only
            if first_violation.is_none() && sum > 2.0 * gain + 1e-12 * (1.0 + sum) {
                first_violation = Some(prefix_sums.len());
            }
        }
        VarianceSumReport {
            t: prefix_sums.len(),
            variance_sum: sum,
            cap: 2.0 * gain,
            prefix_sums,
            prefix_caps,
            first_violation,
            noise_in_regime: noise_variance <= variance_sum_noise_limit(),
        }
    }
}

/// Check the variance-sum inequality along `queries`, starting from the prior.
pub fn verify_variance_sum<P: AsRef<[f64]>>(
    spec: &KernelSpec,
    noise_variance: f64,
    queries: &[P],
) -> Result<VarianceSumReport> {
    for q in queries {
        if spec.diag(q.as_ref()) > 1.0 + 1e-12 {
            return Err(Error::input("the variance-sum check needs k(s, s) <= 1"));
        }
    }
    let mut gp = GpPosterior::prior(*spec, noise_variance)?;
    let mut terms = Vec::with_capacity(queries.len());
    for q in queries {
        let obs = gp.observe(q.as_ref(), 0.0)?;
        terms.push((obs.variance_before, obs.info_gain_increment));
    }
    Ok(VarianceSumReport::from_terms(terms.into_iter(), noise_variance))
}

/// The same check over the active steps of a run, conditioned on its offline data.
pub fn verify_variance_sum_log(
    spec: &KernelSpec,
    noise_variance: f64,
    log: &crate::active::RunLog,
) -> Result<VarianceSumReport> {
    if log.steps.iter().any(|s| spec.diag(&s.state) > 1.0 + 1e-12) {
        return Err(Error::input("the variance-sum check needs k(s, s) <= 1"));
    }
    let mut prev = log.initial_info_gain;
    let terms: Vec<(f64, f64)> = log
        .steps
        .iter()
        .map(|s| {
            let inc = s.info_gain - prev;
            prev = s.info_gain;
            (s.variance_before, inc)
        })
        .collect();
    Ok(VarianceSumReport::from_terms(terms.into_iter(), noise_variance))
}

/// Protocol for [`verify_concentration`].
#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationConfig {
    pub dim: usize,
    pub n_anchors: usize,
    /// Queries per trial.
    pub horizon: usize,
    /// Checkpoints per axis on `[0, 1]^dim`.
    pub grid_per_dim: usize,
    pub trials: usize,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            dim: 1,
            n_anchors: 8,
            horizon: 50,
            grid_per_dim: 41,
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialCoverage {
    pub b_norm: f64,
    pub checkpoints: usize,
    pub covered: usize,
    pub rate: f64,
    /// Mean confidence half-width `β σ` at the last step.
    pub final_mean_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub delta: f64,
    pub trials: Vec<TrialCoverage>,
    /// Trials whose coverage reached `1 − δ`.
    pub passing_trials: usize,
    pub mean_rate: f64,
}

/// Monte-Carlo check of `|f − μ_{t−1}| ≤ β_{t−1} σ_{t−1}` on a grid.
///
/// Each trial draws a fresh synthetic truth, queries uniform random points
/// with Gaussian noise of standard deviation `sigma`, and tests every grid
/// point before every query.
pub fn verify_concentration(
    spec: &KernelSpec,
    sigma: f64,
    delta: f64,
    cfg: &ConcentrationConfig,
    rng: &mut Rng,
) -> Result<CoverageReport> {
    if cfg.trials == 0 || cfg.horizon == 0 || cfg.dim == 0 {
        return Err(Error::input("concentration check needs trials, horizon and dim >= 1"));
    }
    beta(0.0, sigma, 0.0, delta)?;
    let grid = unit_grid(cfg.dim, cfg.grid_per_dim);
    let mut trials = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let truth = SyntheticTruth::random(*spec, cfg.dim, cfg.n_anchors, rng)?;
        let f_grid: Vec<f64> = grid.iter().map(|g| truth.value(g)).collect();
        let mut gp = GpPosterior::prior(*spec, sigma * sigma)?;
        let (mut covered, mut total, mut width) = (0, 0, 0.0);
        for _ in 0..cfg.horizon {
            let b = beta(truth.b_norm, sigma, gp.info_gain(), delta)?;
            let var = gp.variance_batch(&grid)?;
            width = 0.0;
            for ((g, f), v) in grid.iter().zip(&f_grid).zip(&var) {
                let w = b * v.sqrt();
                width += w;
                total += 1;
                if (f - gp.mean(g)?).abs() <= w + 1e-9 {
                    covered += 1;
                }
            }
            width /= grid.len() as f64;
            let x: Vec<f64> = (0..cfg.dim).map(|_| rng.random::<f64>()).collect();
            let eta: f64 = StandardNormal.sample(rng);
            gp.observe(&x, truth.value(&x) + sigma * eta)?;
        }
        trials.push(TrialCoverage {
            b_norm: truth.b_norm,
            checkpoints: total,
            covered,
            rate: covered as f64 / total as f64,
            final_mean_width: width,
        });
    }
    let passing_trials = trials.iter().filter(|t| t.rate >= 1.0 - delta).count();
    let mean_rate = trials.iter().map(|t| t.rate).sum::<f64>() / trials.len() as f64;
    Ok(CoverageReport {
        delta,
        trials,
        passing_trials,
        mean_rate,
    })
}

/// Monte-Carlo discounted visitation `d_ρ^π` over the nodes of `grid`.
///
/// Step `t` of an episode adds `(1 − γ)γ^t` to the node nearest `s_t`.
/// When an episode ends at step `t_end`, the unspent mass `γ^{t_end+1}`
/// goes to its final successor, so each episode contributes exactly one
/// unit.
pub fn empirical_visitation(
    env: &EnvModel,
    policy: &dyn Fn(&[f64]) -> Vec<f64>,
    grid: &Grid,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::input("visitation estimate needs at least one episode"));
    }
    let gamma = env.gamma();
    let mut weights = vec![0.0; grid.len()];
    for _ in 0..episodes {
        let mut s = env.sample_initial(rng);
        let mut disc = 1.0;
        for _ in 0..env.horizon() {
            weights[grid.nearest(&s)] += (1.0 - gamma) * disc;
            disc *= gamma;
            let a = policy(&s);
            let out = env.step(&s, &a, rng)?;
            s = out.s2;
            if out.done {
                break;
            }
        }
        weights[grid.nearest(&s)] += disc;
    }
    let n = episodes as f64;
    weights.iter_mut().for_each(|w| *w /= n);
    Ok(weights)
}

/// `E_d[σ(s)]` for a distribution over the nodes of `grid`.
pub fn weighted_sigma(gp: &GpPosterior, grid: &Grid, weights: &[f64]) -> Result<f64> {
    let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let nodes: Vec<Vec<f64>> = support.iter().map(|&i| grid.node(i)).collect();
    let var = gp.variance_batch(&nodes)?;
    Ok(support.iter().zip(&var).map(|(&i, v)| weights[i] * v.sqrt()).sum())
}

/// Theoretical quantities at one budget, next to their empirical counterparts.
#[derive(Clone, Debug, Serialize)]
#[allow(non_snake_case)]
pub struct BoundReport {
    pub T: usize,
    /// Realized information gain of the active queries, in nats.
    pub gamma_t: f64,
    /// Growth envelope of the maximal information gain at `T`.
    pub gamma_t_envelope: f64,
    pub beta_t: f64,
    pub lipschitz_l: f64,
    pub c: f64,
    pub bound_value: f64,
    pub empirical_gap: f64,
    pub empirical_mean_sigma: f64,
    /// `(β + L/(1−γ)) E_d̂[σ_T]` under the learned policy's visitation, before calibration.
    pub visitation_sigma_term: Option<f64>,
    pub coverage_rate: Option<f64>,
    pub variance_sum: f64,
    pub variance_sum_cap: f64,
    /// Max grid σ after offline fitting.
    pub sigma_max: Option<f64>,
    /// Plug-in RKHS norm of the fitted value function, an estimate of `B`.
    pub b_estimate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, ChainStart};
    use crate::gp::batch_info_gain;
    use crate::rng::{SeedTree, VERIFY};

    fn rng() -> Rng {
        SeedTree::new(11).stream(VERIFY)
    }

    #[test]
    fn beta_values() {
        let b = beta(1.0, 0.1, 2.0, 0.05).unwrap();
        assert!((b - (1.0 + 0.1 * (2.0 * (2.0 + 20f64.ln())).sqrt())).abs() < 1e-15);
        assert!((b - 1.31610).abs() < 1e-5);
        assert_eq!(beta(1.7, 0.0, 3.0, 0.05).unwrap(), 1.7);
        assert!((beta(1.0, 0.3, 0.0, 1.0 - 1e-15).unwrap() - 1.0).abs() < 1e-6);
        assert!(beta(1.0, 0.1, 1.0, 0.0).is_err());
        assert!(beta(1.0, 0.1, 1.0, 1.0).is_err());
        let mut prev = 0.0;
        for g in [0.0, 0.5, 1.0, 4.0] {
            let b = beta(1.0, 0.2, g, 0.1).unwrap();
            assert!(b > prev);
            prev = b;
        }
        assert!(beta(1.0, 0.2, 1.0, 0.01).unwrap() > beta(1.0, 0.2, 1.0, 0.1).unwrap());
    }

    #[test]
    fn gap_bound_values() {
        assert_eq!(gap_bound(1.0, 2.0, 5.0, 0.9, 0.0, 10).unwrap(), 0.0);
        let a = gap_bound(1.3, 2.0, 5.0, 0.9, 3.0, 100).unwrap();
        let b = gap_bound(1.3, 2.0, 5.0, 0.9, 3.0, 200).unwrap();
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
        let l = lipschitz_l(0.99, 0.0);
        let v = gap_bound(1.0, 1.3161, l, 0.99, 2.0, 100).unwrap();
        assert!((l / 0.01 - 99.0).abs() < 1e-9);
        assert!((v - 14.187).abs() < 1e-3);
        assert!(gap_bound(1.0, 1.0, 1.0, 1.0, 1.0, 1).is_err());
        assert!(gap_bound(1.0, 1.0, 1.0, 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn single_step_variance_sum_regime() {
        // min(1, x) against ln(1 + x/σ²) on a dense sweep of x ∈ (0, 1]
        let limit = variance_sum_noise_limit();
        let holds = |noise: f64| {
            (1..=1000).all(|i| {
                let x = i as f64 / 1000.0;
                x.min(1.0) <= (1.0 + x / noise).ln() + 1e-15
            })
        };
        for noise in [1e-4, 0.01, 0.1, 0.3, 0.5, limit] {
            assert!(holds(noise), "noise {noise}");
        }
        for noise in [limit * 1.01, 0.7, 1.0, 4.0] {
            assert!(!holds(noise), "noise {noise}");
        }
        let spec = KernelSpec::rbf(0.2, 1.0).unwrap();
        assert!(verify_variance_sum(&spec, 0.5, &[vec![0.3]]).unwrap().holds());
        let r = verify_variance_sum(&spec, 1.0, &[vec![0.3]]).unwrap();
        assert!(!r.holds() && !r.noise_in_regime);
    }

    #[test]
    fn variance_sum_sequences_hold() {
        let spec = KernelSpec::matern52(0.15, 1.0).unwrap();
        let grid = unit_grid(1, 60);
        let mut r = rng();
        for noise in [0.01, 0.25, 0.5] {
            for rule in [QueryRule::Greedy, QueryRule::Random, QueryRule::Repeat] {
                let idx = query_sequence(rule, &spec, noise, &grid, 200, &mut r).unwrap();
                let qs: Vec<&Vec<f64>> = idx.iter().map(|&i| &grid[i]).collect();
                let rep = verify_variance_sum(&spec, noise, &qs).unwrap();
                assert!(rep.holds(), "{rule:?} {noise}");
                let exact = batch_info_gain(&spec, noise, &qs).unwrap();
                assert!((rep.cap - 2.0 * exact).abs() < 1e-8 * (1.0 + exact));
            }
        }
        let big = KernelSpec::rbf(0.2, 2.0).unwrap();
        assert!(verify_variance_sum(&big, 0.1, &[vec![0.1]]).is_err());
    }

    #[test]
    fn greedy_sequence_spreads_out() {
        let spec = KernelSpec::rbf(0.5, 1.0).unwrap();
        let grid = unit_grid(1, 21);
        let idx = query_sequence(QueryRule::Greedy, &spec, 0.01, &grid, 3, &mut rng()).unwrap();
        assert_eq!(idx[0], 0);
        assert_eq!(idx[1], 20);
        assert_ne!(idx[2], 0);
    }

    #[test]
    fn synthetic_truth_norm() {
        let spec = KernelSpec::rbf(0.3, 1.0).unwrap();
        // single anchor: ‖α k(·, x)‖ = |α|√k(x, x)
        let t = SyntheticTruth::new(spec, vec![vec![0.4]], vec![-2.0]).unwrap();
        assert!((t.b_norm - 2.0).abs() < 1e-15);
        assert!((t.value(&[0.4]) + 2.0).abs() < 1e-15);
        // reproducing property: |f(s)| ≤ B √k(s, s)
        let t = SyntheticTruth::random(spec, 2, 6, &mut rng()).unwrap();
        for g in unit_grid(2, 9) {
            assert!(t.value(&g).abs() <= t.b_norm + 1e-12);
        }
    }

    #[test]
    fn noiseless_interpolation_has_no_violations() {
        let spec = KernelSpec::rbf(0.25, 1.0).unwrap();
        let truth = SyntheticTruth::random(spec, 1, 5, &mut rng()).unwrap();
        let sigma = 1e-5;
        let mut gp = GpPosterior::prior(spec, sigma * sigma).unwrap();
        for x in &truth.anchors {
            gp.observe(x, truth.value(x)).unwrap();
        }
        let b = beta(truth.b_norm, sigma, gp.info_gain(), 0.05).unwrap();
        for g in unit_grid(1, 101) {
            let (m, v) = gp.predict(&g).unwrap();
            assert!((truth.value(&g) - m).abs() <= b * v.sqrt() + 1e-9);
        }
    }

    #[test]
    fn concentration_small_run() {
        let spec = KernelSpec::rbf(0.2, 1.0).unwrap();
        let cfg = ConcentrationConfig {
            trials: 5,
            horizon: 20,
            ..ConcentrationConfig::default()
        };
        let rep = verify_concentration(&spec, 0.1, 0.05, &cfg, &mut rng()).unwrap();
        assert_eq!(rep.trials.len(), 5);
        assert!(rep.trials.iter().all(|t| t.checkpoints == 20 * 41));
        assert_eq!(rep.passing_trials, 5);
        // widths shrink as data arrives
        assert!(rep.trials.iter().all(|t| t.final_mean_width < t.b_norm));
    }

    #[test]
    fn visitation_closed_forms() {
        let single = EnvModel::Chain(ChainMdp::new(1, 0.9));
        let grid = single.oracle_grid(2).unwrap();
        let stay = |_: &[f64]| vec![1.0];
        let w = empirical_visitation(&single, &stay, &grid, 10, &mut rng()).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[0] - 1.0).abs() < 1e-12);

        let mut chain = ChainMdp::new(5, 0.5);
        chain.start = ChainStart::First;
        let env = EnvModel::Chain(chain);
        let grid = env.oracle_grid(5).unwrap();
        let right = |_: &[f64]| vec![1.0];
        let w = empirical_visitation(&env, &right, &grid, 1000, &mut rng()).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (t, wt) in w.iter().take(4).enumerate() {
            assert!((wt - 0.5 * 0.5f64.powi(t as i32)).abs() < 1e-3);
        }
        assert!((w[4] - 0.5f64.powi(4)).abs() < 1e-3);

        let maze = EnvModel::Maze2d(crate::env::Maze2d::default());
        let grid = maze.oracle_grid(21).unwrap();
        let mut r = rng();
        let w = empirical_visitation(&maze, &|_: &[f64]| vec![0.0, 0.0], &grid, 3, &mut r).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(empirical_visitation(&maze, &|_: &[f64]| vec![0.0, 0.0], &grid, 0, &mut r).is_err());
    }
}
