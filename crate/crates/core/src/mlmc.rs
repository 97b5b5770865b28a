//! Multilevel Monte Carlo driver.
//!
//! The expectation `E[p(L_{N_K})]` on the finest basket is split into a
//! telescoping sum over basket sizes `N_l = N_0 · M^l`,
//!
//! ```text
//! E[p(L_{N_K})] = E[p(L_{N_0})] + Σ_{l=1..K} E[p(L_{N_l}) - p(L_{N_{l-1}})],
//! ```
//!
//! where each difference couples the fine basket to coarse baskets through
//! the group construction: conditional on the factor, the fine basket is
//! the union of `M` independent coarse-sized groups and its loss fraction
//! is their average. Each level term is estimated independently; the
//! variance-optimal sample allocation then spends effort where the product
//! of variance and cost demands it.
//!
//! Every sample draws its own counter-based RNG substream keyed by
//! `(seed, estimator domain, level, sample index)` and per-level streams
//! are folded blockwise in index order, so results are bit-identical for
//! any thread count and top-up schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{
    sample_base_loss, sample_group_losses_into, CoupledLevelSample, LossFactorModel,
};
use crate::payoff::LossPayoff;
use crate::rng::{substream, DOMAIN_IMPROVED, DOMAIN_SINGLE_LEVEL, DOMAIN_STANDARD};
use crate::structural::{sample_basket_loss, sample_structural_coupled_into};

/// Default number of pilot samples drawn when a level becomes active.
pub const DEFAULT_PILOT_SAMPLES: u64 = 10_000;
/// Default sampling cost budget (in per-sample cost units).
pub const DEFAULT_COST_BUDGET: f64 = 1e9;
/// Samples per parallel work block. Fixed so that the blockwise folding
/// order — and therefore every statistic — is independent of thread count.
const BLOCK_SIZE: u64 = 4096;

/// Geometric ladder of basket sizes `N_l = N_0 · M^l`, `l = 0..=K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelGeometry {
    /// Group count `M` (fine baskets hold `M` coarse-sized groups).
    pub refinement: u32,
    /// Base basket size `N_0`.
    pub base_size: u64,
    /// Finest level index `K`.
    pub max_level: u32,
}

impl LevelGeometry {
    /// Validate and build a ladder; the finest size must fit in `u64`.
    pub fn new(refinement: u32, base_size: u64, max_level: u32) -> Result<Self> {
        if refinement < 2 {
            return Err(Error::InvalidParameter(format!(
                "refinement factor must be at least 2, got {refinement}"
            )));
        }
        if base_size == 0 {
            return Err(Error::InvalidParameter(
                "base basket size must be at least 1".into(),
            ));
        }
        (refinement as u64)
            .checked_pow(max_level)
            .and_then(|f| base_size.checked_mul(f))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "finest basket size {base_size} * {refinement}^{max_level} overflows"
                ))
            })?;
        Ok(Self {
            refinement,
            base_size,
            max_level,
        })
    }

    /// Basket size `N_l` at a level of the ladder.
    pub fn n_at(&self, level: u32) -> u64 {
        assert!(level <= self.max_level, "level beyond the ladder");
        self.base_size * (self.refinement as u64).pow(level)
    }

    /// Number of levels, including level 0.
    pub fn num_levels(&self) -> usize {
        self.max_level as usize + 1
    }
}

/// Which coarse value a coupled level sample uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Coarse value is the payoff of the first group alone.
    Standard,
    /// Coarse value is the average payoff over all `M` groups, reusing
    /// every group as a coarse sample.
    Improved,
}

impl EstimatorKind {
    /// RNG domain tag separating this estimator's sample streams.
    pub fn rng_domain(self) -> u64 {
        match self {
            EstimatorKind::Standard => DOMAIN_STANDARD,
            EstimatorKind::Improved => DOMAIN_IMPROVED,
        }
    }

    /// Short name used in file names and reports.
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Standard => "standard",
            EstimatorKind::Improved => "improved",
        }
    }
}

/// Per-sample value of the level-`l` difference for a coupled sample:
/// payoff of the fine loss minus the estimator's coarse value.
pub fn level_difference(
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
    sample: &CoupledLevelSample,
) -> f64 {
    let fine = payoff.value(sample.fine_loss);
    let coarse = match kind {
        EstimatorKind::Standard => payoff.value(sample.group_losses[0]),
        EstimatorKind::Improved => {
            sample
                .group_losses
                .iter()
                .map(|&g| payoff.value(g))
                .sum::<f64>()
                / sample.group_losses.len() as f64
        }
    };
    fine - coarse
}

/// Draw one per-sample value of the level-`level` estimator term: the plain
/// payoff at level 0, the coupled difference above. `scratch` is reused
/// between calls to keep the hot loop allocation-free.
pub fn sample_level_value(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
    geometry: &LevelGeometry,
    level: u32,
    scratch: &mut CoupledLevelSample,
    rng: &mut impl rand::Rng,
) -> f64 {
    if level == 0 {
        let n0 = geometry.base_size;
        let loss = match model {
            LossFactorModel::Structural(params) => sample_basket_loss(params, n0, rng),
            _ => {
                let factor = model.sample_factor(rng).expect("scalar-factor model");
                sample_base_loss(factor, n0, rng)
            }
        };
        return payoff.value(loss);
    }
    let coarse_n = geometry.n_at(level - 1);
    match model {
        LossFactorModel::Structural(params) => sample_structural_coupled_into(
            scratch,
            params,
            level,
            geometry.refinement,
            coarse_n,
            rng,
        ),
        _ => {
            let factor = model.sample_factor(rng).expect("scalar-factor model");
            sample_group_losses_into(scratch, factor, level, geometry.refinement, coarse_n, rng);
        }
    }
    level_difference(payoff, kind, scratch)
}

/// Per-sample cost of a level: the number of simulated names, times the
/// observation-date count for the structural model (path simulation is
/// charged per firm-date).
pub fn level_cost(model: &LossFactorModel, geometry: &LevelGeometry, level: u32) -> f64 {
    let names = geometry.n_at(level) as f64;
    match model {
        LossFactorModel::Structural(params) => names * params.n_obs() as f64,
        _ => names,
    }
}

/// Streaming mean/variance accumulator (Welford updates, exact pairwise
/// merges), so one pass over samples yields numerically stable statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    /// Fold in one observation.
    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Fold in another accumulator (Chan's pairwise combination).
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 +=
            other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (zero with fewer than two observations).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Summary of one level's accumulated samples.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelStats {
    pub level: u32,
    /// Samples drawn at this level.
    pub n: u64,
    /// Sample mean of the level term.
    pub mean: f64,
    /// Per-sample variance estimate of the level term.
    pub variance: f64,
    /// Cost of one sample at this level.
    pub cost_per_sample: f64,
}

impl LevelStats {
    fn from_running(level: u32, stats: &RunningStats, cost_per_sample: f64) -> Self {
        Self {
            level,
            n: stats.count(),
            mean: stats.mean(),
            variance: stats.variance(),
            cost_per_sample,
        }
    }

    /// Standard error of this level's mean.
    pub fn standard_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance / self.n as f64).sqrt()
        }
    }

    /// Total sampling cost spent on this level.
    pub fn total_cost(&self) -> f64 {
        self.n as f64 * self.cost_per_sample
    }
}

/// Accumulate `count` samples of one level term, covering the absolute
/// sample indices `start..start + count`.
///
/// Work is split into fixed blocks of [`BLOCK_SIZE`] consecutive indices;
/// blocks run in parallel but are merged in index order, so the result is
/// identical for any thread count, and a later call continuing at
/// `start + count` extends the same stream family.
#[allow(clippy::too_many_arguments)]
pub fn estimate_level(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
    geometry: &LevelGeometry,
    level: u32,
    seed: u64,
    start: u64,
    count: u64,
) -> RunningStats {
    let domain = kind.rng_domain();
    let block_stats: Vec<RunningStats> = block_ranges(start, count)
        .into_par_iter()
        .map(|(from, to)| {
            let mut stats = RunningStats::default();
            let mut scratch = CoupledLevelSample {
                level,
                group_losses: Vec::with_capacity(geometry.refinement as usize),
                fine_loss: 0.0,
            };
            for index in from..to {
                let mut rng = substream(seed, domain, level, index);
                stats.push(sample_level_value(
                    model,
                    payoff,
                    kind,
                    geometry,
                    level,
                    &mut scratch,
                    &mut rng,
                ));
            }
            stats
        })
        .collect();
    let mut total = RunningStats::default();
    for stats in &block_stats {
        total.merge(stats);
    }
    total
}

/// Accumulate both estimator kinds from the *same* coupled draws (the
/// standard-domain streams), for paired comparisons of the two coarse
/// constructions. At level 0 the two kinds coincide by definition.
pub fn estimate_level_paired(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    geometry: &LevelGeometry,
    level: u32,
    seed: u64,
    start: u64,
    count: u64,
) -> (RunningStats, RunningStats) {
    let block_stats: Vec<(RunningStats, RunningStats)> = block_ranges(start, count)
        .into_par_iter()
        .map(|(from, to)| {
            let mut standard = RunningStats::default();
            let mut improved = RunningStats::default();
            let mut scratch = CoupledLevelSample {
                level,
                group_losses: Vec::with_capacity(geometry.refinement as usize),
                fine_loss: 0.0,
            };
            for index in from..to {
                let mut rng = substream(seed, DOMAIN_STANDARD, level, index);
                if level == 0 {
                    let value = sample_level_value(
                        model,
                        payoff,
                        EstimatorKind::Standard,
                        geometry,
                        level,
                        &mut scratch,
                        &mut rng,
                    );
                    standard.push(value);
                    improved.push(value);
                } else {
                    let coarse_n = geometry.n_at(level - 1);
                    match model {
                        LossFactorModel::Structural(params) => sample_structural_coupled_into(
                            &mut scratch,
                            params,
                            level,
                            geometry.refinement,
                            coarse_n,
                            &mut rng,
                        ),
                        _ => {
                            let factor =
                                model.sample_factor(&mut rng).expect("scalar-factor model");
                            sample_group_losses_into(
                                &mut scratch,
                                factor,
                                level,
                                geometry.refinement,
                                coarse_n,
                                &mut rng,
                            );
                        }
                    }
                    standard.push(level_difference(payoff, EstimatorKind::Standard, &scratch));
                    improved.push(level_difference(payoff, EstimatorKind::Improved, &scratch));
                }
            }
            (standard, improved)
        })
        .collect();
    let mut standard = RunningStats::default();
    let mut improved = RunningStats::default();
    for (s, i) in &block_stats {
        standard.merge(s);
        improved.merge(i);
    }
    (standard, improved)
}

fn block_ranges(start: u64, count: u64) -> Vec<(u64, u64)> {
    let end = start + count;
    let mut ranges = Vec::with_capacity(count.div_ceil(BLOCK_SIZE) as usize);
    let mut from = start;
    while from < end {
        let to = end.min(from + BLOCK_SIZE);
        ranges.push((from, to));
        from = to;
    }
    ranges
}

/// Plain single-level Monte Carlo of `E[p(L_N)]` at the finest basket of
/// the ladder, for cost and accuracy comparisons against the multilevel
/// estimator. Uses its own RNG domain.
pub fn single_level_estimate(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    geometry: &LevelGeometry,
    seed: u64,
    count: u64,
) -> Result<LevelStats> {
    model.validate()?;
    let level = geometry.max_level;
    let n = geometry.n_at(level);
    let block_stats: Vec<RunningStats> = block_ranges(0, count)
        .into_par_iter()
        .map(|(from, to)| {
            let mut stats = RunningStats::default();
            for index in from..to {
                let mut rng = substream(seed, DOMAIN_SINGLE_LEVEL, level, index);
                let loss = match model {
                    LossFactorModel::Structural(params) => sample_basket_loss(params, n, &mut rng),
                    _ => {
                        let factor = model.sample_factor(&mut rng).expect("scalar-factor model");
                        sample_base_loss(factor, n, &mut rng)
                    }
                };
                stats.push(payoff.value(loss));
            }
            stats
        })
        .collect();
    let mut total = RunningStats::default();
    for stats in &block_stats {
        total.merge(stats);
    }
    Ok(LevelStats::from_running(
        level,
        &total,
        level_cost(model, geometry, level),
    ))
}

/// Variance-optimal sample counts: `n_l = ⌈γ⁻² √(V_l/C_l) Σ_j √(V_j C_j)⌉`
/// over the active levels, which is the cheapest allocation achieving
/// `Σ_l V_l/n_l ≤ γ²` (the bound holds with equality before rounding up;
/// zero-variance levels need no samples and receive none).
pub fn optimal_allocation(variances: &[f64], costs: &[f64], gamma: f64) -> Result<Vec<u64>> {
    if variances.len() != costs.len() {
        return Err(Error::InvalidParameter(
            "variance and cost vectors must have equal length".into(),
        ));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target standard deviation must be positive, got {gamma}"
        )));
    }
    for (&v, &c) in variances.iter().zip(costs) {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "variances must be nonnegative, got {v}"
            )));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "costs must be positive, got {c}"
            )));
        }
    }
    let weighted_sum: f64 = variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| (v * c).sqrt())
        .sum();
    let gamma_sq = gamma * gamma;
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(&v, &c)| {
            if v == 0.0 {
                0
            } else {
                ceil_samples((v / c).sqrt() * weighted_sum / gamma_sq)
            }
        })
        .collect())
}

/// Ceiling that forgives floating-point noise around exact integers, so a
/// mathematically integral target does not round up an extra sample.
fn ceil_samples(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Options of the adaptive multilevel driver.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdaptiveOptions {
    /// Target standard deviation `γ` of the multilevel estimator.
    pub gamma: f64,
    /// Pilot samples drawn when a level first becomes active.
    pub pilot_samples: u64,
    /// Total sampling cost budget; exceeding it aborts the run.
    pub cost_budget: f64,
    /// Base RNG seed; fixes every draw of the run.
    pub seed: u64,
}

impl AdaptiveOptions {
    pub fn new(gamma: f64, seed: u64) -> Self {
        Self {
            gamma,
            pilot_samples: DEFAULT_PILOT_SAMPLES,
            cost_budget: DEFAULT_COST_BUDGET,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target standard deviation must be positive, got {}",
                self.gamma
            )));
        }
        if self.pilot_samples == 0 {
            return Err(Error::InvalidParameter(
                "pilot sample count must be at least 1".into(),
            ));
        }
        if !(self.cost_budget.is_finite() && self.cost_budget > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cost budget must be positive, got {}",
                self.cost_budget
            )));
        }
        Ok(())
    }
}

/// Result of a multilevel run.
#[derive(Clone, Debug, Serialize)]
pub struct MlmcResult {
    pub kind: EstimatorKind,
    pub geometry: LevelGeometry,
    /// Telescoping estimate `Σ_l mean_l` of `E[p(L_{N_K})]`.
    pub estimate: f64,
    /// Target standard deviation `γ` the allocation aimed for.
    pub target_std: f64,
    /// `Σ_l V_l/n_l` at allocation time (guaranteed `≤ γ²` up to rounding).
    pub allocation_variance_bound: f64,
    /// Standard error from the final per-level statistics.
    pub standard_error: f64,
    /// Final per-level targets the allocation requested.
    pub allocation: Vec<u64>,
    pub levels: Vec<LevelStats>,
    /// Total sampling cost actually spent.
    pub total_cost: f64,
}

impl MlmcResult {
    /// Cumulative standard deviations `√(Σ_{l ≤ k} V_l/n_l)` for
    /// `k = 0..=K`; nondecreasing by construction.
    pub fn partial_std_devs(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.levels
            .iter()
            .map(|s| {
                if s.n > 0 {
                    acc += s.variance / s.n as f64;
                }
                acc.sqrt()
            })
            .collect()
    }
}

/// Run the adaptive multilevel estimator.
///
/// Levels are activated one at a time. Each round draws pilot samples at
/// the newly active level, re-solves the variance-optimal allocation over
/// *all* active levels from current variance estimates, and tops up every
/// level whose target exceeds its drawn count (samples are never
/// discarded, so each level keeps `max(drawn, target)` samples and the
/// variance bound still holds). The projected cost is checked against the
/// budget before each top-up round; exceeding it aborts with
/// [`Error::BudgetExhausted`].
pub fn run_adaptive(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
    geometry: &LevelGeometry,
    options: &AdaptiveOptions,
) -> Result<MlmcResult> {
    model.validate()?;
    options.validate()?;
    let costs: Vec<f64> = (0..=geometry.max_level)
        .map(|l| level_cost(model, geometry, l))
        .collect();
    let mut stats: Vec<RunningStats> = Vec::with_capacity(geometry.num_levels());
    let mut spent = 0.0;
    let mut allocation = vec![0u64; geometry.num_levels()];
    let mut bound = 0.0;

    for newly_active in 0..=geometry.max_level {
        // Pilot the newly active level.
        let pilot_cost = options.pilot_samples as f64 * costs[newly_active as usize];
        check_budget(spent, pilot_cost, options.cost_budget, newly_active)?;
        stats.push(estimate_level(
            model,
            payoff,
            kind,
            geometry,
            newly_active,
            options.seed,
            0,
            options.pilot_samples,
        ));
        spent += pilot_cost;

        // Re-solve the allocation over all active levels.
        let variances: Vec<f64> = stats.iter().map(|s| s.variance()).collect();
        let active_costs = &costs[..stats.len()];
        let targets = optimal_allocation(&variances, active_costs, options.gamma)?;
        bound = variances
            .iter()
            .zip(&targets)
            .filter(|&(_, &n)| n > 0)
            .map(|(&v, &n)| v / n as f64)
            .sum();

        // Top up levels lagging behind their targets.
        let mut topup_cost = 0.0;
        for (level, (&target, stat)) in targets.iter().zip(&stats).enumerate() {
            if target > stat.count() {
                topup_cost += (target - stat.count()) as f64 * costs[level];
            }
        }
        check_budget(spent, topup_cost, options.cost_budget, newly_active)?;
        for (level, (&target, stat)) in targets.iter().zip(stats.iter_mut()).enumerate() {
            let drawn = stat.count();
            if target > drawn {
                let extra = estimate_level(
                    model,
                    payoff,
                    kind,
                    geometry,
                    level as u32,
                    options.seed,
                    drawn,
                    target - drawn,
                );
                stat.merge(&extra);
            }
            allocation[level] = target.max(drawn);
        }
        spent += topup_cost;
    }

    let levels: Vec<LevelStats> = stats
        .iter()
        .enumerate()
        .map(|(l, s)| LevelStats::from_running(l as u32, s, costs[l]))
        .collect();
    let estimate = levels.iter().map(|s| s.mean).sum();
    let standard_error = levels
        .iter()
        .filter(|s| s.n > 0)
        .map(|s| s.variance / s.n as f64)
        .sum::<f64>()
        .sqrt();
    Ok(MlmcResult {
        kind,
        geometry: *geometry,
        estimate,
        target_std: options.gamma,
        allocation_variance_bound: bound,
        standard_error,
        allocation,
        levels,
        total_cost: spent,
    })
}

fn check_budget(spent: f64, next: f64, budget: f64, level: u32) -> Result<()> {
    if spent + next > budget {
        Err(Error::BudgetExhausted {
            spent: spent + next,
            budget,
            level,
        })
    } else {
        Ok(())
    }
}

/// Draw a fixed number of samples at every level of the ladder and return
/// the per-level statistics (no adaptive allocation). This is the workhorse
/// of convergence studies, where equal depth per level is wanted.
pub fn run_fixed_levels(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
    geometry: &LevelGeometry,
    samples_per_level: u64,
    seed: u64,
) -> Result<Vec<LevelStats>> {
    model.validate()?;
    if samples_per_level == 0 {
        return Err(Error::InvalidParameter(
            "samples per level must be at least 1".into(),
        ));
    }
    Ok((0..=geometry.max_level)
        .map(|level| {
            let stats = estimate_level(
                model, payoff, kind, geometry, level, seed, 0, samples_per_level,
            );
            LevelStats::from_running(level, &stats, level_cost(model, geometry, level))
        })
        .collect())
}

/// Fixed-depth run computing both estimator kinds from shared coupled
/// draws; see [`estimate_level_paired`].
pub fn run_fixed_levels_paired(
    model: &LossFactorModel,
    payoff: &dyn LossPayoff,
    geometry: &LevelGeometry,
    samples_per_level: u64,
    seed: u64,
) -> Result<(Vec<LevelStats>, Vec<LevelStats>)> {
    model.validate()?;
    if samples_per_level == 0 {
        return Err(Error::InvalidParameter(
            "samples per level must be at least 1".into(),
        ));
    }
    let mut standard = Vec::with_capacity(geometry.num_levels());
    let mut improved = Vec::with_capacity(geometry.num_levels());
    for level in 0..=geometry.max_level {
        let (s, i) =
            estimate_level_paired(model, payoff, geometry, level, seed, 0, samples_per_level);
        let cost = level_cost(model, geometry, level);
        standard.push(LevelStats::from_running(level, &s, cost));
        improved.push(LevelStats::from_running(level, &i, cost));
    }
    Ok((standard, improved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::DiscreteFactor;
    use crate::oracle;
    use crate::payoff::TranchePayoff;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tranche(a: f64, d: f64) -> TranchePayoff {
        TranchePayoff::new(a, d).unwrap()
    }

    fn constant_model(l: f64) -> LossFactorModel {
        LossFactorModel::Discrete(DiscreteFactor::constant(l).unwrap())
    }

    #[test]
    fn geometry_sizes_and_validation() {
        let geometry = LevelGeometry::new(5, 5, 3).unwrap();
        assert_eq!(geometry.n_at(0), 5);
        assert_eq!(geometry.n_at(3), 625);
        assert_eq!(geometry.num_levels(), 4);
        assert!(LevelGeometry::new(1, 5, 3).is_err());
        assert!(LevelGeometry::new(5, 0, 3).is_err());
        assert!(LevelGeometry::new(2, 1, 64).is_err());
    }

    #[test]
    fn running_stats_match_two_pass_formulas() {
        let mut stats = RunningStats::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            stats.push(x);
        }
        assert_eq!(stats.count(), 4);
        assert_relative_eq!(stats.mean(), 2.5, max_relative = 1e-15);
        assert_relative_eq!(stats.variance(), 5.0 / 3.0, max_relative = 1e-14);

        let mut left = RunningStats::default();
        let mut right = RunningStats::default();
        for x in [1.0, 2.0] {
            left.push(x);
        }
        for x in [3.0, 4.0] {
            right.push(x);
        }
        left.merge(&right);
        assert_eq!(left.count(), 4);
        assert_relative_eq!(left.mean(), stats.mean(), max_relative = 1e-14);
        assert_relative_eq!(left.variance(), stats.variance(), max_relative = 1e-14);
    }

    #[test]
    fn running_stats_handle_injected_values() {
        let mut stats = RunningStats::default();
        for x in [0.1, 0.2, 0.3] {
            stats.push(x);
        }
        assert_relative_eq!(stats.mean(), 0.2, max_relative = 1e-14);
        assert_relative_eq!(stats.standard_error(), (0.01 / 3.0f64).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn level_difference_reference_values() {
        let payoff = tranche(0.25, 0.75);
        let sample = CoupledLevelSample::from_group_losses(1, vec![0.2, 0.4]);
        // Fine loss 0.3 pays 0.05; first group pays 0; group average pays 0.075.
        assert_relative_eq!(
            level_difference(&payoff, EstimatorKind::Standard, &sample),
            0.05,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            level_difference(&payoff, EstimatorKind::Improved, &sample),
            -0.025,
            max_relative = 1e-12
        );
    }

    #[test]
    fn allocation_reference_values() {
        // Single level: n = V/γ² when C = 1.
        assert_eq!(
            optimal_allocation(&[1e-4], &[1.0], 1e-2).unwrap(),
            vec![1]
        );
        // Two levels chosen so the targets are exactly (200, 50).
        let gamma = (2.5e-4f64).sqrt();
        let targets = optimal_allocation(&[0.01, 0.01], &[1.0, 16.0], gamma).unwrap();
        assert_eq!(targets, vec![200, 50]);
        let achieved: f64 = [0.01f64, 0.01]
            .iter()
            .zip(&targets)
            .map(|(&v, &n)| v / n as f64)
            .sum();
        assert!(achieved <= gamma * gamma * (1.0 + 1e-12));
    }

    #[test]
    fn allocation_skips_zero_variance_levels() {
        let targets = optimal_allocation(&[0.0, 0.04], &[1.0, 4.0], 0.01).unwrap();
        assert_eq!(targets[0], 0);
        assert!(targets[1] > 0);
        assert!(0.04 / targets[1] as f64 <= 1e-4 * (1.0 + 1e-12));
    }

    #[test]
    fn allocation_rejects_bad_inputs() {
        assert!(optimal_allocation(&[0.1], &[1.0, 2.0], 0.01).is_err());
        assert!(optimal_allocation(&[0.1], &[1.0], 0.0).is_err());
        assert!(optimal_allocation(&[-0.1], &[1.0], 0.01).is_err());
        assert!(optimal_allocation(&[0.1], &[0.0], 0.01).is_err());
    }

    proptest! {
        // The defining property of the allocation: it meets the variance
        // target (up to rounding forgiveness) and never allocates to
        // zero-variance levels.
        #[test]
        fn allocation_always_meets_the_variance_target(
            variances in proptest::collection::vec(0.0f64..1.0, 1..6),
            costs in proptest::collection::vec(0.5f64..100.0, 6),
            gamma in 1e-3f64..0.5,
        ) {
            let costs = &costs[..variances.len()];
            let targets = optimal_allocation(&variances, costs, gamma).unwrap();
            let mut achieved = 0.0;
            for (&v, &n) in variances.iter().zip(&targets) {
                if v == 0.0 {
                    prop_assert_eq!(n, 0);
                } else {
                    prop_assert!(n >= 1);
                    achieved += v / n as f64;
                }
            }
            prop_assert!(achieved <= gamma * gamma * (1.0 + 1e-9));
        }
    }

    #[test]
    fn level_estimates_are_thread_count_invariant() {
        let model = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        let payoff = tranche(0.1, 0.5);
        let geometry = LevelGeometry::new(3, 2, 2).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    estimate_level(
                        &model,
                        &payoff,
                        EstimatorKind::Improved,
                        &geometry,
                        2,
                        7,
                        0,
                        10_000,
                    )
                })
        };
        let single = run(1);
        let multi = run(4);
        assert_eq!(single.count(), multi.count());
        assert_eq!(single.mean().to_bits(), multi.mean().to_bits());
        assert_eq!(single.variance().to_bits(), multi.variance().to_bits());
    }

    #[test]
    fn topped_up_streams_extend_the_original_family() {
        // Drawing 3000 then 2000 more must equal drawing 5000 in one call.
        let model = constant_model(0.4);
        let payoff = tranche(0.2, 0.6);
        let geometry = LevelGeometry::new(2, 2, 1).unwrap();
        let mut first = estimate_level(
            &model,
            &payoff,
            EstimatorKind::Standard,
            &geometry,
            1,
            11,
            0,
            3000,
        );
        let second = estimate_level(
            &model,
            &payoff,
            EstimatorKind::Standard,
            &geometry,
            1,
            11,
            3000,
            2000,
        );
        first.merge(&second);
        let whole = estimate_level(
            &model,
            &payoff,
            EstimatorKind::Standard,
            &geometry,
            1,
            11,
            0,
            5000,
        );
        assert_eq!(first.count(), whole.count());
        assert_relative_eq!(first.mean(), whole.mean(), max_relative = 1e-12);
        assert_relative_eq!(first.variance(), whole.variance(), max_relative = 1e-10);
    }

    #[test]
    fn level_means_match_exact_enumeration() {
        let factor = DiscreteFactor::constant(0.5).unwrap();
        let model = LossFactorModel::Discrete(factor.clone());
        let payoff = tranche(0.25, 0.6);
        let geometry = LevelGeometry::new(2, 1, 1).unwrap();
        let n = 40_000u64;
        for kind in [EstimatorKind::Standard, EstimatorKind::Improved] {
            let exact =
                oracle::exact_level_moments(&factor, 1, 2, 1, &payoff, kind).unwrap();
            let stats =
                estimate_level(&model, &payoff, kind, &geometry, 1, 5, 0, n);
            let se = (exact.variance / n as f64).sqrt();
            assert!(
                (stats.mean() - exact.mean).abs() <= 4.0 * se,
                "{kind:?}: sample mean {} vs exact {} (4se = {})",
                stats.mean(),
                exact.mean,
                4.0 * se
            );
            assert_relative_eq!(
                stats.variance(),
                exact.variance,
                max_relative = 0.1
            );
        }
    }

    #[test]
    fn paired_estimates_share_draws_and_agree_at_level_zero() {
        let model = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 5.0,
        };
        let payoff = tranche(0.1, 0.4);
        let geometry = LevelGeometry::new(4, 2, 1).unwrap();
        let (s0, i0) = estimate_level_paired(&model, &payoff, &geometry, 0, 3, 0, 2000);
        assert_eq!(s0.mean().to_bits(), i0.mean().to_bits());
        // At level 1 the standard stream must match a standalone standard run.
        let (s1, _) = estimate_level_paired(&model, &payoff, &geometry, 1, 3, 0, 2000);
        let alone = estimate_level(
            &model,
            &payoff,
            EstimatorKind::Standard,
            &geometry,
            1,
            3,
            0,
            2000,
        );
        assert_eq!(s1.mean().to_bits(), alone.mean().to_bits());
    }

    #[test]
    fn telescoping_sum_matches_the_finest_basket_expectation() {
        // Σ_l mean_l estimates E[p(L_{N_K})]; compare against enumeration.
        let factor = DiscreteFactor::new(vec![(0.2, 0.5), (0.6, 0.5)]).unwrap();
        let model = LossFactorModel::Discrete(factor.clone());
        let payoff = tranche(0.25, 0.75);
        let geometry = LevelGeometry::new(2, 1, 2).unwrap();
        let n = 60_000u64;
        let levels =
            run_fixed_levels(&model, &payoff, EstimatorKind::Improved, &geometry, n, 2).unwrap();
        let estimate: f64 = levels.iter().map(|s| s.mean).sum();
        let exact = oracle::exact_expected_payoff(&factor, 4, &payoff).unwrap();
        let se: f64 = levels
            .iter()
            .map(|s| s.variance / s.n as f64)
            .sum::<f64>()
            .sqrt();
        assert!(
            (estimate - exact).abs() <= 4.0 * se,
            "estimate {estimate} vs exact {exact} (4se = {})",
            4.0 * se
        );
    }

    #[test]
    fn adaptive_run_meets_its_variance_target() {
        let model = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        let payoff = tranche(0.25, 0.75);
        let geometry = LevelGeometry::new(5, 5, 2).unwrap();
        let options = AdaptiveOptions::new(2e-3, 17);
        let result =
            run_adaptive(&model, &payoff, EstimatorKind::Improved, &geometry, &options).unwrap();
        assert!(result.allocation_variance_bound <= options.gamma * options.gamma * (1.0 + 1e-12));
        // The final estimate should sit within a few γ of the exact value.
        let exact = oracle::exact_expected_payoff_beta(2.0, 2.0, 125, &payoff).unwrap();
        assert!(
            (result.estimate - exact).abs() <= 5.0 * options.gamma,
            "estimate {} vs exact {exact}",
            result.estimate
        );
        // Cumulative standard deviations are nondecreasing.
        let partial = result.partial_std_devs();
        assert!(partial.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        assert_relative_eq!(
            *partial.last().unwrap(),
            result.standard_error,
            max_relative = 1e-12
        );
        // Samples were never discarded.
        for (stats, &target) in result.levels.iter().zip(&result.allocation) {
            assert!(stats.n >= target.min(stats.n));
            assert!(stats.n >= options.pilot_samples);
        }
        assert!(result.total_cost > 0.0);
    }

    #[test]
    fn adaptive_run_is_deterministic() {
        let model = LossFactorModel::Vasicek {
            default_prob: 0.1,
            correlation: 0.2,
        };
        let payoff = tranche(0.0, 0.1);
        let geometry = LevelGeometry::new(4, 4, 2).unwrap();
        let options = AdaptiveOptions {
            gamma: 5e-3,
            pilot_samples: 2000,
            cost_budget: 1e9,
            seed: 23,
        };
        let run = || {
            run_adaptive(&model, &payoff, EstimatorKind::Standard, &geometry, &options).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.allocation, b.allocation);
        assert_eq!(a.total_cost.to_bits(), b.total_cost.to_bits());
    }

    #[test]
    fn degenerate_factor_needs_only_pilot_samples() {
        // L = 0 almost surely: every level value is exactly zero, so the
        // allocation never asks for more than the pilots.
        let model = constant_model(0.0);
        let payoff = tranche(0.1, 0.5);
        let geometry = LevelGeometry::new(3, 2, 2).unwrap();
        let options = AdaptiveOptions {
            gamma: 1e-6,
            pilot_samples: 500,
            cost_budget: 1e9,
            seed: 5,
        };
        let result =
            run_adaptive(&model, &payoff, EstimatorKind::Improved, &geometry, &options).unwrap();
        assert_eq!(result.estimate, 0.0);
        assert_eq!(result.standard_error, 0.0);
        for stats in &result.levels {
            assert_eq!(stats.n, 500);
        }
    }

    #[test]
    fn exhausted_budget_reports_level_and_costs() {
        let model = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        let payoff = tranche(0.25, 0.75);
        let geometry = LevelGeometry::new(5, 5, 3).unwrap();
        let options = AdaptiveOptions {
            gamma: 1e-5,
            pilot_samples: 1000,
            cost_budget: 2e5,
            seed: 1,
        };
        let err = run_adaptive(&model, &payoff, EstimatorKind::Improved, &geometry, &options)
            .unwrap_err();
        match err {
            Error::BudgetExhausted { spent, budget, .. } => {
                assert!(spent > budget);
                assert_eq!(budget, 2e5);
                assert_eq!(err.exit_code(), 3);
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn single_level_estimate_matches_enumeration() {
        let factor = DiscreteFactor::constant(0.4).unwrap();
        let model = LossFactorModel::Discrete(factor.clone());
        let payoff = tranche(0.25, 0.75);
        let geometry = LevelGeometry::new(2, 1, 2).unwrap();
        let stats = single_level_estimate(&model, &payoff, &geometry, 9, 50_000).unwrap();
        let exact = oracle::exact_expected_payoff(&factor, 4, &payoff).unwrap();
        assert!(
            (stats.mean - exact).abs() <= 4.0 * stats.standard_error(),
            "mean {} vs exact {exact}",
            stats.mean
        );
        assert_eq!(stats.cost_per_sample, 4.0);
    }
}
