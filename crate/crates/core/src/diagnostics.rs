//! Convergence diagnostics on multilevel output.
//!
//! Three questions come up after every run: how much bias would truncating
//! the ladder at level `k` leave (remaining-bias curves), how fast do the
//! level means and variances decay in the level index (log-scale rate
//! fits), and does the sampled factor distribution match a reference law
//! (empirical CDFs and Kolmogorov–Smirnov distances). Everything here is
//! pure post-processing: no randomness, no I/O.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::LossFactorModel;
use crate::mlmc::LevelStats;
use crate::rng::{substream, DOMAIN_DIAGNOSTICS};

/// One point of the remaining-bias curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BiasCurvePoint {
    /// Truncation level `k`.
    pub k: u32,
    /// `S_k = |Σ_{l=k+1..K} mean_l|`, the estimated bias of stopping at `k`.
    pub s_k: f64,
    /// Standard error of the inner sum, `√(Σ_{l>k} V_l/n_l)`.
    pub stderr: f64,
    /// Fraction of a geometrically decaying tail the truncated sum covers,
    /// `1 - M^{-(K-k)}`; S_k underestimates the true remaining bias by
    /// roughly this factor.
    pub truncation_factor: f64,
}

/// Remaining-bias curve `S_k` for `k = 0..K-1` from per-level statistics.
pub fn remaining_bias_curve(levels: &[LevelStats], refinement: u32) -> Vec<BiasCurvePoint> {
    let k_max = levels.len().saturating_sub(1);
    let mut curve = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let tail = &levels[k + 1..];
        let s_k = tail.iter().map(|s| s.mean).sum::<f64>().abs();
        let stderr = tail
            .iter()
            .filter(|s| s.n > 0)
            .map(|s| s.variance / s.n as f64)
            .sum::<f64>()
            .sqrt();
        let truncation_factor = 1.0 - (refinement as f64).powi(-((k_max - k) as i32));
        curve.push(BiasCurvePoint {
            k: k as u32,
            s_k,
            stderr,
            truncation_factor,
        });
    }
    curve
}

/// Least-squares fit of `log_M(value)` against the level index.
#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    /// Slope on the `log_M` scale; negative for decaying quantities.
    pub slope: f64,
    /// Intercept on the `log_M` scale.
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual_rms: f64,
    /// Levels that entered the fit.
    pub levels_used: Vec<u32>,
    /// Levels excluded as insignificant or nonpositive (callers should
    /// surface these as a warning).
    pub levels_excluded: Vec<u32>,
}

impl RateFit {
    /// Decay exponent `β` in `value ≈ c · M^{-β l}` (the negated slope).
    pub fn decay_exponent(&self) -> f64 {
        -self.slope
    }
}

/// Fit the decay rate of the level-mean magnitudes `|mean_l|`.
///
/// Level 0 is always excluded (it estimates a plain expectation, not a
/// difference), as are levels whose mean is statistically indistinguishable
/// from zero (`|mean| < 2·stderr`) or nonpositive in magnitude.
pub fn fit_mean_decay(levels: &[LevelStats], refinement: u32) -> Result<RateFit> {
    fit_log_decay(levels, refinement, |s| {
        let magnitude = s.mean.abs();
        if magnitude > 0.0 && magnitude >= 2.0 * s.standard_error() {
            Some(magnitude)
        } else {
            None
        }
    })
}

/// Fit the decay rate of the level variances. Level 0 is excluded, as are
/// exact zero variances.
pub fn fit_variance_decay(levels: &[LevelStats], refinement: u32) -> Result<RateFit> {
    fit_log_decay(levels, refinement, |s| {
        if s.variance > 0.0 {
            Some(s.variance)
        } else {
            None
        }
    })
}

fn fit_log_decay(
    levels: &[LevelStats],
    refinement: u32,
    select: impl Fn(&LevelStats) -> Option<f64>,
) -> Result<RateFit> {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for stats in levels {
        if stats.level == 0 {
            continue;
        }
        match select(stats) {
            Some(value) => points.push((stats.level, value)),
            None => excluded.push(stats.level),
        }
    }
    fit_points(points, excluded, refinement)
}

/// Fit the decay rate of a remaining-bias curve in the truncation level.
/// The `k = 0` point is excluded for symmetry with the level fits, as are
/// insignificant (`S_k < 2·stderr`) or zero values.
pub fn fit_bias_decay(curve: &[BiasCurvePoint], refinement: u32) -> Result<RateFit> {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for point in curve {
        if point.k == 0 {
            continue;
        }
        if point.s_k > 0.0 && point.s_k >= 2.0 * point.stderr {
            points.push((point.k, point.s_k));
        } else {
            excluded.push(point.k);
        }
    }
    fit_points(points, excluded, refinement)
}

fn fit_points(
    points: Vec<(u32, f64)>,
    levels_excluded: Vec<u32>,
    refinement: u32,
) -> Result<RateFit> {
    if refinement < 2 {
        return Err(Error::InvalidParameter(format!(
            "refinement factor must be at least 2, got {refinement}"
        )));
    }
    if points.len() < 3 {
        return Err(Error::Domain(format!(
            "rate fit needs at least 3 usable points, got {} ({} excluded)",
            points.len(),
            levels_excluded.len()
        )));
    }
    let log_m = (refinement as f64).ln();
    let xs: Vec<f64> = points.iter().map(|&(l, _)| l as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.ln() / log_m).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residual_rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual_rms,
        levels_used: points.iter().map(|&(l, _)| l).collect(),
        levels_excluded,
    })
}

/// Right-continuous empirical distribution function of a sample.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical CDF needs at least one sample".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("empirical CDF samples must be finite".into()));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `F_n(x)`: the fraction of samples `≤ x` (right-continuous).
    pub fn value(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&s| s <= x);
        below as f64 / self.sorted.len() as f64
    }

    /// Step points `(x_i, F_n(x_i))` at the distinct sample values.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut steps: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let height = (i + 1) as f64 / n;
            match steps.last_mut() {
                Some(last) if last.0 == x => last.1 = height,
                _ => steps.push((x, height)),
            }
        }
        steps
    }

    /// One-sample Kolmogorov–Smirnov distance `sup_x |F_n(x) - F(x)|`
    /// against a continuous reference CDF.
    pub fn ks_distance(&self, reference: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len() as f64;
        let mut sup: f64 = 0.0;
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = reference(x);
            sup = sup
                .max(((i + 1) as f64 / n - f).abs())
                .max((f - i as f64 / n).abs());
        }
        sup
    }
}

/// Draw a deterministic sample of the loss-factor law and build its
/// empirical CDF. Scalar-factor models sample the factor exactly; the
/// structural model has no scalar factor, so the loss fraction of a
/// `proxy_basket`-firm basket stands in for it. Block-parallel and
/// bit-reproducible like the level estimators.
pub fn sample_factor_cdf(
    model: &LossFactorModel,
    samples: u64,
    proxy_basket: u64,
    seed: u64,
) -> Result<EmpiricalCdf> {
    model.validate()?;
    if samples == 0 {
        return Err(Error::InvalidParameter(
            "factor CDF sampling needs at least one sample".into(),
        ));
    }
    if proxy_basket == 0 {
        return Err(Error::InvalidParameter(
            "proxy basket size must be at least 1".into(),
        ));
    }
    const BLOCK: u64 = 4096;
    let blocks: Vec<u64> = (0..samples.div_ceil(BLOCK)).collect();
    let mut values: Vec<Vec<f64>> = Vec::new();
    blocks
        .into_par_iter()
        .map(|b| {
            let from = b * BLOCK;
            let to = samples.min(from + BLOCK);
            (from..to)
                .map(|index| {
                    let mut rng = substream(seed, DOMAIN_DIAGNOSTICS, 0, index);
                    model.sample_factor_proxy(proxy_basket, &mut rng)
                })
                .collect::<Vec<f64>>()
        })
        .collect_into_vec(&mut values);
    EmpiricalCdf::new(values.concat())
}
