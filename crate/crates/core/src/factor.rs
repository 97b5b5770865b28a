//! Loss-factor models and conditional sampling of grouped loss fractions.
//!
//! Defaults in the basket are exchangeable Bernoulli indicators that are
//! conditionally independent given a common loss factor `L` with values in
//! `[0, 1]`: conditional on `L`, each name defaults with probability `L`, so
//! the basket loss fraction is `Binomial(N, L) / N`.
//!
//! For the coupled level sample at level `l`, the `N_l = M · N_{l-1}` names
//! are split into `M` groups of `N_{l-1}`; conditional on `L` the group loss
//! fractions are i.i.d. `Binomial(N_{l-1}, L) / N_{l-1}` and the fine loss
//! fraction is exactly their average. Group counts are drawn with an exact
//! binomial sampler (inversion / BTPE); normal approximations are never
//! used.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Binomial, Distribution};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::structural::StructuralParams;

/// A finitely supported loss factor: atoms `(value, weight)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DiscreteFactor {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteFactor {
    /// Build a discrete factor; values must lie in `[0, 1]`, weights must be
    /// nonnegative and sum to 1 within `1e-12`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter(
                "discrete factor needs at least one atom".into(),
            ));
        }
        let mut total = 0.0;
        for &(value, weight) in &atoms {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!(
                    "atom value must lie in [0, 1], got {value}"
                )));
            }
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "atom weight must be nonnegative, got {weight}"
                )));
            }
            total += weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "atom weights must sum to 1 (within 1e-12), got {total}"
            )));
        }
        Ok(Self { atoms })
    }

    /// The deterministic factor concentrated at `value`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Inverse-CDF draw over the atoms.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(value, weight) in &self.atoms {
            acc += weight;
            if u < acc {
                return value;
            }
        }
        // Weight roundoff can leave u just above the accumulated total.
        self.atoms[self.atoms.len() - 1].0
    }

    /// Exact CDF `P(L ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(value, _)| *value <= x)
            .map(|(_, weight)| weight)
            .sum()
    }
}

/// Distribution of the common loss factor.
#[derive(Clone, Debug)]
pub enum LossFactorModel {
    /// Finitely many loss levels; the exactly enumerable reference case.
    Discrete(DiscreteFactor),
    /// `L ~ Beta(alpha, beta)` on `[0, 1]`.
    Beta { alpha: f64, beta: f64 },
    /// One-factor Gaussian copula: `L = Φ((Φ⁻¹(pd) - √ρ Z) / √(1-ρ))`.
    Vasicek { default_prob: f64, correlation: f64 },
    /// Firm-value jump-diffusion; defaults are driven by a common path
    /// rather than a scalar factor (see [`crate::structural`]).
    Structural(StructuralParams),
}

impl LossFactorModel {
    /// Check all parameters; called once at run setup.
    pub fn validate(&self) -> Result<()> {
        match self {
            LossFactorModel::Discrete(_) => Ok(()), // validated on construction
            LossFactorModel::Beta { alpha, beta } => {
                if alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "beta factor needs positive shape parameters, got ({alpha}, {beta})"
                    )))
                }
            }
            LossFactorModel::Vasicek {
                default_prob,
                correlation,
            } => {
                if !(*default_prob > 0.0 && *default_prob < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "vasicek default probability must lie in (0, 1), got {default_prob}"
                    )));
                }
                if !(0.0..1.0).contains(correlation) {
                    return Err(Error::InvalidParameter(format!(
                        "vasicek correlation must lie in [0, 1), got {correlation}"
                    )));
                }
                Ok(())
            }
            LossFactorModel::Structural(params) => params.validate(),
        }
    }

    /// Draw the loss factor.
    ///
    /// The structural model has no scalar factor with a closed-form draw;
    /// use [`LossFactorModel::sample_factor_proxy`] there.
    pub fn sample_factor(&self, rng: &mut impl Rng) -> Result<f64> {
        match self {
            LossFactorModel::Discrete(factor) => Ok(factor.sample(rng)),
            LossFactorModel::Beta { alpha, beta } => {
                let dist = BetaDist::new(*alpha, *beta).map_err(|e| {
                    Error::InvalidParameter(format!("beta factor: {e}"))
                })?;
                Ok(dist.sample(rng))
            }
            LossFactorModel::Vasicek {
                default_prob,
                correlation,
            } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                Ok(vasicek_factor(*default_prob, *correlation, z))
            }
            LossFactorModel::Structural(_) => Err(Error::Unsupported(
                "structural factor has no closed-form draw; use sample_factor_proxy".into(),
            )),
        }
    }

    /// Draw the loss factor, approximating the structural model's limit
    /// loss by the loss fraction of a `proxy_basket`-name basket on one
    /// common path. Analytic models ignore `proxy_basket` and draw exactly.
    pub fn sample_factor_proxy(&self, proxy_basket: u64, rng: &mut impl Rng) -> f64 {
        match self {
            LossFactorModel::Structural(params) => {
                crate::structural::sample_basket_loss(params, proxy_basket, rng)
            }
            _ => self
                .sample_factor(rng)
                .expect("analytic factors always sample"),
        }
    }

    /// Exact CDF `P(L ≤ x)` where a closed form exists (discrete, beta, and
    /// the Gaussian one-factor map); `None` for the structural model.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match self {
            LossFactorModel::Discrete(factor) => Some(factor.cdf(x)),
            LossFactorModel::Beta { alpha, beta } => {
                if x <= 0.0 {
                    Some(0.0)
                } else if x >= 1.0 {
                    Some(1.0)
                } else {
                    Some(statrs::function::beta::beta_reg(*alpha, *beta, x))
                }
            }
            LossFactorModel::Vasicek {
                default_prob,
                correlation,
            } => Some(vasicek_cdf(*default_prob, *correlation, x)),
            LossFactorModel::Structural(_) => None,
        }
    }

    /// Lipschitz constant of the factor CDF where analytically known: the
    /// maximal beta density for `alpha, beta ≥ 1`. `None` otherwise (step
    /// CDFs and models without a closed-form density bound).
    pub fn cdf_lipschitz(&self) -> Option<f64> {
        match self {
            LossFactorModel::Beta { alpha, beta } if *alpha >= 1.0 && *beta >= 1.0 => {
                if *alpha == 1.0 && *beta == 1.0 {
                    return Some(1.0);
                }
                // Unimodal density; maximum at the interior mode. With one
                // shape parameter equal to 1 the mode sits at an endpoint
                // with finite density.
                let dist = statrs::distribution::Beta::new(*alpha, *beta).ok()?;
                let mode = (alpha - 1.0) / (alpha + beta - 2.0);
                Some(dist.pdf(mode.clamp(0.0, 1.0)))
            }
            _ => None,
        }
    }
}

/// The Gaussian one-factor loss map `L(z) = Φ((Φ⁻¹(pd) - √ρ z) / √(1-ρ))`.
pub fn vasicek_factor(default_prob: f64, correlation: f64, z: f64) -> f64 {
    let normal = Normal::standard();
    let threshold = normal.inverse_cdf(default_prob);
    normal.cdf((threshold - correlation.sqrt() * z) / (1.0 - correlation).sqrt())
}

/// Closed-form CDF of the Gaussian one-factor loss: inverting the loss map
/// (decreasing in `z`) gives `F(x) = Φ((√(1-ρ) Φ⁻¹(x) - Φ⁻¹(pd)) / √ρ)`.
pub fn vasicek_cdf(default_prob: f64, correlation: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if correlation == 0.0 {
        // Degenerate: L is the constant pd.
        return if x >= default_prob { 1.0 } else { 0.0 };
    }
    let normal = Normal::standard();
    let threshold = normal.inverse_cdf(default_prob);
    normal.cdf(((1.0 - correlation).sqrt() * normal.inverse_cdf(x) - threshold) / correlation.sqrt())
}

/// One coupled sample at level `l`: the `M` group loss fractions on baskets
/// of the previous level's size, and the fine loss fraction, which is their
/// average by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledLevelSample {
    pub level: u32,
    pub group_losses: Vec<f64>,
    pub fine_loss: f64,
}

impl CoupledLevelSample {
    /// Assemble a sample from per-group loss fractions.
    pub fn from_group_losses(level: u32, group_losses: Vec<f64>) -> Self {
        debug_assert!(!group_losses.is_empty());
        debug_assert!(group_losses.iter().all(|g| (0.0..=1.0).contains(g)));
        let fine_loss = mean(&group_losses);
        Self {
            level,
            group_losses,
            fine_loss,
        }
    }

    /// Assemble a sample from per-group default counts on baskets of
    /// `coarse_n` names.
    pub fn from_group_counts(level: u32, counts: &[u64], coarse_n: u64) -> Self {
        let group_losses = counts
            .iter()
            .map(|&c| c as f64 / coarse_n as f64)
            .collect();
        Self::from_group_losses(level, group_losses)
    }

    /// Number of groups `M`.
    pub fn groups(&self) -> usize {
        self.group_losses.len()
    }

    fn refill(&mut self, level: u32) {
        self.level = level;
        self.group_losses.clear();
    }

    fn finish(&mut self) {
        self.fine_loss = mean(&self.group_losses);
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Exact binomial count draw, with the degenerate edges handled explicitly.
pub(crate) fn binomial_count(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p)
            .expect("parameters checked above")
            .sample(rng)
    }
}

/// Draw a coupled level sample conditional on the factor: `M` i.i.d. group
/// counts `Binomial(coarse_n, factor)`. The first group is the canonical
/// coarse sample for the plain coupled estimator.
pub fn sample_group_losses(
    factor: f64,
    level: u32,
    groups: u32,
    coarse_n: u64,
    rng: &mut impl Rng,
) -> CoupledLevelSample {
    let mut sample = CoupledLevelSample {
        level,
        group_losses: Vec::with_capacity(groups as usize),
        fine_loss: 0.0,
    };
    sample_group_losses_into(&mut sample, factor, level, groups, coarse_n, rng);
    sample
}

/// In-place variant of [`sample_group_losses`] for hot loops.
pub fn sample_group_losses_into(
    sample: &mut CoupledLevelSample,
    factor: f64,
    level: u32,
    groups: u32,
    coarse_n: u64,
    rng: &mut impl Rng,
) {
    sample.refill(level);
    for _ in 0..groups {
        let count = binomial_count(coarse_n, factor, rng);
        sample.group_losses.push(count as f64 / coarse_n as f64);
    }
    sample.finish();
}

/// Draw the base-level loss fraction `Binomial(n0, factor) / n0`.
pub fn sample_base_loss(factor: f64, n0: u64, rng: &mut impl Rng) -> f64 {
    binomial_count(n0, factor, rng) as f64 / n0 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, DOMAIN_DIAGNOSTICS};
    use approx::assert_relative_eq;

    #[test]
    fn discrete_factor_validates_atoms() {
        assert!(DiscreteFactor::new(vec![]).is_err(), "empty support");
        assert!(
            DiscreteFactor::new(vec![(0.5, 0.5), (0.7, 0.6)]).is_err(),
            "weights exceed 1"
        );
        assert!(
            DiscreteFactor::new(vec![(1.5, 1.0)]).is_err(),
            "value outside [0, 1]"
        );
        assert!(
            DiscreteFactor::new(vec![(0.5, -0.2), (0.7, 1.2)]).is_err(),
            "negative weight"
        );
        assert!(DiscreteFactor::new(vec![(0.1, 0.3), (0.5, 0.4), (0.9, 0.3)]).is_ok());
    }

    #[test]
    fn constant_factor_always_returns_its_atom() {
        let factor = DiscreteFactor::constant(0.3).unwrap();
        let mut rng = substream(1, DOMAIN_DIAGNOSTICS, 0, 0);
        for _ in 0..1000 {
            assert_eq!(factor.sample(&mut rng), 0.3);
        }
    }

    #[test]
    fn vasicek_with_zero_correlation_is_constant() {
        let model = LossFactorModel::Vasicek {
            default_prob: 0.1,
            correlation: 0.0,
        };
        let mut rng = substream(2, DOMAIN_DIAGNOSTICS, 0, 0);
        for _ in 0..1000 {
            let l = model.sample_factor(&mut rng).unwrap();
            assert_relative_eq!(l, 0.1, max_relative = 1e-9);
        }
    }

    #[test]
    fn beta_factor_mean_matches_theory() {
        let model = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        let n = 1_000_000u64;
        let mut rng = substream(3, DOMAIN_DIAGNOSTICS, 0, 0);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += model.sample_factor(&mut rng).unwrap();
        }
        let mean = sum / n as f64;
        // Var[Beta(2,2)] = 0.05, so three standard errors of the mean:
        let tol = 3.0 * (0.05f64 / n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() <= tol,
            "Beta(2,2) sample mean {mean} departs from 0.5 by more than {tol}"
        );
    }

    #[test]
    fn factor_cdfs_match_closed_forms() {
        let discrete = LossFactorModel::Discrete(
            DiscreteFactor::new(vec![(0.1, 0.3), (0.5, 0.4), (0.9, 0.3)]).unwrap(),
        );
        assert_eq!(discrete.cdf(0.05), Some(0.0));
        assert_eq!(discrete.cdf(0.1), Some(0.3));
        assert_relative_eq!(discrete.cdf(0.6).unwrap(), 0.7, max_relative = 1e-12);
        assert_eq!(discrete.cdf(1.0), Some(1.0));

        let beta = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        // Symmetric around 1/2; F(1/2) = 1/2 exactly.
        assert_relative_eq!(beta.cdf(0.5).unwrap(), 0.5, max_relative = 1e-12);
        assert_eq!(beta.cdf(-0.1), Some(0.0));
        assert_eq!(beta.cdf(1.1), Some(1.0));

        let vasicek = LossFactorModel::Vasicek {
            default_prob: 0.1,
            correlation: 0.2,
        };
        // Median of L is the map at z = 0.
        let median = vasicek_factor(0.1, 0.2, 0.0);
        assert_relative_eq!(vasicek.cdf(median).unwrap(), 0.5, max_relative = 1e-9);
        // CDF is nondecreasing on a grid.
        let mut last = 0.0;
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let f = vasicek.cdf(x).unwrap();
            assert!(f >= last - 1e-12, "vasicek CDF must be nondecreasing");
            last = f;
        }
    }

    #[test]
    fn cdf_lipschitz_constant_is_the_peak_density() {
        let beta22 = LossFactorModel::Beta {
            alpha: 2.0,
            beta: 2.0,
        };
        // Density 6x(1-x) peaks at 1.5.
        assert_relative_eq!(beta22.cdf_lipschitz().unwrap(), 1.5, max_relative = 1e-12);
        let uniform = LossFactorModel::Beta {
            alpha: 1.0,
            beta: 1.0,
        };
        assert_eq!(uniform.cdf_lipschitz(), Some(1.0));
        let unbounded = LossFactorModel::Beta {
            alpha: 0.5,
            beta: 2.0,
        };
        assert_eq!(unbounded.cdf_lipschitz(), None);
        let discrete =
            LossFactorModel::Discrete(DiscreteFactor::constant(0.3).unwrap());
        assert_eq!(discrete.cdf_lipschitz(), None);
    }

    #[test]
    fn fine_loss_is_exactly_the_group_mean() {
        for index in 0..200 {
            let mut rng = substream(4, DOMAIN_DIAGNOSTICS, 2, index);
            let sample = sample_group_losses(0.37, 2, 5, 25, &mut rng);
            let recomputed = sample.group_losses.iter().sum::<f64>() / 5.0;
            assert_eq!(sample.fine_loss, recomputed, "constructive identity");
            assert!(
                sample.group_losses.iter().all(|&g| {
                    let count = (g * 25.0).round();
                    (0.0..=25.0).contains(&count) && g == count / 25.0
                }),
                "group losses live on the 1/25 lattice"
            );
        }
    }

    #[test]
    fn coupled_groups_with_unit_coarse_basket_are_uniform_bits() {
        // L = 1/2, M = 2 groups over single-name baskets: the group pair is
        // uniform on {0,1}². Pearson chi-square on 1e5 draws, 3 dof.
        let n = 100_000u64;
        let mut counts = [0u64; 4];
        for index in 0..n {
            let mut rng = substream(5, DOMAIN_DIAGNOSTICS, 1, index);
            let s = sample_group_losses(0.5, 1, 2, 1, &mut rng);
            let cell = (s.group_losses[0] as usize) * 2 + s.group_losses[1] as usize;
            counts[cell] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(
            chi2 < 16.27,
            "chi-square {chi2} exceeds the 0.1% critical value for 3 dof; counts {counts:?}"
        );
    }

    #[test]
    fn conditional_moments_of_fine_loss_match_binomial_theory() {
        // Fine loss at level l is Binomial(N_l, L)/N_l in distribution:
        // conditional mean L and variance L(1-L)/N_l.
        let (factor, groups, coarse_n) = (0.3f64, 5u32, 5u64);
        let n_l = (groups as u64 * coarse_n) as f64;
        let n = 200_000u64;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for index in 0..n {
            let mut rng = substream(6, DOMAIN_DIAGNOSTICS, 1, index);
            let s = sample_group_losses(factor, 1, groups, coarse_n, &mut rng);
            sum += s.fine_loss;
            sum_sq += s.fine_loss * s.fine_loss;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let theory_var = factor * (1.0 - factor) / n_l;
        let mean_tol = 4.0 * (theory_var / n as f64).sqrt();
        assert!(
            (mean - factor).abs() <= mean_tol,
            "conditional mean {mean} departs from {factor} beyond {mean_tol}"
        );
        assert_relative_eq!(var, theory_var, max_relative = 0.02);
    }

    #[test]
    fn grouped_fine_loss_agrees_with_single_binomial_in_distribution() {
        // Exchangeability consistency: the fine loss assembled from M group
        // counts has exactly the Binomial(N_l, L)/N_l law. One-sample
        // Kolmogorov-Smirnov against the exact binomial CDF on the lattice.
        let (factor, groups, coarse_n) = (0.3f64, 5u32, 5u64);
        let n_l = groups as u64 * coarse_n;
        let draws = 200_000u64;
        let mut freq = vec![0u64; (n_l + 1) as usize];
        for index in 0..draws {
            let mut rng = substream(7, DOMAIN_DIAGNOSTICS, 1, index);
            let s = sample_group_losses(factor, 1, groups, coarse_n, &mut rng);
            let k = (s.fine_loss * n_l as f64).round() as usize;
            freq[k] += 1;
        }
        // Exact pmf by the multiplicative recurrence.
        let mut pmf = vec![0.0f64; (n_l + 1) as usize];
        pmf[0] = (1.0 - factor).powi(n_l as i32);
        for k in 0..n_l as usize {
            pmf[k + 1] =
                pmf[k] * ((n_l as usize - k) as f64) / ((k + 1) as f64) * factor / (1.0 - factor);
        }
        let mut ks = 0.0f64;
        let (mut emp_cdf, mut exact_cdf) = (0.0, 0.0);
        for k in 0..=n_l as usize {
            emp_cdf += freq[k] as f64 / draws as f64;
            exact_cdf += pmf[k];
            ks = ks.max((emp_cdf - exact_cdf).abs());
        }
        // 0.1% one-sample critical value 1.95/sqrt(n) (conservative on a
        // discrete lattice).
        let critical = 1.95 / (draws as f64).sqrt();
        assert!(
            ks <= critical,
            "KS distance {ks} exceeds {critical}: grouped sampling is inconsistent \
             with the single-basket law"
        );
    }
}
