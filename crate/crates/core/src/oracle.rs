//! Exact references for estimator validation.
//!
//! For discrete loss factors every quantity the Monte Carlo engine
//! estimates has a finite exact form: conditional on an atom `L`, the
//! basket loss fraction is `Binomial(N, L)/N`, so expectations are finite
//! sums, and a coupled level sample is an `M`-tuple of independent group
//! counts, so level-difference moments are product-binomial sums. This
//! module computes those references with log-space binomial weights, plus
//! closed-form loss moments, exact binomial tails with their large-
//! deviation envelopes, and large-basket limits by adaptive quadrature.
//!
//! Enumeration guards: exact basket expectations require `N ≤ 10^6`;
//! level-moment enumerations require `(N_{l-1} + 1)^M ≤ 10^7` joint
//! outcomes.
//!
//! Single-atom deviation moments are additionally available in exact
//! rational arithmetic ([`exact_deviation_moments_rational`]), so bound
//! checks that are mathematically tight (equality cases) are decided
//! without floating-point rounding.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::factor::{DiscreteFactor, LossFactorModel};
use crate::mlmc::EstimatorKind;
use crate::payoff::{LossPayoff, TranchePayoff};

/// Largest basket size for exact single-basket enumeration.
pub const MAX_EXACT_BASKET: u64 = 1_000_000;
/// Largest basket size for exact rational enumeration (slower per term).
pub const MAX_RATIONAL_BASKET: u64 = 10_000;
/// Largest denominator accepted for rational atoms and payoff corners.
pub const MAX_RATIONAL_DENOMINATOR: u64 = 1_000_000;
/// Largest joint outcome count for exact level-moment enumeration.
pub const MAX_LEVEL_OUTCOMES: f64 = 1e7;
/// Absolute tolerance of large-basket limit quadrature.
pub const LIMIT_QUADRATURE_TOL: f64 = 1e-10;

/// Exact mean, central variance, and raw fourth moment of a per-sample
/// estimator value.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ExactMoments {
    pub mean: f64,
    pub variance: f64,
    /// Raw fourth moment `E[value^4]` (not centred), matching the form the
    /// level-variance theory bounds.
    pub fourth_moment: f64,
}

fn check_basket_size(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("basket size must be at least 1".into()));
    }
    if n > MAX_EXACT_BASKET {
        return Err(Error::EnumerationTooLarge(format!(
            "exact enumeration supports baskets up to {MAX_EXACT_BASKET}, got {n}"
        )));
    }
    Ok(())
}

/// `ln C(n, k)` via log-gamma.
fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial pmf table `P(X = k)`, `k = 0..=n`, computed in log space.
fn binomial_pmf_table(n: u64, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n as usize + 1];
    if p <= 0.0 {
        pmf[0] = 1.0;
    } else if p >= 1.0 {
        pmf[n as usize] = 1.0;
    } else {
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        for k in 0..=n {
            pmf[k as usize] =
                (ln_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp();
        }
    }
    pmf
}

/// Exact `E[p(L_N)]` for a discrete loss factor: the binomial mixture sum.
pub fn exact_expected_payoff(
    factor: &DiscreteFactor,
    n: u64,
    payoff: &dyn LossPayoff,
) -> Result<f64> {
    check_basket_size(n)?;
    let mut total = 0.0;
    for &(value, weight) in factor.atoms() {
        let pmf = binomial_pmf_table(n, value);
        let mut conditional = 0.0;
        for (k, prob) in pmf.iter().enumerate() {
            conditional += prob * payoff.value(k as f64 / n as f64);
        }
        total += weight * conditional;
    }
    Ok(total)
}

/// Exact `E[p(L_N)]` for `L ~ Beta(alpha, beta)`: the basket default count
/// is beta-binomial, so the expectation is again a finite sum.
pub fn exact_expected_payoff_beta(
    alpha: f64,
    beta: f64,
    n: u64,
    payoff: &dyn LossPayoff,
) -> Result<f64> {
    check_basket_size(n)?;
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    let ln_beta = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let norm = ln_beta(alpha, beta);
    let mut total = 0.0;
    for k in 0..=n {
        let log_prob =
            ln_choose(n, k) + ln_beta(alpha + k as f64, beta + (n - k) as f64) - norm;
        total += log_prob.exp() * payoff.value(k as f64 / n as f64);
    }
    Ok(total)
}

/// Exact moments of the single-basket payoff deviation
/// `p(L_N) - p(L)` under a discrete factor (mixture over atoms of the
/// conditional binomial law).
pub fn exact_deviation_moments(
    factor: &DiscreteFactor,
    n: u64,
    payoff: &dyn LossPayoff,
) -> Result<ExactMoments> {
    check_basket_size(n)?;
    let mut acc = MomentAccumulator::default();
    for &(value, weight) in factor.atoms() {
        let limit_payoff = payoff.value(value);
        let pmf = binomial_pmf_table(n, value);
        for (k, prob) in pmf.iter().enumerate() {
            let d = payoff.value(k as f64 / n as f64) - limit_payoff;
            acc.add(weight * prob, d);
        }
    }
    Ok(acc.finish())
}

/// Closed-form fourth central moment of the conditional loss fraction:
/// `E[(L_N - L)^4 | L] = 3L²(1-L)²/N² + L(1-L)(1 - 6L(1-L))/N³`.
pub fn loss_fourth_central_moment(factor: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::Domain(format!(
            "loss factor must lie in [0, 1], got {factor}"
        )));
    }
    if n == 0 {
        return Err(Error::Domain("basket size must be at least 1".into()));
    }
    let v = factor * (1.0 - factor);
    let nf = n as f64;
    Ok(3.0 * v * v / (nf * nf) + v * (1.0 - 6.0 * v) / (nf * nf * nf))
}

/// Payoffs whose values at rational losses are themselves rational, for
/// exact-arithmetic enumeration.
#[derive(Clone, Debug)]
pub enum ExactPayoff {
    /// `[x - attach]^+ - [x - detach]^+` (unit Lipschitz constant).
    Tranche {
        attach: BigRational,
        detach: BigRational,
    },
    /// The loss fraction itself (unit Lipschitz constant).
    Identity,
    /// `x²`, the smooth payoff with second derivative 2.
    Square,
}

/// Exact rational mean, variance, and raw fourth moment of the deviation
/// `p(L_N) - p(L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalMoments {
    pub mean: BigRational,
    pub variance: BigRational,
    pub fourth_moment: BigRational,
}

fn rational_denominator(value: &BigRational, what: &str) -> Result<u64> {
    value
        .denom()
        .to_u64()
        .filter(|&d| d <= MAX_RATIONAL_DENOMINATOR)
        .ok_or_else(|| {
            Error::EnumerationTooLarge(format!(
                "{what} denominator exceeds {MAX_RATIONAL_DENOMINATOR}"
            ))
        })
}

/// Exact moments of the deviation `p(L_N) - p(L)` conditional on a single
/// rational atom `L`, computed entirely in integer arithmetic: the binomial
/// weights `C(N,k) a^k (b-a)^{N-k}` (for `L = a/b`) are exact `BigInt`s and
/// payoff values are scaled onto a common denominator. The returned
/// rationals are exact, so comparisons against rational bounds carry no
/// rounding at all — including cases where the bound is attained.
pub fn exact_deviation_moments_rational(
    atom: &BigRational,
    n: u64,
    payoff: &ExactPayoff,
) -> Result<RationalMoments> {
    if n == 0 {
        return Err(Error::Domain("basket size must be at least 1".into()));
    }
    if n > MAX_RATIONAL_BASKET {
        return Err(Error::EnumerationTooLarge(format!(
            "exact rational enumeration supports baskets up to {MAX_RATIONAL_BASKET}, got {n}"
        )));
    }
    let zero = BigRational::from_integer(0.into());
    let one = BigRational::from_integer(1.into());
    if !(*atom > zero && *atom < one) {
        return Err(Error::Domain(format!(
            "rational atom must lie strictly inside (0, 1), got {atom}"
        )));
    }
    // Common scale: every payoff value at k/N, and at the atom, must become
    // an integer once multiplied by `scale`. Tranche corners and losses have
    // denominators dividing `base`; squaring doubles them, so use `base²`.
    let mut base = n.lcm(&rational_denominator(atom, "atom")?);
    match payoff {
        ExactPayoff::Tranche { attach, detach } => {
            if !(*attach >= zero && *detach <= one && attach < detach) {
                return Err(Error::DegenerateTranche(format!(
                    "need 0 <= attach < detach <= 1, got [{attach}, {detach}]"
                )));
            }
            base = base.lcm(&rational_denominator(attach, "attachment")?);
            base = base.lcm(&rational_denominator(detach, "detachment")?);
        }
        ExactPayoff::Identity | ExactPayoff::Square => {}
    }
    if base > MAX_RATIONAL_DENOMINATOR {
        return Err(Error::EnumerationTooLarge(format!(
            "combined rational denominator {base} exceeds {MAX_RATIONAL_DENOMINATOR}"
        )));
    }
    let scale = base as i128 * base as i128;

    // Integer-scaled payoff value at loss `num/den` (with `den | base`).
    let scaled_value = |num: i128, den: i128| -> i128 {
        let x = num * (scale / den);
        match payoff {
            ExactPayoff::Tranche { attach, detach } => {
                let corner = |c: &BigRational| -> i128 {
                    let cn = c.numer().to_i128().expect("corner fits after guard");
                    let cd = c.denom().to_i128().expect("corner fits after guard");
                    cn * (scale / cd)
                };
                let (a, d) = (corner(attach), corner(detach));
                x.clamp(a, d) - a
            }
            ExactPayoff::Identity => x,
            // x² at num/den is num²/den²; den² divides scale = base².
            ExactPayoff::Square => num * num * (scale / (den * den)),
        }
    };

    let a = atom.numer().clone();
    let b = atom.denom().clone();
    let b_minus_a = &b - &a;
    let atom_value = scaled_value(
        a.to_i128().expect("atom numerator fits after guard"),
        b.to_i128().expect("atom denominator fits after guard"),
    );

    // Weight recurrence: w_k = C(N,k) a^k (b-a)^{N-k}, summing to b^N. Each
    // step multiplies by a(N-k) and divides exactly by (k+1)(b-a).
    let mut weight = b_minus_a.pow(n as u32);
    let mut s1 = BigInt::from(0);
    let mut s2 = BigInt::from(0);
    let mut s4 = BigInt::from(0);
    for k in 0..=n {
        let e = scaled_value(k as i128, n as i128) - atom_value;
        let e2 = e * e;
        s1 += &weight * BigInt::from(e);
        s2 += &weight * BigInt::from(e2);
        s4 += &weight * (BigInt::from(e2) * BigInt::from(e2));
        if k < n {
            weight = weight * &a * BigInt::from(n - k) / (BigInt::from(k + 1) * &b_minus_a);
        }
    }

    let total = b.pow(n as u32);
    let scale_big = BigInt::from(scale);
    let mean = BigRational::new(s1, &total * &scale_big);
    let second = BigRational::new(s2, &total * &scale_big * &scale_big);
    let fourth_moment = BigRational::new(
        s4,
        total * &scale_big * &scale_big * &scale_big * &scale_big,
    );
    let variance = second - &mean * &mean;
    Ok(RationalMoments {
        mean,
        variance,
        fourth_moment,
    })
}

/// Exact moments of the per-sample value of a level estimator under a
/// discrete factor.
///
/// At level 0 the value is `p(L^{(0)})`; at level `l ≥ 1` it is the coupled
/// difference — `p(fine) - p(first group)` for the standard estimator, or
/// `p(fine) - mean_m p(group_m)` for the grouped-coarse variant. The joint
/// law of the `M` group counts is enumerated exactly; the outcome count
/// `(N_{l-1} + 1)^M` must stay within [`MAX_LEVEL_OUTCOMES`].
pub fn exact_level_moments(
    factor: &DiscreteFactor,
    level: u32,
    refinement: u32,
    base_size: u64,
    payoff: &dyn LossPayoff,
    kind: EstimatorKind,
) -> Result<ExactMoments> {
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
    if level == 0 {
        // Base level: plain payoff of a single binomial loss fraction.
        check_basket_size(base_size)?;
        let mut acc = MomentAccumulator::default();
        for &(value, weight) in factor.atoms() {
            let pmf = binomial_pmf_table(base_size, value);
            for (k, prob) in pmf.iter().enumerate() {
                acc.add(weight * prob, payoff.value(k as f64 / base_size as f64));
            }
        }
        return Ok(acc.finish());
    }

    let coarse_n = base_size
        .checked_mul(
            (refinement as u64)
                .checked_pow(level - 1)
                .ok_or_else(|| Error::EnumerationTooLarge("level size overflows".into()))?,
        )
        .ok_or_else(|| Error::EnumerationTooLarge("level size overflows".into()))?;
    let outcomes = ((coarse_n + 1) as f64).powi(refinement as i32);
    if outcomes > MAX_LEVEL_OUTCOMES {
        return Err(Error::EnumerationTooLarge(format!(
            "level {level} needs {outcomes:.3e} joint outcomes; the exact bound is {MAX_LEVEL_OUTCOMES:.0e}"
        )));
    }

    let m = refinement as usize;
    let fine_n = (coarse_n * refinement as u64) as f64;
    let mut acc = MomentAccumulator::default();
    let mut payoff_table = vec![0.0; coarse_n as usize + 1];
    for (c, entry) in payoff_table.iter_mut().enumerate() {
        *entry = payoff.value(c as f64 / coarse_n as f64);
    }
    for &(value, weight) in factor.atoms() {
        let pmf = binomial_pmf_table(coarse_n, value);
        // Depth-first walk over all M-tuples of group counts, carrying the
        // joint probability, the total default count, and the group payoff
        // sum.
        let mut stack_counts = vec![0u64; m];
        enumerate_tuples(
            &pmf,
            m,
            0,
            weight,
            0,
            0.0,
            &mut stack_counts,
            &payoff_table,
            &mut |prob, total_count, payoff_sum, counts| {
                let fine = payoff.value(total_count as f64 / fine_n);
                let coarse = match kind {
                    EstimatorKind::Standard => payoff_table[counts[0] as usize],
                    EstimatorKind::Improved => payoff_sum / m as f64,
                };
                acc.add(prob, fine - coarse);
            },
        );
    }
    Ok(acc.finish())
}

#[allow(clippy::too_many_arguments)]
fn enumerate_tuples(
    pmf: &[f64],
    m: usize,
    depth: usize,
    prob: f64,
    total_count: u64,
    payoff_sum: f64,
    counts: &mut [u64],
    payoff_table: &[f64],
    visit: &mut impl FnMut(f64, u64, f64, &[u64]),
) {
    if depth == m {
        visit(prob, total_count, payoff_sum, counts);
        return;
    }
    for (c, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        counts[depth] = c as u64;
        enumerate_tuples(
            pmf,
            m,
            depth + 1,
            prob * p,
            total_count + c as u64,
            payoff_sum + payoff_table[c],
            counts,
            payoff_table,
            visit,
        );
    }
}

#[derive(Default)]
struct MomentAccumulator {
    mean: f64,
    second: f64,
    fourth: f64,
}

impl MomentAccumulator {
    fn add(&mut self, prob: f64, value: f64) {
        self.mean += prob * value;
        let sq = value * value;
        self.second += prob * sq;
        self.fourth += prob * sq * sq;
    }

    fn finish(self) -> ExactMoments {
        ExactMoments {
            mean: self.mean,
            variance: (self.second - self.mean * self.mean).max(0.0),
            fourth_moment: self.fourth,
        }
    }
}

/// Exact upper tail `P(L_N > threshold | L = factor)` by direct summation.
pub fn binomial_upper_tail(n: u64, factor: f64, threshold: f64) -> Result<f64> {
    check_tail_args(n, factor, threshold)?;
    let first = (threshold * n as f64).floor() as u64 + 1;
    if first > n {
        return Ok(0.0);
    }
    let pmf = binomial_pmf_table(n, factor);
    Ok(pmf[first as usize..].iter().sum())
}

/// Exact lower tail `P(L_N ≤ threshold | L = factor)` by direct summation.
pub fn binomial_lower_tail(n: u64, factor: f64, threshold: f64) -> Result<f64> {
    check_tail_args(n, factor, threshold)?;
    let last = (threshold * n as f64).floor() as u64;
    let pmf = binomial_pmf_table(n, factor);
    Ok(pmf[..=(last.min(n)) as usize].iter().sum())
}

fn check_tail_args(n: u64, factor: f64, threshold: f64) -> Result<()> {
    check_basket_size(n)?;
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::Domain(format!(
            "loss factor must lie in [0, 1], got {factor}"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    Ok(())
}

/// Large-deviation rate of the conditional loss fraction:
/// `g(L, K) = K ln(K/L) + (1-K) ln((1-K)/(1-L))`, the relative entropy of
/// `Bernoulli(K)` with respect to `Bernoulli(L)`. Satisfies
/// `g(L, K) ≥ (K - L)²`.
pub fn deviation_rate(factor: f64, threshold: f64) -> Result<f64> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Domain(format!(
            "rate function needs a loss factor strictly inside (0, 1), got {factor}"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let entropy_term = |num: f64, den: f64| {
        if num == 0.0 {
            0.0
        } else {
            num * (num / den).ln()
        }
    };
    Ok(entropy_term(threshold, factor) + entropy_term(1.0 - threshold, 1.0 - factor))
}

/// Chernoff envelope of the conditional tail: `exp(-N g(L, K))` bounds
/// `P(L_N > K | L)` whenever `K ≥ L` (and the lower tail for `K ≤ L`).
pub fn deviation_bound(n: u64, factor: f64, threshold: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("basket size must be at least 1".into()));
    }
    Ok((-(n as f64) * deviation_rate(factor, threshold)?).exp())
}

/// Large-basket limit `E[p(L)]` of a tranche payoff.
///
/// Discrete factors sum exactly. Models with a closed-form CDF integrate
/// `E[p(L)] = ∫_a^d (1 - F(x)) dx` (the payoff has unit slope strictly
/// between its kinks and is flat elsewhere) by adaptive quadrature to
/// absolute tolerance [`LIMIT_QUADRATURE_TOL`]. The structural model has
/// no closed-form limit law and is rejected.
pub fn expected_tranche_limit(
    model: &LossFactorModel,
    payoff: &TranchePayoff,
) -> Result<f64> {
    model.validate()?;
    match model {
        LossFactorModel::Discrete(factor) => Ok(factor
            .atoms()
            .iter()
            .map(|&(value, weight)| weight * payoff.value(value))
            .sum()),
        LossFactorModel::Vasicek {
            default_prob,
            correlation,
        } if *correlation == 0.0 => {
            // Degenerate one-factor model: the loss is the constant pd.
            Ok(payoff.value(*default_prob))
        }
        LossFactorModel::Beta { .. } | LossFactorModel::Vasicek { .. } => {
            let survival = |x: f64| 1.0 - model.cdf(x).expect("closed-form CDF");
            Ok(adaptive_simpson(
                &survival,
                payoff.attachment(),
                payoff.detachment(),
                LIMIT_QUADRATURE_TOL,
            ))
        }
        LossFactorModel::Structural(_) => Err(Error::Unsupported(
            "the structural model has no closed-form limit distribution".into(),
        )),
    }
}

/// Adaptive Simpson integration to an absolute tolerance.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson_rule(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
