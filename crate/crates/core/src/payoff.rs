//! Payoff functions of the basket loss fraction.
//!
//! The workhorse is the tranche payoff
//! `p(l) = (l - a)⁺ - (l - d)⁺` with attachment `a` and detachment `d`:
//! zero below the attachment, linear in between, capped at `d - a` above.
//! It is Lipschitz with constant 1 and linear on each of the three
//! intervals `[0, a]`, `(a, d]`, `(d, 1]`.

use crate::error::{Error, Result};

/// A payoff of the loss fraction, evaluated inside sampling loops.
///
/// Implementations must be Lipschitz on `[0, 1]` with the advertised
/// constant; the multilevel variance guarantees depend on it.
pub trait LossPayoff: Send + Sync {
    /// Payoff at loss fraction `l`. Total on `[0, 1]`; callers guarantee the
    /// domain (loss fractions are counts over basket size by construction).
    fn value(&self, l: f64) -> f64;

    /// Lipschitz constant of `value` on `[0, 1]`.
    fn lipschitz(&self) -> f64;

    /// Lipschitz constant of the derivative, for payoffs smooth on `[0, 1]`.
    /// Piecewise-linear payoffs return `None`.
    fn derivative_lipschitz(&self) -> Option<f64> {
        None
    }
}

/// The linearity interval of the tranche payoff a loss fraction falls in.
///
/// Boundaries follow the half-open convention `[0, a]`, `(a, d]`, `(d, 1]`:
/// a loss exactly at the attachment belongs to the lower interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrancheInterval {
    /// `[0, a]` — the tranche is untouched.
    BelowAttachment,
    /// `(a, d]` — the tranche absorbs losses linearly.
    Between,
    /// `(d, 1]` — the tranche is wiped out.
    AboveDetachment,
}

/// Piecewise-linear tranche payoff `(l - a)⁺ - (l - d)⁺`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TranchePayoff {
    attachment: f64,
    detachment: f64,
}

impl TranchePayoff {
    /// Build a tranche payoff; requires `0 ≤ attachment < detachment ≤ 1`.
    pub fn new(attachment: f64, detachment: f64) -> Result<Self> {
        if !(attachment.is_finite() && detachment.is_finite()) {
            return Err(Error::InvalidParameter(
                "tranche points must be finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&attachment) || !(0.0..=1.0).contains(&detachment) {
            return Err(Error::InvalidParameter(format!(
                "tranche points must lie in [0, 1], got ({attachment}, {detachment})"
            )));
        }
        if attachment >= detachment {
            return Err(Error::InvalidParameter(format!(
                "attachment must be strictly below detachment, got ({attachment}, {detachment})"
            )));
        }
        Ok(Self {
            attachment,
            detachment,
        })
    }

    pub fn attachment(&self) -> f64 {
        self.attachment
    }

    pub fn detachment(&self) -> f64 {
        self.detachment
    }

    /// Width `d - a`, the maximal payoff.
    pub fn width(&self) -> f64 {
        self.detachment - self.attachment
    }

    /// Domain-checked evaluation for external callers.
    pub fn evaluate(&self, l: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Domain(format!(
                "loss fraction must lie in [0, 1], got {l}"
            )));
        }
        Ok(self.value(l))
    }

    /// Which linearity interval `l` falls in.
    pub fn interval(&self, l: f64) -> TrancheInterval {
        if l <= self.attachment {
            TrancheInterval::BelowAttachment
        } else if l <= self.detachment {
            TrancheInterval::Between
        } else {
            TrancheInterval::AboveDetachment
        }
    }
}

impl LossPayoff for TranchePayoff {
    fn value(&self, l: f64) -> f64 {
        (l - self.attachment).max(0.0) - (l - self.detachment).max(0.0)
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// Market-style tranche quote on the default fraction scale.
///
/// Quotes state attachment/detachment points `(a, d)` of the *default*
/// fraction; with recovery `R` the corresponding loss-fraction tranche is
/// `(a, d) / (1 - R)`, clamped to `[0, 1]`. Reported tranche losses scale
/// the payoff by `1 - R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrancheQuote {
    attach: f64,
    detach: f64,
    recovery: f64,
}

impl TrancheQuote {
    /// Build a quote; requires `0 ≤ attach < detach ≤ 1` and `0 ≤ R < 1`.
    pub fn new(attach: f64, detach: f64, recovery: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&attach) || !(0.0..=1.0).contains(&detach) {
            return Err(Error::InvalidParameter(format!(
                "quote points must lie in [0, 1], got ({attach}, {detach})"
            )));
        }
        if attach >= detach {
            return Err(Error::InvalidParameter(format!(
                "quote attachment must be strictly below detachment, got ({attach}, {detach})"
            )));
        }
        if !(0.0..1.0).contains(&recovery) {
            return Err(Error::InvalidParameter(format!(
                "recovery must lie in [0, 1), got {recovery}"
            )));
        }
        Ok(Self {
            attach,
            detach,
            recovery,
        })
    }

    /// Convert to a loss-fraction tranche, clamping both points to `[0, 1]`.
    ///
    /// Errors if clamping collapses the tranche to zero width (both points
    /// at 1), which happens when `attach ≥ 1 - R`.
    pub fn to_payoff(&self) -> Result<TranchePayoff> {
        let scale = 1.0 - self.recovery;
        let a = (self.attach / scale).min(1.0);
        let d = (self.detach / scale).min(1.0);
        if a >= d {
            return Err(Error::DegenerateTranche(format!(
                "quote ({}, {}) with recovery {} maps to zero width at ({a}, {d})",
                self.attach, self.detach, self.recovery
            )));
        }
        TranchePayoff::new(a, d)
    }

    /// Factor `1 - R` converting payoff units back to quoted loss units.
    pub fn loss_scale(&self) -> f64 {
        1.0 - self.recovery
    }
}

/// A payoff scaled by a positive constant (used to report quoted tranches
/// in loss units: the quote's `1 - R` times the tranche payoff).
pub struct ScaledPayoff<P> {
    inner: P,
    scale: f64,
}

impl<P: LossPayoff> ScaledPayoff<P> {
    pub fn new(inner: P, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "payoff scale must be positive, got {scale}"
            )));
        }
        Ok(Self { inner, scale })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<P: LossPayoff> LossPayoff for ScaledPayoff<P> {
    fn value(&self, l: f64) -> f64 {
        self.scale * self.inner.value(l)
    }

    fn lipschitz(&self) -> f64 {
        self.scale * self.inner.lipschitz()
    }

    fn derivative_lipschitz(&self) -> Option<f64> {
        self.inner.derivative_lipschitz().map(|c| self.scale * c)
    }
}

/// A user-supplied payoff with declared regularity constants.
pub struct GenericPayoff {
    evaluator: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    lipschitz: f64,
    derivative_lipschitz: Option<f64>,
}

impl GenericPayoff {
    /// Wrap an evaluator with its Lipschitz constant on `[0, 1]` and, for
    /// smooth payoffs, the Lipschitz constant of its derivative.
    pub fn new(
        evaluator: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        derivative_lipschitz: Option<f64>,
    ) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        if let Some(c) = derivative_lipschitz {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "derivative Lipschitz constant must be nonnegative, got {c}"
                )));
            }
        }
        Ok(Self {
            evaluator: Box::new(evaluator),
            lipschitz,
            derivative_lipschitz,
        })
    }

    /// The identity payoff `p(l) = l`, i.e. the expected loss itself.
    pub fn identity() -> Self {
        Self::new(|l| l, 1.0, Some(0.0)).expect("constants are valid")
    }

    /// The monomial `p(l) = l^k` for `k ≥ 1`, smooth on `[0, 1]` for `k ≥ 2`.
    pub fn power(exponent: u32) -> Result<Self> {
        if exponent == 0 {
            return Err(Error::InvalidParameter(
                "power payoff needs exponent ≥ 1".into(),
            ));
        }
        let k = f64::from(exponent);
        let second = if exponent >= 2 { Some(k * (k - 1.0)) } else { Some(0.0) };
        Self::new(move |l| l.powi(exponent as i32), k, second)
    }
}

impl LossPayoff for GenericPayoff {
    fn value(&self, l: f64) -> f64 {
        (self.evaluator)(l)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn derivative_lipschitz(&self) -> Option<f64> {
        self.derivative_lipschitz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tranche_values_at_reference_points() {
        let p = TranchePayoff::new(0.05, 0.10).unwrap();
        assert_eq!(p.value(0.0), 0.0);
        assert_relative_eq!(p.value(1.0), 0.05, max_relative = 1e-12);
        assert_relative_eq!(p.value(0.07), 0.02, max_relative = 1e-12);
    }

    #[test]
    fn tranche_rejects_bad_parameters() {
        assert!(TranchePayoff::new(0.3, 0.3).is_err(), "zero width");
        assert!(TranchePayoff::new(0.5, 0.3).is_err(), "inverted");
        assert!(TranchePayoff::new(-0.1, 0.3).is_err(), "below 0");
        assert!(TranchePayoff::new(0.1, 1.3).is_err(), "above 1");
        assert!(TranchePayoff::new(0.0, 1.0).is_ok(), "full interval is allowed");
        assert!(TranchePayoff::new(0.0, 0.05).is_ok(), "zero attachment is allowed");
    }

    #[test]
    fn evaluate_rejects_losses_outside_unit_interval() {
        let p = TranchePayoff::new(0.25, 0.75).unwrap();
        assert!(p.evaluate(-0.01).is_err());
        assert!(p.evaluate(1.01).is_err());
        assert!(p.evaluate(f64::NAN).is_err());
        assert_eq!(p.evaluate(0.5).unwrap(), 0.25);
    }

    #[test]
    fn interval_boundaries_are_half_open() {
        let p = TranchePayoff::new(0.25, 0.75).unwrap();
        assert_eq!(p.interval(0.25), TrancheInterval::BelowAttachment);
        assert_eq!(p.interval(0.250001), TrancheInterval::Between);
        assert_eq!(p.interval(0.75), TrancheInterval::Between);
        assert_eq!(p.interval(0.750001), TrancheInterval::AboveDetachment);
        assert_eq!(p.interval(0.0), TrancheInterval::BelowAttachment);
        assert_eq!(p.interval(1.0), TrancheInterval::AboveDetachment);
    }

    #[test]
    fn quote_conversion_matches_reference_values() {
        let q = TrancheQuote::new(0.0, 0.03, 0.4).unwrap();
        let p = q.to_payoff().unwrap();
        assert_eq!(p.attachment(), 0.0);
        assert_relative_eq!(p.detachment(), 0.05, max_relative = 1e-12);
        assert_relative_eq!(q.loss_scale(), 0.6, max_relative = 1e-15);

        let q = TrancheQuote::new(0.22, 1.0, 0.4).unwrap();
        let p = q.to_payoff().unwrap();
        assert_relative_eq!(p.attachment(), 0.22 / 0.6, max_relative = 1e-12);
        assert_eq!(p.detachment(), 1.0, "detachment clamps to 1");

        let q = TrancheQuote::new(0.0, 1.0, 0.0).unwrap();
        let p = q.to_payoff().unwrap();
        assert_eq!((p.attachment(), p.detachment()), (0.0, 1.0));
    }

    #[test]
    fn quote_collapsing_to_zero_width_is_rejected() {
        // attach/(1-R) and detach/(1-R) both clamp to 1.
        let q = TrancheQuote::new(0.7, 0.9, 0.4).unwrap();
        match q.to_payoff() {
            Err(Error::DegenerateTranche(_)) => {}
            other => panic!("expected degenerate-tranche error, got {other:?}"),
        }
    }

    #[test]
    fn scaled_payoff_reports_quote_loss_units() {
        let q = TrancheQuote::new(0.0, 0.03, 0.4).unwrap();
        let p = ScaledPayoff::new(q.to_payoff().unwrap(), q.loss_scale()).unwrap();
        // At full loss the quoted tranche loses its full width on the
        // default-fraction scale: 0.6 * 0.05 = 0.03.
        assert_relative_eq!(p.value(1.0), 0.03, max_relative = 1e-12);
        assert_relative_eq!(p.lipschitz(), 0.6, max_relative = 1e-15);
    }

    #[test]
    fn power_payoff_declares_smoothness_constants() {
        let sq = GenericPayoff::power(2).unwrap();
        assert_eq!(sq.value(0.5), 0.25);
        assert_eq!(sq.lipschitz(), 2.0);
        assert_eq!(sq.derivative_lipschitz(), Some(2.0));
        let id = GenericPayoff::identity();
        assert_eq!(id.value(0.3), 0.3);
        assert_eq!(id.derivative_lipschitz(), Some(0.0));
    }

    proptest! {
        // |p(x) - p(y)| ≤ |x - y| for every tranche: the variance theory
        // rests on this.
        #[test]
        fn tranche_is_lipschitz_one(
            a in 0.0f64..0.99,
            width in 0.01f64..1.0,
            x in 0.0f64..=1.0,
            y in 0.0f64..=1.0,
        ) {
            let d = (a + width).min(1.0);
            prop_assume!(a < d);
            let p = TranchePayoff::new(a, d).unwrap();
            let lhs = (p.value(x) - p.value(y)).abs();
            prop_assert!(lhs <= (x - y).abs() + 1e-15);
        }

        // Within one linearity interval the payoff difference is exactly
        // linear in the loss difference (slope 0 or 1).
        #[test]
        fn tranche_is_linear_within_an_interval(
            a in 0.05f64..0.5,
            width in 0.05f64..0.5,
            x in 0.0f64..=1.0,
            y in 0.0f64..=1.0,
        ) {
            let d = a + width;
            let p = TranchePayoff::new(a, d).unwrap();
            prop_assume!(p.interval(x) == p.interval(y));
            let slope = match p.interval(x) {
                TrancheInterval::Between => 1.0,
                _ => 0.0,
            };
            let diff = p.value(x) - p.value(y);
            prop_assert!((diff - slope * (x - y)).abs() <= 1e-12);
        }

        // Payoff values stay inside [0, width].
        #[test]
        fn tranche_values_are_bounded(
            a in 0.0f64..0.9,
            width in 0.01f64..0.5,
            l in 0.0f64..=1.0,
        ) {
            let p = TranchePayoff::new(a, (a + width).min(1.0)).unwrap();
            let v = p.value(l);
            prop_assert!(v >= 0.0 && v <= p.width() + 1e-15);
        }
    }
}
