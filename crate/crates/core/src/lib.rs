//! Multilevel Monte Carlo engine for the loss fraction of large exchangeable
//! default baskets.
//!
//! A basket of `N` exchangeable Bernoulli default indicators, mixed over a
//! common loss factor `L`, has loss fraction `L_N = (1/N) Σ Y_i`. This crate
//! estimates `E[p(L_N)]` for piecewise-linear tranche payoffs `p` (and the
//! large-basket limit `E[p(L)]`) with coupled multilevel estimators whose
//! levels refine the basket size geometrically, `N_l = N_0 · M^l`.
//!
//! The crate is organised as:
//!
//! * [`payoff`] — tranche payoffs on the unit interval and market-style
//!   quote conversion;
//! * [`factor`] — loss-factor distributions and conditional sampling of
//!   grouped loss fractions;
//! * [`structural`] — a jump-diffusion firm-value model driving defaults
//!   through a common path instead of a scalar factor;
//! * [`mlmc`] — level estimators (standard and grouped-coarse variants),
//!   sample allocation, and the adaptive driver;
//! * [`oracle`] — exact enumeration references used to validate every
//!   estimator path;
//! * [`diagnostics`] — decay-rate fits, remaining-bias curves, and empirical
//!   CDF utilities;
//! * [`config`] / [`report`] — run configuration and result emission shared
//!   by the CLI and the C ABI.
//!
//! Runs are deterministic: every sample draws from its own counter-derived
//! substream, so results are bit-identical for any worker count.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod factor;
pub mod mlmc;
pub mod oracle;
pub mod payoff;
pub mod report;
pub mod rng;
pub mod structural;

pub use error::Error;
