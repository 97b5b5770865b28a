//! Command-line front end.
//!
//! Subcommands: `estimate` (adaptive multilevel run), `convergence`
//! (fixed-depth per-level statistics with decay-rate fits), `cdf`
//! (empirical factor distribution), and `oracle` (exact reference values
//! printed as JSON). All take `--config`, an optional `--seed` override,
//! `--out` for artifact directories, and `--threads`, which changes only
//! how fast results arrive, never what they are.
//!
//! Exit codes: 0 on success, 2 for configuration or domain problems,
//! 3 when the sampling budget is exhausted, 1 for I/O failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use basketmc::config::RunConfig;
use basketmc::diagnostics::{
    fit_bias_decay, fit_mean_decay, fit_variance_decay, remaining_bias_curve, sample_factor_cdf,
    BiasCurvePoint, RateFit,
};
use basketmc::error::{Error, Result};
use basketmc::factor::LossFactorModel;
use basketmc::mlmc::{
    run_adaptive, run_fixed_levels, run_fixed_levels_paired, EstimatorKind, LevelGeometry,
    LevelStats,
};
use basketmc::oracle;
use basketmc::report::{
    write_bias_curve_csv, write_cdf_csv, write_json, write_levels_csv, RunMetadata,
};

#[derive(Parser)]
#[command(
    name = "basketmc",
    version,
    about = "Multilevel Monte Carlo engine for loss fractions of exchangeable default baskets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive multilevel estimator to the target accuracy.
    Estimate(RunArgs),
    /// Draw fixed-depth level statistics and fit their decay rates.
    Convergence(RunArgs),
    /// Sample the loss-factor distribution and write its empirical CDF.
    Cdf(RunArgs),
    /// Print exact reference values as JSON on stdout.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output artifacts (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 or omitted: automatic). Affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the configuration (stamped into output).
    #[arg(long)]
    seed: Option<u64>,
    #[command(subcommand)]
    quantity: OracleQuantity,
}

#[derive(Subcommand)]
enum OracleQuantity {
    /// Exact E[p(L_N)] by enumeration (discrete and Beta factors only).
    ExpectedPayoff {
        /// Basket size N; defaults to the finest level of the ladder.
        #[arg(long)]
        basket: Option<u64>,
    },
    /// Exact mean, variance, and fourth moment of one level term
    /// (discrete factors only).
    LevelMoments {
        #[arg(long)]
        level: u32,
    },
    /// Closed-form fourth central moment of the conditional loss fraction.
    FourthMoment {
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        basket: u64,
    },
    /// Exact conditional tail probability with its large-deviation envelope.
    Tail {
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        basket: u64,
        /// Compute the lower tail P(L_N <= threshold) instead of the upper.
        #[arg(long)]
        lower: bool,
    },
    /// Large-basket limit E[p(L)] of the configured payoff.
    Limit,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Convergence(args) => cmd_convergence(args),
        Command::Cdf(args) => cmd_cdf(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    if let Err(error) = outcome {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}

/// Load, override, validate, and announce a run configuration.
fn prepare(config_path: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<RunConfig> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    for warning in config.warnings() {
        eprintln!("warning: {warning}");
    }
    if let Some(threads) = threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| Error::Config(format!("failed to size the thread pool: {e}")))?;
        }
    }
    Ok(config)
}

fn metadata(config: &RunConfig) -> RunMetadata {
    RunMetadata {
        config_sha256: config.digest(),
        seed: config.seed,
    }
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    config_sha256: &'a str,
    seed: u64,
    estimator: &'a str,
    geometry: LevelGeometry,
    gamma: f64,
    estimate: f64,
    standard_error: f64,
    allocation_variance_bound: f64,
    total_cost: f64,
    allocation: &'a [u64],
    levels: &'a [LevelStats],
    warnings: Vec<String>,
}

fn cmd_estimate(args: RunArgs) -> Result<()> {
    let config = prepare(&args.config, args.seed, args.threads)?;
    let model = config.build_model()?;
    let payoff = config.build_payoff()?;
    let geometry = config.build_geometry()?;
    let result = run_adaptive(
        &model,
        &payoff,
        config.estimator,
        &geometry,
        &config.adaptive_options(),
    )?;
    let meta = metadata(&config);
    std::fs::create_dir_all(&args.out)?;
    write_levels_csv(&args.out.join("levels.csv"), &meta, &result.levels)?;
    write_json(
        &args.out.join("report.json"),
        &EstimateReport {
            config_sha256: &meta.config_sha256,
            seed: meta.seed,
            estimator: result.kind.name(),
            geometry: result.geometry,
            gamma: result.target_std,
            estimate: result.estimate,
            standard_error: result.standard_error,
            allocation_variance_bound: result.allocation_variance_bound,
            total_cost: result.total_cost,
            allocation: &result.allocation,
            levels: &result.levels,
            warnings: config.warnings(),
        },
    )?;
    println!(
        "estimate {} +/- {} (target {}, cost {:.3e})",
        result.estimate, result.standard_error, result.target_std, result.total_cost
    );
    Ok(())
}

#[derive(Serialize)]
struct KindRates {
    mean_decay: Option<RateFit>,
    variance_decay: Option<RateFit>,
    bias_decay: Option<RateFit>,
}

#[derive(Serialize)]
struct RatesReport<'a> {
    config_sha256: &'a str,
    seed: u64,
    samples_per_level: u64,
    shared_draws: bool,
    standard: KindRates,
    improved: KindRates,
}

fn cmd_convergence(args: RunArgs) -> Result<()> {
    let config = prepare(&args.config, args.seed, args.threads)?;
    let model = config.build_model()?;
    let payoff = config.build_payoff()?;
    let geometry = config.build_geometry()?;
    let samples = config.convergence.samples_per_level;
    let (standard, improved) = if config.share_pilot_draws {
        run_fixed_levels_paired(&model, &payoff, &geometry, samples, config.seed)?
    } else {
        (
            run_fixed_levels(
                &model,
                &payoff,
                EstimatorKind::Standard,
                &geometry,
                samples,
                config.seed,
            )?,
            run_fixed_levels(
                &model,
                &payoff,
                EstimatorKind::Improved,
                &geometry,
                samples,
                config.seed,
            )?,
        )
    };

    let meta = metadata(&config);
    std::fs::create_dir_all(&args.out)?;
    let mut reports = Vec::new();
    for (kind, levels) in [
        (EstimatorKind::Standard, &standard),
        (EstimatorKind::Improved, &improved),
    ] {
        let name = kind.name();
        write_levels_csv(&args.out.join(format!("levels_{name}.csv")), &meta, levels)?;
        let curve = remaining_bias_curve(levels, geometry.refinement);
        write_bias_curve_csv(&args.out.join(format!("sk_{name}.csv")), &meta, &curve)?;
        reports.push(kind_rates(name, levels, &curve, geometry.refinement));
    }
    let mut reports = reports.into_iter();
    let rates = RatesReport {
        config_sha256: &meta.config_sha256,
        seed: meta.seed,
        samples_per_level: samples,
        shared_draws: config.share_pilot_draws,
        standard: reports.next().expect("two kinds"),
        improved: reports.next().expect("two kinds"),
    };
    write_json(&args.out.join("rates.json"), &rates)?;
    for (name, rates) in [("standard", &rates.standard), ("improved", &rates.improved)] {
        if let Some(fit) = &rates.variance_decay {
            println!(
                "{name}: variance decay exponent {:.3} (residual rms {:.3})",
                fit.decay_exponent(),
                fit.residual_rms
            );
        } else {
            println!("{name}: variance decay fit unavailable");
        }
    }
    Ok(())
}

/// Fit all three decay rates for one estimator kind, reporting failed or
/// trimmed fits on stderr instead of aborting the run.
fn kind_rates(
    name: &str,
    levels: &[LevelStats],
    curve: &[BiasCurvePoint],
    refinement: u32,
) -> KindRates {
    let note = |label: &str, fit: std::result::Result<RateFit, Error>| match fit {
        Ok(fit) => {
            if !fit.levels_excluded.is_empty() {
                eprintln!(
                    "warning: {name} {label} fit excluded levels {:?} (insignificant or nonpositive)",
                    fit.levels_excluded
                );
            }
            Some(fit)
        }
        Err(error) => {
            eprintln!("warning: {name} {label} fit unavailable: {error}");
            None
        }
    };
    KindRates {
        mean_decay: note("mean-decay", fit_mean_decay(levels, refinement)),
        variance_decay: note("variance-decay", fit_variance_decay(levels, refinement)),
        bias_decay: note("bias-decay", fit_bias_decay(curve, refinement)),
    }
}

fn cmd_cdf(args: RunArgs) -> Result<()> {
    let config = prepare(&args.config, args.seed, args.threads)?;
    let model = config.build_model()?;
    let ecdf = sample_factor_cdf(
        &model,
        config.cdf.samples,
        config.cdf.proxy_basket,
        config.seed,
    )?;
    let meta = metadata(&config);
    std::fs::create_dir_all(&args.out)?;
    write_cdf_csv(&args.out.join("cdf.csv"), &meta, &ecdf.steps())?;
    print!(
        "wrote empirical CDF of {} samples ({} steps)",
        ecdf.len(),
        ecdf.steps().len()
    );
    // For models with a continuous closed-form CDF, report the KS distance
    // as a quick sanity signal.
    match &model {
        LossFactorModel::Beta { .. } | LossFactorModel::Vasicek { .. } => {
            let distance = ecdf.ks_distance(|x| model.cdf(x).expect("closed-form CDF"));
            println!("; KS distance to the closed-form CDF: {distance:.6}");
        }
        _ => println!(),
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    quantity: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    basket: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimator: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fourth_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deviation_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deviation_bound: Option<f64>,
}

impl OracleReport {
    fn new(quantity: &'static str) -> Self {
        Self {
            quantity,
            basket: None,
            level: None,
            estimator: None,
            factor: None,
            threshold: None,
            side: None,
            value: None,
            mean: None,
            variance: None,
            fourth_moment: None,
            deviation_rate: None,
            deviation_bound: None,
        }
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let config = prepare(&args.config, args.seed, None)?;
    let model = config.build_model()?;
    let payoff = config.build_payoff()?;
    let geometry = config.build_geometry()?;

    let report = match args.quantity {
        OracleQuantity::ExpectedPayoff { basket } => {
            let n = basket.unwrap_or_else(|| geometry.n_at(geometry.max_level));
            let value = match &model {
                LossFactorModel::Discrete(factor) => {
                    oracle::exact_expected_payoff(factor, n, &payoff)?
                }
                LossFactorModel::Beta { alpha, beta } => {
                    oracle::exact_expected_payoff_beta(*alpha, *beta, n, &payoff)?
                }
                _ => {
                    return Err(Error::Unsupported(
                        "exact expected payoffs need a discrete or Beta factor".into(),
                    ))
                }
            };
            let mut report = OracleReport::new("expected_payoff");
            report.basket = Some(n);
            report.value = Some(value);
            report
        }
        OracleQuantity::LevelMoments { level } => {
            let factor = match &model {
                LossFactorModel::Discrete(factor) => factor,
                _ => {
                    return Err(Error::Unsupported(
                        "exact level moments need a discrete factor".into(),
                    ))
                }
            };
            let moments = oracle::exact_level_moments(
                factor,
                level,
                geometry.refinement,
                geometry.base_size,
                &payoff,
                config.estimator,
            )?;
            let mut report = OracleReport::new("level_moments");
            report.level = Some(level);
            report.estimator = Some(config.estimator.name());
            report.mean = Some(moments.mean);
            report.variance = Some(moments.variance);
            report.fourth_moment = Some(moments.fourth_moment);
            report
        }
        OracleQuantity::FourthMoment { factor, basket } => {
            let mut report = OracleReport::new("fourth_moment");
            report.factor = Some(factor);
            report.basket = Some(basket);
            report.value = Some(oracle::loss_fourth_central_moment(factor, basket)?);
            report
        }
        OracleQuantity::Tail {
            factor,
            threshold,
            basket,
            lower,
        } => {
            let probability = if lower {
                oracle::binomial_lower_tail(basket, factor, threshold)?
            } else {
                oracle::binomial_upper_tail(basket, factor, threshold)?
            };
            let mut report = OracleReport::new("tail");
            report.factor = Some(factor);
            report.threshold = Some(threshold);
            report.basket = Some(basket);
            report.side = Some(if lower { "lower" } else { "upper" });
            report.value = Some(probability);
            // The entropy envelope exists only for interior factors.
            if factor > 0.0 && factor < 1.0 {
                report.deviation_rate = Some(oracle::deviation_rate(factor, threshold)?);
                report.deviation_bound = Some(oracle::deviation_bound(basket, factor, threshold)?);
            }
            report
        }
        OracleQuantity::Limit => {
            let (tranche, scale) = payoff.as_tranche().ok_or_else(|| {
                Error::Unsupported("limit computation needs a tranche-shaped payoff".into())
            })?;
            let value = scale * oracle::expected_tranche_limit(&model, tranche)?;
            let mut report = OracleReport::new("limit");
            report.value = Some(value);
            report
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}
