//! Exercises the C ABI the way a foreign caller would: through raw
//! pointers and status codes, including the error paths.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use basketmc::config::RunConfig;
use basketmc::mlmc::run_adaptive;
use basketmc_ffi::{
    bmc_config_free, bmc_config_from_json, bmc_config_set_seed, bmc_last_error_message,
    bmc_result_estimate, bmc_result_free, bmc_result_level, bmc_result_num_levels,
    bmc_result_standard_error, bmc_result_to_json, bmc_result_total_cost, bmc_run_estimate,
    bmc_string_free, BmcConfig, BmcLevelStats, BmcResult, BmcStatus,
};

const BETA_CONFIG: &str = r#"{
    "model": {"type": "beta", "alpha": 2.0, "beta": 2.0},
    "payoff": {"type": "tranche", "attachment": 0.25, "detachment": 0.75},
    "geometry": {"refinement": 5, "base_size": 2, "max_level": 3},
    "estimator": "improved",
    "gamma": 2e-3,
    "pilot_samples": 2000,
    "seed": 7
}"#;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(bmc_last_error_message())
            .to_str()
            .unwrap()
            .to_owned()
    }
}

fn config_from(text: &str) -> *mut BmcConfig {
    let json = CString::new(text).unwrap();
    let mut config: *mut BmcConfig = ptr::null_mut();
    let status = unsafe { bmc_config_from_json(json.as_ptr(), &mut config) };
    assert_eq!(status, BmcStatus::Ok, "config rejected: {}", last_error());
    assert!(!config.is_null());
    config
}

fn run(config: *const BmcConfig) -> *mut BmcResult {
    let mut result: *mut BmcResult = ptr::null_mut();
    let status = unsafe { bmc_run_estimate(config, &mut result) };
    assert_eq!(status, BmcStatus::Ok, "run failed: {}", last_error());
    assert!(!result.is_null());
    result
}

#[test]
fn ffi_run_matches_direct_library_call_bit_for_bit() {
    let config = config_from(BETA_CONFIG);
    let result = run(config);

    let direct_config = RunConfig::from_json(BETA_CONFIG).unwrap();
    let direct = run_adaptive(
        &direct_config.build_model().unwrap(),
        &direct_config.build_payoff().unwrap(),
        direct_config.estimator,
        &direct_config.build_geometry().unwrap(),
        &direct_config.adaptive_options(),
    )
    .unwrap();

    unsafe {
        assert_eq!(
            bmc_result_estimate(result).to_bits(),
            direct.estimate.to_bits()
        );
        assert_eq!(
            bmc_result_standard_error(result).to_bits(),
            direct.standard_error.to_bits()
        );
        assert_eq!(
            bmc_result_total_cost(result).to_bits(),
            direct.total_cost.to_bits()
        );
        assert_eq!(bmc_result_num_levels(result), direct.levels.len() as u64);
        for (index, expected) in direct.levels.iter().enumerate() {
            let mut stats = BmcLevelStats {
                level: 0,
                n: 0,
                mean: 0.0,
                variance: 0.0,
                cost_per_sample: 0.0,
            };
            let status = bmc_result_level(result, index as u64, &mut stats);
            assert_eq!(status, BmcStatus::Ok);
            assert_eq!(stats.level, expected.level);
            assert_eq!(stats.n, expected.n);
            assert_eq!(stats.mean.to_bits(), expected.mean.to_bits());
            assert_eq!(stats.variance.to_bits(), expected.variance.to_bits());
        }

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(bmc_result_to_json(result, &mut json), BmcStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        let parsed: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(parsed["estimate"].as_f64().unwrap(), direct.estimate);
        assert_eq!(
            parsed["levels"].as_array().unwrap().len(),
            direct.levels.len()
        );
        bmc_string_free(json);

        bmc_result_free(result);
        bmc_config_free(config);
    }
}

#[test]
fn seed_override_changes_the_estimate() {
    let config = config_from(BETA_CONFIG);
    let baseline = run(config);
    unsafe {
        assert_eq!(bmc_config_set_seed(config, 8), BmcStatus::Ok);
        let reseeded = run(config);
        assert_ne!(
            bmc_result_estimate(baseline).to_bits(),
            bmc_result_estimate(reseeded).to_bits(),
            "a different seed must change the estimate"
        );
        bmc_result_free(reseeded);

        // Setting the seed back restores the original result exactly.
        assert_eq!(bmc_config_set_seed(config, 7), BmcStatus::Ok);
        let restored = run(config);
        assert_eq!(
            bmc_result_estimate(baseline).to_bits(),
            bmc_result_estimate(restored).to_bits()
        );
        bmc_result_free(restored);
        bmc_result_free(baseline);
        bmc_config_free(config);
    }
}

#[test]
fn invalid_inputs_report_status_and_message() {
    unsafe {
        let mut config: *mut BmcConfig = ptr::null_mut();

        let status = bmc_config_from_json(ptr::null(), &mut config);
        assert_eq!(status, BmcStatus::NullArgument);
        assert!(!last_error().is_empty());

        let not_json = CString::new("{not json").unwrap();
        let status = bmc_config_from_json(not_json.as_ptr(), &mut config);
        assert_eq!(status, BmcStatus::Validation);
        assert!(last_error().contains("config"), "got: {}", last_error());
        assert!(config.is_null(), "failed parse must not hand out a handle");

        let bad_gamma = BETA_CONFIG.replace("2e-3", "0.0");
        let bad_gamma = CString::new(bad_gamma).unwrap();
        let status = bmc_config_from_json(bad_gamma.as_ptr(), &mut config);
        assert_eq!(status, BmcStatus::Validation);
        assert!(!last_error().is_empty());

        let mut result: *mut BmcResult = ptr::null_mut();
        assert_eq!(
            bmc_run_estimate(ptr::null(), &mut result),
            BmcStatus::NullArgument
        );
        assert_eq!(
            bmc_config_set_seed(ptr::null_mut(), 1),
            BmcStatus::NullArgument
        );
        assert!(bmc_result_estimate(ptr::null()).is_nan());
        assert_eq!(bmc_result_num_levels(ptr::null()), 0);

        // Freeing null handles is a documented no-op.
        bmc_config_free(ptr::null_mut());
        bmc_result_free(ptr::null_mut());
        bmc_string_free(ptr::null_mut());
    }
}

#[test]
fn level_index_out_of_range_is_a_validation_error() {
    let config = config_from(BETA_CONFIG);
    let result = run(config);
    unsafe {
        let levels = bmc_result_num_levels(result);
        let mut stats = BmcLevelStats {
            level: 0,
            n: 0,
            mean: 0.0,
            variance: 0.0,
            cost_per_sample: 0.0,
        };
        let status = bmc_result_level(result, levels, &mut stats);
        assert_eq!(status, BmcStatus::Validation);
        assert!(last_error().contains("out of range"));
        bmc_result_free(result);
        bmc_config_free(config);
    }
}

#[test]
fn exhausted_budget_reports_the_budget_status() {
    let starved = BETA_CONFIG.replace("\"seed\": 7", "\"seed\": 7, \"cost_budget\": 100.0");
    let config = config_from(&starved);
    let mut result = ptr::null_mut();
    unsafe {
        let status = bmc_run_estimate(config, &mut result);
        assert_eq!(status, BmcStatus::Budget);
        assert!(last_error().contains("budget"), "got: {}", last_error());
        assert!(result.is_null());
        bmc_config_free(config);
    }
}

#[test]
fn generated_header_declares_the_public_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/basketmc.h");
    let text = std::fs::read_to_string(&header)
        .unwrap_or_else(|e| panic!("missing generated header {}: {e}", header.display()));
    for symbol in [
        "bmc_config_from_json",
        "bmc_run_estimate",
        "bmc_result_level",
        "bmc_result_to_json",
        "bmc_last_error_message",
        "BmcStatus",
        "BmcLevelStats",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}
