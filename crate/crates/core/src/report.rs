//! Run artifacts: CSV tables and JSON reports.
//!
//! Every artifact embeds the configuration digest and seed so a file can
//! always be traced back to the run that produced it, and none carries a
//! timestamp or other ambient state: rerunning with the same configuration
//! and seed reproduces each file byte for byte. Floats are written with
//! Rust's shortest-roundtrip formatting, which is deterministic and loses
//! no precision.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::BiasCurvePoint;
use crate::error::Result;
use crate::mlmc::LevelStats;

/// Identity of a run, stamped into every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    /// SHA-256 digest of the effective configuration.
    pub config_sha256: String,
    /// RNG seed of the run.
    pub seed: u64,
}

impl RunMetadata {
    fn comment_line(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_sha256, self.seed)
    }
}

/// Write per-level statistics as `level,n,mean,variance,cost`, where
/// `cost` is the total sampling cost spent on the level.
pub fn write_levels_csv(path: &Path, meta: &RunMetadata, levels: &[LevelStats]) -> Result<()> {
    let mut out = meta.comment_line();
    out.push_str("level,n,mean,variance,cost\n");
    for stats in levels {
        writeln!(
            out,
            "{},{},{},{},{}",
            stats.level,
            stats.n,
            stats.mean,
            stats.variance,
            stats.total_cost()
        )
        .expect("writing to a string cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a remaining-bias curve as `k,S_k,stderr`. The geometric
/// truncation factors are kept as per-point comment lines so the column
/// schema stays fixed.
pub fn write_bias_curve_csv(
    path: &Path,
    meta: &RunMetadata,
    curve: &[BiasCurvePoint],
) -> Result<()> {
    let mut out = meta.comment_line();
    for point in curve {
        writeln!(
            out,
            "# truncation_factor[k={}]={}",
            point.k, point.truncation_factor
        )
        .expect("writing to a string cannot fail");
    }
    out.push_str("k,S_k,stderr\n");
    for point in curve {
        writeln!(out, "{},{},{}", point.k, point.s_k, point.stderr)
            .expect("writing to a string cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write empirical CDF steps as `x,F`.
pub fn write_cdf_csv(path: &Path, meta: &RunMetadata, steps: &[(f64, f64)]) -> Result<()> {
    let mut out = meta.comment_line();
    out.push_str("x,F\n");
    for &(x, f) in steps {
        writeln!(out, "{x},{f}").expect("writing to a string cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a JSON report with stable field order (struct declaration order)
/// and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RunMetadata {
        RunMetadata {
            config_sha256: "ab".repeat(32),
            seed: 7,
        }
    }

    fn sample_levels() -> Vec<LevelStats> {
        vec![
            LevelStats {
                level: 0,
                n: 100,
                mean: 0.25,
                variance: 0.01,
                cost_per_sample: 5.0,
            },
            LevelStats {
                level: 1,
                n: 50,
                mean: 0.001,
                variance: 0.0001,
                cost_per_sample: 25.0,
            },
        ]
    }

    #[test]
    fn levels_csv_has_metadata_header_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("levels.csv");
        write_levels_csv(&path, &meta(), &sample_levels()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# config_sha256={} seed=7", "ab".repeat(32)));
        assert_eq!(lines[1], "level,n,mean,variance,cost");
        assert_eq!(lines[2], "0,100,0.25,0.01,500");
        assert_eq!(lines[3], "1,50,0.001,0.0001,1250");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn bias_curve_csv_keeps_truncation_factors_as_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sk.csv");
        let curve = vec![
            BiasCurvePoint {
                k: 0,
                s_k: 0.11,
                stderr: 0.01,
                truncation_factor: 0.96,
            },
            BiasCurvePoint {
                k: 1,
                s_k: 0.01,
                stderr: 0.001,
                truncation_factor: 0.8,
            },
        ];
        write_bias_curve_csv(&path, &meta(), &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config_sha256="));
        assert_eq!(lines[1], "# truncation_factor[k=0]=0.96");
        assert_eq!(lines[2], "# truncation_factor[k=1]=0.8");
        assert_eq!(lines[3], "k,S_k,stderr");
        assert_eq!(lines[4], "0,0.11,0.01");
        assert_eq!(lines[5], "1,0.01,0.001");
    }

    #[test]
    fn cdf_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.csv");
        write_cdf_csv(&path, &meta(), &[(0.1, 0.25), (0.5, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "x,F");
        assert_eq!(lines[2], "0.1,0.25");
        assert_eq!(lines[3], "0.5,1");
    }

    #[test]
    fn artifacts_are_byte_identical_across_writes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_levels_csv(&a, &meta(), &sample_levels()).unwrap();
        write_levels_csv(&b, &meta(), &sample_levels()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        #[derive(Serialize)]
        struct Report {
            name: &'static str,
            value: f64,
        }
        let ja = dir.path().join("a.json");
        let jb = dir.path().join("b.json");
        write_json(&ja, &Report { name: "x", value: 0.5 }).unwrap();
        write_json(&jb, &Report { name: "x", value: 0.5 }).unwrap();
        let bytes = std::fs::read(&ja).unwrap();
        assert_eq!(bytes, std::fs::read(&jb).unwrap());
        assert_eq!(bytes.last(), Some(&b'\n'));
    }
}
