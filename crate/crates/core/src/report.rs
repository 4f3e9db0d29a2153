//! File emission: atomic writes, CSV rows with a config-hash header
//! comment, and versioned JSON wrappers.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::mc::RiskSweepReport;
use crate::packing::EntropyEstimate;
use crate::sieve::SieveTrace;

pub const SCHEMA_VERSION: &str = "v1";

/// Write via a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// JSON document with the schema version and config hash folded in.
pub fn write_json<T: Serialize>(path: &Path, config_hash: &str, payload: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        schema_version: &'static str,
        config_hash: &'a str,
        #[serde(flatten)]
        payload: &'a T,
    }
    let doc = Doc {
        schema_version: SCHEMA_VERSION,
        config_hash,
        payload,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(path, &text)
}

fn csv_header(config_hash: &str, columns: &str) -> String {
    format!("# config_hash={config_hash}\n{columns}\n")
}

/// `epsilon,c,mode,log_count,center_index` rows.
pub fn entropy_csv(config_hash: &str, rows: &[EntropyEstimate]) -> String {
    let mut out = csv_header(config_hash, "epsilon,c,mode,log_count,center_index");
    for r in rows {
        let center = r
            .center_used
            .map(|i| i.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{center}",
            r.epsilon, r.scale_c, r.mode, r.log_count
        );
    }
    out
}

/// `level,selected_index,packing_size,ties,radius,separation` rows.
pub fn trace_csv(config_hash: &str, trace: &SieveTrace) -> String {
    let mut out = csv_header(
        config_hash,
        "level,selected_index,packing_size,ties,radius,separation",
    );
    for r in &trace.levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.level, r.selected_index, r.packing_size, r.ties, r.radius, r.separation
        );
    }
    out
}

/// Sweep CSV: one `risk` row per `(n, replicate)`, then per-n `mean_risk`
/// and `stderr` rows, then the fitted-summary rows.
pub fn sweep_csv(config_hash: &str, report: &RiskSweepReport) -> String {
    let mut out = csv_header(config_hash, "kind,n,replicate,value");
    for (n, rep, risk) in &report.per_replicate {
        let _ = writeln!(out, "risk,{n},{rep},{risk}");
    }
    for row in &report.rows {
        let _ = writeln!(out, "mean_risk,{},,{}", row.n, row.mean_risk);
        let _ = writeln!(out, "stderr,{},,{}", row.n, row.stderr);
    }
    let _ = writeln!(out, "slope,,,{}", report.slope);
    let _ = writeln!(out, "slope_halfwidth,,,{}", report.slope_halfwidth);
    if let Some(t) = report.theoretical_exponent {
        let _ = writeln!(out, "theoretical_exponent,,,{t}");
    }
    let _ = writeln!(out, "floor_risk,,,{}", report.floor_risk);
    let _ = writeln!(out, "pool_limited,,,{}", report.pool_limited);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packing::EntropyMode;

    #[test]
    fn entropy_csv_shape() {
        let rows = vec![
            EntropyEstimate {
                epsilon: 0.5,
                scale_c: 14.0,
                log_count: 1.5,
                center_used: Some(3),
                mode: EntropyMode::LocalSup,
            },
            EntropyEstimate {
                epsilon: 0.5,
                scale_c: 1.0,
                log_count: 2.0,
                center_used: None,
                mode: EntropyMode::Global,
            },
        ];
        let csv = entropy_csv("abcd", &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_hash=abcd");
        assert_eq!(lines[1], "epsilon,c,mode,log_count,center_index");
        assert_eq!(lines[2], "0.5,14,local-sup,1.5,3");
        assert_eq!(lines[3], "0.5,1,global,2,");
    }

    #[test]
    fn atomic_write_round_trip() {
        let dir = std::env::temp_dir().join("sievelab-report-test");
        let path = dir.join("x.txt");
        write_atomic(&path, "hello\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "hello\n");
        assert!(!path.with_extension("tmp").exists());
        std::fs::remove_dir_all(&dir).ok();
    }
}
