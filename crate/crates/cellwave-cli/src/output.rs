//! CSV emission. Every file starts with a comment line carrying the
//! SHA-256 of the resolved configuration, then a header row naming the
//! columns, then one row per record with every value in scientific
//! notation at 17 significant digits, which round-trips doubles exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cellwave::experiments::{Report, Table};

pub fn write_table(dir: &Path, config_hash: &str, table: &Table) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(format!("{}.csv", table.name));
    let mut text = String::new();
    let _ = writeln!(text, "# config_sha256 = {config_hash}");
    let _ = writeln!(text, "{}", table.columns.join(","));
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(text, "{}", cells.join(","));
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Prints one verdict line per report on standard output; failing
/// reports additionally dump their per-check details on standard error.
/// Returns whether everything passed.
pub fn emit_reports(reports: &[Report]) -> bool {
    let mut all_pass = true;
    for report in reports {
        println!("{}", report.verdict_line());
        if !report.pass() {
            all_pass = false;
            for line in report.lines() {
                eprintln!("{line}");
            }
        }
    }
    all_pass
}
