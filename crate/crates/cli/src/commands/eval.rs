//! Aggregate the metrics of many run directories into one table.

use std::collections::BTreeMap;
use std::path::Path;

use neuedit::metrics::MetricReport;
use walkdir::WalkDir;

use crate::commands::edit::METRICS_FILE;
use crate::commands::require_exists;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{hash_file, read_json, sibling, write_text, FileEntry, Manifest};

/// Every `metrics.json` under `runs`, in path order, with `run` set to the
/// directory relative to `runs`.
pub fn collect(runs: &Path) -> Result<Vec<MetricReport>> {
    require_exists(runs)?;
    let mut out = Vec::new();
    for entry in WalkDir::new(runs).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::io(runs, e.into()))?;
        if !entry.file_type().is_file() || entry.file_name() != METRICS_FILE {
            continue;
        }
        let mut report: MetricReport = read_json(entry.path())?;
        let dir = entry.path().parent().expect("file has a parent");
        report.run = dir
            .strip_prefix(runs)
            .expect("walkdir yields children of its root")
            .to_string_lossy()
            .replace('\\', "/");
        out.push(report);
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// One row per method: count and column means over runs that have them.
pub fn summary_csv(reports: &[MetricReport]) -> String {
    let mut groups: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.method.as_str()).or_default().push(r);
    }
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from(
        "method,runs,alignment,masked_psnr,masked_ssim,masked_psnr_gt,masked_ssim_gt,frame_consistency\n",
    );
    for (method, rs) in groups {
        let row = [
            method.to_string(),
            rs.len().to_string(),
            cell(mean(rs.iter().map(|r| r.alignment))),
            cell(mean(rs.iter().filter_map(|r| r.masked_psnr))),
            cell(mean(rs.iter().filter_map(|r| r.masked_ssim))),
            cell(mean(rs.iter().filter_map(|r| r.masked_psnr_gt))),
            cell(mean(rs.iter().filter_map(|r| r.masked_ssim_gt))),
            cell(mean(rs.iter().map(|r| r.frame_consistency))),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn table_csv(reports: &[MetricReport]) -> String {
    let mut s = MetricReport::csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn run(runs: &Path, out: &Path, cfg: &RunConfig, args: Vec<String>) -> Result<Manifest> {
    let reports = collect(runs)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no {METRICS_FILE} under {}", runs.display())));
    }
    let mut manifest = Manifest::new("eval", args, cfg)?;
    manifest.add_input_tree(runs)?;
    write_text(out, &table_csv(&reports))?;
    let summary = sibling(out, "summary.csv");
    write_text(&summary, &summary_csv(&reports))?;
    manifest.set_outputs(vec![
        FileEntry { path: "table.csv".into(), sha256: hash_file(out)? },
        FileEntry { path: "summary.csv".into(), sha256: hash_file(&summary)? },
    ]);
    manifest.write(&sibling(out, "manifest.json"))?;
    Ok(manifest)
}
