use std::collections::BTreeMap;

use suffixbench_core::evaluation::{parse_report_csv, PrefixReport};

use crate::args::ReportArgs;
use crate::{CliError, CliResult, REPORT_FILE};

pub const COMBINED_HEADER: &str = "model,dataset,k,n_samples,dls_mean,mae_mean_days,dls_tag,mae_tag";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn tag(value: f64, best: f64, worst: f64) -> String {
    match (value == best, value == worst) {
        (true, true) => "best;worst".into(),
        (true, false) => "best".into(),
        (false, true) => "worst".into(),
        _ => String::new(),
    }
}

/// Concatenates every run's report rows; the `overall` row of each run is
/// tagged best/worst within its dataset (highest/lowest DLS, lowest/highest MAE).
pub fn combine(reports: &[PrefixReport]) -> String {
    let mut by_dataset: BTreeMap<&str, Vec<&PrefixReport>> = BTreeMap::new();
    for r in reports {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let mut out = String::from(COMBINED_HEADER);
    out.push('\n');
    for r in reports {
        let group = &by_dataset[r.dataset.as_str()];
        let dls: Vec<f64> = group.iter().map(|g| g.overall_dls).collect();
        let mae: Vec<f64> = group.iter().map(|g| g.overall_mae_days).collect();
        let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        for row in &r.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},,\n",
                r.model,
                r.dataset,
                row.k,
                row.n_samples,
                cell(row.dls_mean),
                cell(row.mae_mean_days)
            ));
        }
        out.push_str(&format!(
            "{},{},overall,{},{},{},{},{}\n",
            r.model,
            r.dataset,
            r.n_samples,
            r.overall_dls,
            r.overall_mae_days,
            tag(r.overall_dls, max(&dls), min(&dls)),
            tag(r.overall_mae_days, min(&mae), max(&mae)),
        ));
    }
    out
}

/// Reads `<runs>/*/report.csv` in name order and writes the combined table.
pub fn cmd_report(a: &ReportArgs) -> CliResult<Vec<PrefixReport>> {
    let entries = std::fs::read_dir(&a.runs)
        .map_err(|e| CliError::NoData(format!("cannot read {}: {e}", a.runs.display())))?;
    let mut dirs: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(REPORT_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::NoData(format!("no runs with {REPORT_FILE} under {}", a.runs.display())));
    }
    let mut reports = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let text = std::fs::read_to_string(d.join(REPORT_FILE))?;
        reports.push(parse_report_csv(&text)?);
    }
    let out = a.out.clone().unwrap_or_else(|| a.runs.join("combined.csv"));
    std::fs::write(&out, combine(&reports))?;
    println!("{:<12} {:<16} {:>8} {:>10} {:>8}", "model", "dataset", "DLS", "MAE(days)", "samples");
    for r in &reports {
        println!(
            "{:<12} {:<16} {:>8.4} {:>10.4} {:>8}",
            r.model, r.dataset, r.overall_dls, r.overall_mae_days, r.n_samples
        );
    }
    println!("{} runs -> {}", reports.len(), out.display());
    Ok(reports)
}
