//! Damerau-Levenshtein similarity, remaining-time error and per-prefix-length
//! aggregation.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use suffixbench_diffcore::Real;

use crate::event_log::{EventLog, MinMaxScaler, Vocabulary, EOS};
use crate::inference::{generate_suffix, remaining_time, GenerationConfig, InferenceError};
use crate::models::Model;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    Empty,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}

/// Optimal-string-alignment distance: insertions, deletions, substitutions
/// and adjacent transpositions, no substring edited twice.
pub fn dl_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[(i - 1) * w + j] + 1)
                .min(d[i * w + j - 1] + 1)
                .min(d[(i - 1) * w + j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[(i - 2) * w + j - 2] + 1);
            }
            d[i * w + j] = v;
        }
    }
    d[n * w + m]
}

/// `1 - DL(a, b) / max(|a|, |b|)`; two empty sequences score 1.
pub fn dls<S: PartialEq>(a: &[S], b: &[S]) -> f64 {
    let m = a.len().max(b.len());
    if m == 0 {
        return 1.0;
    }
    1.0 - dl_distance(a, b) as f64 / m as f64
}

/// One evaluated `(trace, k)` instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    pub k: usize,
    pub predicted: Vec<String>,
    pub predicted_remaining_seconds: f64,
    pub truth: Vec<String>,
    pub truth_remaining_seconds: f64,
    pub dls: f64,
    pub abs_error_days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub k: usize,
    pub n_samples: usize,
    pub dls_mean: Option<f64>,
    pub mae_mean_days: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixReport {
    pub model: String,
    pub dataset: String,
    pub rows: Vec<PrefixRow>,
    pub overall_dls: f64,
    pub overall_mae_days: f64,
    pub n_samples: usize,
}

impl PrefixReport {
    /// `Σ n_k·x_k / Σ n_k` over rows, for checking the overall columns.
    pub fn weighted_means(&self) -> (f64, f64) {
        let (mut d, mut m, mut n) = (0.0, 0.0, 0.0);
        for r in &self.rows {
            if let (Some(x), Some(y)) = (r.dls_mean, r.mae_mean_days) {
                d += r.n_samples as f64 * x;
                m += r.n_samples as f64 * y;
                n += r.n_samples as f64;
            }
        }
        if n == 0.0 {
            (0.0, 0.0)
        } else {
            (d / n, m / n)
        }
    }
}

/// Groups records by `k` into rows `2..=k_max`. Rows without samples keep
/// empty metric cells.
pub fn aggregate(records: &[PredictionRecord], k_max: usize, model: &str, dataset: &str) -> PrefixReport {
    let top = k_max.max(records.iter().map(|r| r.k).max().unwrap_or(0));
    let mut rows = Vec::new();
    for k in 2..=top {
        let (mut d, mut m, mut n) = (0.0, 0.0, 0usize);
        for r in records.iter().filter(|r| r.k == k) {
            d += r.dls;
            m += r.abs_error_days;
            n += 1;
        }
        rows.push(PrefixRow {
            k,
            n_samples: n,
            dls_mean: (n > 0).then(|| d / n as f64),
            mae_mean_days: (n > 0).then(|| m / n as f64),
        });
    }
    let n = records.len();
    let mean = |f: fn(&PredictionRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    PrefixReport {
        model: model.to_string(),
        dataset: dataset.to_string(),
        rows,
        overall_dls: mean(|r| r.dls),
        overall_mae_days: mean(|r| r.abs_error_days),
        n_samples: n,
    }
}

fn names(vocab: &Vocabulary, acts: &[usize]) -> Vec<String> {
    acts.iter()
        .map(|&a| vocab.name(a).unwrap_or("?").to_string())
        .collect()
}

/// Evaluates one `(trace, k)` instance.
pub fn evaluate_instance<T: Real>(
    model: &Model<T>,
    log: &EventLog,
    trace_index: usize,
    k: usize,
    scaler: &MinMaxScaler,
    config: &GenerationConfig,
) -> Result<PredictionRecord, EvalError> {
    let trace = &log.traces[trace_index];
    let prefix = &trace.events[..k];
    let truth = &trace.events[k..];
    let key = ((trace_index as u64) << 16) | k as u64;
    let pred = generate_suffix(model, prefix, scaler, config, key)?;
    let predicted_remaining = remaining_time(&pred, scaler, config.include_eos_time);
    let truth_remaining: f64 = truth
        .iter()
        .filter(|e| config.include_eos_time || e.activity != EOS)
        .fold(0.0, |acc, e| acc + e.duration);
    let truth_acts: Vec<usize> = truth.iter().map(|e| e.activity).collect();
    Ok(PredictionRecord {
        case_id: trace.case_id.clone(),
        k,
        predicted: names(&log.vocabulary, &pred.activities),
        predicted_remaining_seconds: predicted_remaining,
        truth: names(&log.vocabulary, &truth_acts),
        truth_remaining_seconds: truth_remaining,
        dls: dls(&pred.activities, &truth_acts),
        abs_error_days: (predicted_remaining - truth_remaining).abs() / SECONDS_PER_DAY,
    })
}

/// Generates a suffix for every eval trace and every `k` in `2..|σ|`, using
/// up to `jobs` worker threads. Output order is independent of `jobs`.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    log: &EventLog,
    scaler: &MinMaxScaler,
    config: &GenerationConfig,
    jobs: usize,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let tasks: Vec<(usize, usize)> = log
        .traces
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (2..t.len()).map(move |k| (i, k)))
        .collect();
    if tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    let jobs = jobs.max(1).min(tasks.len());
    if jobs == 1 {
        return tasks
            .iter()
            .map(|&(i, k)| evaluate_instance(model, log, i, k, scaler, config))
            .collect();
    }
    let chunk = tasks.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<PredictionRecord>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = tasks
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    c.iter()
                        .map(|&(i, k)| evaluate_instance(model, log, i, k, scaler, config))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(tasks.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const CSV_HEADER: &str = "model,dataset,k,n_samples,dls_mean,mae_mean_days";

/// Report as CSV with one row per `k` and a final `overall` row.
pub fn report_csv(report: &PrefixReport) -> String {
    let mut s = String::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory");
    for r in &report.rows {
        w.write_record([
            report.model.as_str(),
            report.dataset.as_str(),
            &r.k.to_string(),
            &r.n_samples.to_string(),
            &cell(r.dls_mean),
            &cell(r.mae_mean_days),
        ])
        .expect("in-memory");
    }
    w.write_record([
        report.model.as_str(),
        report.dataset.as_str(),
        "overall",
        &report.n_samples.to_string(),
        &report.overall_dls.to_string(),
        &report.overall_mae_days.to_string(),
    ])
    .expect("in-memory");
    s.push_str(&String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8"));
    s
}

/// Parses a CSV written by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<PrefixReport, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| EvalError::Format(m);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(bad(format!("unexpected header {}", header.join(","))));
    }
    let mut rows = Vec::new();
    let mut overall = None;
    let (mut model, mut dataset) = (String::new(), String::new());
    let num = |s: &str| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| EvalError::Format(format!("bad number {s}")))
        }
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        model = rec[0].to_string();
        dataset = rec[1].to_string();
        let n: usize = rec[3].parse().map_err(|_| bad(format!("bad count {}", &rec[3])))?;
        if &rec[2] == "overall" {
            overall = Some((n, num(&rec[4])?.unwrap_or(0.0), num(&rec[5])?.unwrap_or(0.0)));
        } else {
            rows.push(PrefixRow {
                k: rec[2].parse().map_err(|_| bad(format!("bad k {}", &rec[2])))?,
                n_samples: n,
                dls_mean: num(&rec[4])?,
                mae_mean_days: num(&rec[5])?,
            });
        }
    }
    let (n_samples, overall_dls, overall_mae_days) = overall.ok_or_else(|| bad("missing overall row".into()))?;
    Ok(PrefixReport {
        model,
        dataset,
        rows,
        overall_dls,
        overall_mae_days,
        n_samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Dls,
    Mae,
}

/// Self-contained SVG: frequency bars per `k` (the `height` of each
/// `rect.freq` is the row's sample count, drawn through a scale transform)
/// overlaid with the metric line.
pub fn report_svg(report: &PrefixReport, metric: Metric) -> String {
    let (w, h, left, bottom) = (640.0, 360.0, 60.0, 40.0);
    let plot_w = w - left - 60.0;
    let plot_h = h - bottom - 30.0;
    let n = report.rows.len().max(1) as f64;
    let bar_w = plot_w / n;
    let max_n = report.rows.iter().map(|r| r.n_samples).max().unwrap_or(0).max(1) as f64;
    let values: Vec<Option<f64>> = report
        .rows
        .iter()
        .map(|r| match metric {
            Metric::Dls => r.dls_mean,
            Metric::Mae => r.mae_mean_days,
        })
        .collect();
    let max_v = match metric {
        Metric::Dls => 1.0,
        Metric::Mae => values.iter().flatten().cloned().fold(0.0, f64::max).max(1e-9),
    };
    let title = match metric {
        Metric::Dls => "DLS",
        Metric::Mae => "MAE (days)",
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<title>{} {} {title} per prefix length</title>"#,
        xml_escape(&report.model),
        xml_escape(&report.dataset)
    );
    let base = h - bottom;
    let _ = writeln!(
        s,
        r##"<g class="bars" transform="translate({left},{base}) scale({bar_w},{})" fill="#c8d6e5">"##,
        -plot_h / max_n
    );
    for (i, r) in report.rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<rect class="freq" data-k="{}" x="{}" y="0" width="0.8" height="{}"/>"#,
            r.k,
            i as f64 + 0.1,
            r.n_samples
        );
    }
    s.push_str("</g>\n");
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            let x = left + (i as f64 + 0.5) * bar_w;
            let y = base - v / max_v * plot_h;
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
    }
    let _ = writeln!(
        s,
        r##"<polyline class="metric" fill="none" stroke="#c0392b" stroke-width="2" points="{}"/>"##,
        pts.trim_end()
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
        left + plot_w
    );
    for (i, r) in report.rows.iter().enumerate() {
        let x = left + (i as f64 + 0.5) * bar_w;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            base + 14.0,
            r.k
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">prefix length k</text>"#,
        left + plot_w / 2.0,
        h - 8.0
    );
    let _ = writeln!(s, r#"<text x="10" y="18" font-size="12">{title} (line), samples (bars)</text>"#);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar heights of a chart written by [`report_svg`], in row order.
pub fn svg_bar_heights(svg: &str) -> Vec<usize> {
    svg.lines()
        .filter(|l| l.contains(r#"class="freq""#))
        .filter_map(|l| {
            let i = l.find("height=\"")? + 8;
            let j = l[i..].find('"')? + i;
            l[i..j].parse().ok()
        })
        .collect()
}

/// Writes predictions as one JSON object per line.
pub fn write_predictions<W: Write>(w: &mut W, records: &[PredictionRecord]) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| EvalError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, EvalError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EvalError::Format(e.to_string())))
        .collect()
}
