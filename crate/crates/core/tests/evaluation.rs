use std::collections::HashMap;

use proptest::prelude::*;
use quick_xml::events::Event as XmlEvent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffixbench_core::diagnostics::{probe_config, random_log};
use suffixbench_core::evaluation::{
    aggregate, dl_distance, dls, evaluate, parse_report_csv, read_predictions, report_csv, report_svg,
    svg_bar_heights, write_predictions, Metric, PredictionRecord, CSV_HEADER,
};
use suffixbench_core::event_log::{MinMaxScaler, EOS};
use suffixbench_core::inference::GenerationConfig;
use suffixbench_core::models::{Architecture, Model};
use suffixbench_core::preprocess::samples_per_k;

/// Minimum over all edit scripts where each source symbol is kept,
/// substituted, deleted or swapped with its right neighbour at most once.
fn oracle(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let mut best = 1 + oracle(&a[1..], b, memo);
    best = best.min(1 + oracle(a, &b[1..], memo));
    best = best.min(usize::from(a[0] != b[0]) + oracle(&a[1..], &b[1..], memo));
    if a.len() >= 2 && b.len() >= 2 && a[0] == b[1] && a[1] == b[0] {
        best = best.min(1 + oracle(&a[2..], &b[2..], memo));
    }
    memo.insert((a.len(), b.len()), best);
    best
}

fn brute(a: &[u8], b: &[u8]) -> usize {
    oracle(a, b, &mut HashMap::new())
}

#[test]
fn distance_examples() {
    assert_eq!(dl_distance(b"ABC", b"ABC"), 0);
    assert_eq!(dl_distance(b"ABC", b"ACB"), 1);
    assert_eq!(dl_distance(b"", b"AB"), 2);
    assert_eq!(dl_distance(b"CA", b"ABC"), 3);
    assert_eq!(dls(b"ABC", b"ABC"), 1.0);
    assert_eq!(dls(b"ABC", b"DE"), 0.0);
    assert!((dls(b"ABC", b"ACB") - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    assert_eq!(dls::<u8>(&[], &[]), 1.0);
}

#[test]
fn distance_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let a: Vec<u8> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        assert_eq!(dl_distance(&a, &b), brute(&a, &b), "{a:?} {b:?}");
    }
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..=8)
}

proptest! {
    #[test]
    fn dls_is_symmetric_and_bounded(a in seq(), b in seq()) {
        let x = dls(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, dls(&b, &a));
        prop_assert_eq!(dls(&a, &a), 1.0);
    }

    #[test]
    fn distance_obeys_triangle_inequality(a in seq(), b in seq(), c in seq()) {
        prop_assert!(dl_distance(&a, &c) <= dl_distance(&a, &b) + dl_distance(&b, &c));
    }
}

fn record(k: usize, d: f64, mae: f64) -> PredictionRecord {
    PredictionRecord {
        case_id: format!("c{k}"),
        k,
        predicted: vec!["[EOS]".into()],
        predicted_remaining_seconds: 0.0,
        truth: vec!["A".into(), "[EOS]".into()],
        truth_remaining_seconds: mae * 86_400.0,
        dls: d,
        abs_error_days: mae,
    }
}

#[test]
fn one_day_error_counts_as_one() {
    let r = aggregate(&[record(2, 0.5, 1.0)], 2, "m", "d");
    assert_eq!(r.overall_mae_days, 1.0);
    assert_eq!(r.rows[0].mae_mean_days, Some(1.0));
}

#[test]
fn csv_has_one_line_per_row_plus_overall_and_is_stable() {
    let recs = vec![record(2, 1.0, 0.1), record(3, 0.5, 0.2), record(4, 0.0, 0.4), record(2, 0.5, 0.3)];
    let r = aggregate(&recs, 4, "gpt", "toy");
    assert_eq!(r.rows.len(), 3);
    let csv = report_csv(&r);
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert!(csv.lines().last().unwrap().starts_with("gpt,toy,overall,4,"));
    assert_eq!(csv, report_csv(&aggregate(&recs, 4, "gpt", "toy")));
    assert_eq!(parse_report_csv(&csv).unwrap(), r);

    let sparse = aggregate(&[record(4, 1.0, 0.0)], 5, "m", "d");
    let csv = report_csv(&sparse);
    assert!(csv.contains("m,d,2,0,,\n"), "{csv}");
    assert_eq!(parse_report_csv(&csv).unwrap(), sparse);
}

fn xml_heights(svg: &str) -> Vec<usize> {
    let mut reader = quick_xml::Reader::from_str(svg);
    let mut out = Vec::new();
    loop {
        match reader.read_event().unwrap() {
            XmlEvent::Empty(e) | XmlEvent::Start(e) if e.name().as_ref() == "rect" => {
                let attr = |key: &str| {
                    e.attributes()
                        .flatten()
                        .find(|a| a.key.as_ref() == key)
                        .map(|a| a.value.to_string())
                };
                if attr("class").as_deref() == Some("freq") {
                    out.push(attr("height").unwrap().parse().unwrap());
                }
            }
            XmlEvent::Eof => break,
            _ => {}
        }
    }
    out
}

fn trained_free_report() -> (Vec<PredictionRecord>, suffixbench_core::event_log::EventLog) {
    let log = random_log(15, 4, 2, 7, 3);
    let scaler = MinMaxScaler::fit_log(&log).unwrap();
    let m = Model::<f32>::new(
        probe_config(Architecture::Gpt, log.vocabulary.len(), log.max_trace_len()),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let c = GenerationConfig::new(log.max_trace_len(), 0);
    (evaluate(&m, &log, &scaler, &c, 1).unwrap(), log)
}

#[test]
fn report_obeys_count_law_and_weighted_means() {
    let (recs, log) = trained_free_report();
    let r = aggregate(&recs, log.max_trace_len() - 1, "gpt", "rand");
    for row in &r.rows {
        let expect = log.traces.iter().filter(|t| t.len() > row.k).count();
        assert_eq!(row.n_samples, expect, "k={}", row.k);
    }
    for w in r.rows.windows(2) {
        assert!(w[0].n_samples >= w[1].n_samples);
    }
    assert_eq!(
        r.rows.iter().map(|x| (x.k, x.n_samples)).collect::<Vec<_>>(),
        samples_per_k(&log)
    );
    let (d, m) = r.weighted_means();
    assert!((d - r.overall_dls).abs() <= 1e-9);
    assert!((m - r.overall_mae_days).abs() <= 1e-9);

    for metric in [Metric::Dls, Metric::Mae] {
        let svg = report_svg(&r, metric);
        let counts: Vec<usize> = r.rows.iter().map(|x| x.n_samples).collect();
        assert_eq!(xml_heights(&svg), counts);
        assert_eq!(svg_bar_heights(&svg), counts);
    }
}

#[test]
fn records_match_an_independent_recount() {
    let (recs, log) = trained_free_report();
    for r in &recs {
        let t = log.traces.iter().find(|t| t.case_id == r.case_id).unwrap();
        let truth: Vec<String> = t.events[r.k..]
            .iter()
            .map(|e| log.vocabulary.name(e.activity).unwrap().to_string())
            .collect();
        assert_eq!(r.truth, truth);
        assert_eq!(r.truth.last().unwrap(), "[EOS]");
        let secs: f64 = t.events[r.k..].iter().filter(|e| e.activity != EOS).map(|e| e.duration).sum();
        assert!((r.truth_remaining_seconds - secs).abs() < 1e-9);
        assert!((r.dls - dls(&r.predicted, &r.truth)).abs() < 1e-12);
        let err = (r.predicted_remaining_seconds - r.truth_remaining_seconds).abs() / 86_400.0;
        assert!((r.abs_error_days - err).abs() < 1e-12);
    }
    let mut buf = Vec::new();
    write_predictions(&mut buf, &recs).unwrap();
    assert_eq!(read_predictions(std::str::from_utf8(&buf).unwrap()).unwrap(), recs);
}

#[test]
fn worker_count_does_not_change_results() {
    let log = random_log(10, 4, 2, 6, 8);
    let scaler = MinMaxScaler::fit_log(&log).unwrap();
    for arch in [Architecture::Bert, Architecture::Lstm] {
        let m = Model::<f32>::new(
            probe_config(arch, log.vocabulary.len(), log.max_trace_len()),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let c = GenerationConfig::new(log.max_trace_len(), 5);
        let one = evaluate(&m, &log, &scaler, &c, 1).unwrap();
        let four = evaluate(&m, &log, &scaler, &c, 4).unwrap();
        assert_eq!(one, four);
    }
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let log = random_log(3, 3, 1, 1, 0);
    let scaler = MinMaxScaler::fit_log(&log).unwrap();
    let m = Model::<f32>::new(probe_config(Architecture::Gpt, log.vocabulary.len(), 4), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert!(evaluate(&m, &log, &scaler, &GenerationConfig::new(4, 0), 1).is_err());
}
