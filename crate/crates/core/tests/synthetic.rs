use suffixbench_core::config::KeyValues;
use suffixbench_core::event_log::{parse_csv_reader, ColumnMap, EOS};
use suffixbench_core::synthetic::{sample_log, sample_raw, write_csv, ProcessSpec, SynthError};

fn names(log: &suffixbench_core::event_log::EventLog) -> Vec<Vec<String>> {
    log.traces
        .iter()
        .map(|t| {
            t.events
                .iter()
                .filter(|e| e.activity != EOS)
                .map(|e| log.vocabulary.name(e.activity).unwrap().to_string())
                .collect()
        })
        .collect()
}

fn spec(text: &str) -> Result<ProcessSpec, SynthError> {
    ProcessSpec::from_key_values(&KeyValues::parse(text).unwrap())
}

#[test]
fn single_variant_gives_identical_traces() {
    let s = spec("variant.0 = A,B,C\nvariant.0.p = 1\nduration.default = 60,0\n").unwrap();
    let log = sample_log(&s, 10, 1).unwrap();
    assert_eq!(log.len(), 10);
    for t in names(&log) {
        assert_eq!(t, vec!["A", "B", "C"]);
    }
    for t in &log.traces {
        let d: Vec<f64> = t.events.iter().map(|e| e.duration).collect();
        assert_eq!(d, vec![0.0, 60.0, 60.0, 0.0]);
    }
}

#[test]
fn variant_frequencies_match_probabilities() {
    let s = spec("variant.0 = A,B\nvariant.0.p = 0.5\nvariant.1 = A,C\nvariant.1.p = 0.5\n").unwrap();
    let log = sample_log(&s, 10_000, 3).unwrap();
    let share = names(&log).iter().filter(|t| t[1] == "B").count() as f64 / 1e4;
    assert!((share - 0.5).abs() <= 0.02, "{share}");

    let m = ProcessSpec::memorization();
    let log = sample_log(&m, 10_000, 4).unwrap();
    for v in &m.variants {
        let share = names(&log).iter().filter(|t| **t == v.activities).count() as f64 / 1e4;
        assert!((share - v.probability).abs() <= 0.02, "{:?}: {share}", v.activities);
    }
}

#[test]
fn memorization_log_shape() {
    let log = sample_log(&ProcessSpec::memorization(), 200, 1).unwrap();
    assert_eq!(log.vocabulary.num_activities(), 8);
    for t in names(&log) {
        assert!((4..=8).contains(&t.len()));
    }
}

#[test]
fn loop_gives_right_skewed_lengths() {
    for p in [0.5, 0.6] {
        let log = sample_log(&ProcessSpec::skewed_loop(p), 5_000, 5).unwrap();
        let lens: Vec<f64> = log.traces.iter().map(|t| t.len() as f64).collect();
        let n = lens.len() as f64;
        let mean = lens.iter().sum::<f64>() / n;
        let m2 = lens.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = lens.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        assert!(skew > 0.0, "p={p}: skewness {skew}");
    }
    let s = spec("variant.0 = A,B\nvariant.0.p = 1\nloop.variant = 0\nloop.after = 1\nloop.body = X\nloop.p = 0.5\n").unwrap();
    let log = sample_log(&s, 4_000, 2).unwrap();
    let plain = names(&log).iter().filter(|t| t.len() == 2).count() as f64 / 4e3;
    assert!((plain - 0.5).abs() < 0.03, "{plain}");
}

#[test]
fn csv_round_trip_preserves_activities_and_durations() {
    let s = ProcessSpec::skewed_loop(0.6);
    let raw = sample_raw(&s, 60, 9).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &raw).unwrap();
    let parsed = parse_csv_reader(buf.as_slice(), &ColumnMap::default()).unwrap();
    let direct = sample_log(&s, 60, 9).unwrap();
    assert_eq!(names(&parsed), names(&direct));
    for (a, b) in parsed.traces.iter().zip(&direct.traces) {
        assert_eq!(a.case_id, b.case_id);
        let da: Vec<f64> = a.events.iter().map(|e| e.duration).collect();
        let db: Vec<f64> = b.events.iter().map(|e| e.duration).collect();
        assert_eq!(da, db);
    }
}

#[test]
fn same_seed_same_log() {
    let s = ProcessSpec::skewed_loop(0.6);
    assert_eq!(sample_log(&s, 50, 1).unwrap(), sample_log(&s, 50, 1).unwrap());
    assert_ne!(names(&sample_log(&s, 50, 1).unwrap()), names(&sample_log(&s, 50, 2).unwrap()));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(spec("variant.0 = A\nvariant.0.p = 0.7\n").is_err());
    assert!(spec("variant.0 = A\nvariant.0.p = 1\nloop.variant = 3\nloop.after = 0\nloop.body = X\nloop.p = 0.5\n").is_err());
    assert!(spec("variant.0 = A\nvariant.0.p = 1\nloop.variant = 0\nloop.after = 0\nloop.body = X\nloop.p = 1.0\n").is_err());
    assert!(spec("").is_err());
}
