use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffixbench_core::diagnostics::probe_config;
use suffixbench_core::event_log::{
    Event, EventLog, MinMaxScaler, Trace, Vocabulary, EOS, MASK, NUM_SPECIAL, PAD, SOS,
};
use suffixbench_core::inference::{
    bert_generate_suffix, decode_rng, generate_suffix, greedy_activity, remaining_time, DecodeMode,
    GenerationConfig, InferenceError, SuffixPrediction,
};
use suffixbench_core::models::{Architecture, Model};
use suffixbench_core::preprocess::make_batches;
use suffixbench_core::training::{train, TrainConfig};

fn model(arch: Architecture, vocab: usize, seed: u64) -> Model<f64> {
    Model::new(probe_config(arch, vocab, 10), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Zeroes the activity readout and puts a large bias on `favoured`.
fn rig(m: &mut Model<f64>, favoured: usize) {
    let w = m.store.find("readout.act_w").unwrap();
    m.store.get_mut(w).value.fill(0.0);
    let b = m.store.find("readout.act_b").unwrap();
    let bias = &mut m.store.get_mut(b).value;
    bias.fill(0.0);
    bias.set(0, favoured, 50.0);
}

fn prefix(acts: &[usize]) -> Vec<Event> {
    acts.iter().map(|&a| Event::new(a, 60.0)).collect()
}

fn scaler() -> MinMaxScaler {
    MinMaxScaler::new(0.0, 3600.0).unwrap()
}

#[test]
fn rigged_eos_model_stops_immediately() {
    for arch in Architecture::ALL {
        let mut m = model(arch, 9, 1);
        rig(&mut m, EOS);
        let c = GenerationConfig::new(6, 0);
        let p = generate_suffix(&m, &prefix(&[4, 5]), &scaler(), &c, 0).unwrap();
        assert_eq!(p.activities, vec![EOS], "{arch}");
        assert_eq!(remaining_time(&p, &scaler(), false), 0.0);
    }
}

#[test]
fn rigged_never_eos_model_is_truncated_at_max_len() {
    for arch in Architecture::ALL {
        let mut m = model(arch, 9, 2);
        rig(&mut m, 6);
        let c = GenerationConfig::new(7, 0);
        let p = generate_suffix(&m, &prefix(&[4, 5, 4]), &scaler(), &c, 0).unwrap();
        let expect = if arch == Architecture::Bert { 7 - 3 } else { 7 };
        assert_eq!(p.activities.len(), expect, "{arch}");
        assert!(p.activities.iter().all(|&a| a == 6));
    }
}

#[test]
fn special_symbols_are_never_emitted() {
    let mut logits = vec![0.0f64; 8];
    logits[PAD] = 9.0;
    logits[SOS] = 9.0;
    logits[MASK] = 9.0;
    logits[5] = 1.0;
    assert_eq!(greedy_activity(&logits), 5);
    logits[EOS] = 2.0;
    assert_eq!(greedy_activity(&logits), EOS);
    for arch in Architecture::ALL {
        for favoured in [PAD, SOS, MASK] {
            let mut m = model(arch, 9, 3);
            rig(&mut m, favoured);
            let p = generate_suffix(&m, &prefix(&[4, 5]), &scaler(), &GenerationConfig::new(5, 0), 0).unwrap();
            assert!(p.activities.iter().all(|&a| a != PAD && a != SOS && a != MASK), "{arch}");
        }
    }
}

#[test]
fn incremental_and_recompute_decoding_agree() {
    for arch in [Architecture::Lstm, Architecture::Ae, Architecture::AeGan] {
        let m = model(arch, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(2..6);
            let acts: Vec<usize> = (0..n).map(|_| rng.random_range(NUM_SPECIAL..10)).collect();
            let p: Vec<Event> = acts.iter().map(|&a| Event::new(a, rng.random_range(0.0..3600.0))).collect();
            let mut c = GenerationConfig::new(10, 0);
            let a = generate_suffix(&m, &p, &scaler(), &c, 0).unwrap();
            c.mode = DecodeMode::Recompute;
            let b = generate_suffix(&m, &p, &scaler(), &c, 0).unwrap();
            assert_eq!(a.activities, b.activities, "{arch}");
            for (x, y) in a.durations.iter().zip(&b.durations) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn extra_padding_changes_no_suffix() {
    for arch in Architecture::ALL {
        let m = model(arch, 10, 5);
        let mut c = GenerationConfig::new(9, 3);
        c.mode = DecodeMode::Recompute;
        for acts in [[4, 5, 6].as_slice(), &[7, 4], &[9, 9, 8, 4]] {
            let a = generate_suffix(&m, &prefix(acts), &scaler(), &c, 11).unwrap();
            let mut padded = c.clone();
            padded.extra_padding = 4;
            let b = generate_suffix(&m, &prefix(acts), &scaler(), &padded, 11).unwrap();
            assert_eq!(a.activities, b.activities, "{arch}");
        }
    }
}

#[test]
fn decoding_is_deterministic() {
    for arch in Architecture::ALL {
        let m = model(arch, 10, 6);
        let c = GenerationConfig::new(9, 3);
        let a = generate_suffix(&m, &prefix(&[4, 5, 6]), &scaler(), &c, 17).unwrap();
        let b = generate_suffix(&m, &prefix(&[4, 5, 6]), &scaler(), &c, 17).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn masked_decoding_uses_one_pass_per_slot() {
    let m = model(Architecture::Bert, 10, 7);
    for (max_len, k, slots) in [(8, 3, 5), (4, 3, 1), (3, 3, 1), (10, 2, 8)] {
        let p = prefix(&vec![4; k]);
        let c = GenerationConfig::new(max_len, 0);
        let out = bert_generate_suffix(&m, &p, &scaler(), &c, &mut decode_rng(0, 1)).unwrap();
        assert_eq!(out.forward_passes, slots);
        assert!(out.activities.len() <= slots);
        let again = bert_generate_suffix(&m, &p, &scaler(), &c, &mut decode_rng(0, 1)).unwrap();
        assert_eq!(out, again);
    }
}

#[test]
fn invalid_prefixes_are_rejected() {
    let m = model(Architecture::Gpt, 10, 8);
    let c = GenerationConfig::new(8, 0);
    for bad in [vec![4], vec![4, MASK], vec![4, EOS], vec![4, 10]] {
        assert!(matches!(
            generate_suffix(&m, &prefix(&bad), &scaler(), &c, 0),
            Err(InferenceError::Prefix(_))
        ));
    }
    assert!(generate_suffix(&m, &prefix(&[4, 5]), &scaler(), &GenerationConfig::new(1, 0), 0).is_err());
}

#[test]
fn remaining_time_matches_scalar_recount() {
    let s = MinMaxScaler::new(0.0, 120.0).unwrap();
    let p = SuffixPrediction {
        activities: vec![4, 5, EOS],
        durations: vec![0.5, 0.25, 0.75],
        forward_passes: 3,
    };
    assert!((remaining_time(&p, &s, false) - 90.0).abs() < 1e-9);
    assert!((remaining_time(&p, &s, true) - 180.0).abs() < 1e-9);

    let s = MinMaxScaler::new(30.0, 5000.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.random_range(1..8);
        let mut p = SuffixPrediction {
            activities: (0..n).map(|_| rng.random_range(NUM_SPECIAL..9)).collect(),
            durations: (0..n).map(|_| rng.random_range(0.0..1.2)).collect(),
            forward_passes: n,
        };
        p.activities.push(EOS);
        p.durations.push(rng.random_range(0.0..1.0));
        let mut expect = 0.0;
        for i in 0..n {
            let secs = 30.0 + p.durations[i] * (5000.0 - 30.0);
            expect += if secs > 0.0 { secs } else { 0.0 };
        }
        assert!((remaining_time(&p, &s, false) - expect).abs() < 1e-6);
    }
}

#[test]
fn overfit_model_completes_the_copy_task() {
    let vocabulary = Vocabulary::from_names(["A", "B", "C"]);
    let (a, b, c) = (NUM_SPECIAL, NUM_SPECIAL + 1, NUM_SPECIAL + 2);
    let trace = Trace {
        case_id: "x".into(),
        events: vec![Event::new(a, 0.0), Event::new(b, 60.0), Event::new(c, 120.0), Event::eos()],
    };
    let log = EventLog {
        traces: vec![trace; 4],
        vocabulary,
    };
    let s = MinMaxScaler::fit_log(&log).unwrap();
    for arch in [Architecture::Lstm, Architecture::Gpt, Architecture::WaveNet, Architecture::Ae] {
        let batches = make_batches(&log, arch.layout(), &s, 8);
        let mut m = Model::<f32>::new(probe_config(arch, log.vocabulary.len(), 4), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let tc = TrainConfig {
            max_epochs: 300,
            patience: 300,
            lr: 1e-2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        train(&mut m, &batches, &batches, &tc, None).unwrap();
        let p = generate_suffix(&m, &log.traces[0].events[..2], &s, &GenerationConfig::new(4, 0), 0).unwrap();
        assert_eq!(p.activities, vec![c, EOS], "{arch}");
        assert!((remaining_time(&p, &s, false) - 120.0).abs() < 30.0, "{arch}");
    }
}
