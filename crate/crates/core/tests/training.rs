use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use suffixbench_core::diagnostics::{padding_loss_delta, probe_batch, probe_config, random_log};
use suffixbench_core::event_log::{EventLog, MinMaxScaler};
use suffixbench_core::models::{Architecture, Model};
use suffixbench_core::preprocess::{make_batches, Batch};
use suffixbench_core::training::{
    adversarial_loss, batch_loss, discriminator_loss, open_loop_flags, stream, train, train_aegan,
    AdversarialConfig, EarlyStopping, TrainConfig, TrainError, STREAM_INIT,
};
use suffixbench_diffcore::{Graph, Tensor};

fn setup(arch: Architecture, seed: u64) -> (EventLog, MinMaxScaler, Vec<Batch>, Model<f32>) {
    let log = random_log(12, 4, 2, 5, seed);
    let scaler = MinMaxScaler::fit_log(&log).unwrap();
    let batches = make_batches(&log, arch.layout(), &scaler, 4);
    let model = Model::new(
        probe_config(arch, log.vocabulary.len(), log.max_trace_len()),
        &mut stream(seed, STREAM_INIT),
    )
    .unwrap();
    (log, scaler, batches, model)
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        lr: 1e-2,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn params(m: &Model<f32>) -> Vec<f32> {
    m.store.iter().flat_map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn defaults_are_the_documented_ones() {
    let c = TrainConfig::default();
    assert_eq!((c.max_epochs, c.patience, c.batch_size), (400, 50, 64));
    assert_eq!((c.lr, c.w_act, c.w_time), (1e-4, 1.0, 1.0));
    let a = AdversarialConfig::default();
    assert_eq!((a.lambda, a.open_loop_prob, a.tau_start, a.tau_end), (0.1, 0.9, 1.0, 0.1));
}

#[test]
fn early_stopping_fires_after_patience_bad_epochs() {
    let mut s = EarlyStopping::new(50);
    assert!(s.update(1, 1.0).improved);
    let mut stop_at = None;
    for epoch in 2..=400 {
        if s.update(epoch, 1.0).stop {
            stop_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stop_at, Some(51));
    assert_eq!(s.best_epoch, 1);

    let mut s = EarlyStopping::new(3);
    s.update(1, 1.0);
    s.update(2, 2.0);
    s.update(3, 2.0);
    assert!(s.update(4, 0.5).improved);
    assert!(!s.update(5, 0.6).stop);
}

#[test]
fn training_stops_early_and_restores_best() {
    let (_, _, batches, mut model) = setup(Architecture::Gpt, 1);
    let config = TrainConfig {
        max_epochs: 30,
        patience: 2,
        lr: 0.5,
        batch_size: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &batches, &batches, &config, None).unwrap();
    assert!(report.epochs_run <= 30);
    let best = report
        .epochs
        .iter()
        .map(|e| e.eval_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_eval_loss, best);
    if report.stopped_early {
        assert_eq!(report.epochs_run, report.best_epoch + 2);
    }
    let now = suffixbench_core::training::evaluate_loss(&model, &batches, 1.0, 1.0).unwrap().0;
    assert!((now - best).abs() < 1e-9, "{now} vs {best}");
}

#[test]
fn training_reduces_loss_for_every_architecture() {
    for arch in Architecture::ALL {
        let (_, _, batches, mut model) = setup(arch, 2);
        let mut first = None;
        let mut cb = |r: &suffixbench_core::training::EpochRecord| {
            first.get_or_insert(r.eval_loss);
        };
        let report = if arch == Architecture::AeGan {
            train_aegan(&mut model, &batches, &batches, &quick(25, 2), &AdversarialConfig::default(), Some(&mut cb))
        } else {
            train(&mut model, &batches, &batches, &quick(25, 2), Some(&mut cb))
        }
        .unwrap();
        let first = first.unwrap();
        assert!(report.best_eval_loss < first, "{arch}: {} !< {first}", report.best_eval_loss);
        assert_eq!(report.open_loop_fraction.is_some(), arch == Architecture::AeGan);
    }
}

#[test]
fn zero_time_weight_gives_zero_time_head_gradients() {
    let (_, _, batches, mut model) = setup(Architecture::Lstm, 3);
    let mut g = Graph::new(true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let l = batch_loss(&model, &mut g, &batches[0], 1.0, 0.0, &mut rng).unwrap();
    g.backward(l.total).unwrap();
    model.store.zero_grads();
    g.accumulate_param_grads(&mut model.store);
    for name in ["readout.time_w", "readout.time_b"] {
        let id = model.store.find(name).unwrap();
        assert!(model.store.get(id).grad.data().iter().all(|&v| v == 0.0), "{name}");
    }
    let id = model.store.find("readout.act_w").unwrap();
    assert!(model.store.get(id).grad.data().iter().any(|&v| v != 0.0));
}

#[test]
fn training_is_deterministic_per_seed() {
    for arch in [Architecture::Gpt, Architecture::Bert, Architecture::AeGan] {
        let run = |seed: u64| {
            let (_, _, batches, mut model) = setup(arch, 4);
            let c = quick(3, seed);
            let r = if arch == Architecture::AeGan {
                train_aegan(&mut model, &batches, &batches, &c, &AdversarialConfig::default(), None)
            } else {
                train(&mut model, &batches, &batches, &c, None)
            }
            .unwrap();
            (params(&model), r.epochs.iter().map(|e| e.eval_loss).collect::<Vec<_>>())
        };
        let a = run(7);
        assert_eq!(a, run(7), "{arch}");
        assert_ne!(a.0, run(8).0, "{arch}");
    }
}

#[test]
fn zero_adversarial_weight_reproduces_plain_autoencoder() {
    let (_, _, batches, model) = setup(Architecture::Ae, 5);
    let mut plain = model.clone();
    let mut adv = model.clone();
    let c = quick(3, 5);
    train(&mut plain, &batches, &batches, &c, None).unwrap();
    let off = AdversarialConfig {
        lambda: 0.0,
        open_loop_prob: 0.0,
        ..AdversarialConfig::default()
    };
    let r = train_aegan(&mut adv, &batches, &batches, &c, &off, None).unwrap();
    assert_eq!(r.open_loop_fraction, Some(0.0));
    let p = train(&mut model.clone(), &batches, &batches, &c, None).unwrap();
    for (x, y) in p.epochs.iter().zip(&r.epochs) {
        assert!((x.eval_loss - y.eval_loss).abs() <= 1e-9);
    }
    for (a, b) in params(&plain).iter().zip(params(&adv)) {
        assert!((*a as f64 - b as f64).abs() <= 1e-9);
    }
}

#[test]
fn open_loop_share_matches_probability() {
    let mut rng = stream(0, 4);
    let flags = open_loop_flags(10_000, 0.9, &mut rng);
    let share = flags.iter().filter(|&&f| f).count() as f64 / 1e4;
    assert!((0.88..=0.92).contains(&share), "{share}");

    let (_, _, batches, mut model) = setup(Architecture::AeGan, 6);
    let r = train_aegan(&mut model, &batches, &batches, &quick(2, 6), &AdversarialConfig::default(), None).unwrap();
    let f = r.open_loop_fraction.unwrap();
    assert!((0.0..=1.0).contains(&f));
}

#[test]
fn uninformed_discriminator_loss_is_two_ln_two() {
    let mut g = Graph::<f64>::new(false);
    let zr = g.constant(Tensor::zeros(5, 1));
    let zf = g.constant(Tensor::zeros(5, 1));
    let d = discriminator_loss(&mut g, zr, zf).unwrap();
    assert!((g.value(d).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let a = adversarial_loss(&mut g, zf);
    assert!((g.value(a).item() - (1.0 + std::f64::consts::LN_2)).abs() < 1e-12);
}

#[test]
fn temperature_anneals_linearly_then_holds() {
    let a = AdversarialConfig::default();
    assert_eq!(a.tau(0, 100), 1.0);
    assert!((a.tau(25, 100) - 0.55).abs() < 1e-12);
    assert_eq!(a.tau(50, 100), 0.1);
    assert_eq!(a.tau(99, 100), 0.1);
}

#[test]
fn invalid_configs_and_mismatched_layouts_are_rejected() {
    let (_, scaler, _, mut model) = setup(Architecture::Gpt, 7);
    let mut c = quick(3, 0);
    c.w_act = 0.0;
    c.w_time = 0.0;
    assert!(matches!(c.validate(), Err(TrainError::Config(_))));
    let log = random_log(4, 3, 2, 4, 0);
    let wrong = make_batches(&log, Architecture::Lstm.layout(), &scaler, 4);
    assert!(matches!(
        train(&mut model, &wrong, &wrong, &quick(1, 0), None),
        Err(TrainError::Layout { .. })
    ));
    assert!(matches!(train(&mut model, &[], &[], &quick(1, 0), None), Err(TrainError::NoBatches)));
}

#[test]
fn pad_columns_do_not_change_the_loss() {
    for arch in Architecture::ALL {
        let log = random_log(8, 4, 2, 6, 9);
        let scaler = MinMaxScaler::fit_log(&log).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut config = probe_config(arch, log.vocabulary.len(), log.max_trace_len() + 3);
        config.dropout = 0.3;
        let m = Model::<f64>::new(config, &mut rng).unwrap();
        let b = probe_batch(arch, &log, &scaler, 8, 1);
        for extra in [1, 3] {
            let d = padding_loss_delta(&m, &b, extra).unwrap();
            assert!(d <= 1e-9, "{arch} +{extra}: {d}");
        }
    }
}

#[test]
fn strictly_worsening_eval_loss_stops_at_epoch_51() {
    let mut s = EarlyStopping::new(50);
    let stop = (1..=400).find(|&e| s.update(e, e as f64).stop);
    assert_eq!(stop, Some(51));
}

#[test]
fn total_loss_is_the_weighted_sum() {
    for arch in Architecture::ALL {
        let (_, _, batches, model) = setup(arch, 10);
        let b = if arch == Architecture::Bert {
            suffixbench_core::preprocess::mask_batch(&batches[0], &mut ChaCha8Rng::seed_from_u64(1))
        } else {
            batches[0].clone()
        };
        let m = model.cast::<f64>();
        let mut g = Graph::new(false);
        let l = batch_loss(&m, &mut g, &b, 0.7, 2.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (t, a, s) = (g.value(l.total).item(), g.value(l.act).item(), g.value(l.time).item());
        assert!((t - (0.7 * a + 2.5 * s)).abs() <= 1e-9, "{arch}");
    }
}

#[test]
fn single_path_process_is_learned_to_near_zero_loss() {
    use suffixbench_core::synthetic::{sample_log, DurationLaw, ProcessSpec, Variant};
    let spec = ProcessSpec {
        variants: vec![Variant {
            activities: ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect(),
            probability: 1.0,
        }],
        durations: Default::default(),
        default_duration: DurationLaw {
            mean_seconds: 3600,
            jitter_seconds: 0,
        },
        loop_spec: None,
    };
    let log = sample_log(&spec, 20, 1).unwrap();
    let scaler = MinMaxScaler::fit_log(&log).unwrap();
    for arch in [Architecture::Lstm, Architecture::Gpt, Architecture::WaveNet, Architecture::Transformer] {
        let batches = make_batches(&log, arch.layout(), &scaler, 64);
        let mut m = Model::new(probe_config(arch, log.vocabulary.len(), log.max_trace_len()), &mut stream(1, STREAM_INIT))
            .unwrap();
        let mut last = f64::INFINITY;
        let mut cb = |r: &suffixbench_core::training::EpochRecord| last = r.train_loss;
        let c = TrainConfig {
            lr: 1e-2,
            ..quick(400, 1)
        };
        train(&mut m, &batches, &batches, &c, Some(&mut cb)).unwrap();
        assert!(last < 0.01, "{arch}: {last}");
    }
}
