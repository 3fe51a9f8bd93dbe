use std::io::Write;
use std::path::{Path, PathBuf};

use suffixbench_core::event_log::{read_manifest, split_train_eval, write_manifest, EventLog, MinMaxScaler, SplitSpec};
use suffixbench_core::models::{write_checkpoint, Architecture, CheckpointHeader, Model};
use suffixbench_core::preprocess::{make_batches, make_masked, Batch, TargetLayout};
use suffixbench_core::training::{stream, train, train_aegan, EpochRecord, TrainReport, STREAM_INIT};

use crate::args::TrainArgs;
use crate::run_config::{parse_architectures, read_config_file, RunConfig};
use crate::{
    load_log, CliError, CliResult, LoadedLog, CHECKPOINT_FILE, EVAL_MANIFEST, RUN_CONFIG_FILE, TRAIN_LOG_FILE,
    TRAIN_MANIFEST, TRAIN_REPORT_FILE,
};

pub fn run_dir_name(dataset: &str, arch: Architecture, seed: u64) -> String {
    format!("{dataset}-{arch}-{seed}")
}

fn batches(log: &EventLog, layout: TargetLayout, scaler: &MinMaxScaler, batch_size: usize, canvas: usize) -> Vec<Batch> {
    if layout == TargetLayout::MaskedReconstruction {
        make_masked(log, scaler, batch_size, canvas)
    } else {
        make_batches(log, layout, scaler, batch_size)
    }
}

fn prepare_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(CliError::Usage(format!(
                "run directory {} exists; pass --force to overwrite",
                dir.display()
            )));
        }
        if occupied {
            std::fs::remove_dir_all(dir)?;
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn train_one(rc: &RunConfig, loaded: &LoadedLog, split: Option<&Path>, out: &Path, force: bool) -> CliResult<PathBuf> {
    let dir = out.join(run_dir_name(&rc.dataset, rc.architecture, rc.seed));
    prepare_dir(&dir, force)?;
    let (tr, ev) = match split {
        Some(s) => (
            read_manifest(&s.join(TRAIN_MANIFEST), &loaded.log)?,
            read_manifest(&s.join(EVAL_MANIFEST), &loaded.log)?,
        ),
        None => split_train_eval(
            &loaded.log,
            SplitSpec {
                train_fraction: rc.train_fraction,
                seed: rc.seed,
            },
        )?,
    };
    if tr.is_empty() || ev.is_empty() {
        return Err(CliError::NoData("training or evaluation split is empty".into()));
    }
    write_manifest(&dir.join(TRAIN_MANIFEST), &tr)?;
    write_manifest(&dir.join(EVAL_MANIFEST), &ev)?;
    let kv = rc.to_key_values();
    std::fs::write(dir.join(RUN_CONFIG_FILE), kv.to_string())?;

    let scaler = MinMaxScaler::fit_log(&tr)?;
    let max_len = tr.max_trace_len();
    let layout = rc.architecture.layout();
    let train_batches = batches(&tr, layout, &scaler, rc.train.batch_size, max_len);
    let eval_batches = batches(&ev, layout, &scaler, rc.train.batch_size, max_len);
    let config = rc.model_config(loaded.log.vocabulary.len(), max_len);
    let mut model = Model::<f32>::new(config, &mut stream(rc.seed, STREAM_INIT))?;

    let mut log_file = std::io::BufWriter::new(std::fs::File::create(dir.join(TRAIN_LOG_FILE))?);
    let mut write_err: Option<std::io::Error> = None;
    let mut on_epoch = |r: &EpochRecord| {
        let line = serde_json::to_string(r).expect("plain record");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    };
    let report: TrainReport = if rc.architecture == Architecture::AeGan {
        train_aegan(&mut model, &train_batches, &eval_batches, &rc.train, &rc.adversarial, Some(&mut on_epoch))?
    } else {
        train(&mut model, &train_batches, &eval_batches, &rc.train, Some(&mut on_epoch))?
    };
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log_file.flush()?;

    let header = CheckpointHeader {
        config: model.config.clone(),
        vocabulary: loaded.log.vocabulary.names().to_vec(),
        vocabulary_fingerprint: loaded.log.vocabulary.fingerprint(),
        scaler_min_seconds: scaler.min_seconds,
        scaler_max_seconds: scaler.max_seconds,
        log_hash: loaded.hash.clone(),
        run: kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    };
    let mut ckpt = std::io::BufWriter::new(std::fs::File::create(dir.join(CHECKPOINT_FILE))?);
    write_checkpoint(&mut ckpt, &header, &model)?;
    ckpt.flush()?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(dir.join(TRAIN_REPORT_FILE), json)?;
    println!(
        "{}: {} epochs (best {} eval loss {:.6}{}) in {:.1}s -> {}",
        rc.architecture,
        report.epochs_run,
        report.best_epoch,
        report.best_eval_loss,
        if report.stopped_early { ", stopped early" } else { "" },
        report.wall_seconds,
        dir.display()
    );
    Ok(dir)
}

/// Trains every requested architecture and returns the run directories.
pub fn cmd_train(a: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let file = read_config_file(a.config.as_deref())?;
    let arch_spec = a
        .arch
        .clone()
        .or_else(|| file.get("arch").map(str::to_string))
        .ok_or_else(|| CliError::Usage("--arch is required".into()))?;
    let archs = parse_architectures(&arch_spec)?;
    let loaded = load_log(&a.log)?;
    let dataset = a
        .dataset
        .clone()
        .or_else(|| file.get("dataset").map(str::to_string))
        .unwrap_or_else(|| loaded.name.clone());
    if dataset.is_empty() || dataset.contains(['/', '\\']) {
        return Err(CliError::Usage(format!("invalid dataset name `{dataset}`")));
    }
    let configs = archs
        .iter()
        .map(|&arch| RunConfig::resolve(a, &file, arch, &dataset, &a.log.display().to_string(), &loaded.hash))
        .collect::<CliResult<Vec<_>>>()?;
    for rc in &configs {
        rc.model_config(loaded.log.vocabulary.len(), loaded.log.max_trace_len().max(2)).validate()?;
    }

    let jobs = a.jobs.clamp(1, configs.len());
    let results: Vec<CliResult<PathBuf>> = if jobs == 1 {
        configs
            .iter()
            .map(|rc| train_one(rc, &loaded, a.split.as_deref(), &a.out, a.force))
            .collect()
    } else {
        let chunk = configs.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .chunks(chunk)
                .map(|part| {
                    let loaded = &loaded;
                    s.spawn(move || {
                        part.iter()
                            .map(|rc| train_one(rc, loaded, a.split.as_deref(), &a.out, a.force))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };
    results.into_iter().collect()
}
