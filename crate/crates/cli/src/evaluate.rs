use std::io::Write;
use std::path::{Path, PathBuf};

use suffixbench_core::config::KeyValues;
use suffixbench_core::evaluation::{aggregate, evaluate, report_csv, report_svg, write_predictions, Metric, PrefixReport};
use suffixbench_core::event_log::{read_manifest, MinMaxScaler};
use suffixbench_core::inference::GenerationConfig;
use suffixbench_core::models::read_checkpoint;

use crate::args::EvaluateArgs;
use crate::{
    load_log, CliError, CliResult, CHECKPOINT_FILE, EVAL_CONFIG_FILE, EVAL_MANIFEST, PREDICTIONS_FILE, REPORT_FILE,
};

fn checkpoint_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.is_dir() {
        (p.join(CHECKPOINT_FILE), p.to_path_buf())
    } else {
        let dir = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        (p.to_path_buf(), dir)
    }
}

/// Evaluates a checkpoint on its run's evaluation split.
pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<PrefixReport> {
    let (ckpt_path, run_dir) = checkpoint_paths(&a.checkpoint);
    let file = std::fs::File::open(&ckpt_path)
        .map_err(|e| CliError::NoData(format!("cannot open checkpoint {}: {e}", ckpt_path.display())))?;
    let (header, model) = read_checkpoint(&mut std::io::BufReader::new(file))?;
    let loaded = load_log(&a.log)?;

    let fingerprint = loaded.log.vocabulary.fingerprint();
    if fingerprint != header.vocabulary_fingerprint {
        return Err(CliError::Integrity(format!(
            "vocabulary mismatch: checkpoint {} vs log {}",
            header.vocabulary_fingerprint, fingerprint
        )));
    }
    if loaded.hash != header.log_hash {
        return Err(CliError::Integrity(format!(
            "log mismatch: checkpoint was trained on {} but log is {}",
            header.log_hash, loaded.hash
        )));
    }

    let split_dir = a.split.clone().unwrap_or_else(|| run_dir.clone());
    let manifest = split_dir.join(EVAL_MANIFEST);
    if !manifest.exists() {
        return Err(CliError::NoData(format!("missing evaluation manifest {}", manifest.display())));
    }
    let eval_log = read_manifest(&manifest, &loaded.log)?;
    let scaler = MinMaxScaler::new(header.scaler_min_seconds, header.scaler_max_seconds)?;
    let run = KeyValues::parse(
        &header
            .run
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect::<String>(),
    )?;
    let seed: u64 = run.parsed("seed")?.unwrap_or(0);
    let dataset = run.get("dataset").unwrap_or(&loaded.name).to_string();
    let model_tag = model.architecture().tag();
    let mut gen = GenerationConfig::new(header.config.max_len, seed);
    gen.include_eos_time = a.include_eos_time;

    let records = evaluate(&model, &eval_log, &scaler, &gen, a.jobs)?;
    let report = aggregate(&records, 0, model_tag, &dataset);

    let out = a.out.clone().unwrap_or(run_dir);
    std::fs::create_dir_all(&out)?;
    let mut pred = std::io::BufWriter::new(std::fs::File::create(out.join(PREDICTIONS_FILE))?);
    write_predictions(&mut pred, &records)?;
    pred.flush()?;
    std::fs::write(out.join(REPORT_FILE), report_csv(&report))?;
    std::fs::write(out.join("dls.svg"), report_svg(&report, Metric::Dls))?;
    std::fs::write(out.join("mae.svg"), report_svg(&report, Metric::Mae))?;

    let mut kv = run.clone();
    kv.set("checkpoint", ckpt_path.display());
    kv.set("eval_log", a.log.display());
    kv.set("eval_log_hash", &loaded.hash);
    kv.set("vocabulary_fingerprint", fingerprint);
    kv.set("max_len", header.config.max_len);
    kv.set("dls_includes_eos", true);
    kv.set("include_eos_time", a.include_eos_time);
    kv.set("eval_traces", eval_log.len());
    kv.set("eval_instances", records.len());
    std::fs::write(out.join(EVAL_CONFIG_FILE), kv.to_string())?;
    println!(
        "{model_tag} on {dataset}: DLS {:.4}, MAE {:.4} days over {} prefixes -> {}",
        report.overall_dls,
        report.overall_mae_days,
        report.n_samples,
        out.display()
    );
    Ok(report)
}
