use suffixbench_core::config::KeyValues;
use suffixbench_core::synthetic::{sample_raw, write_csv, ProcessSpec};

use crate::args::{Preset, SynthArgs};
use crate::run_config::resolve_seed;
use crate::{CliError, CliResult};

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let spec = match (&a.spec, a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
            ProcessSpec::from_key_values(&KeyValues::parse(&text)?)?
        }
        (None, Some(Preset::Skewed)) => ProcessSpec::skewed_loop(a.loop_p),
        (None, Some(Preset::Memorization) | None) => ProcessSpec::memorization(),
    };
    spec.validate()?;
    if a.traces == 0 {
        return Err(CliError::Usage("--traces must be positive".into()));
    }
    let seed = resolve_seed(a.seed, None)?;
    let raw = sample_raw(&spec, a.traces, seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(std::fs::File::create(&a.out)?, &raw)?;
    println!("wrote {} traces (seed {seed}) -> {}", raw.len(), a.out.display());
    Ok(())
}
