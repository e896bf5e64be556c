use std::fs;
use std::path::{Path, PathBuf};

use dopplerkit_core::formats::{Pgm, Sidecar};
use dopplerkit_core::metrics::mc_split;
use dopplerkit_core::synth::{make_dataset, uniform_mix};

use crate::config::RunConfig;
use crate::dataset::{
    case_stem, image_file, mask_file, sidecar_file, write_bytes, Manifest, ManifestEntry, MANIFEST, MANIFEST_VERSION,
    SPLITS,
};
use crate::error::{CliError, Result};

/// Writes the dataset into a staging directory next to `out_dir` and moves
/// it into place only once every file is complete.
pub fn run(cfg: &RunConfig) -> Result<PathBuf> {
    let sim = &cfg.simulate;
    let mix = if sim.type_mix.is_empty() {
        uniform_mix()
    } else {
        sim.type_mix.clone()
    };
    let cases = make_dataset(sim.n_cases, &mix, sim.seed, &sim.dataset)?;
    let ids: Vec<usize> = (0..cases.len()).collect();
    let splits = mc_split(&ids, sim.split_ratios, sim.n_repeats, sim.split_seed)?;

    let out = &sim.out_dir;
    prepare_target(out)?;
    let staging = staging_dir(out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    let written = (|| -> Result<()> {
        let mut entries = Vec::with_capacity(cases.len());
        for (id, case) in cases.iter().enumerate() {
            let stem = case_stem(id);
            write_bytes(&staging.join(image_file(&stem)), &Pgm::from_image(&case.spectrogram).to_bytes())?;
            write_bytes(&staging.join(mask_file(&stem)), &Pgm::from_mask(&case.gt_mask).to_bytes())?;
            write_bytes(&staging.join(sidecar_file(&stem)), &Sidecar::from_case(case).to_bytes()?)?;
            entries.push(ManifestEntry {
                id,
                stem,
                flow_type: case.flow_type(),
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            n_cases: cases.len(),
            cases: entries,
            simulate: sim.clone(),
        };
        write_bytes(&staging.join(MANIFEST), &json_bytes(&manifest)?)?;
        write_bytes(&staging.join(SPLITS), &json_bytes(&splits)?)?;
        if out.exists() {
            fs::remove_dir_all(out).map_err(|e| CliError::io(out, e))?;
        }
        fs::rename(&staging, out).map_err(|e| CliError::io(out, e))
    })();
    if written.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    written?;
    Ok(out.clone())
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    out.with_file_name(format!(".{name}.partial"))
}

/// Only an empty directory or a previous dataset may be replaced.
fn prepare_target(out: &Path) -> Result<()> {
    if !out.exists() {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        return Ok(());
    }
    if !out.is_dir() {
        return Err(CliError::Config(format!("{} exists and is not a directory", out.display())));
    }
    let empty = fs::read_dir(out).map_err(|e| CliError::io(out, e))?.next().is_none();
    if !empty && !out.join(MANIFEST).exists() {
        return Err(CliError::Config(format!(
            "{} is neither empty nor a dataset; refusing to overwrite",
            out.display()
        )));
    }
    Ok(())
}
