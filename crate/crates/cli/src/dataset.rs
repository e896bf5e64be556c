//! The on-disk dataset written by `simulate`.

use std::fs;
use std::path::{Path, PathBuf};

use dopplerkit_core::flow::FlowType;
use dopplerkit_core::formats::{Pgm, Sidecar};
use dopplerkit_core::image::{GrayImage, SegMask};
use dopplerkit_core::metrics::SplitPlan;
use dopplerkit_core::synth::SynthCase;
use serde::{Deserialize, Serialize};

use crate::config::{SimulateConfig, SplitPart};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SPLITS: &str = "splits.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub stem: String,
    pub flow_type: FlowType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_cases: usize,
    pub cases: Vec<ManifestEntry>,
    /// The effective configuration that produced the dataset.
    pub simulate: SimulateConfig,
}

pub fn case_stem(id: usize) -> String {
    format!("case_{id:04}")
}

pub fn image_file(stem: &str) -> String {
    format!("{stem}.pgm")
}

pub fn mask_file(stem: &str) -> String {
    format!("{stem}.mask.pgm")
}

pub fn sidecar_file(stem: &str) -> String {
    format!("{stem}.json")
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A case as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCase {
    pub id: usize,
    pub sidecar: Sidecar,
    pub image: GrayImage,
    pub mask: SegMask,
}

impl LoadedCase {
    pub fn flow_type(&self) -> FlowType {
        self.sidecar.flow_type
    }

    /// The generator-level view, available when the sidecar carries the
    /// case spec and ground truth.
    pub fn to_synth(&self) -> Result<SynthCase> {
        let (Some(spec), Some(gt)) = (&self.sidecar.case, &self.sidecar.ground_truth) else {
            return Err(CliError::Config(format!(
                "case {} has no generator spec or ground truth in its sidecar",
                self.id
            )));
        };
        Ok(SynthCase {
            spec: spec.clone(),
            spectrogram: self.image.clone(),
            gt_mask: self.mask.clone(),
            gt_beats: gt.beats.clone(),
            gt_measurements: gt.measurements.clone(),
            gt_ed_times: gt.ed_times.clone(),
        })
    }
}

pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub splits: SplitPlan,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&read_bytes(&dir.join(MANIFEST))?)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(CliError::Config(format!(
                "manifest version {} unsupported",
                manifest.format_version
            )));
        }
        let splits: SplitPlan = serde_json::from_slice(&read_bytes(&dir.join(SPLITS))?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            splits,
        })
    }

    pub fn ids(&self, repeat: usize, part: SplitPart) -> Result<Vec<usize>> {
        if part == SplitPart::All {
            return Ok(self.manifest.cases.iter().map(|c| c.id).collect());
        }
        let split = self.splits.repeats.get(repeat).ok_or_else(|| {
            CliError::Config(format!(
                "split repeat {} requested but the dataset has {}",
                repeat,
                self.splits.repeats.len()
            ))
        })?;
        Ok(match part {
            SplitPart::Train => split.train.clone(),
            SplitPart::Val => split.val.clone(),
            SplitPart::Test => split.test.clone(),
            SplitPart::All => unreachable!(),
        })
    }

    pub fn load(&self, id: usize) -> Result<LoadedCase> {
        let entry = self
            .manifest
            .cases
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| CliError::Config(format!("case {id} not in manifest")))?;
        let stem = &entry.stem;
        let image = Pgm::from_bytes(&read_bytes(&self.dir.join(image_file(stem)))?)?.into_image()?;
        let mask = Pgm::from_bytes(&read_bytes(&self.dir.join(mask_file(stem)))?)?.into_mask()?;
        let sidecar = Sidecar::from_bytes(&read_bytes(&self.dir.join(sidecar_file(stem)))?)?;
        Ok(LoadedCase {
            id,
            sidecar,
            image,
            mask,
        })
    }

    pub fn load_many(&self, ids: &[usize]) -> Result<Vec<LoadedCase>> {
        ids.iter().map(|&id| self.load(id)).collect()
    }
}
