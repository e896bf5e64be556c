//! Per-case JSON metadata written next to each spectrogram.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::flow::FlowType;
use crate::measure::{Beat, Calibration, Measurement};
use crate::synth::{CaseSpec, SynthCase};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beats: Vec<Beat>,
    pub measurements: Vec<Measurement>,
    pub ed_times: Vec<f64>,
}

/// Calibration and flow type are required; a hand-written sidecar for a
/// real recording may omit the generator spec and ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub flow_type: FlowType,
    pub calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<CaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

impl Sidecar {
    pub fn from_case(case: &SynthCase) -> Self {
        Self {
            format_version: SIDECAR_VERSION,
            flow_type: case.spec.flow_type,
            calibration: case.spec.calibration,
            seed: Some(case.spec.seed),
            case: Some(case.spec.clone()),
            ground_truth: Some(GroundTruth {
                beats: case.gt_beats.clone(),
                measurements: case.gt_measurements.clone(),
                ed_times: case.gt_ed_times.clone(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let s: Self = serde_json::from_slice(bytes)?;
        if s.format_version != SIDECAR_VERSION {
            bail!(Format, "sidecar format version {} unsupported", s.format_version);
        }
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}
