//! Seven-way Doppler flow-type taxonomy and the end-diastole rule each
//! type implies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error};
use crate::image::FlowClass;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlowType {
    /// Anterograde A-V inflow, E then A lobe.
    AvInflow,
    /// Retrograde A-V jet, long systolic lobe.
    AvRegurg,
    /// Anterograde V-Ar ejection, systolic lobe.
    VarEjection,
    /// Retrograde V-Ar jet with a prolonged diastolic decay.
    VarRegurg,
    /// Tissue Doppler of the annulus: s', e', a'.
    TdiAnnulus,
    /// Low-velocity multiphasic venous flow.
    VenousPw,
    /// Pulsed-wave outflow ejection.
    OutflowPw,
}

/// Which end of a beat marks end-diastole.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdEdge {
    /// Flow start (`start_col * sec_per_col`).
    Initiation,
    /// Flow end (`(end_col + 1) * sec_per_col`).
    Termination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdRule {
    pub direction: FlowClass,
    pub edge: EdEdge,
}

impl FlowType {
    pub const ALL: [FlowType; 7] = [
        FlowType::AvInflow,
        FlowType::AvRegurg,
        FlowType::VarEjection,
        FlowType::VarRegurg,
        FlowType::TdiAnnulus,
        FlowType::VenousPw,
        FlowType::OutflowPw,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowType::AvInflow => "AV_INFLOW",
            FlowType::AvRegurg => "AV_REGURG",
            FlowType::VarEjection => "VAR_EJECTION",
            FlowType::VarRegurg => "VAR_REGURG",
            FlowType::TdiAnnulus => "TDI_ANNULUS",
            FlowType::VenousPw => "VENOUS_PW",
            FlowType::OutflowPw => "OUTFLOW_PW",
        }
    }

    pub fn ed_rule(self) -> EdRule {
        use EdEdge::*;
        let (direction, edge) = match self {
            FlowType::AvInflow | FlowType::TdiAnnulus | FlowType::VenousPw => (FlowClass::Forward, Termination),
            FlowType::VarEjection | FlowType::OutflowPw => (FlowClass::Forward, Initiation),
            FlowType::AvRegurg => (FlowClass::Reverse, Initiation),
            // Regurgitant flow outlasts end-diastole; the resulting late
            // bias is left uncorrected.
            FlowType::VarRegurg => (FlowClass::Reverse, Termination),
        };
        EdRule { direction, edge }
    }
}

impl fmt::Display for FlowType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match Self::ALL.iter().find(|t| t.name().eq_ignore_ascii_case(s)) {
            Some(t) => Ok(*t),
            None => bail!(Parse, "unknown flow type {:?}", s),
        }
    }
}
