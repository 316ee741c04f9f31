use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One of the eight finger-vein acquisition devices.
///
/// The declaration order is the canonical class order: it fixes class
/// indices for training labels and the row/column order of every table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorClass {
    #[serde(rename = "SDUMLA")]
    Sdumla,
    #[serde(rename = "HKPU_FV")]
    HkpuFv,
    #[serde(rename = "IDIAP")]
    Idiap,
    #[serde(rename = "MMCBNU")]
    Mmcbnu,
    #[serde(rename = "PALMAR")]
    Palmar,
    #[serde(rename = "FV_USM")]
    FvUsm,
    #[serde(rename = "THU_FVFDT")]
    ThuFvfdt,
    #[serde(rename = "UTFVP")]
    Utfvp,
}

impl SensorClass {
    pub const COUNT: usize = 8;

    pub const ALL: [SensorClass; 8] = [
        SensorClass::Sdumla,
        SensorClass::HkpuFv,
        SensorClass::Idiap,
        SensorClass::Mmcbnu,
        SensorClass::Palmar,
        SensorClass::FvUsm,
        SensorClass::ThuFvfdt,
        SensorClass::Utfvp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorClass::Sdumla => "SDUMLA",
            SensorClass::HkpuFv => "HKPU_FV",
            SensorClass::Idiap => "IDIAP",
            SensorClass::Mmcbnu => "MMCBNU",
            SensorClass::Palmar => "PALMAR",
            SensorClass::FvUsm => "FV_USM",
            SensorClass::ThuFvfdt => "THU_FVFDT",
            SensorClass::Utfvp => "UTFVP",
        }
    }

    /// Canonical names in index order.
    pub fn order() -> Vec<String> {
        Self::ALL.iter().map(|s| s.name().to_string()).collect()
    }
}

impl fmt::Display for SensorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::UnknownSensor(s.to_string()))
    }
}
