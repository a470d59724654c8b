use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

/// Stage coordinates: translations in micrometers, tilts in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorInfo {
    pub name: String,
    pub position: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftwareInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleInfo {
    pub description: String,
    /// Chemical symbols, e.g. `["Au", "C"]`.
    pub elements: Vec<String>,
}

/// Acquisition metadata carried in the JSON block of every `.emdl` file.
///
/// `beam_energy` is in keV and `magnification` is dimensionless. Anything the
/// fixed schema does not name goes into `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMetadata {
    pub acquisition_datetime: String,
    pub beam_energy: f64,
    pub magnification: f64,
    pub stage_position: StagePosition,
    pub detector: DetectorInfo,
    pub software: SoftwareInfo,
    pub sample: SampleInfo,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A metadata invariant violation, with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct MetadataError {
    pub path: String,
    pub message: String,
}

impl MetadataError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Parses an ISO-8601 timestamp. Offsets are honored; a timestamp without an
/// offset is taken as UTC.
pub fn parse_iso8601(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(naive.and_utc());
        }
    }
    None
}

impl ExperimentMetadata {
    pub fn acquisition_time(&self) -> Option<DateTime<Utc>> {
        parse_iso8601(&self.acquisition_datetime)
    }

    pub fn validate(&self) -> Result<(), MetadataError> {
        if self.acquisition_time().is_none() {
            return Err(MetadataError::new(
                "acquisition_datetime",
                format!("not an ISO-8601 timestamp: {:?}", self.acquisition_datetime),
            ));
        }
        let numbers = [
            ("beam_energy", self.beam_energy),
            ("magnification", self.magnification),
            ("stage_position.x", self.stage_position.x),
            ("stage_position.y", self.stage_position.y),
            ("stage_position.z", self.stage_position.z),
            ("stage_position.alpha", self.stage_position.alpha),
            ("stage_position.beta", self.stage_position.beta),
        ];
        for (path, value) in numbers {
            if !value.is_finite() {
                return Err(MetadataError::new(path, "must be finite"));
            }
        }
        for (i, element) in self.sample.elements.iter().enumerate() {
            if element.trim().is_empty() {
                return Err(MetadataError::new(
                    format!("sample.elements[{i}]"),
                    "element symbol must be nonempty",
                ));
            }
        }
        Ok(())
    }

    /// Minimal metadata used by tests and the synthesizer defaults.
    pub fn example(acquisition_datetime: &str) -> Self {
        Self {
            acquisition_datetime: acquisition_datetime.to_string(),
            beam_energy: 300.0,
            magnification: 1.0e6,
            stage_position: StagePosition {
                x: 0.0,
                y: 0.0,
                z: 0.0,
                alpha: 0.0,
                beta: 0.0,
            },
            detector: DetectorInfo {
                name: "HAADF".to_string(),
                position: "inserted".to_string(),
            },
            software: SoftwareInfo {
                name: "picoflow".to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            sample: SampleInfo {
                description: "test sample".to_string(),
                elements: vec!["C".to_string()],
            },
            extra: BTreeMap::new(),
        }
    }
}
