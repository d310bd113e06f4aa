//! QoS vector sources for instance generation.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use qassa_core::model::{PropertyDescriptor, QosVector};
use qassa_core::workload::{load_dataset, project, qws_descriptors, synthetic_qws, CsvFormat};

use crate::error::{CliError, Result};

pub const DATASET_ENV: &str = "QASSA_DATASET";

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Delimited QoS table.
    #[arg(long, env = DATASET_ENV)]
    pub dataset: Option<PathBuf>,
    /// Use the built-in synthetic QWS-like table instead of a file.
    #[arg(long)]
    pub synthetic: bool,
    /// JSON property file: descriptors with dataset columns and scales.
    #[arg(long)]
    pub property_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2500)]
    pub synthetic_rows: usize,
    #[arg(long, default_value_t = 7)]
    pub synthetic_seed: u64,
}

/// Dataset layout and property mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyFile {
    #[serde(default = "comma")]
    pub delimiter: char,
    #[serde(default = "yes")]
    pub has_headers: bool,
    pub properties: Vec<PropertyDescriptor>,
}

fn comma() -> char {
    ','
}

fn yes() -> bool {
    true
}

impl Default for PropertyFile {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_headers: true,
            properties: qws_descriptors(),
        }
    }
}

impl PropertyFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
        let pf: PropertyFile = serde_json::from_str(&text).map_err(|e| CliError::input(path.display(), e))?;
        if !pf.delimiter.is_ascii() {
            return Err(CliError::Input("delimiter must be a single ASCII character".into()));
        }
        Ok(pf)
    }
}

pub struct Source {
    pub properties: Vec<PropertyDescriptor>,
    pub vectors: Vec<QosVector>,
}

impl SourceArgs {
    pub fn load(&self) -> Result<Source> {
        let pf = match &self.property_file {
            Some(p) => PropertyFile::read(p)?,
            None => PropertyFile::default(),
        };
        let dataset = if self.synthetic {
            project(&synthetic_qws(self.synthetic_rows, self.synthetic_seed), &pf.properties)?
        } else {
            let path = self.dataset.as_ref().ok_or_else(|| {
                CliError::Input(format!("no QoS dataset: pass --dataset, set {DATASET_ENV}, or pass --synthetic"))
            })?;
            let format = CsvFormat {
                delimiter: pf.delimiter as u8,
                has_headers: pf.has_headers,
            };
            load_dataset(path, &pf.properties, format).map_err(|e| CliError::input(path.display(), e))?
        };
        Ok(Source {
            properties: pf.properties,
            vectors: dataset.vectors(),
        })
    }
}
