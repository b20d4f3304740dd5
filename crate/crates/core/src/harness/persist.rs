//! JSON files for metrics and weights, and text files for datasets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Seeds};
use super::train::{MetricsRecord, StopReason};
use crate::csrn::GridSpec;
use crate::error::{CsrnError, Result};
use crate::gmlp::WeightVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub n_weights: usize,
    pub stop_reason: StopReason,
    pub records: Vec<MetricsRecord>,
}

impl MetricsFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trained weights together with the grid they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub grid: GridSpec,
    pub weights: WeightVector,
}

impl WeightsFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        file.grid.validate()?;
        // re-run the length and finiteness checks
        let weights = WeightVector::new(&file.grid.cell, file.weights.into_inner())?;
        Ok(WeightsFile {
            grid: file.grid,
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Writes `items` as `<prefix>_<index>.txt` files (index zero-padded to
/// three digits) into `dir`.
pub fn write_text_files<'a, I>(
    dir: &Path,
    prefix: &str,
    items: I,
) -> Result<Vec<std::path::PathBuf>>
where
    I: IntoIterator<Item = &'a str>,
{
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (i, text) in items.into_iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:03}.txt"));
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads every `<prefix>_*.txt` file in `dir`, sorted by name.
pub fn read_text_files(dir: &Path, prefix: &str) -> Result<Vec<String>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("{prefix}_")) && n.ends_with(".txt"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CsrnError::Config(format!(
            "no {prefix}_*.txt files in {}",
            dir.display()
        )));
    }
    names
        .iter()
        .map(|p| std::fs::read_to_string(p).map_err(CsrnError::from))
        .collect()
}
