//! Machine-readable output records and atomic file writes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// One estimate, in the schema shared by estimators, oracles and fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub quantity: String,
    pub x: Vec<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<u64>,
    pub method: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: u64,
    pub bias_bound: f64,
    pub seed: u64,
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| LabError::Io(e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.json");
        let rec = EstimateRecord {
            quantity: "window_hit".into(),
            x: vec![1, 0, 0, 0, 0],
            t: None,
            n: Some(1),
            method: "indicator".into(),
            value: 0.1,
            ci_lo: 0.09,
            ci_hi: 0.11,
            replicas: 10,
            bias_bound: 0.0,
            seed: 7,
        };
        write_json_atomic(&path, &rec).unwrap();
        let back: EstimateRecord = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, rec);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("\"t\""));
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
