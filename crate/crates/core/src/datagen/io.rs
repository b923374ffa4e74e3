//! On-disk dataset: `manifest.json` plus one little-endian f32 file per
//! split. Each record is the insole clip (2 x t x 16 x 8, row-major)
//! followed by the GRF window (2 x t).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetConfig, Sample, Scaling, WindowedDataset};
use super::{FEET, GRID_H, GRID_W, TARGET_RATE_HZ};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "sckd-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub file: String,
    pub count: usize,
    pub subject_ids: Vec<u32>,
    pub speeds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub window: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub rate_hz: f64,
    /// Record layout, in file order.
    pub record: Vec<String>,
    pub scaling: Scaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetConfig>,
    pub splits: Vec<SplitManifest>,
}

impl DatasetManifest {
    fn record_floats(&self) -> usize {
        self.channels * self.window * (self.height * self.width + 1)
    }
}

pub fn save_dataset(
    dataset: &WindowedDataset,
    generator: Option<&DatasetConfig>,
    dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = "all.f32".to_string();
    let path = dir.join(&file);
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for sample in &dataset.samples {
        for v in sample.insole.iter().chain(sample.grf.iter()) {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    let t = dataset.window;
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: 1,
        dtype: "f32le".into(),
        window: t,
        channels: FEET,
        height: GRID_H,
        width: GRID_W,
        rate_hz: TARGET_RATE_HZ,
        record: vec![
            format!("insole[{FEET},{t},{GRID_H},{GRID_W}]"),
            format!("grf[{FEET},{t}]"),
        ],
        scaling: dataset.scaling.clone(),
        generator: generator.cloned(),
        splits: vec![SplitManifest {
            name: "all".into(),
            file,
            count: dataset.len(),
            subject_ids: dataset.samples.iter().map(|s| s.subject_id).collect(),
            speeds: dataset.samples.iter().map(|s| s.speed).collect(),
        }],
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<WindowedDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let bad = |reason: String| Error::Format {
        path: manifest_path.clone(),
        reason,
    };
    if manifest.format != FORMAT || manifest.dtype != "f32le" {
        return Err(bad(format!(
            "unsupported format {} / dtype {}",
            manifest.format, manifest.dtype
        )));
    }
    if (manifest.channels, manifest.height, manifest.width) != (FEET, GRID_H, GRID_W) {
        return Err(bad("unexpected tensor geometry".into()));
    }

    let t = manifest.window;
    let per_record = manifest.record_floats();
    let insole_len = FEET * t * GRID_H * GRID_W;
    let mut samples = Vec::new();
    for split in &manifest.splits {
        if split.subject_ids.len() != split.count || split.speeds.len() != split.count {
            return Err(bad(format!("label count mismatch in split {}", split.name)));
        }
        let path = dir.join(&split.file);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = BufReader::new(file);
        let mut bytes = vec![0u8; per_record * 4];
        let mut floats = vec![0f32; per_record];
        for k in 0..split.count {
            reader
                .read_exact(&mut bytes)
                .map_err(|e| Error::io(&path, e))?;
            for (f, chunk) in floats.iter_mut().zip(bytes.chunks_exact(4)) {
                *f = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
            let insole = Array4::from_shape_vec((FEET, t, GRID_H, GRID_W), floats[..insole_len].to_vec())
                .map_err(|e| bad(e.to_string()))?;
            let grf = Array2::from_shape_vec((FEET, t), floats[insole_len..].to_vec())
                .map_err(|e| bad(e.to_string()))?;
            samples.push(Sample {
                insole,
                grf,
                subject_id: split.subject_ids[k],
                speed: split.speeds[k],
            });
        }
        let mut rest = [0u8; 1];
        if reader.read(&mut rest).map_err(|e| Error::io(&path, e))? != 0 {
            return Err(bad(format!("{} has trailing bytes", split.file)));
        }
    }
    Ok(WindowedDataset {
        window: t,
        samples,
        scaling: manifest.scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;

    #[test]
    fn save_then_load() {
        let cfg = DatasetConfig {
            subjects: 2,
            speeds: vec![1.25],
            session_seconds: 12.0,
            ..DatasetConfig::desk()
        };
        let ds = build_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, Some(&cfg), dir.path()).unwrap();
        assert_eq!(manifest.splits[0].count, ds.len());
        let bytes = fs::metadata(dir.path().join("all.f32")).unwrap().len() as usize;
        assert_eq!(bytes, ds.len() * manifest.record_floats() * 4);

        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.scaling, ds.scaling);
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingArtifact(_))));
    }
}
