//! On-disk corpus layout: `manifest.json` plus per-sample `input.raw`
//! (little-endian `f32`, `[D, H, W, C]` row-major) and `labels.raw` (`u8`).

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{label_channel, InjectionKind, SyntheticCorpus, VolumeSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub patient_id: String,
    /// `[D, H, W]`
    pub dims: Vec<usize>,
    pub modalities: Vec<String>,
    pub input_path: String,
    pub labels_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub patient_id: String,
    pub kind: InjectionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub hard_ids: Vec<String>,
    #[serde(default)]
    pub injections: Vec<InjectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub samples: Vec<ManifestSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

impl CorpusManifest {
    pub fn for_samples(samples: &[VolumeSample], modalities: &[String]) -> Self {
        let samples = samples
            .iter()
            .map(|s| ManifestSample {
                patient_id: s.patient_id().to_string(),
                dims: vec![s.depth(), s.height(), s.width()],
                modalities: modalities.to_vec(),
                input_path: format!("{}/input.raw", s.patient_id()),
                labels_path: format!("{}/labels.raw", s.patient_id()),
            })
            .collect();
        Self {
            version: MANIFEST_VERSION,
            samples,
            generator: None,
        }
    }

    pub fn for_synthetic(corpus: &SyntheticCorpus, modalities: &[String]) -> Self {
        let mut manifest = Self::for_samples(&corpus.samples, modalities);
        manifest.generator = Some(GeneratorInfo {
            seed: corpus.seed,
            hard_ids: corpus.hard_ids(),
            injections: corpus
                .injections
                .iter()
                .map(|(id, kind)| InjectionRecord {
                    patient_id: id.clone(),
                    kind: *kind,
                })
                .collect(),
        });
        manifest
    }
}

fn check_patient_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "patient id {id:?} is not a safe file name"
        )))
    }
}

fn check_relative(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.components().all(|c| matches!(c, Component::Normal(_))) {
        Ok(root.join(p))
    } else {
        Err(Error::format(
            root.join(MANIFEST_FILE),
            format!("path {rel:?} must be relative and stay inside the corpus"),
        ))
    }
}

fn encode_input(t: &Tensor) -> Vec<u8> {
    t.values()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

fn encode_labels(t: &Tensor) -> Vec<u8> {
    // Labels were validated on construction.
    t.values().iter().map(|&v| v as u8).collect()
}

/// Write samples and their manifest under `dir`, creating it if needed.
pub fn write_corpus(dir: &Path, manifest: &CorpusManifest, samples: &[VolumeSample]) -> Result<()> {
    if manifest.samples.len() != samples.len() {
        return Err(Error::Data(format!(
            "manifest lists {} samples but {} were given",
            manifest.samples.len(),
            samples.len()
        )));
    }
    for (entry, sample) in manifest.samples.iter().zip(samples) {
        check_patient_id(&entry.patient_id)?;
        if entry.patient_id != sample.patient_id() {
            return Err(Error::Data(format!(
                "manifest entry {} does not match sample {}",
                entry.patient_id,
                sample.patient_id()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, sample) in manifest.samples.iter().zip(samples) {
        let input_path = check_relative(dir, &entry.input_path)?;
        let labels_path = check_relative(dir, &entry.labels_path)?;
        for p in [&input_path, &labels_path] {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(&input_path, encode_input(sample.input()))
            .map_err(|e| Error::io(&input_path, e))?;
        fs::write(&labels_path, encode_labels(sample.labels()))
            .map_err(|e| Error::io(&labels_path, e))?;
    }
    let mut json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("cannot serialize manifest: {e}")))?;
    json.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Load and validate a corpus: every file must exist and match its declared dims.
pub fn read_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<VolumeSample>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    if manifest.samples.is_empty() {
        return Err(Error::format(&path, "manifest lists no samples"));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        check_patient_id(&entry.patient_id)?;
        if !seen.insert(entry.patient_id.as_str()) {
            return Err(Error::format(
                &path,
                format!("duplicate patient id {}", entry.patient_id),
            ));
        }
        samples.push(read_sample(dir, entry)?);
    }
    Ok((manifest, samples))
}

fn read_sample(dir: &Path, entry: &ManifestSample) -> Result<VolumeSample> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let [d, h, w] = <[usize; 3]>::try_from(entry.dims.as_slice()).map_err(|_| {
        Error::format(
            &manifest_path,
            format!("{}: dims must have three entries", entry.patient_id),
        )
    })?;
    let c = entry.modalities.len();
    if d == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::format(
            &manifest_path,
            format!("{}: dims and modalities must be nonempty", entry.patient_id),
        ));
    }
    let voxels = d * h * w;

    let input_path = check_relative(dir, &entry.input_path)?;
    let bytes = fs::read(&input_path).map_err(|e| Error::io(&input_path, e))?;
    if bytes.len() != voxels * c * 4 {
        return Err(Error::format(
            &input_path,
            format!(
                "{}: expected {} bytes for dims [{d}, {h}, {w}, {c}], found {}",
                entry.patient_id,
                voxels * c * 4,
                bytes.len()
            ),
        ));
    }
    let input: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(&input_path, "non-finite intensity"));
    }

    let labels_path = check_relative(dir, &entry.labels_path)?;
    let bytes = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    if bytes.len() != voxels {
        return Err(Error::format(
            &labels_path,
            format!(
                "{}: expected {voxels} bytes, found {}",
                entry.patient_id,
                bytes.len()
            ),
        ));
    }
    let labels: Vec<f64> = bytes.iter().map(|&b| f64::from(b)).collect();
    if let Some(i) = labels.iter().position(|&v| label_channel(v).is_none()) {
        return Err(Error::format(
            &labels_path,
            format!(
                "invalid label {} at voxel {:?}",
                labels[i],
                super::unravel(i, &[d, h, w])
            ),
        ));
    }

    VolumeSample::new(
        entry.patient_id.clone(),
        Tensor::new(vec![d, h, w, c], input)?,
        Tensor::new(vec![d, h, w], labels)?,
    )
}
