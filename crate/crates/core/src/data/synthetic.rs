//! Synthetic multi-modal tumor volumes with nested label regions and
//! optional hard-sample injections.

use serde::{Deserialize, Serialize};

use super::{VolumeSample, DEFAULT_MODALITIES};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Mean intensity of each tissue class per modality slot (FLAIR, T1CE, T2).
/// Rows: healthy tissue, NET/NCR, ED, ET.
const TISSUE_MEANS: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [1.2, 0.5, 2.4],
    [2.0, 1.0, 1.8],
    [1.6, 2.6, 1.3],
];

const MIN_PLANE_DIM: usize = 5;
const MIN_TISSUE_INTENSITY: f64 = 0.05;
const HEAVY_NOISE_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Injections {
    /// Label voxels shuffled across the volume, so labels no longer follow intensities.
    pub label_permutation: usize,
    /// No enhancing-tumor region at all.
    pub rare_class_absent: usize,
    /// Tumor shrunk to a single core voxel.
    pub tiny_region: usize,
    /// Intensity noise scaled up.
    pub heavy_noise: usize,
}

impl Injections {
    pub fn total(&self) -> usize {
        self.label_permutation + self.rare_class_absent + self.tiny_region + self.heavy_noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionKind {
    LabelPermutation,
    RareClassAbsent,
    TinyRegion,
    HeavyNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub samples: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_modalities")]
    pub modalities: Vec<String>,
    /// Standard deviation of the additive Gaussian intensity noise.
    pub noise: f64,
    #[serde(default)]
    pub injections: Injections,
}

fn default_modalities() -> Vec<String> {
    DEFAULT_MODALITIES.iter().map(|s| s.to_string()).collect()
}

impl GeneratorSpec {
    pub fn new(samples: usize, depth: usize, height: usize, width: usize) -> Self {
        Self {
            samples,
            depth,
            height,
            width,
            modalities: default_modalities(),
            noise: 0.1,
            injections: Injections::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Generator("sample count must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Generator("depth must be at least 1".into()));
        }
        if self.height < MIN_PLANE_DIM || self.width < MIN_PLANE_DIM {
            return Err(Error::Generator(format!(
                "in-plane dims {}x{} cannot hold a brain and nested tumor regions (minimum {MIN_PLANE_DIM}x{MIN_PLANE_DIM})",
                self.height, self.width
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::Generator("at least one modality is required".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Generator(format!(
                "noise must be finite and non-negative, got {}",
                self.noise
            )));
        }
        if self.injections.total() > self.samples {
            return Err(Error::Generator(format!(
                "{} injections requested for {} samples",
                self.injections.total(),
                self.samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub samples: Vec<VolumeSample>,
    /// Injected patients in ascending id order, each with its injection.
    pub injections: Vec<(String, InjectionKind)>,
}

impl SyntheticCorpus {
    pub fn hard_ids(&self) -> Vec<String> {
        self.injections.iter().map(|(id, _)| id.clone()).collect()
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:03}")
}

/// Build a corpus that is a pure function of `(spec, rng seed)`.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec, rng: &mut Rng) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let seed = rng.seed();

    let picks = rng.distinct(spec.samples, spec.injections.total());
    let mut assigned: Vec<Option<InjectionKind>> = vec![None; spec.samples];
    let kinds = [
        (
            InjectionKind::LabelPermutation,
            spec.injections.label_permutation,
        ),
        (
            InjectionKind::RareClassAbsent,
            spec.injections.rare_class_absent,
        ),
        (InjectionKind::TinyRegion, spec.injections.tiny_region),
        (InjectionKind::HeavyNoise, spec.injections.heavy_noise),
    ];
    let mut cursor = picks.into_iter();
    for (kind, count) in kinds {
        for idx in cursor.by_ref().take(count) {
            assigned[idx] = Some(kind);
        }
    }

    let mut samples = Vec::with_capacity(spec.samples);
    let mut injections = Vec::new();
    for (i, kind) in assigned.iter().enumerate() {
        let mut sample_rng = rng.fork();
        let id = patient_id(i);
        samples.push(generate_sample(spec, &id, *kind, &mut sample_rng)?);
        if let Some(kind) = kind {
            injections.push((id, *kind));
        }
    }
    Ok(SyntheticCorpus {
        seed,
        samples,
        injections,
    })
}

struct TumorGeometry {
    center: [f64; 3],
    radii: [f64; 3],
    with_enhancing: bool,
}

impl TumorGeometry {
    /// Label at a voxel inside the brain.
    fn label_at(&self, z: usize, y: usize, x: usize) -> u8 {
        let p = [z as f64, y as f64, x as f64];
        let r2: f64 = (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum();
        let r = r2.sqrt();
        if r <= 0.3 {
            1
        } else if r <= 0.6 {
            if self.with_enhancing {
                4
            } else {
                1
            }
        } else if r <= 1.0 {
            2
        } else {
            0
        }
    }
}

fn generate_sample(
    spec: &GeneratorSpec,
    id: &str,
    kind: Option<InjectionKind>,
    rng: &mut Rng,
) -> Result<VolumeSample> {
    let (d, h, w) = (spec.depth, spec.height, spec.width);
    let c = spec.modalities.len();
    let plane = h.min(w) as f64;

    // Integer tumor centre, so the centre voxel always lands in the core.
    let cz = rng.below(d) as f64;
    let cy = ((h as f64 - 1.0) / 2.0 + rng.uniform_range(-0.2, 0.2) * h as f64).round();
    let cx = ((w as f64 - 1.0) / 2.0 + rng.uniform_range(-0.2, 0.2) * w as f64).round();
    let in_plane = rng.uniform_range(0.22, 0.32) * plane;
    let through = (rng.uniform_range(0.25, 0.4) * d as f64).max(1.2);
    let tumor = match kind {
        Some(InjectionKind::TinyRegion) => TumorGeometry {
            center: [cz, cy, cx],
            radii: [0.9, 0.9, 0.9],
            with_enhancing: true,
        },
        _ => TumorGeometry {
            center: [cz, cy, cx],
            radii: [through, in_plane, in_plane],
            with_enhancing: kind != Some(InjectionKind::RareClassAbsent),
        },
    };
    let noise = match kind {
        Some(InjectionKind::HeavyNoise) => spec.noise.max(0.1) * HEAVY_NOISE_FACTOR,
        _ => spec.noise,
    };

    let (by, bx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ry, rx) = (0.5 * h as f64, 0.5 * w as f64);

    let mut input = vec![0.0; d * h * w * c];
    let mut labels = vec![0.0; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let v = (z * h + y) * w + x;
                let in_brain =
                    ((y as f64 - by) / ry).powi(2) + ((x as f64 - bx) / rx).powi(2) <= 1.0;
                if !in_brain {
                    continue;
                }
                let label = tumor.label_at(z, y, x);
                labels[v] = f64::from(label);
                let row = match label {
                    0 => 0,
                    1 => 1,
                    2 => 2,
                    _ => 3,
                };
                for ch in 0..c {
                    let mean = TISSUE_MEANS[row][ch % 3];
                    let value = (mean + noise * rng.normal()).max(MIN_TISSUE_INTENSITY);
                    // Stored on disk as f32; keep the in-memory copy identical.
                    input[v * c + ch] = f64::from(value as f32);
                }
            }
        }
    }
    if kind == Some(InjectionKind::LabelPermutation) {
        rng.shuffle(&mut labels);
    }

    VolumeSample::new(
        id,
        Tensor::new(vec![d, h, w, c], input)?,
        Tensor::new(vec![d, h, w], labels)?,
    )
}
