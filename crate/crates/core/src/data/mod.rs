//! Volumes, preprocessing and the frozen batch partition.

mod corpus;
mod synthetic;

pub use corpus::{
    read_corpus, write_corpus, CorpusManifest, GeneratorInfo, InjectionRecord, ManifestSample,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use synthetic::{
    generate_synthetic_corpus, GeneratorSpec, InjectionKind, Injections, SyntheticCorpus,
};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Label values in channel order: background, NET/NCR, ED, ET.
pub const LABEL_VALUES: [u8; 4] = [0, 1, 2, 4];
pub const NUM_CLASSES: usize = LABEL_VALUES.len();

pub const DEFAULT_MODALITIES: [&str; 3] = ["FLAIR", "T1CE", "T2"];

/// Channel index of a label value, if the value is a known label.
pub fn label_channel(value: f64) -> Option<usize> {
    LABEL_VALUES.iter().position(|&l| f64::from(l) == value)
}

/// One patient: stacked modalities `[D, H, W, C]` and a label volume `[D, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    patient_id: String,
    input: Tensor,
    labels: Tensor,
}

impl VolumeSample {
    pub fn new(patient_id: impl Into<String>, input: Tensor, labels: Tensor) -> Result<Self> {
        let patient_id = patient_id.into();
        if input.dims().len() != 4 {
            return Err(Error::Shape(format!(
                "{patient_id}: input must be [D, H, W, C], got {:?}",
                input.dims()
            )));
        }
        if labels.dims() != &input.dims()[..3] {
            return Err(Error::Shape(format!(
                "{patient_id}: labels {:?} do not match input {:?}",
                labels.dims(),
                input.dims()
            )));
        }
        validate_labels(&labels)?;
        Ok(Self {
            patient_id,
            input,
            labels,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn depth(&self) -> usize {
        self.input.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.input.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.input.dims()[2]
    }

    pub fn channels(&self) -> usize {
        self.input.dims()[3]
    }

    /// Channel `c` as a `[D, H, W]` volume.
    pub fn modality(&self, c: usize) -> Tensor {
        let ch = self.channels();
        let values = self
            .input
            .values()
            .iter()
            .skip(c)
            .step_by(ch)
            .copied()
            .collect();
        Tensor::new(self.input.dims()[..3].to_vec(), values).expect("dims are consistent")
    }
}

fn validate_labels(labels: &Tensor) -> Result<()> {
    for (i, &v) in labels.values().iter().enumerate() {
        if label_channel(v).is_none() {
            return Err(Error::Data(format!(
                "invalid label value {v} at voxel {:?}",
                unravel(i, labels.dims())
            )));
        }
    }
    Ok(())
}

pub(crate) fn unravel(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut coords = vec![0; dims.len()];
    for (axis, &d) in dims.iter().enumerate().rev() {
        coords[axis] = flat % d;
        flat /= d;
    }
    coords
}

/// A frozen slab of consecutive slices from one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchUnit {
    pub batch_id: usize,
    pub patient_id: String,
    pub slice_range: Range<usize>,
    /// `[d, H, W, C_in]`
    pub input: Tensor,
    /// `[d, H, W, K]`, one-hot.
    pub target: Tensor,
}

impl BatchUnit {
    pub fn slices(&self) -> usize {
        self.slice_range.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZScoreStatus {
    Normalized,
    /// Foreground had zero spread; it was shifted to zero but not scaled.
    ZeroStd,
    /// No voxel was above the threshold; the volume is unchanged.
    AllBackground,
}

impl ZScoreStatus {
    pub fn is_degenerate(self) -> bool {
        self != ZScoreStatus::Normalized
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub volume: Tensor,
    /// Foreground voxels the statistics were computed over.
    pub mask: Vec<bool>,
    pub status: ZScoreStatus,
}

/// Z-score normalization restricted to voxels above `foreground_threshold`.
///
/// The returned mask identifies the foreground; renormalizing the output with
/// [`zscore_normalize_masked`] and that mask is the identity.
pub fn zscore_normalize(volume: &Tensor, foreground_threshold: f64) -> Result<ZScored> {
    let mask: Vec<bool> = volume
        .values()
        .iter()
        .map(|&v| v > foreground_threshold)
        .collect();
    zscore_normalize_masked(volume, &mask)
}

pub fn zscore_normalize_masked(volume: &Tensor, mask: &[bool]) -> Result<ZScored> {
    if mask.len() != volume.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries for a volume of {}",
            mask.len(),
            volume.len()
        )));
    }
    if !volume.all_finite() {
        return Err(Error::Domain("volume contains non-finite values".into()));
    }
    let fg: Vec<f64> = volume
        .values()
        .iter()
        .zip(mask)
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect();
    if fg.is_empty() {
        return Ok(ZScored {
            volume: volume.clone(),
            mask: mask.to_vec(),
            status: ZScoreStatus::AllBackground,
        });
    }
    let n = fg.len() as f64;
    let mean = fg.iter().sum::<f64>() / n;
    let var = fg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let (scale, status) = if std > 0.0 {
        (1.0 / std, ZScoreStatus::Normalized)
    } else {
        (1.0, ZScoreStatus::ZeroStd)
    };
    let mut out = volume.clone();
    for (v, &m) in out.values_mut().iter_mut().zip(mask) {
        if m {
            *v = (*v - mean) * scale;
        }
    }
    Ok(ZScored {
        volume: out,
        mask: mask.to_vec(),
        status,
    })
}

/// Label map `[..]` to one-hot `[.., 4]` in channel order (background, NET/NCR, ED, ET).
pub fn one_hot(labels: &Tensor) -> Result<Tensor> {
    let mut values = vec![0.0; labels.len() * NUM_CLASSES];
    for (i, &v) in labels.values().iter().enumerate() {
        let ch = label_channel(v).ok_or_else(|| {
            Error::Data(format!(
                "invalid label value {v} at voxel {:?}",
                unravel(i, labels.dims())
            ))
        })?;
        values[i * NUM_CLASSES + ch] = 1.0;
    }
    let mut dims = labels.dims().to_vec();
    dims.push(NUM_CLASSES);
    Tensor::new(dims, values)
}

/// Inverse of [`one_hot`] for probability maps: label value of the arg-max channel.
pub fn argmax_labels(probs: &Tensor) -> Result<Tensor> {
    let k = probs.last_dim();
    if k != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "expected {NUM_CLASSES} class channels, got {k}"
        )));
    }
    let values = probs
        .values()
        .chunks_exact(k)
        .map(|voxel| {
            let mut best = 0;
            for (c, &p) in voxel.iter().enumerate() {
                if p > voxel[best] {
                    best = c;
                }
            }
            f64::from(LABEL_VALUES[best])
        })
        .collect();
    Tensor::new(probs.dims()[..probs.dims().len() - 1].to_vec(), values)
}

/// Interleave `[D, H, W]` volumes into `[D, H, W, C]`; channel `k` is `volumes[k]`.
pub fn stack_modalities(volumes: &[Tensor]) -> Result<Tensor> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Shape("no modalities to stack".into()))?;
    if let Some(bad) = volumes.iter().find(|v| v.dims() != first.dims()) {
        return Err(Error::Shape(format!(
            "modality dims {:?} differ from {:?}",
            bad.dims(),
            first.dims()
        )));
    }
    let c = volumes.len();
    let mut values = vec![0.0; first.len() * c];
    for (k, vol) in volumes.iter().enumerate() {
        for (i, &v) in vol.values().iter().enumerate() {
            values[i * c + k] = v;
        }
    }
    let mut dims = first.dims().to_vec();
    dims.push(c);
    Tensor::new(dims, values)
}

/// Per-modality z-score over each channel's own foreground.
pub fn preprocess_sample(sample: &VolumeSample, foreground_threshold: f64) -> Result<VolumeSample> {
    let channels = (0..sample.channels())
        .map(|c| zscore_normalize(&sample.modality(c), foreground_threshold).map(|z| z.volume))
        .collect::<Result<Vec<_>>>()?;
    let input = stack_modalities(&channels)?;
    VolumeSample::new(sample.patient_id.clone(), input, sample.labels.clone())
}

/// Split a sample into contiguous slabs of `batch_size` slices. Ids are
/// assigned consecutively from `first_batch_id`.
pub fn partition_batches(
    sample: &VolumeSample,
    batch_size: usize,
    first_batch_id: usize,
) -> Result<Vec<BatchUnit>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let target = one_hot(&sample.labels)?;
    let (depth, h, w, c) = (
        sample.depth(),
        sample.height(),
        sample.width(),
        sample.channels(),
    );
    let in_stride = h * w * c;
    let tgt_stride = h * w * NUM_CLASSES;
    let mut units = Vec::with_capacity(depth.div_ceil(batch_size));
    let mut start = 0;
    while start < depth {
        let end = (start + batch_size).min(depth);
        let d = end - start;
        let input = Tensor::new(
            vec![d, h, w, c],
            sample.input.values()[start * in_stride..end * in_stride].to_vec(),
        )?;
        let tgt = Tensor::new(
            vec![d, h, w, NUM_CLASSES],
            target.values()[start * tgt_stride..end * tgt_stride].to_vec(),
        )?;
        units.push(BatchUnit {
            batch_id: first_batch_id + units.len(),
            patient_id: sample.patient_id.clone(),
            slice_range: start..end,
            input,
            target: tgt,
        });
        start = end;
    }
    Ok(units)
}

/// Partition every sample, numbering batches globally in sample order.
pub fn partition_corpus(samples: &[VolumeSample], batch_size: usize) -> Result<Vec<BatchUnit>> {
    let mut all = Vec::new();
    for sample in samples {
        let units = partition_batches(sample, batch_size, all.len())?;
        all.extend(units);
    }
    Ok(all)
}
