//! Dice, Hausdorff distances and tumor sub-region scoring.
//!
//! Distances are Euclidean over voxel centres with 1 mm isotropic spacing,
//! taken over all mask voxels. Point-to-set distances come from an exact
//! separable squared distance transform, so they are exactly the square
//! roots of integer squared distances.

use std::fmt;

use crate::data::label_channel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// HD95 assigned when a region is present in only one of prediction and truth.
pub const HD95_PENALTY: f64 = 373.12866;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "mask dims {dims:?} do not match {} voxels",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            bits: vec![false; dims.iter().product()],
        }
    }

    pub fn from_points(dims: [usize; 3], points: &[[usize; 3]]) -> Result<Self> {
        let mut mask = Self::empty(dims);
        for &p in points {
            if (0..3).any(|a| p[a] >= dims[a]) {
                return Err(Error::Shape(format!("point {p:?} outside {dims:?}")));
            }
            let i = mask.index(p);
            mask.bits[i] = true;
        }
        Ok(mask)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn index(&self, [z, y, x]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn points(&self) -> Vec<[usize; 3]> {
        let [_, h, w] = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| [i / (h * w), (i / w) % h, i % w])
            .collect()
    }
}

fn ensure_same(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "mask dims differ: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Et,
    Wt,
    Tc,
}

impl Region {
    /// Report order.
    pub const ALL: [Region; 3] = [Region::Et, Region::Wt, Region::Tc];

    pub fn name(self) -> &'static str {
        match self {
            Region::Et => "ET",
            Region::Wt => "WT",
            Region::Tc => "TC",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.name() == s)
    }

    fn contains(self, label: u8) -> bool {
        match self {
            Region::Et => label == 4,
            Region::Tc => label == 1 || label == 4,
            Region::Wt => label == 1 || label == 2 || label == 4,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub et: BinaryMask,
    pub tc: BinaryMask,
    pub wt: BinaryMask,
}

impl RegionMasks {
    pub fn get(&self, region: Region) -> &BinaryMask {
        match region {
            Region::Et => &self.et,
            Region::Tc => &self.tc,
            Region::Wt => &self.wt,
        }
    }
}

/// ET = {4}, TC = {1, 4}, WT = {1, 2, 4}.
pub fn region_masks(labels: &Tensor) -> Result<RegionMasks> {
    let dims: [usize; 3] = labels
        .dims()
        .try_into()
        .map_err(|_| Error::Shape(format!("labels must be [D, H, W], got {:?}", labels.dims())))?;
    let mut values = Vec::with_capacity(labels.len());
    for (i, &v) in labels.values().iter().enumerate() {
        if label_channel(v).is_none() {
            return Err(Error::Data(format!(
                "invalid label value {v} at voxel {:?}",
                crate::data::unravel(i, &dims)
            )));
        }
        values.push(v as u8);
    }
    let build = |r: Region| BinaryMask {
        dims,
        bits: values.iter().map(|&l| r.contains(l)).collect(),
    };
    Ok(RegionMasks {
        et: build(Region::Et),
        tc: build(Region::Tc),
        wt: build(Region::Wt),
    })
}

/// `2·TP / ((TP + FP) + (TP + FN))`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    ensure_same(pred, truth)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = (tp + fp) + (tp + fn_);
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Squared distance from every voxel to the nearest voxel of `mask`
/// (infinite everywhere if the mask is empty).
fn squared_distance_field(mask: &BinaryMask) -> Vec<f64> {
    let [d, h, w] = mask.dims;
    let mut field: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut pass =
        |len: usize, lines: usize, index: &dyn Fn(usize, usize) -> usize, field: &mut [f64]| {
            line.resize(len, 0.0);
            out.resize(len, 0.0);
            for l in 0..lines {
                for q in 0..len {
                    line[q] = field[index(l, q)];
                }
                lower_envelope(&line, &mut out);
                for q in 0..len {
                    field[index(l, q)] = out[q];
                }
            }
        };
    pass(w, d * h, &|l, q| l * w + q, &mut field);
    pass(h, d * w, &|l, q| ((l / w) * h + q) * w + l % w, &mut field);
    pass(d, h * w, &|l, q| q * h * w + l, &mut field);
    field
}

/// One-dimensional squared distance transform of a sampled function.
fn lower_envelope(f: &[f64], out: &mut [f64]) {
    let mut sites: Vec<usize> = Vec::with_capacity(f.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(f.len() + 1);
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let Some(&p) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= *bounds.last().expect("bounds track sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    bounds.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while bounds[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - sites[k] as f64;
        *o = dq * dq + f[sites[k]];
    }
}

/// Distance from each voxel of `from` to the nearest voxel of `to`.
fn point_to_set_distances(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
    let field = squared_distance_field(to);
    from.bits
        .iter()
        .zip(&field)
        .filter(|(&b, _)| b)
        .map(|(_, &d2)| d2.sqrt())
        .collect()
}

fn require_nonempty(x: &BinaryMask, y: &BinaryMask) -> Result<()> {
    ensure_same(x, y)?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::Precondition(
            "Hausdorff distances need two nonempty masks; apply the penalty rule first".into(),
        ));
    }
    Ok(())
}

/// `max over x in X of min over y in Y of |x - y|`.
pub fn directed_hd(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    require_nonempty(x, y)?;
    Ok(point_to_set_distances(x, y).into_iter().fold(0.0, f64::max))
}

/// Symmetric Hausdorff distance.
pub fn hausdorff(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    Ok(directed_hd(x, y)?.max(directed_hd(y, x)?))
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// 95th percentile of the pooled directed point-to-set distances of both masks.
pub fn hd95(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    require_nonempty(pred, truth)?;
    let mut all = point_to_set_distances(pred, truth);
    all.extend(point_to_set_distances(truth, pred));
    all.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&all, 95.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub region: Region,
    pub dice: f64,
    pub hd95: f64,
    pub penalty_applied: bool,
}

/// Scores in [`Region::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub scores: [RegionScore; 3],
}

impl RegionReport {
    pub fn get(&self, region: Region) -> &RegionScore {
        self.scores
            .iter()
            .find(|s| s.region == region)
            .expect("every region is scored")
    }

    pub fn mean_dice(&self) -> f64 {
        self.scores.iter().map(|s| s.dice).sum::<f64>() / 3.0
    }
}

pub fn score_region(region: Region, pred: &BinaryMask, truth: &BinaryMask) -> Result<RegionScore> {
    ensure_same(pred, truth)?;
    let score = match (pred.is_empty(), truth.is_empty()) {
        (true, true) => RegionScore {
            region,
            dice: 1.0,
            hd95: 0.0,
            penalty_applied: true,
        },
        (true, false) | (false, true) => RegionScore {
            region,
            dice: 0.0,
            hd95: HD95_PENALTY,
            penalty_applied: true,
        },
        (false, false) => RegionScore {
            region,
            dice: dice(pred, truth)?,
            hd95: hd95(pred, truth)?,
            penalty_applied: false,
        },
    };
    Ok(score)
}

pub fn evaluate_regions(pred_labels: &Tensor, truth_labels: &Tensor) -> Result<RegionReport> {
    if pred_labels.dims() != truth_labels.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and truth {:?} differ",
            pred_labels.dims(),
            truth_labels.dims()
        )));
    }
    let pred = region_masks(pred_labels)?;
    let truth = region_masks(truth_labels)?;
    let score = |r| score_region(r, pred.get(r), truth.get(r));
    Ok(RegionReport {
        scores: [score(Region::Et)?, score(Region::Wt)?, score(Region::Tc)?],
    })
}

/// Dice per region in [`Region::ALL`] order, without distance computations.
pub fn region_dice(pred_labels: &Tensor, truth_labels: &Tensor) -> Result<[f64; 3]> {
    let pred = region_masks(pred_labels)?;
    let truth = region_masks(truth_labels)?;
    let d = |r| dice(pred.get(r), truth.get(r));
    Ok([d(Region::Et)?, d(Region::Wt)?, d(Region::Tc)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn brute_directed(x: &BinaryMask, y: &BinaryMask) -> f64 {
        let ys = y.points();
        x.points()
            .iter()
            .map(|p| {
                ys.iter()
                    .map(|q| {
                        let d2: usize = (0..3).map(|a| p[a].abs_diff(q[a]).pow(2)).sum();
                        (d2 as f64).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn region_mask_semantics() {
        let labels = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        let m = region_masks(&labels).unwrap();
        assert!(m.et.is_empty());
        assert_eq!(m.tc.bits(), &[true, false, false, true]);
        assert_eq!(m.wt.bits(), &[true, true, false, true]);
        let all4 = Tensor::filled(vec![2, 2, 2], 4.0).unwrap();
        let m = region_masks(&all4).unwrap();
        assert!(m.et.count() == 8 && m.tc.count() == 8 && m.wt.count() == 8);
        let bg = Tensor::zeros(vec![2, 2, 2]).unwrap();
        let m = region_masks(&bg).unwrap();
        assert!(m.et.is_empty() && m.tc.is_empty() && m.wt.is_empty());
        let bad = Tensor::filled(vec![1, 1, 1], 5.0).unwrap();
        assert!(matches!(region_masks(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn dice_examples() {
        let a = BinaryMask::from_points([1, 1, 4], &[[0, 0, 0], [0, 0, 1]]).unwrap();
        let b = BinaryMask::from_points([1, 1, 4], &[[0, 0, 2], [0, 0, 3]]).unwrap();
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // TP = 2, FP = 1, FN = 1.
        let p = BinaryMask::from_points([1, 1, 4], &[[0, 0, 0], [0, 0, 1], [0, 0, 2]]).unwrap();
        let t = BinaryMask::from_points([1, 1, 4], &[[0, 0, 0], [0, 0, 1], [0, 0, 3]]).unwrap();
        assert!((dice(&p, &t).unwrap() - 0.666667).abs() < 1e-6);
        let e = BinaryMask::empty([1, 1, 4]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&e, &BinaryMask::empty([1, 2, 2])).is_err());
    }

    #[test]
    fn directed_hd_examples() {
        let dims = [1, 4, 10];
        let x = BinaryMask::from_points(dims, &[[0, 0, 0]]).unwrap();
        let y = BinaryMask::from_points(dims, &[[0, 3, 4]]).unwrap();
        assert_eq!(directed_hd(&x, &y).unwrap(), 5.0);
        let big = BinaryMask::from_points(dims, &[[0, 0, 0], [0, 0, 9]]).unwrap();
        assert_eq!(directed_hd(&x, &big).unwrap(), 0.0);
        assert_eq!(directed_hd(&big, &x).unwrap(), 9.0);
        assert_eq!(hausdorff(&x, &big).unwrap(), 9.0);
        let empty = BinaryMask::empty(dims);
        assert!(matches!(
            directed_hd(&x, &empty),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn hd95_examples() {
        let dims = [1, 4, 5];
        let x = BinaryMask::from_points(dims, &[[0, 0, 0]]).unwrap();
        let y = BinaryMask::from_points(dims, &[[0, 3, 4]]).unwrap();
        assert_eq!(hd95(&x, &y).unwrap(), 5.0);
        assert_eq!(hd95(&y, &y).unwrap(), 0.0);
        assert!(hd95(&x, &BinaryMask::empty(dims)).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile_sorted(&[5.0, 5.0], 95.0), 5.0);
        assert!((percentile_sorted(&[0.0, 10.0], 95.0) - 9.5).abs() < 1e-12);
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn penalty_rules() {
        let truth = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        let mut pred = truth.clone();
        pred.values_mut()[0] = 4.0;
        let r = evaluate_regions(&pred, &truth).unwrap();
        let et = r.get(Region::Et);
        assert_eq!(
            (et.dice, et.hd95, et.penalty_applied),
            (0.0, HD95_PENALTY, true)
        );
        let r = evaluate_regions(&truth, &truth).unwrap();
        let et = r.get(Region::Et);
        assert_eq!((et.dice, et.hd95, et.penalty_applied), (1.0, 0.0, true));
        for s in &r.scores {
            assert_eq!((s.dice, s.hd95), (1.0, 0.0));
        }
        let missed = Tensor::zeros(vec![1, 2, 2]).unwrap();
        let r = evaluate_regions(&missed, &truth).unwrap();
        let wt = r.get(Region::Wt);
        assert_eq!(
            (wt.dice, wt.hd95, wt.penalty_applied),
            (0.0, HD95_PENALTY, true)
        );
    }

    #[test]
    fn distance_field_matches_brute_force_in_3d() {
        let mut rng = Rng::new(17);
        for _ in 0..30 {
            let dims = [1 + rng.below(4), 1 + rng.below(7), 1 + rng.below(7)];
            let n: usize = dims.iter().product();
            let density = rng.uniform_range(0.05, 0.5);
            let x =
                BinaryMask::new(dims, (0..n).map(|_| rng.uniform() < density).collect()).unwrap();
            let y =
                BinaryMask::new(dims, (0..n).map(|_| rng.uniform() < density).collect()).unwrap();
            if x.is_empty() || y.is_empty() {
                continue;
            }
            assert_eq!(directed_hd(&x, &y).unwrap(), brute_directed(&x, &y));
        }
    }

    fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..3, 1usize..6, 1usize..6).prop_flat_map(|(d, h, w)| {
            let n = d * h * w;
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(a, b)| {
                    (
                        BinaryMask::new([d, h, w], a).unwrap(),
                        BinaryMask::new([d, h, w], b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded((a, b) in mask_pair()) {
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn hausdorff_properties((a, b) in mask_pair()) {
            prop_assume!(!a.is_empty() && !b.is_empty());
            let h = hausdorff(&a, &b).unwrap();
            prop_assert_eq!(h, hausdorff(&b, &a).unwrap());
            prop_assert!(hd95(&a, &b).unwrap() <= h + 1e-12);
        }
    }
}
