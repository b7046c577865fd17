//! Cross-dataset evaluation: label-set remapping, confusion matrices,
//! per-class IoU / mIoU, and beam subsampling for resolution-shift studies.
//!
//! Nine intersection label sets ship as embedded JSON config files; see
//! `LabelSetMapping::builtin_names`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanCloud;

/// Remapped id meaning "not scored".
pub const IGNORE: i32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetClass {
    pub id: i32,
    pub name: String,
}

/// A label-set mapping: how model-output ids and dataset ground-truth ids
/// translate into one shared target class list. Ids absent from both the
/// map and the ignore list are undeclared and rejected at remap time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSetMapping {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// True when the source-id table is a best-effort reconstruction rather
    /// than an officially published merge table.
    #[serde(default)]
    pub provisional: bool,
    pub target_classes: Vec<TargetClass>,
    pub prediction_map: Vec<(i32, i32)>,
    #[serde(default)]
    pub prediction_ignore: Vec<i32>,
    pub ground_truth_map: Vec<(i32, i32)>,
    #[serde(default)]
    pub ground_truth_ignore: Vec<i32>,
}

/// One side of a mapping, compiled for lookup.
#[derive(Debug, Clone)]
struct SideMap {
    map: BTreeMap<i32, i32>,
    ignore: BTreeSet<i32>,
}

impl SideMap {
    fn remap(&self, label: i32, side: &str) -> Result<i32> {
        if let Some(&target) = self.map.get(&label) {
            return Ok(target);
        }
        if self.ignore.contains(&label) {
            return Ok(IGNORE);
        }
        Err(Error::InvalidParameter(format!(
            "{side} id {label} is not declared in the mapping"
        )))
    }
}

impl LabelSetMapping {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mapping: LabelSetMapping = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("label-set mapping: {e}")))?;
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Identity mapping over classes 1..=k, for self-evaluation.
    pub fn identity(k: u32, name: &str) -> Self {
        let target_classes = (1..=k as i32)
            .map(|id| TargetClass {
                id,
                name: format!("class-{id}"),
            })
            .collect();
        let map: Vec<(i32, i32)> = (1..=k as i32).map(|id| (id, id)).collect();
        LabelSetMapping {
            name: name.to_string(),
            description: String::new(),
            provisional: false,
            target_classes,
            prediction_map: map.clone(),
            prediction_ignore: vec![0],
            ground_truth_map: map,
            ground_truth_ignore: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_classes.is_empty() {
            return Err(Error::Format(format!(
                "label set {}: no target classes",
                self.name
            )));
        }
        let mut ids = BTreeSet::new();
        for class in &self.target_classes {
            if class.id < 1 {
                return Err(Error::Format(format!(
                    "label set {}: target id {} must be >= 1 (0 is reserved for ignore)",
                    self.name, class.id
                )));
            }
            if !ids.insert(class.id) {
                return Err(Error::Format(format!(
                    "label set {}: duplicate target id {}",
                    self.name, class.id
                )));
            }
        }
        for (side, map, ignore) in [
            ("prediction", &self.prediction_map, &self.prediction_ignore),
            ("ground-truth", &self.ground_truth_map, &self.ground_truth_ignore),
        ] {
            if map.is_empty() {
                return Err(Error::Format(format!(
                    "label set {}: empty {side} map",
                    self.name
                )));
            }
            let mut seen = BTreeSet::new();
            for &(source, target) in map {
                if !seen.insert(source) {
                    return Err(Error::Format(format!(
                        "label set {}: {side} id {source} mapped twice",
                        self.name
                    )));
                }
                if !ids.contains(&target) {
                    return Err(Error::Format(format!(
                        "label set {}: {side} id {source} maps to undeclared target {target}",
                        self.name
                    )));
                }
            }
            for &source in ignore {
                if seen.contains(&source) {
                    return Err(Error::Format(format!(
                        "label set {}: {side} id {source} both mapped and ignored",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn side(&self, map: &[(i32, i32)], ignore: &[i32]) -> SideMap {
        SideMap {
            map: map.iter().copied().collect(),
            ignore: ignore.iter().copied().collect(),
        }
    }

    pub fn remap_prediction(&self, label: i32) -> Result<i32> {
        self.side(&self.prediction_map, &self.prediction_ignore)
            .remap(label, "prediction")
    }

    pub fn remap_ground_truth(&self, label: i32) -> Result<i32> {
        self.side(&self.ground_truth_map, &self.ground_truth_ignore)
            .remap(label, "ground-truth")
    }

    pub fn remap_predictions(&self, labels: &[i32]) -> Result<Vec<i32>> {
        let side = self.side(&self.prediction_map, &self.prediction_ignore);
        labels.iter().map(|&l| side.remap(l, "prediction")).collect()
    }

    pub fn remap_ground_truths(&self, labels: &[i32]) -> Result<Vec<i32>> {
        let side = self.side(&self.ground_truth_map, &self.ground_truth_ignore);
        labels.iter().map(|&l| side.remap(l, "ground-truth")).collect()
    }

    /// Largest target id; remapped labels lie in 0..=this.
    pub fn num_target_classes(&self) -> u32 {
        self.target_classes.iter().map(|c| c.id).max().unwrap_or(0) as u32
    }

    pub fn class_name(&self, id: i32) -> Option<&str> {
        self.target_classes
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    /// The nine built-in intersection label sets.
    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "sk-sp", "sk-ps", "sk-ns", "sk-w", "sk-pl3d",
            "ns-sp", "ns-ps", "ns-w", "ns-pl3d",
        ]
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "sk-sp" => include_str!("../data/labelsets/sk-sp.json"),
            "sk-ps" => include_str!("../data/labelsets/sk-ps.json"),
            "sk-ns" => include_str!("../data/labelsets/sk-ns.json"),
            "sk-w" => include_str!("../data/labelsets/sk-w.json"),
            "sk-pl3d" => include_str!("../data/labelsets/sk-pl3d.json"),
            "ns-sp" => include_str!("../data/labelsets/ns-sp.json"),
            "ns-ps" => include_str!("../data/labelsets/ns-ps.json"),
            "ns-w" => include_str!("../data/labelsets/ns-w.json"),
            "ns-pl3d" => include_str!("../data/labelsets/ns-pl3d.json"),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown built-in label set {other:?}; available: {:?}",
                    Self::builtin_names()
                )))
            }
        };
        Self::from_json_str(text)
    }
}

/// Row-major confusion counts over remapped labels. Row = ground truth,
/// column = prediction; index 0 is the ignore gutter: points whose ground
/// truth is ignored are skipped entirely, predictions remapped to ignore
/// land in column 0 and count against their ground-truth class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: u32) -> Self {
        let k = num_classes as usize + 1;
        ConfusionMatrix {
            num_classes: num_classes as usize,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes as u32
    }

    fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn count(&self, gt: i32, pred: i32) -> u64 {
        self.at(gt as usize, pred as usize)
    }

    pub fn record(&mut self, gt: i32, pred: i32) -> Result<()> {
        let k = self.num_classes as i32;
        if !(0..=k).contains(&gt) || !(0..=k).contains(&pred) {
            return Err(Error::InvalidParameter(format!(
                "remapped labels must lie in 0..={k}, got gt {gt}, pred {pred}"
            )));
        }
        if gt == IGNORE {
            return Ok(());
        }
        self.counts[gt as usize * (self.num_classes + 1) + pred as usize] += 1;
        Ok(())
    }

    /// Adds a batch of remapped ground-truth/prediction pairs.
    pub fn accumulate(&mut self, gt: &[i32], pred: &[i32]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::InvalidParameter(format!(
                "length mismatch: {} ground-truth labels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.record(g, p)?;
        }
        Ok(())
    }

    /// Per-scan matrices merge by summation.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::InvalidParameter(
                "cannot merge confusion matrices of different sizes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Scored points: everything with a non-ignored ground truth.
    pub fn total(&self) -> u64 {
        (1..=self.num_classes)
            .map(|gt| (0..=self.num_classes).map(|p| self.at(gt, p)).sum::<u64>())
            .sum()
    }

    /// IoU_k = TP/(TP+FP+FN). Classes absent from both sides are None and
    /// excluded from the mean.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (1..=self.num_classes)
            .map(|k| {
                let tp = self.at(k, k);
                let row: u64 = (0..=self.num_classes).map(|p| self.at(k, p)).sum();
                let col: u64 = (1..=self.num_classes).map(|g| self.at(g, k)).sum();
                // row = TP+FN (ignored predictions fall in column 0 and count
                // as FN), col = TP+FP, so TP+FP+FN = row + col - TP.
                let denominator = row + col - tp;
                if denominator == 0 {
                    None
                } else {
                    Some(tp as f64 / denominator as f64)
                }
            })
            .collect()
    }

    pub fn miou(&self) -> Option<f64> {
        let present: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}

/// Text report with the mIoU^{evaluation-set}_{label-set} naming.
pub fn evaluation_report(
    evaluation_set: &str,
    mapping: &LabelSetMapping,
    matrix: &ConfusionMatrix,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "label set: {}", mapping.name);
    let _ = writeln!(out, "evaluation set: {evaluation_set}");
    let _ = writeln!(out, "scored points: {}", matrix.total());
    let _ = writeln!(out, "per-class IoU:");
    for (i, iou) in matrix.iou_per_class().iter().enumerate() {
        let id = i as i32 + 1;
        let name = mapping.class_name(id).unwrap_or("?");
        match iou {
            Some(v) => {
                let _ = writeln!(out, "  {name:<20} {v:.4}");
            }
            None => {
                let _ = writeln!(out, "  {name:<20} absent");
            }
        }
    }
    match matrix.miou() {
        Some(miou) => {
            let _ = writeln!(
                out,
                "mIoU^{{{evaluation_set}}}_{{{}}} = {miou:.4}",
                mapping.name
            );
        }
        None => {
            let _ = writeln!(
                out,
                "mIoU^{{{evaluation_set}}}_{{{}}} = n/a (no scored classes)",
                mapping.name
            );
        }
    }
    out
}

/// Which inferred beams survive a beam subsample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeepPattern {
    Even,
    Odd,
    Beams(BTreeSet<u32>),
}

impl KeepPattern {
    pub fn keeps(&self, beam: u32) -> bool {
        match self {
            KeepPattern::Even => beam.is_multiple_of(2),
            KeepPattern::Odd => !beam.is_multiple_of(2),
            KeepPattern::Beams(set) => set.contains(&beam),
        }
    }

    /// Parses "even", "odd", or a comma-separated beam list like "0,4,8".
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "even" => Ok(KeepPattern::Even),
            "odd" => Ok(KeepPattern::Odd),
            list => {
                let beams: BTreeSet<u32> = list
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<u32>().map_err(|_| {
                            Error::InvalidParameter(format!(
                                "keep pattern: expected even, odd, or a beam list, got {text:?}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if beams.is_empty() {
                    return Err(Error::InvalidParameter("empty beam list".into()));
                }
                Ok(KeepPattern::Beams(beams))
            }
        }
    }
}

/// How per-point beam ids were inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamInference {
    /// Elevation values formed at most `num_beams` distinct rings.
    DistinctRings,
    /// Too many distinct elevations: equal-count quantile binning was used
    /// as a best effort and results may split physical beams.
    QuantileFallback,
}

#[derive(Debug, Clone)]
pub struct BeamSubsampleResult {
    pub cloud: ScanCloud,
    /// Indices into the input cloud of the retained points.
    pub kept_indices: Vec<usize>,
    /// Per-input-point inferred beam id.
    pub beams: Vec<u32>,
    pub inference: BeamInference,
}

const RING_TOLERANCE: f64 = 1e-7;

/// Groups per-point elevation angles into beams. Scans whose elevations
/// collapse into at most `num_beams` distinct rings get exact ring indices
/// (ascending elevation); otherwise points are split into `num_beams`
/// equal-count bins by elevation rank.
pub fn infer_beams(scan: &ScanCloud, num_beams: u32) -> Result<(Vec<u32>, BeamInference)> {
    if num_beams == 0 {
        return Err(Error::InvalidParameter("num_beams must be >= 1".into()));
    }
    let elevations: Vec<f64> = scan
        .points
        .iter()
        .map(|p| {
            let horizontal = (p.position.x * p.position.x + p.position.y * p.position.y).sqrt();
            p.position.z.atan2(horizontal)
        })
        .collect();
    let mut order: Vec<usize> = (0..elevations.len()).collect();
    order.sort_by(|&a, &b| elevations[a].partial_cmp(&elevations[b]).unwrap());

    // Try exact ring grouping first.
    let mut ring_of = vec![0u32; elevations.len()];
    let mut rings = 0u32;
    let mut previous = f64::NEG_INFINITY;
    let mut collapsed = true;
    for &i in &order {
        if elevations[i] - previous > RING_TOLERANCE {
            rings += 1;
            if rings > num_beams {
                collapsed = false;
                break;
            }
        }
        previous = elevations[i];
        ring_of[i] = rings - 1;
    }
    if collapsed {
        return Ok((ring_of, BeamInference::DistinctRings));
    }

    // Quantile fallback: equal-count bins over the elevation rank.
    let n = elevations.len();
    let mut beams = vec![0u32; n];
    for (rank, &i) in order.iter().enumerate() {
        beams[i] = ((rank as u64 * num_beams as u64) / n as u64) as u32;
    }
    Ok((beams, BeamInference::QuantileFallback))
}

/// Keeps the points whose inferred beam matches `keep`, preserving order.
pub fn beam_subsample(
    scan: &ScanCloud,
    keep: &KeepPattern,
    num_beams: u32,
) -> Result<BeamSubsampleResult> {
    let (beams, inference) = infer_beams(scan, num_beams)?;
    let kept_indices: Vec<usize> = (0..scan.len())
        .filter(|&i| keep.keeps(beams[i]))
        .collect();
    let points = kept_indices
        .iter()
        .map(|&i| scan.points[i].clone())
        .collect();
    Ok(BeamSubsampleResult {
        cloud: ScanCloud::new(points, scan.frame, scan.layout),
        kept_indices,
        beams,
        inference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FeatureLayout, Frame, LabeledPoint, Point3};
    use proptest::prelude::*;

    #[test]
    fn identity_mapping_changes_nothing() {
        let mapping = LabelSetMapping::identity(5, "identity-5");
        mapping.validate().unwrap();
        let labels = vec![1, 5, 3];
        assert_eq!(mapping.remap_predictions(&labels).unwrap(), labels);
        assert_eq!(mapping.remap_ground_truths(&labels).unwrap(), labels);
    }

    fn merge_mapping() -> LabelSetMapping {
        LabelSetMapping {
            name: "toy".into(),
            description: String::new(),
            provisional: false,
            target_classes: vec![
                TargetClass { id: 1, name: "2-wheeled".into() },
                TargetClass { id: 2, name: "other".into() },
            ],
            prediction_map: vec![(2, 1), (3, 1), (9, 2)],
            prediction_ignore: vec![7],
            ground_truth_map: vec![(21, 1), (26, 1), (40, 2)],
            ground_truth_ignore: vec![0],
        }
    }

    #[test]
    fn two_sources_merge_into_one_target() {
        let mapping = merge_mapping();
        assert_eq!(mapping.remap_prediction(2).unwrap(), 1);
        assert_eq!(mapping.remap_prediction(3).unwrap(), 1);
        assert_eq!(mapping.remap_ground_truth(21).unwrap(), 1);
        assert_eq!(mapping.remap_ground_truth(26).unwrap(), 1);
    }

    #[test]
    fn ignored_and_unknown_ids() {
        let mapping = merge_mapping();
        assert_eq!(mapping.remap_prediction(7).unwrap(), IGNORE);
        assert_eq!(mapping.remap_ground_truth(0).unwrap(), IGNORE);
        assert!(mapping.remap_prediction(99).is_err());
        assert!(mapping.remap_ground_truth(99).is_err());
    }

    #[test]
    fn overlapping_map_and_ignore_is_invalid() {
        let mut mapping = merge_mapping();
        mapping.prediction_ignore.push(2);
        assert!(mapping.validate().is_err());
    }

    #[test]
    fn hand_computed_confusion_example() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap();
        let iou = cm.iou_per_class();
        assert!((iou[0].unwrap() - 0.5).abs() < 1e-9);
        assert!((iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((cm.miou().unwrap() - 7.0 / 12.0).abs() < 1e-9);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[1, 2, 3, 3], &[1, 2, 3, 3]).unwrap();
        assert_eq!(cm.miou(), Some(1.0));
        for iou in cm.iou_per_class().into_iter().flatten() {
            assert_eq!(iou, 1.0);
        }
    }

    #[test]
    fn false_positives_on_absent_class_count() {
        // Every prediction says class 2, but class 2 never appears in gt:
        // IoU_2 = 0 and the class stays in the mean.
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[1, 1], &[2, 2]).unwrap();
        let iou = cm.iou_per_class();
        assert_eq!(iou[0], Some(0.0));
        assert_eq!(iou[1], Some(0.0));
        assert_eq!(cm.miou(), Some(0.0));
    }

    #[test]
    fn ignored_ground_truth_is_not_scored() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1], &[2, 1]).unwrap();
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.miou(), Some(1.0));
    }

    #[test]
    fn ignored_prediction_counts_against_its_class() {
        let mut cm = ConfusionMatrix::new(1);
        cm.accumulate(&[1, 1], &[1, 0]).unwrap();
        // One TP, one FN through the ignore gutter.
        assert_eq!(cm.iou_per_class()[0], Some(0.5));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn merge_equals_joint_accumulation() {
        let gt = vec![1, 2, 1, 2, 2, 1];
        let pred = vec![1, 2, 2, 2, 1, 1];
        let mut joint = ConfusionMatrix::new(2);
        joint.accumulate(&gt, &pred).unwrap();
        let mut a = ConfusionMatrix::new(2);
        a.accumulate(&gt[..3], &pred[..3]).unwrap();
        let mut b = ConfusionMatrix::new(2);
        b.accumulate(&gt[3..], &pred[3..]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, joint);
    }

    #[test]
    fn all_nine_builtin_label_sets_load_and_validate() {
        for name in LabelSetMapping::builtin_names() {
            let mapping = LabelSetMapping::builtin(name).unwrap();
            mapping.validate().unwrap();
            assert!(!mapping.target_classes.is_empty(), "{name}");
        }
        assert_eq!(LabelSetMapping::builtin_names().len(), 9);
        assert!(LabelSetMapping::builtin("nope").is_err());
    }

    fn ring_scan(num_rings: u32, per_ring: u32) -> ScanCloud {
        let mut points = Vec::new();
        let mut idx = 0;
        for ring in 0..num_rings {
            // Elevation from -25 deg to +5 deg, KITTI-ish.
            let elevation = -25.0f64.to_radians()
                + ring as f64 * (30.0f64.to_radians() / num_rings as f64);
            for a in 0..per_ring {
                let azimuth = a as f64 * std::f64::consts::TAU / per_ring as f64;
                let r = 10.0;
                let (x, y) = (r * azimuth.cos(), r * azimuth.sin());
                let z = (x * x + y * y).sqrt() * elevation.tan();
                points.push(LabeledPoint::unlabeled(
                    Point3::new(x, y, z),
                    vec![1.0],
                    0,
                    idx,
                ));
                idx += 1;
            }
        }
        ScanCloud::new(points, Frame::Sensor, FeatureLayout::OCCUPANCY)
    }

    #[test]
    fn keep_even_halves_64_rings() {
        let scan = ring_scan(64, 16);
        let out = beam_subsample(&scan, &KeepPattern::Even, 64).unwrap();
        assert_eq!(out.inference, BeamInference::DistinctRings);
        let distinct: BTreeSet<u32> = out.kept_indices.iter().map(|&i| out.beams[i]).collect();
        assert_eq!(distinct.len(), 32);
        assert_eq!(out.cloud.len(), scan.len() / 2);
    }

    #[test]
    fn keep_even_twice_is_mod_four() {
        let scan = ring_scan(64, 8);
        let once = beam_subsample(&scan, &KeepPattern::Even, 64).unwrap();
        let twice = beam_subsample(&once.cloud, &KeepPattern::Even, 64).unwrap();
        let (beams, _) = infer_beams(&scan, 64).unwrap();
        let mod_four: Vec<usize> = (0..scan.len()).filter(|&i| beams[i] % 4 == 0).collect();
        // Map the twice-subsampled points back to original indices.
        let back: Vec<usize> = twice
            .kept_indices
            .iter()
            .map(|&i| once.kept_indices[i])
            .collect();
        assert_eq!(back, mod_four);
    }

    #[test]
    fn order_is_preserved() {
        let scan = ring_scan(8, 4);
        let out = beam_subsample(&scan, &KeepPattern::Even, 8).unwrap();
        let mut sorted = out.kept_indices.clone();
        sorted.sort_unstable();
        assert_eq!(out.kept_indices, sorted);
    }

    #[test]
    fn noisy_elevations_fall_back_to_quantiles() {
        // 4000 distinct elevations with 64 requested beams.
        let mut points = Vec::new();
        for i in 0..4000u32 {
            let elevation = -0.4 + 0.0002 * i as f64;
            let x = 10.0;
            let z = x * elevation.tan();
            points.push(LabeledPoint::unlabeled(
                Point3::new(x, i as f64 * 1e-4, z),
                vec![1.0],
                0,
                i,
            ));
        }
        let scan = ScanCloud::new(points, Frame::Sensor, FeatureLayout::OCCUPANCY);
        let (beams, inference) = infer_beams(&scan, 64).unwrap();
        assert_eq!(inference, BeamInference::QuantileFallback);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for b in beams {
            *counts.entry(b).or_default() += 1;
        }
        assert_eq!(counts.len(), 64);
        // Equal-count bins: 4000/64 = 62.5, so 62 or 63 per bin.
        for (_, c) in counts {
            assert!((62..=63).contains(&c));
        }
    }

    #[test]
    fn keep_pattern_parsing() {
        assert_eq!(KeepPattern::parse("even").unwrap(), KeepPattern::Even);
        assert_eq!(KeepPattern::parse("odd").unwrap(), KeepPattern::Odd);
        assert_eq!(
            KeepPattern::parse("0,4,8").unwrap(),
            KeepPattern::Beams([0, 4, 8].into_iter().collect())
        );
        assert!(KeepPattern::parse("evenish").is_err());
    }

    proptest! {
        #[test]
        fn miou_is_permutation_invariant(
            pairs in proptest::collection::vec((1i32..5, 1i32..5), 1..200),
        ) {
            let gt: Vec<i32> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<i32> = pairs.iter().map(|p| p.1).collect();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&gt, &pred).unwrap();

            // Permute class ids consistently: 1<->4, 2<->3.
            let perm = |l: i32| match l {
                1 => 4,
                4 => 1,
                2 => 3,
                3 => 2,
                other => other,
            };
            let gt_p: Vec<i32> = gt.iter().map(|&l| perm(l)).collect();
            let pred_p: Vec<i32> = pred.iter().map(|&l| perm(l)).collect();
            let mut cm_p = ConfusionMatrix::new(4);
            cm_p.accumulate(&gt_p, &pred_p).unwrap();

            let a = cm.miou().unwrap();
            let b = cm_p.miou().unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert_eq!(cm.total(), cm_p.total());
        }

        #[test]
        fn iou_stays_in_unit_interval(
            pairs in proptest::collection::vec((0i32..5, 0i32..5), 0..200),
        ) {
            let gt: Vec<i32> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<i32> = pairs.iter().map(|p| p.1).collect();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&gt, &pred).unwrap();
            for iou in cm.iou_per_class().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&iou));
            }
        }
    }
}
