//! Geometric label propagation from the reference cloud onto a new scan.
//!
//! Each scan point collects votes from reference neighbors; a vote's weight
//! is a Gaussian kernel of the distance times the neighbor's confidence, and
//! votes at or below the threshold are discarded. The winning class is
//! assigned only when it is static; dynamic winners leave the point residual.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::accumulation::ReferenceCloud;
use crate::error::{Error, Result};
use crate::geometry::{Frame, Point3, ScanCloud, UNLABELED};

/// Disjoint split of the class set {1..=num_classes} into dynamic and
/// static ids. Dynamic classes are never propagated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPartition {
    num_classes: u32,
    dynamic: BTreeSet<i32>,
}

impl LabelPartition {
    pub fn new(num_classes: u32, dynamic_ids: impl IntoIterator<Item = i32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidParameter(
                "a label partition needs at least one class".into(),
            ));
        }
        let dynamic: BTreeSet<i32> = dynamic_ids.into_iter().collect();
        for &id in &dynamic {
            if id < 1 || id > num_classes as i32 {
                return Err(Error::InvalidParameter(format!(
                    "dynamic id {id} outside 1..={num_classes}"
                )));
            }
        }
        Ok(LabelPartition {
            num_classes,
            dynamic,
        })
    }

    /// All classes static.
    pub fn all_static(num_classes: u32) -> Result<Self> {
        Self::new(num_classes, [])
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn contains(&self, id: i32) -> bool {
        id >= 1 && id <= self.num_classes as i32
    }

    pub fn is_dynamic(&self, id: i32) -> bool {
        self.dynamic.contains(&id)
    }

    pub fn is_static(&self, id: i32) -> bool {
        self.contains(id) && !self.is_dynamic(id)
    }

    pub fn dynamic_ids(&self) -> impl Iterator<Item = i32> + '_ {
        self.dynamic.iter().copied()
    }

    pub fn static_ids(&self) -> impl Iterator<Item = i32> + '_ {
        (1..=self.num_classes as i32).filter(|id| !self.dynamic.contains(id))
    }
}

/// Gaussian vote kernel: exp(−‖p−q‖²/d_p²) · c.
pub fn kernel_weight(p: Point3, q: Point3, confidence: f64, d_p: f64) -> f64 {
    (-p.distance_squared(&q) / (d_p * d_p)).exp() * confidence
}

/// Distance beyond which no vote can exceed `threshold`, even at confidence
/// one: d_p · √(ln(1/threshold)).
pub fn effective_radius(d_p: f64, threshold: f64) -> f64 {
    d_p * (1.0 / threshold).ln().sqrt()
}

/// Propagation parameters. Defaults follow the pipeline defaults: kernel
/// width 0.30 m, vote threshold 0.5, index cell 0.80 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    /// Kernel width d_p, meters.
    pub d_p: f64,
    /// Votes with weight <= threshold are discarded (strict comparison).
    pub vote_threshold: f64,
    /// Cell size of the reference voxel index, meters. Must be at least the
    /// effective radius so the 27-voxel scan stays exhaustive.
    pub index_cell: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            d_p: 0.30,
            vote_threshold: 0.5,
            index_cell: 0.80,
        }
    }
}

impl PropagationParams {
    pub fn new(d_p: f64, vote_threshold: f64, index_cell: f64) -> Result<Self> {
        let params = PropagationParams {
            d_p,
            vote_threshold,
            index_cell,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.d_p.is_finite() || self.d_p <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "d_p must be positive, got {}",
                self.d_p
            )));
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "vote_threshold must lie in (0, 1), got {}",
                self.vote_threshold
            )));
        }
        let radius = self.effective_radius();
        if radius > self.index_cell {
            return Err(Error::InvalidParameter(format!(
                "effective radius {radius:.4} exceeds index cell {}; \
                 shrink d_p or enlarge the cell",
                self.index_cell
            )));
        }
        Ok(())
    }

    pub fn effective_radius(&self) -> f64 {
        effective_radius(self.d_p, self.vote_threshold)
    }
}

/// Per-point outcome of one propagation pass. A label of −1 marks a
/// residual point and always pairs with confidence 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub labels: Vec<i32>,
    pub confidences: Vec<f64>,
}

impl PropagationResult {
    pub fn all_residual(len: usize) -> Self {
        PropagationResult {
            labels: vec![UNLABELED; len],
            confidences: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_residual(&self, i: usize) -> bool {
        self.labels[i] == UNLABELED
    }

    pub fn residual_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == UNLABELED).collect()
    }

    pub fn residual_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_residual(i)).collect()
    }

    pub fn propagated_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }
}

fn vote_point(
    query: Point3,
    reference: &ReferenceCloud,
    partition: &LabelPartition,
    params: &PropagationParams,
    radius: f64,
) -> (i32, f64) {
    let neighbors = reference
        .index()
        .radius_neighbors(query, radius)
        .expect("radius bounded by index cell via params validation");
    let mut bins: BTreeMap<i32, f64> = BTreeMap::new();
    let d_p2 = params.d_p * params.d_p;
    for (idx, dist) in neighbors {
        let point = &reference.points()[idx];
        let weight = (-(dist * dist) / d_p2).exp() * point.confidence;
        if weight > params.vote_threshold {
            *bins.entry(point.label).or_insert(0.0) += weight;
        }
    }
    if bins.is_empty() {
        return (UNLABELED, 0.0);
    }
    // Ascending id order plus strict comparison: ties go to the lowest id.
    let mut best_label = UNLABELED;
    let mut best_mass = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (&label, &mass) in &bins {
        total += mass;
        if mass > best_mass {
            best_mass = mass;
            best_label = label;
        }
    }
    if partition.is_static(best_label) {
        (best_label, (best_mass / total).clamp(0.0, 1.0))
    } else {
        (UNLABELED, 0.0)
    }
}

/// Propagates static labels from the reference cloud onto `scan`.
///
/// The scan must be registered (world frame). Neighbor search runs within
/// the exact effective radius, so no discarded neighbor could ever have
/// passed the vote threshold.
pub fn propagate_labels(
    reference: &ReferenceCloud,
    scan: &ScanCloud,
    partition: &LabelPartition,
    params: &PropagationParams,
) -> Result<PropagationResult> {
    params.validate()?;
    if scan.frame != Frame::World {
        return Err(Error::ContractViolation(
            "propagation expects a world-frame scan".into(),
        ));
    }
    if reference.index().cell_size() < params.effective_radius() {
        return Err(Error::InvalidParameter(format!(
            "reference index cell {} is smaller than the effective radius {:.4}",
            reference.index().cell_size(),
            params.effective_radius()
        )));
    }
    if reference.is_empty() || scan.is_empty() {
        return Ok(PropagationResult::all_residual(scan.len()));
    }
    let radius = params.effective_radius();
    let votes: Vec<(i32, f64)> = scan
        .points
        .par_iter()
        .map(|p| vote_point(p.position, reference, partition, params, radius))
        .collect();
    let (labels, confidences) = votes.into_iter().unzip();
    Ok(PropagationResult {
        labels,
        confidences,
    })
}
