//! The per-scan temporal loop (transform, propagate, cluster, densify,
//! segment, fuse, accumulate) plus prediction fusion, per-stage timing,
//! and training-cluster export.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accumulation::{ReferenceCloud, ReferenceCloudConfig};
use crate::backend::{
    write_cluster_records, ClusterBatch, ClusterPrediction, ClusterRecord, SegmentationBackend,
};
use crate::clustering::{extract_residual_clusters, DEFAULT_CLUSTER_COUNT, DEFAULT_MAX_ITERS};
use crate::densification::{densify_cluster, Cluster, DensificationParams};
use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, LabeledPoint, RigidPose, ScanCloud, UNLABELED};
use crate::mos::{attach_timestamp_feature, MosConfig};
use crate::propagation::{propagate_labels, LabelPartition, PropagationParams, PropagationResult};

/// Confidence floor applied when a backend reports exactly zero, so fused
/// scans keep the confidence-in-(0,1] contract.
const CONFIDENCE_FLOOR: f64 = 1e-6;

/// Full pipeline configuration. Defaults mirror the method defaults:
/// d_p = 0.30 m, K_c = 20, N_s = 20, 5 cm subsample, 75 m range, 2 m
/// densification voxels.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub partition: LabelPartition,
    pub propagation: PropagationParams,
    pub reference: ReferenceCloudConfig,
    pub cluster_count: usize,
    pub kmeans_max_iters: usize,
    pub densification: DensificationParams,
    pub seed: u64,
    pub mos: Option<MosConfig>,
}

impl PipelineConfig {
    pub fn new(partition: LabelPartition) -> Self {
        PipelineConfig {
            partition,
            propagation: PropagationParams::default(),
            reference: ReferenceCloudConfig::default(),
            cluster_count: DEFAULT_CLUSTER_COUNT,
            kmeans_max_iters: DEFAULT_MAX_ITERS,
            densification: DensificationParams::default(),
            seed: 0,
            mos: None,
        }
    }

    /// Switches the pipeline into MOS mode: the cluster count drops to
    /// `mos.n_c`, densification uses the MOS voxel size, and the timestamp
    /// channel is appended before segmentation.
    pub fn with_mos(mut self, mos: MosConfig) -> Self {
        self.densification = DensificationParams {
            voxel_size: mos.densify_voxel_size,
        };
        self.mos = Some(mos);
        self
    }

    pub fn effective_cluster_count(&self) -> usize {
        match &self.mos {
            Some(mos) => mos.n_c,
            None => self.cluster_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        self.reference.validate()?;
        if let Some(mos) = &self.mos {
            mos.validate()?;
        }
        if self.effective_cluster_count() == 0 {
            return Err(Error::InvalidParameter("cluster count must be >= 1".into()));
        }
        if self.propagation.index_cell != self.reference.index_cell {
            return Err(Error::InvalidParameter(format!(
                "propagation index cell {} disagrees with reference index cell {}",
                self.propagation.index_cell, self.reference.index_cell
            )));
        }
        Ok(())
    }
}

/// Where a point's final label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Propagated,
    Backend,
}

/// Final labels for one scan, in input point order.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub labels: Vec<i32>,
    pub confidences: Vec<f64>,
    pub sources: Vec<LabelSource>,
    pub propagated: usize,
    pub residual: usize,
    pub clusters: usize,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn propagated_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.propagated as f64 / self.labels.len() as f64
        }
    }
}

pub const STAGE_NAMES: [&str; 7] = [
    "transform",
    "propagate",
    "cluster",
    "densify",
    "segment",
    "fuse",
    "accumulate",
];

/// Wall-clock seconds per stage, accumulated over a run. Dataset file I/O
/// is outside the measured loop.
#[derive(Debug, Clone, Default)]
pub struct TimingReport {
    pub stage_seconds: [f64; 7],
    pub scans: usize,
}

impl TimingReport {
    pub fn total_seconds(&self) -> f64 {
        self.stage_seconds.iter().sum()
    }

    /// Scans per second over all measured stages.
    pub fn hz(&self) -> f64 {
        let total = self.total_seconds();
        if total > 0.0 {
            self.scans as f64 / total
        } else {
            0.0
        }
    }

    pub fn stage(&self, name: &str) -> Option<f64> {
        STAGE_NAMES
            .iter()
            .position(|&s| s == name)
            .map(|i| self.stage_seconds[i])
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>12} {:>10}\n", "stage", "seconds", "Hz"));
        for (name, &seconds) in STAGE_NAMES.iter().zip(&self.stage_seconds) {
            let hz = if seconds > 0.0 {
                self.scans as f64 / seconds
            } else {
                f64::INFINITY
            };
            out.push_str(&format!("{name:<12} {seconds:>12.6} {hz:>10.2}\n"));
        }
        out.push_str(&format!(
            "{:<12} {:>12.6} {:>10.2}\n",
            "total",
            self.total_seconds(),
            self.hz()
        ));
        out
    }
}

/// Result of processing one sequence: per-scan labels plus the timing
/// report.
#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub scans: Vec<ScanResult>,
    pub timing: TimingReport,
}

/// Fuses backend predictions with propagated labels. Backend predictions
/// win wherever both exist; propagated-only points keep their propagated
/// labels. Every residual point must be covered by exactly one cluster's
/// seed predictions.
pub fn fuse(
    propagation: &PropagationResult,
    clusters: &[Cluster],
    predictions: &ClusterPrediction,
    scan: &ScanCloud,
) -> Result<FusionOutcome> {
    if propagation.len() != scan.len() {
        return Err(Error::ContractViolation(format!(
            "propagation covers {} points, scan has {}",
            propagation.len(),
            scan.len()
        )));
    }
    if predictions.clusters.len() != clusters.len() {
        return Err(Error::ContractViolation(format!(
            "{} prediction groups for {} clusters",
            predictions.clusters.len(),
            clusters.len()
        )));
    }
    let current_scan = scan.points.first().map(|p| p.scan_index);
    let mut labels = propagation.labels.clone();
    let mut confidences = propagation.confidences.clone();
    let mut sources = vec![LabelSource::Propagated; scan.len()];
    let mut seed_covered = vec![false; scan.len()];
    // Best context re-prediction per current-scan point: higher confidence
    // wins, ties break to the lowest class id.
    let mut context_best: Vec<Option<(i32, f64)>> = vec![None; scan.len()];

    for (cluster_id, (cluster, preds)) in clusters.iter().zip(&predictions.clusters).enumerate() {
        if preds.len() != cluster.point_count() {
            return Err(Error::ContractViolation(format!(
                "cluster {cluster_id}: {} predictions for {} points",
                preds.len(),
                cluster.point_count()
            )));
        }
        for (k, &scan_idx) in cluster.seed_indices.iter().enumerate() {
            if scan_idx >= scan.len() {
                return Err(Error::ContractViolation(format!(
                    "cluster {cluster_id} seed index {scan_idx} outside the scan"
                )));
            }
            if seed_covered[scan_idx] {
                return Err(Error::ContractViolation(format!(
                    "scan point {scan_idx} appears in more than one cluster seed set"
                )));
            }
            let (class, confidence) = preds[k];
            if class < 1 {
                return Err(Error::Backend {
                    message: format!("cluster {cluster_id} predicted class {class}"),
                    cluster_ids: vec![cluster_id],
                });
            }
            seed_covered[scan_idx] = true;
            labels[scan_idx] = class;
            confidences[scan_idx] = confidence.clamp(CONFIDENCE_FLOOR, 1.0);
            sources[scan_idx] = LabelSource::Backend;
        }
        let seeds = cluster.seed_points.len();
        for (m, ctx) in cluster.context_points.iter().enumerate() {
            if Some(ctx.scan_index) != current_scan {
                continue;
            }
            let j = ctx.source_index as usize;
            if j >= scan.len() || propagation.labels[j] == UNLABELED {
                continue;
            }
            let (class, confidence) = preds[seeds + m];
            if class < 1 {
                continue;
            }
            let candidate = (class, confidence);
            let better = match context_best[j] {
                None => true,
                Some((best_class, best_conf)) => {
                    confidence > best_conf || (confidence == best_conf && class < best_class)
                }
            };
            if better {
                context_best[j] = Some(candidate);
            }
        }
    }

    // Network precedence for propagated points that re-entered as context.
    for (j, best) in context_best.iter().enumerate() {
        if seed_covered[j] {
            continue;
        }
        if let Some((class, confidence)) = best {
            labels[j] = *class;
            confidences[j] = confidence.clamp(CONFIDENCE_FLOOR, 1.0);
            sources[j] = LabelSource::Backend;
        }
    }

    let missing: Vec<usize> = (0..scan.len())
        .filter(|&j| labels[j] == UNLABELED)
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteCoverage { missing });
    }

    let mut cloud = scan.clone();
    for (j, p) in cloud.points.iter_mut().enumerate() {
        p.label = labels[j];
        p.confidence = confidences[j];
    }
    Ok(FusionOutcome { cloud, sources })
}

/// A fully labeled scan plus the per-point label provenance.
#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub cloud: ScanCloud,
    pub sources: Vec<LabelSource>,
}

fn scan_seed(base: u64, scan_index: u32) -> u64 {
    base ^ (u64::from(scan_index).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Context for densification: the reference cloud plus the current scan's
/// propagated points carrying their propagated labels.
fn build_context_source(
    reference: &ReferenceCloud,
    scan: &ScanCloud,
    propagation: &PropagationResult,
) -> Vec<LabeledPoint> {
    let mut context = Vec::with_capacity(reference.len() + propagation.propagated_count());
    context.extend(reference.points().iter().cloned());
    for (j, p) in scan.points.iter().enumerate() {
        if propagation.labels[j] != UNLABELED {
            let mut labeled = p.clone();
            labeled.label = propagation.labels[j];
            labeled.confidence = propagation.confidences[j];
            context.push(labeled);
        }
    }
    context
}

/// Stateful temporal loop over one sequence.
pub struct Pipeline {
    config: PipelineConfig,
    reference: ReferenceCloud,
    timing: TimingReport,
    next_scan: u32,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let reference = ReferenceCloud::new(config.reference.clone())?;
        Ok(Pipeline {
            config,
            reference,
            timing: TimingReport::default(),
            next_scan: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn reference(&self) -> &ReferenceCloud {
        &self.reference
    }

    pub fn timing(&self) -> &TimingReport {
        &self.timing
    }

    /// Runs the five pipeline steps plus registration and accumulation on
    /// one sensor-frame scan, returning final labels in input point order.
    pub fn process_scan(
        &mut self,
        scan: &ScanCloud,
        pose: &RigidPose,
        backend: &dyn SegmentationBackend,
    ) -> Result<ScanResult> {
        let scan_index = self.next_scan;
        self.next_scan += 1;
        let mut scan = scan.clone();
        scan.set_scan_index(scan_index);

        let t = Instant::now();
        let world = transform_cloud(&scan, pose)?;
        self.timing.stage_seconds[0] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let propagation = propagate_labels(
            &self.reference,
            &world,
            &self.config.partition,
            &self.config.propagation,
        )?;
        self.timing.stage_seconds[1] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let residual_mask = propagation.residual_mask();
        let clusters = extract_residual_clusters(
            &world,
            &residual_mask,
            self.config.effective_cluster_count(),
            self.config.kmeans_max_iters,
            scan_seed(self.config.seed, scan_index),
        );
        self.timing.stage_seconds[2] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut clusters = clusters;
        if !clusters.is_empty() {
            let context = build_context_source(&self.reference, &world, &propagation);
            for cluster in &mut clusters {
                densify_cluster(cluster, &context, &self.config.densification)?;
            }
        }
        self.timing.stage_seconds[3] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let predictions = if clusters.is_empty() {
            ClusterPrediction { clusters: Vec::new() }
        } else {
            let mut batch = ClusterBatch::new(clusters.clone())?;
            if let Some(mos) = &self.config.mos {
                if mos.timestamp_feature {
                    batch = attach_timestamp_feature(batch, scan_index)?;
                }
            }
            let predictions = backend.segment(&batch)?;
            predictions.validate_against(&batch)?;
            predictions
        };
        self.timing.stage_seconds[4] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let fused = fuse(&propagation, &clusters, &predictions, &world)?;
        self.timing.stage_seconds[5] += t.elapsed().as_secs_f64();

        let t = Instant::now();
        self.reference
            .push_segmented_scan(scan_index, &fused.cloud, pose.center())?;
        self.timing.stage_seconds[6] += t.elapsed().as_secs_f64();
        self.timing.scans += 1;

        let propagated = propagation.propagated_count();
        Ok(ScanResult {
            labels: fused.cloud.points.iter().map(|p| p.label).collect(),
            confidences: fused.cloud.points.iter().map(|p| p.confidence).collect(),
            sources: fused.sources,
            propagated,
            residual: scan.len() - propagated,
            clusters: clusters.len(),
        })
    }
}

/// Processes a whole sequence of sensor-frame scans in order.
pub fn process_sequence(
    scans: &[ScanCloud],
    poses: &[RigidPose],
    config: &PipelineConfig,
    backend: &dyn SegmentationBackend,
) -> Result<SequenceResult> {
    if scans.len() != poses.len() {
        return Err(Error::ContractViolation(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    let mut pipeline = Pipeline::new(config.clone())?;
    let mut results = Vec::with_capacity(scans.len());
    for (scan, pose) in scans.iter().zip(poses) {
        results.push(pipeline.process_scan(scan, pose, backend)?);
    }
    Ok(SequenceResult {
        scans: results,
        timing: pipeline.timing,
    })
}

/// Summary of one training export run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExportSummary {
    pub scans: usize,
    pub clusters_written: usize,
    /// Scans whose reflectivity channel was replaced by occupancy.
    pub dropped_scans: Vec<u32>,
}

/// Runs the pipeline with past inferences replaced by ground truth and
/// writes every densified cluster in protocol format with true labels.
///
/// With probability `reflectivity_dropout` per scan (seeded), the written
/// reflectivity channel is overwritten by the occupancy constant 1.0.
pub fn export_training_clusters(
    scans: &[ScanCloud],
    poses: &[RigidPose],
    ground_truth: &[Vec<i32>],
    config: &PipelineConfig,
    out_dir: &Path,
    reflectivity_dropout: f64,
    seed: u64,
) -> Result<TrainingExportSummary> {
    if scans.len() != poses.len() || scans.len() != ground_truth.len() {
        return Err(Error::ContractViolation(format!(
            "lengths disagree: {} scans, {} poses, {} ground-truth sets",
            scans.len(),
            poses.len(),
            ground_truth.len()
        )));
    }
    if !(0.0..=1.0).contains(&reflectivity_dropout) {
        return Err(Error::InvalidParameter(format!(
            "reflectivity_dropout must lie in [0, 1], got {reflectivity_dropout}"
        )));
    }
    config.validate()?;
    for (t, (scan, gt)) in scans.iter().zip(ground_truth).enumerate() {
        if scan.len() != gt.len() {
            return Err(Error::ContractViolation(format!(
                "scan {t}: {} points but {} ground-truth labels",
                scan.len(),
                gt.len()
            )));
        }
        for (i, &label) in gt.iter().enumerate() {
            if !config.partition.contains(label) {
                return Err(Error::ContractViolation(format!(
                    "scan {t} point {i}: ground-truth label {label} outside the class set"
                )));
            }
        }
    }

    let cluster_dir = out_dir.join("clusters");
    fs::create_dir_all(&cluster_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = ReferenceCloud::new(config.reference.clone())?;
    let mut clusters_written = 0;
    let mut dropped_scans = Vec::new();

    for (t, (scan, pose)) in scans.iter().zip(poses).enumerate() {
        let scan_index = t as u32;
        let drop_reflectivity = rng.gen::<f64>() < reflectivity_dropout;
        if drop_reflectivity {
            dropped_scans.push(scan_index);
        }
        let mut scan = scan.clone();
        scan.set_scan_index(scan_index);
        let world = transform_cloud(&scan, pose)?;
        let propagation = propagate_labels(
            &reference,
            &world,
            &config.partition,
            &config.propagation,
        )?;
        let residual_mask = propagation.residual_mask();
        let mut clusters = extract_residual_clusters(
            &world,
            &residual_mask,
            config.effective_cluster_count(),
            config.kmeans_max_iters,
            scan_seed(seed, scan_index),
        );
        if !clusters.is_empty() {
            let context = build_context_source(&reference, &world, &propagation);
            for cluster in &mut clusters {
                densify_cluster(cluster, &context, &config.densification)?;
            }
        }
        let reflectivity_channel = scan.layout.reflectivity_channel();
        for (c, cluster) in clusters.iter().enumerate() {
            let path = cluster_dir.join(crate::backend::cluster_file_name(scan_index, c));
            let records = cluster.points().map(|p| {
                let label = ground_truth[p.scan_index as usize][p.source_index as usize];
                let mut channels: Vec<f32> = p.features.iter().map(|&f| f as f32).collect();
                if drop_reflectivity {
                    if let Some(ch) = reflectivity_channel {
                        channels[ch] = 1.0;
                    }
                }
                ClusterRecord {
                    position: [
                        p.position.x as f32,
                        p.position.y as f32,
                        p.position.z as f32,
                    ],
                    channels,
                    label,
                    confidence: 1.0,
                }
            });
            write_cluster_records(&path, scan.layout.channel_count(), records)?;
            clusters_written += 1;
        }
        // Past inferences are the ground truth during training.
        let mut truth_cloud = world.clone();
        for (j, p) in truth_cloud.points.iter_mut().enumerate() {
            p.label = ground_truth[t][j];
            p.confidence = 1.0;
        }
        reference.push_segmented_scan(scan_index, &truth_cloud, pose.center())?;
    }
    Ok(TrainingExportSummary {
        scans: scans.len(),
        clusters_written,
        dropped_scans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GroundTruthOracle;
    use crate::geometry::{FeatureLayout, Frame, Point3};

    fn unlabeled_scan(coords: &[(f64, f64, f64)]) -> ScanCloud {
        let points = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| {
                LabeledPoint::unlabeled(Point3::new(x, y, z), vec![1.0], 0, i as u32)
            })
            .collect();
        ScanCloud::new(points, Frame::World, FeatureLayout::OCCUPANCY)
    }

    fn passthrough_prediction(clusters: &[Cluster], class: i32, confidence: f64) -> ClusterPrediction {
        ClusterPrediction {
            clusters: clusters
                .iter()
                .map(|c| vec![(class, confidence); c.point_count()])
                .collect(),
        }
    }

    #[test]
    fn residual_points_take_backend_predictions() {
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let propagation = PropagationResult::all_residual(2);
        let mut cluster = Cluster::empty(scan.layout);
        cluster.seed_indices = vec![0, 1];
        cluster.seed_points = scan.points.clone();
        let clusters = vec![cluster];
        let predictions = passthrough_prediction(&clusters, 2, 0.6);
        let fused = fuse(&propagation, &clusters, &predictions, &scan).unwrap();
        assert_eq!(
            fused.cloud.points.iter().map(|p| p.label).collect::<Vec<_>>(),
            vec![2, 2]
        );
        assert!(fused.sources.iter().all(|&s| s == LabelSource::Backend));
    }

    #[test]
    fn propagated_only_points_keep_their_labels() {
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0)]);
        let propagation = PropagationResult {
            labels: vec![9],
            confidences: vec![0.7],
        };
        let fused = fuse(
            &propagation,
            &[],
            &ClusterPrediction { clusters: Vec::new() },
            &scan,
        )
        .unwrap();
        assert_eq!(fused.cloud.points[0].label, 9);
        assert_eq!(fused.cloud.points[0].confidence, 0.7);
        assert_eq!(fused.sources[0], LabelSource::Propagated);
    }

    #[test]
    fn network_precedence_overrides_propagation_via_context() {
        // Point 0 propagated as class 9 (0.7); it also appears as context
        // of a cluster whose prediction says class 4 (0.6). Network wins.
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)]);
        let propagation = PropagationResult {
            labels: vec![9, UNLABELED],
            confidences: vec![0.7, 0.0],
        };
        let mut cluster = Cluster::empty(scan.layout);
        cluster.seed_indices = vec![1];
        cluster.seed_points = vec![scan.points[1].clone()];
        cluster.context_points = vec![{
            let mut ctx = scan.points[0].clone();
            ctx.label = 9;
            ctx.confidence = 0.7;
            ctx
        }];
        let clusters = vec![cluster];
        let predictions = ClusterPrediction {
            clusters: vec![vec![(2, 0.9), (4, 0.6)]],
        };
        let fused = fuse(&propagation, &clusters, &predictions, &scan).unwrap();
        assert_eq!(fused.cloud.points[0].label, 4);
        assert!((fused.cloud.points[0].confidence - 0.6).abs() < 1e-12);
        assert_eq!(fused.sources[0], LabelSource::Backend);
        assert_eq!(fused.cloud.points[1].label, 2);
    }

    #[test]
    fn multi_cluster_context_overlap_takes_highest_confidence() {
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0), (5.0, 0.0, 0.0), (9.0, 0.0, 0.0)]);
        let propagation = PropagationResult {
            labels: vec![3, UNLABELED, UNLABELED],
            confidences: vec![0.5, 0.0, 0.0],
        };
        let make_cluster = |seed: usize, ctx_pred: (i32, f64)| {
            let mut cluster = Cluster::empty(scan.layout);
            cluster.seed_indices = vec![seed];
            cluster.seed_points = vec![scan.points[seed].clone()];
            cluster.context_points = vec![{
                let mut ctx = scan.points[0].clone();
                ctx.label = 3;
                ctx.confidence = 0.5;
                ctx
            }];
            (cluster, ctx_pred)
        };
        let (c1, p1) = make_cluster(1, (7, 0.4));
        let (c2, p2) = make_cluster(2, (5, 0.8));
        let clusters = vec![c1, c2];
        let predictions = ClusterPrediction {
            clusters: vec![vec![(2, 1.0), p1], vec![(2, 1.0), p2]],
        };
        let fused = fuse(&propagation, &clusters, &predictions, &scan).unwrap();
        assert_eq!(fused.cloud.points[0].label, 5);
    }

    #[test]
    fn uncovered_residual_point_is_an_error() {
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0)]);
        let propagation = PropagationResult::all_residual(1);
        let result = fuse(
            &propagation,
            &[],
            &ClusterPrediction { clusters: Vec::new() },
            &scan,
        );
        assert!(matches!(result, Err(Error::IncompleteCoverage { .. })));
    }

    #[test]
    fn double_seed_coverage_is_rejected() {
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0)]);
        let propagation = PropagationResult::all_residual(1);
        let mut c1 = Cluster::empty(scan.layout);
        c1.seed_indices = vec![0];
        c1.seed_points = vec![scan.points[0].clone()];
        let c2 = c1.clone();
        let clusters = vec![c1, c2];
        let predictions = passthrough_prediction(&clusters, 1, 1.0);
        assert!(matches!(
            fuse(&propagation, &clusters, &predictions, &scan),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn first_scan_is_fully_backend_labeled() {
        let partition = LabelPartition::new(3, [3]).unwrap();
        let config = PipelineConfig::new(partition);
        let mut pipeline = Pipeline::new(config).unwrap();
        let mut scan = unlabeled_scan(&[(0.0, 0.0, 0.0), (0.5, 0.0, 0.0), (8.0, 2.0, 0.0)]);
        scan.frame = Frame::Sensor;
        let oracle = GroundTruthOracle::new(vec![vec![1, 1, 2]]);
        let result = pipeline
            .process_scan(&scan, &RigidPose::identity(), &oracle)
            .unwrap();
        assert_eq!(result.propagated, 0);
        assert_eq!(result.labels, vec![1, 1, 2]);
        assert!(result.sources.iter().all(|&s| s == LabelSource::Backend));
        assert!(result.clusters >= 1);
        assert_eq!(pipeline.reference().window_len(), 1);
    }

    #[test]
    fn timing_report_sums_consistently() {
        let partition = LabelPartition::all_static(2).unwrap();
        let config = PipelineConfig::new(partition);
        let scans: Vec<ScanCloud> = (0..3)
            .map(|_| {
                let mut s = unlabeled_scan(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)]);
                s.frame = Frame::Sensor;
                s
            })
            .collect();
        let poses = vec![RigidPose::identity(); 3];
        let oracle = GroundTruthOracle::new(vec![vec![1, 2]; 3]);
        let result = process_sequence(&scans, &poses, &config, &oracle).unwrap();
        assert_eq!(result.timing.scans, 3);
        let sum: f64 = result.timing.stage_seconds.iter().sum();
        assert!((sum - result.timing.total_seconds()).abs() < 1e-12);
        assert!(result.timing.hz() > 0.0);
        for name in STAGE_NAMES {
            assert!(result.timing.stage(name).is_some());
        }
    }

    #[test]
    fn sequence_rejects_length_mismatch() {
        let partition = LabelPartition::all_static(2).unwrap();
        let config = PipelineConfig::new(partition);
        let oracle = GroundTruthOracle::new(vec![]);
        let scan = unlabeled_scan(&[(0.0, 0.0, 0.0)]);
        assert!(process_sequence(&[scan], &[], &config, &oracle).is_err());
    }
}
