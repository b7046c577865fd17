//! Pluggable per-cluster segmentation: the backend contract, two built-in
//! analytic backends, and a little-endian file protocol so an external
//! inference process can plug in.
//!
//! Cluster files live at `clusters/NNNNNN_CC.bin` (scan index, cluster
//! index) and predictions come back at `predictions/NNNNNN_CC.bin`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::densification::Cluster;
use crate::error::{Error, Result};
use crate::geometry::FeatureLayout;

pub const CLUSTER_MAGIC: [u8; 4] = *b"3DLP";
pub const PROTOCOL_VERSION: u32 = 1;

/// A scan's clusters headed to the backend. All clusters share one feature
/// layout; the timestamp channel, when present, is −1 on points from past
/// scans and +1 on current-scan points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBatch {
    pub clusters: Vec<Cluster>,
    pub layout: FeatureLayout,
}

impl ClusterBatch {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let Some(first) = clusters.first() else {
            return Err(Error::ContractViolation(
                "a cluster batch must contain at least one cluster".into(),
            ));
        };
        let layout = first.layout;
        for (i, cluster) in clusters.iter().enumerate() {
            if cluster.layout != layout {
                return Err(Error::ContractViolation(format!(
                    "cluster {i} does not share the batch feature layout"
                )));
            }
            let channels = layout.channel_count();
            for p in cluster.points() {
                if p.features.len() != channels {
                    return Err(Error::ContractViolation(format!(
                        "cluster {i} carries a point with {} channels, layout expects {channels}",
                        p.features.len()
                    )));
                }
            }
        }
        Ok(ClusterBatch { clusters, layout })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_points(&self) -> usize {
        self.clusters.iter().map(|c| c.point_count()).sum()
    }

    /// Scan index of the batch's seed points.
    pub fn scan_index(&self) -> Option<u32> {
        self.clusters
            .first()
            .and_then(|c| c.seed_points.first())
            .map(|p| p.scan_index)
    }
}

/// Per-cluster, per-point (class id, confidence), covering seeds first and
/// context after, in cluster point order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPrediction {
    pub clusters: Vec<Vec<(i32, f64)>>,
}

impl ClusterPrediction {
    pub fn validate_against(&self, batch: &ClusterBatch) -> Result<()> {
        if self.clusters.len() != batch.clusters.len() {
            return Err(Error::Backend {
                message: format!(
                    "{} prediction groups for {} clusters",
                    self.clusters.len(),
                    batch.clusters.len()
                ),
                cluster_ids: (0..batch.clusters.len()).collect(),
            });
        }
        for (i, (preds, cluster)) in self.clusters.iter().zip(&batch.clusters).enumerate() {
            if preds.len() != cluster.point_count() {
                return Err(Error::Backend {
                    message: format!(
                        "cluster {i}: {} predictions for {} points",
                        preds.len(),
                        cluster.point_count()
                    ),
                    cluster_ids: vec![i],
                });
            }
            for &(class, confidence) in preds {
                if class < 1 || !(0.0..=1.0).contains(&confidence) {
                    return Err(Error::Backend {
                        message: format!(
                            "cluster {i}: invalid prediction (class {class}, confidence {confidence})"
                        ),
                        cluster_ids: vec![i],
                    });
                }
            }
        }
        Ok(())
    }
}

/// The backend contract: complete per-point predictions for every cluster.
pub trait SegmentationBackend {
    fn segment(&self, batch: &ClusterBatch) -> Result<ClusterPrediction>;

    fn name(&self) -> &str;
}

/// Test backend that answers with each point's ground-truth label at
/// confidence 1. Ground truth is indexed by (scan_index, source_index).
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    labels: Vec<Vec<i32>>,
}

impl GroundTruthOracle {
    pub fn new(labels: Vec<Vec<i32>>) -> Self {
        GroundTruthOracle { labels }
    }

    fn lookup(&self, scan: u32, source: u32) -> Result<i32> {
        self.labels
            .get(scan as usize)
            .and_then(|scan_labels| scan_labels.get(source as usize))
            .copied()
            .ok_or_else(|| Error::Backend {
                message: format!("no ground truth for scan {scan} point {source}"),
                cluster_ids: Vec::new(),
            })
    }
}

impl SegmentationBackend for GroundTruthOracle {
    fn segment(&self, batch: &ClusterBatch) -> Result<ClusterPrediction> {
        let mut clusters = Vec::with_capacity(batch.len());
        for cluster in &batch.clusters {
            let mut preds = Vec::with_capacity(cluster.point_count());
            for p in cluster.points() {
                preds.push((self.lookup(p.scan_index, p.source_index)?, 1.0));
            }
            clusters.push(preds);
        }
        Ok(ClusterPrediction { clusters })
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Baseline backend: every seed takes the label of its nearest labeled
/// context point (distance ties break to the lowest class id); context
/// points answer with their own labels. A cluster without context falls
/// back to a configured class and confidence floor.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestNeighborBaseline {
    pub fallback_class: i32,
    pub fallback_confidence: f64,
}

impl Default for NearestNeighborBaseline {
    fn default() -> Self {
        NearestNeighborBaseline {
            fallback_class: 1,
            fallback_confidence: 0.01,
        }
    }
}

impl SegmentationBackend for NearestNeighborBaseline {
    fn segment(&self, batch: &ClusterBatch) -> Result<ClusterPrediction> {
        let mut clusters = Vec::with_capacity(batch.len());
        for cluster in &batch.clusters {
            let mut preds = Vec::with_capacity(cluster.point_count());
            for seed in &cluster.seed_points {
                let mut best: Option<(f64, i32)> = None;
                for ctx in &cluster.context_points {
                    if ctx.label < 1 {
                        continue;
                    }
                    let d = seed.position.distance(&ctx.position);
                    let candidate = (d, ctx.label);
                    if best.is_none_or(|b| candidate < b) {
                        best = Some(candidate);
                    }
                }
                match best {
                    Some((_, label)) => preds.push((label, 1.0)),
                    None => preds.push((self.fallback_class, self.fallback_confidence)),
                }
            }
            for ctx in &cluster.context_points {
                if ctx.label >= 1 {
                    preds.push((ctx.label, ctx.confidence.clamp(0.0, 1.0)));
                } else {
                    preds.push((self.fallback_class, self.fallback_confidence));
                }
            }
            clusters.push(preds);
        }
        Ok(ClusterPrediction { clusters })
    }

    fn name(&self) -> &str {
        "nn"
    }
}

pub fn cluster_file_name(scan_index: u32, cluster_index: usize) -> String {
    format!("{scan_index:06}_{cluster_index:02}.bin")
}

/// Writes one cluster in protocol format: magic, version, point count,
/// channel count, then per point 3×f32 position, channel f32s, i32 label,
/// f32 confidence. Positions and confidences narrow to f32.
pub fn write_cluster_file(path: &Path, cluster: &Cluster) -> Result<()> {
    write_cluster_records(
        path,
        cluster.layout.channel_count(),
        cluster.points().map(|p| ClusterRecord {
            position: [p.position.x as f32, p.position.y as f32, p.position.z as f32],
            channels: p.features.iter().map(|&f| f as f32).collect(),
            label: p.label,
            confidence: p.confidence as f32,
        }),
    )
}

/// One point as stored in a cluster file.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub position: [f32; 3],
    pub channels: Vec<f32>,
    pub label: i32,
    pub confidence: f32,
}

pub fn write_cluster_records(
    path: &Path,
    channel_count: usize,
    records: impl Iterator<Item = ClusterRecord>,
) -> Result<()> {
    let records: Vec<ClusterRecord> = records.collect();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CLUSTER_MAGIC)?;
    w.write_u32::<LittleEndian>(PROTOCOL_VERSION)?;
    w.write_u32::<LittleEndian>(records.len() as u32)?;
    w.write_u32::<LittleEndian>(channel_count as u32)?;
    for r in &records {
        debug_assert_eq!(r.channels.len(), channel_count);
        for c in r.position {
            w.write_f32::<LittleEndian>(c)?;
        }
        for &c in &r.channels {
            w.write_f32::<LittleEndian>(c)?;
        }
        w.write_i32::<LittleEndian>(r.label)?;
        w.write_f32::<LittleEndian>(r.confidence)?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of one cluster file.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFile {
    pub channel_count: usize,
    pub records: Vec<ClusterRecord>,
}

pub fn read_cluster_file(path: &Path) -> Result<ClusterFile> {
    let name = path.display();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Protocol(format!("{name}: truncated header")))?;
    if magic != CLUSTER_MAGIC {
        return Err(Error::Protocol(format!("{name}: bad magic {magic:?}")));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Protocol(format!("{name}: truncated header")))?;
    if version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "{name}: unsupported version {version} (expected {PROTOCOL_VERSION})"
        )));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Protocol(format!("{name}: truncated header")))? as usize;
    let channel_count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Protocol(format!("{name}: truncated header")))? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let read_f32 = |r: &mut BufReader<File>| {
            r.read_f32::<LittleEndian>()
                .map_err(|_| Error::Protocol(format!("{name}: short file at point {i}")))
        };
        let position = [read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?];
        let mut channels = Vec::with_capacity(channel_count);
        for _ in 0..channel_count {
            channels.push(read_f32(&mut r)?);
        }
        let label = r
            .read_i32::<LittleEndian>()
            .map_err(|_| Error::Protocol(format!("{name}: short file at point {i}")))?;
        let confidence = read_f32(&mut r)?;
        records.push(ClusterRecord {
            position,
            channels,
            label,
            confidence,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Protocol(format!("{name}: trailing bytes after {count} points")));
    }
    Ok(ClusterFile {
        channel_count,
        records,
    })
}

/// Prediction files are bare little-endian records of (i32 class,
/// f32 confidence), one per cluster point, in cluster point order.
pub fn write_prediction_file(path: &Path, predictions: &[(i32, f32)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(class, confidence) in predictions {
        w.write_i32::<LittleEndian>(class)?;
        w.write_f32::<LittleEndian>(confidence)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prediction_file(path: &Path) -> Result<Vec<(i32, f32)>> {
    let name = path.display();
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Protocol(format!(
            "{name}: length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / 8);
    for chunk in bytes.chunks_exact(8) {
        let class = i32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let confidence = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        out.push((class, confidence));
    }
    Ok(out)
}

/// Writes every cluster of `batch` under `dir/clusters/`, named by scan and
/// cluster index. Returns the written paths.
pub fn export_clusters(batch: &ClusterBatch, scan_index: u32, dir: &Path) -> Result<Vec<PathBuf>> {
    let cluster_dir = dir.join("clusters");
    fs::create_dir_all(&cluster_dir)?;
    let mut paths = Vec::with_capacity(batch.len());
    for (i, cluster) in batch.clusters.iter().enumerate() {
        let path = cluster_dir.join(cluster_file_name(scan_index, i));
        write_cluster_file(&path, cluster)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads back predictions for `batch` from `dir/predictions/`, enforcing
/// point-count agreement per cluster.
pub fn import_predictions(
    dir: &Path,
    scan_index: u32,
    batch: &ClusterBatch,
) -> Result<ClusterPrediction> {
    let prediction_dir = dir.join("predictions");
    let mut clusters = Vec::with_capacity(batch.len());
    let mut missing = Vec::new();
    for (i, cluster) in batch.clusters.iter().enumerate() {
        let path = prediction_dir.join(cluster_file_name(scan_index, i));
        if !path.exists() {
            missing.push(i);
            continue;
        }
        let preds = read_prediction_file(&path)?;
        if preds.len() != cluster.point_count() {
            return Err(Error::Protocol(format!(
                "{}: {} predictions for {} cluster points",
                path.display(),
                preds.len(),
                cluster.point_count()
            )));
        }
        clusters.push(preds.into_iter().map(|(c, v)| (c, v as f64)).collect());
    }
    if !missing.is_empty() {
        return Err(Error::Backend {
            message: format!("no prediction files under {}", prediction_dir.display()),
            cluster_ids: missing,
        });
    }
    Ok(ClusterPrediction { clusters })
}

/// Backend that talks to an external process through the file protocol:
/// exports the batch, optionally runs a command, then imports predictions.
///
/// The command, when set, runs via `sh -c` with `LP_EXCHANGE_DIR` and
/// `LP_SCAN_INDEX` in its environment and is expected to leave one
/// prediction file per cluster.
#[derive(Debug, Clone)]
pub struct ExternalProcessBackend {
    dir: PathBuf,
    command: Option<String>,
}

impl ExternalProcessBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ExternalProcessBackend {
            dir: dir.into(),
            command: None,
        }
    }

    pub fn with_command(dir: impl Into<PathBuf>, command: impl Into<String>) -> Self {
        ExternalProcessBackend {
            dir: dir.into(),
            command: Some(command.into()),
        }
    }

    pub fn exchange_dir(&self) -> &Path {
        &self.dir
    }
}

impl SegmentationBackend for ExternalProcessBackend {
    fn segment(&self, batch: &ClusterBatch) -> Result<ClusterPrediction> {
        let scan_index = batch.scan_index().ok_or_else(|| Error::Backend {
            message: "batch carries no seed points".into(),
            cluster_ids: (0..batch.len()).collect(),
        })?;
        export_clusters(batch, scan_index, &self.dir)?;
        if let Some(command) = &self.command {
            let status = Command::new("sh")
                .arg("-c")
                .arg(command)
                .env("LP_EXCHANGE_DIR", &self.dir)
                .env("LP_SCAN_INDEX", scan_index.to_string())
                .status()
                .map_err(|e| Error::Backend {
                    message: format!("failed to launch backend command: {e}"),
                    cluster_ids: (0..batch.len()).collect(),
                })?;
            if !status.success() {
                return Err(Error::Backend {
                    message: format!("backend command exited with {status}"),
                    cluster_ids: (0..batch.len()).collect(),
                });
            }
        }
        let prediction = import_predictions(&self.dir, scan_index, batch)?;
        prediction.validate_against(batch)?;
        Ok(prediction)
    }

    fn name(&self) -> &str {
        "external"
    }
}
