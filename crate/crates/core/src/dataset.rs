//! Readers and writers for KITTI-style sequences (points, labels, poses)
//! plus the JSON scene manifest that makes synthetic sequences
//! self-describing.
//!
//! Sequence layout: `velodyne/NNNNNN.bin`, `labels/NNNNNN.label`,
//! `poses.txt`, optional `scene.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeatureLayout, Frame, LabeledPoint, Point3, RigidPose, ScanCloud};
use crate::propagation::LabelPartition;

const KITTI_POINT_BYTES: usize = 16;

/// Reads little-endian (x, y, z, reflectivity) f32 quadruples into a
/// sensor-frame cloud. Reflectivity becomes a feature channel next to the
/// synthesized occupancy constant.
pub fn read_kitti_points(path: &Path) -> Result<ScanCloud> {
    let bytes = fs::read(path)?;
    if bytes.len() % KITTI_POINT_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of {KITTI_POINT_BYTES}",
            path.display(),
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_POINT_BYTES);
    for (i, chunk) in bytes.chunks_exact(KITTI_POINT_BYTES).enumerate() {
        let x = f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(chunk[8..12].try_into().unwrap()) as f64;
        let reflectivity = f32::from_le_bytes(chunk[12..16].try_into().unwrap()) as f64;
        let position = Point3::new(x, y, z);
        if !position.is_finite() || !reflectivity.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite values at point {i}",
                path.display()
            )));
        }
        points.push(LabeledPoint::unlabeled(
            position,
            vec![1.0, reflectivity],
            0,
            i as u32,
        ));
    }
    Ok(ScanCloud::new(
        points,
        Frame::Sensor,
        FeatureLayout::OCCUPANCY_REFLECTIVITY,
    ))
}

/// Writes a cloud back as f32 quadruples. Points without a reflectivity
/// channel are written with reflectivity 0.
pub fn write_kitti_points(path: &Path, cloud: &ScanCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let reflectivity_channel = cloud.layout.reflectivity_channel();
    for p in &cloud.points {
        w.write_f32::<LittleEndian>(p.position.x as f32)?;
        w.write_f32::<LittleEndian>(p.position.y as f32)?;
        w.write_f32::<LittleEndian>(p.position.z as f32)?;
        let reflectivity = reflectivity_channel
            .map(|c| p.features[c] as f32)
            .unwrap_or(0.0);
        w.write_f32::<LittleEndian>(reflectivity)?;
    }
    w.flush()?;
    Ok(())
}

/// Raw label words: lower 16 bits semantic class, upper 16 bits instance id.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &raw in labels {
        w.write_u32::<LittleEndian>(raw)?;
    }
    w.flush()?;
    Ok(())
}

pub fn label_class(raw: u32) -> i32 {
    (raw & 0xFFFF) as i32
}

pub fn label_instance(raw: u32) -> u32 {
    raw >> 16
}

pub fn pack_label(class: i32, instance: u32) -> u32 {
    debug_assert!((0..=0xFFFF).contains(&class));
    ((instance & 0xFFFF) << 16) | (class as u32 & 0xFFFF)
}

/// Poses parsed from a KITTI-style file, with the line numbers (1-based)
/// whose rotations drifted and were snapped back to the rotation group.
#[derive(Debug, Clone)]
pub struct LoadedPoses {
    pub poses: Vec<RigidPose>,
    pub reorthonormalized_lines: Vec<usize>,
}

/// Parses one pose per line: 12 reals, the row-major top 3×4 of the
/// transform. Rotations drifting past the tolerance are re-orthonormalized
/// via polar decomposition.
pub fn read_poses(path: &Path) -> Result<LoadedPoses> {
    let reader = BufReader::new(File::open(path)?);
    let mut poses = Vec::new();
    let mut reorthonormalized_lines = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let values: Vec<f64> = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: unparsable number {tok:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != 12 {
            return Err(Error::Format(format!(
                "{}:{}: expected 12 numbers per pose line, got {}",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "{}:{}: non-finite pose entry",
                path.display(),
                lineno + 1
            )));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2],
            values[4], values[5], values[6],
            values[8], values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        let (pose, fixed) = RigidPose::new_reorthonormalized(rotation, translation)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if fixed {
            reorthonormalized_lines.push(lineno + 1);
        }
        poses.push(pose);
    }
    Ok(LoadedPoses {
        poses,
        reorthonormalized_lines,
    })
}

pub fn write_poses(path: &Path, poses: &[RigidPose]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for pose in poses {
        let r = pose.rotation();
        let t = pose.translation();
        let row = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ];
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Self-description for a sequence directory: class count and the
/// dynamic/static split, as consumed by the propagation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub name: String,
    pub num_classes: u32,
    pub dynamic_ids: Vec<i32>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl SceneManifest {
    pub fn partition(&self) -> Result<LabelPartition> {
        LabelPartition::new(self.num_classes, self.dynamic_ids.iter().copied())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("scene manifest: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// Lazy reader over a KITTI-style sequence directory.
#[derive(Debug)]
pub struct SequenceReader {
    dir: PathBuf,
    scan_paths: Vec<PathBuf>,
    label_paths: Vec<PathBuf>,
    poses: LoadedPoses,
    manifest: Option<SceneManifest>,
}

impl SequenceReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let velodyne = dir.join("velodyne");
        let mut scan_paths: Vec<PathBuf> = fs::read_dir(&velodyne)
            .map_err(|e| Error::Format(format!("{}: {e}", velodyne.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
            .collect();
        scan_paths.sort();
        if scan_paths.is_empty() {
            return Err(Error::Format(format!(
                "{}: no .bin scans found",
                velodyne.display()
            )));
        }
        let labels_dir = dir.join("labels");
        let label_paths = if labels_dir.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(&labels_dir)?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "label"))
                .collect();
            paths.sort();
            if paths.len() != scan_paths.len() {
                return Err(Error::Format(format!(
                    "{}: {} label files for {} scans",
                    labels_dir.display(),
                    paths.len(),
                    scan_paths.len()
                )));
            }
            paths
        } else {
            Vec::new()
        };
        let poses = read_poses(&dir.join("poses.txt"))?;
        if poses.poses.len() != scan_paths.len() {
            return Err(Error::Format(format!(
                "{}: {} poses for {} scans",
                dir.display(),
                poses.poses.len(),
                scan_paths.len()
            )));
        }
        let manifest_path = dir.join("scene.json");
        let manifest = if manifest_path.is_file() {
            Some(SceneManifest::read(&manifest_path)?)
        } else {
            None
        };
        Ok(SequenceReader {
            dir: dir.to_path_buf(),
            scan_paths,
            label_paths,
            poses,
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.scan_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scan_paths.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.label_paths.is_empty()
    }

    pub fn poses(&self) -> &[RigidPose] {
        &self.poses.poses
    }

    pub fn loaded_poses(&self) -> &LoadedPoses {
        &self.poses
    }

    pub fn manifest(&self) -> Option<&SceneManifest> {
        self.manifest.as_ref()
    }

    pub fn scan_path(&self, index: usize) -> &Path {
        &self.scan_paths[index]
    }

    pub fn scan_stem(&self, index: usize) -> String {
        self.scan_paths[index]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{index:06}"))
    }

    pub fn load_scan(&self, index: usize) -> Result<ScanCloud> {
        let mut cloud = read_kitti_points(&self.scan_paths[index])?;
        cloud.set_scan_index(index as u32);
        Ok(cloud)
    }

    /// Loads the raw label words for scan `index`, enforcing point/label
    /// pairing cardinality.
    pub fn load_labels(&self, index: usize) -> Result<Vec<u32>> {
        if self.label_paths.is_empty() {
            return Err(Error::Format(format!(
                "{}: sequence has no labels directory",
                self.dir.display()
            )));
        }
        let labels = read_labels(&self.label_paths[index])?;
        let scan_bytes = fs::metadata(&self.scan_paths[index])?.len() as usize;
        let expected = scan_bytes / KITTI_POINT_BYTES;
        if labels.len() != expected {
            return Err(Error::Format(format!(
                "{}: {} labels for {} points",
                self.label_paths[index].display(),
                labels.len(),
                expected
            )));
        }
        Ok(labels)
    }
}
