//! Deterministic synthetic sequences for tests, fixtures, and benchmarks:
//! a ground plane, a wall, a column, and optionally one object translating
//! through the scene. Class-to-class gaps are kept above 0.6 m so kernel
//! votes never cross class boundaries at the default parameters.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{pack_label, write_kitti_points, write_labels, write_poses, SceneManifest};
use crate::error::Result;
use crate::geometry::{FeatureLayout, Frame, LabeledPoint, Point3, RigidPose, ScanCloud};
use crate::propagation::LabelPartition;

pub const CLASS_GROUND: i32 = 1;
pub const CLASS_WALL: i32 = 2;
pub const CLASS_COLUMN: i32 = 3;
pub const CLASS_MOVER: i32 = 4;
pub const NUM_CLASSES: u32 = 4;

/// Surface-sample jitter per axis, meters. Matches the default subsample
/// cell so static surfaces stay within one cell of their plane.
const JITTER: f64 = 0.05;

/// World-frame x displacement of the mover per scan, meters.
pub const MOVER_STEP: f64 = 0.5;

/// A generated sequence: sensor-frame scans, per-scan poses, per-point
/// ground truth, and the class partition.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub scans: Vec<ScanCloud>,
    pub poses: Vec<RigidPose>,
    pub ground_truth: Vec<Vec<i32>>,
    pub manifest: SceneManifest,
}

impl SyntheticSequence {
    pub fn partition(&self) -> LabelPartition {
        self.manifest.partition().expect("generated partition is valid")
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }
}

struct SceneBuilder {
    world_points: Vec<(Point3, i32)>,
}

impl SceneBuilder {
    fn new() -> Self {
        SceneBuilder {
            world_points: Vec::new(),
        }
    }

    fn grid_xy(&mut self, label: i32, x: (f64, f64), y: (f64, f64), z: f64, step: f64) {
        let nx = ((x.1 - x.0) / step).round() as usize;
        let ny = ((y.1 - y.0) / step).round() as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = Point3::new(x.0 + i as f64 * step, y.0 + j as f64 * step, z);
                self.world_points.push((p, label));
            }
        }
    }

    fn grid_xz(&mut self, label: i32, x: (f64, f64), z: (f64, f64), y: f64, step: f64) {
        let nx = ((x.1 - x.0) / step).round() as usize;
        let nz = ((z.1 - z.0) / step).round() as usize;
        for i in 0..=nx {
            for k in 0..=nz {
                let p = Point3::new(x.0 + i as f64 * step, y, z.0 + k as f64 * step);
                self.world_points.push((p, label));
            }
        }
    }
}

fn static_surfaces() -> SceneBuilder {
    let mut scene = SceneBuilder::new();
    // Ground plane z = 0.
    scene.grid_xy(CLASS_GROUND, (-5.0, 15.0), (-5.0, 5.0), 0.0, 0.25);
    // Wall at y = 6, hovering 1 m above the ground plane.
    scene.grid_xz(CLASS_WALL, (-5.0, 15.0), (1.0, 3.0), 6.0, 0.25);
    // Column footprint at (12, -4), also starting 1 m up.
    for x in [11.8, 12.0, 12.2] {
        for y in [-4.2, -4.0, -3.8] {
            for k in 0..=8 {
                scene
                    .world_points
                    .push((Point3::new(x, y, 1.0 + 0.25 * k as f64), CLASS_COLUMN));
            }
        }
    }
    scene
}

fn mover_patch(scan_index: usize) -> Vec<(Point3, i32)> {
    // A small rigid panel gliding along +x at z in [1.2, 1.8]: far enough
    // from every static surface that votes never mix, and displaced by more
    // than the effective propagation radius each scan.
    let x_center = 2.0 + MOVER_STEP * scan_index as f64;
    let mut points = Vec::new();
    for i in 0..6 {
        for k in 0..6 {
            points.push((
                Point3::new(
                    x_center - 0.3 + 0.12 * i as f64,
                    2.0,
                    1.2 + 0.12 * k as f64,
                ),
                CLASS_MOVER,
            ));
        }
    }
    points
}

fn sensor_pose(scan_index: usize) -> RigidPose {
    RigidPose::from_axis_angle(
        Vector3::z(),
        0.02 * scan_index as f64,
        Vector3::new(0.4 * scan_index as f64, 0.1 * scan_index as f64, 1.7),
    )
}

fn build_sequence(num_scans: usize, seed: u64, with_mover: bool, name: &str) -> SyntheticSequence {
    let statics = static_surfaces();
    let mut scans = Vec::with_capacity(num_scans);
    let mut poses = Vec::with_capacity(num_scans);
    let mut ground_truth = Vec::with_capacity(num_scans);
    for t in 0..num_scans {
        let pose = sensor_pose(t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x517C_C1B7_2722_0A95));
        let mut world: Vec<(Point3, i32)> = Vec::with_capacity(statics.world_points.len() + 36);
        for &(p, label) in &statics.world_points {
            // Static surfaces are resampled with fresh jitter each scan;
            // jitter stays in-plane for the wall so samples hug one surface.
            let jittered = match label {
                CLASS_WALL => Point3::new(
                    p.x + rng.gen_range(-JITTER..JITTER),
                    p.y,
                    p.z + rng.gen_range(-JITTER..JITTER),
                ),
                _ => Point3::new(
                    p.x + rng.gen_range(-JITTER..JITTER),
                    p.y + rng.gen_range(-JITTER..JITTER),
                    p.z,
                ),
            };
            world.push((jittered, label));
        }
        if with_mover {
            world.extend(mover_patch(t));
        }
        let points = world
            .iter()
            .enumerate()
            .map(|(i, &(p, _))| {
                let local = pose.apply_inverse(p);
                let reflectivity = 0.2 + 0.6 * ((i % 10) as f64 / 10.0);
                LabeledPoint::unlabeled(local, vec![1.0, reflectivity], t as u32, i as u32)
            })
            .collect();
        scans.push(ScanCloud::new(
            points,
            Frame::Sensor,
            FeatureLayout::OCCUPANCY_REFLECTIVITY,
        ));
        ground_truth.push(world.iter().map(|&(_, label)| label).collect());
        poses.push(pose);
    }
    let manifest = SceneManifest {
        name: name.to_string(),
        num_classes: NUM_CLASSES,
        dynamic_ids: vec![CLASS_MOVER],
        class_names: vec![
            "ground".into(),
            "wall".into(),
            "column".into(),
            "mover".into(),
        ],
    };
    SyntheticSequence {
        scans,
        poses,
        ground_truth,
        manifest,
    }
}

/// Static scene only: ground, wall, column.
pub fn static_scene(num_scans: usize, seed: u64) -> SyntheticSequence {
    build_sequence(num_scans, seed, false, "synthetic-static")
}

/// Static scene plus one translating object (class 4, dynamic).
pub fn mover_scene(num_scans: usize, seed: u64) -> SyntheticSequence {
    build_sequence(num_scans, seed, true, "synthetic-mover")
}

/// Writes a sequence in the KITTI-style layout: `velodyne/NNNNNN.bin`,
/// `labels/NNNNNN.label` (instance ids zero), `poses.txt`, `scene.json`.
pub fn write_sequence(dir: &Path, sequence: &SyntheticSequence) -> Result<()> {
    let velodyne = dir.join("velodyne");
    let labels = dir.join("labels");
    std::fs::create_dir_all(&velodyne)?;
    std::fs::create_dir_all(&labels)?;
    for (t, scan) in sequence.scans.iter().enumerate() {
        write_kitti_points(&velodyne.join(format!("{t:06}.bin")), scan)?;
        let raw: Vec<u32> = sequence.ground_truth[t]
            .iter()
            .map(|&c| pack_label(c, 0))
            .collect();
        write_labels(&labels.join(format!("{t:06}.label")), &raw)?;
    }
    write_poses(&dir.join("poses.txt"), &sequence.poses)?;
    sequence.manifest.write(&dir.join("scene.json"))?;
    Ok(())
}
