//! Sliding-window reference cloud: the last `window` segmented scans,
//! cropped and subsampled, merged under one voxel index. Also hosts the
//! pose-noise injector used to simulate poor trajectory estimates.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{
    range_crop, voxel_subsample, Frame, LabeledPoint, Point3, RigidPose, ScanCloud, VoxelIndex,
};

/// Defaults: 20-scan window, 5 cm subsample grid, 75 m range, 0.80 m index cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCloudConfig {
    /// Window capacity in scans.
    pub window: usize,
    /// Per-scan subsample grid applied before merging, meters.
    pub subsample_cell: f64,
    /// Acquisition range crop around the ego position, meters.
    pub max_range: f64,
    /// Cell size of the merged voxel index, meters.
    pub index_cell: f64,
}

impl Default for ReferenceCloudConfig {
    fn default() -> Self {
        ReferenceCloudConfig {
            window: 20,
            subsample_cell: 0.05,
            max_range: 75.0,
            index_cell: 0.80,
        }
    }
}

impl ReferenceCloudConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        for (value, name) in [
            (self.subsample_cell, "subsample_cell"),
            (self.max_range, "max_range"),
            (self.index_cell, "index_cell"),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Pseudo-dense reference cloud built from the previous segmented scans.
///
/// Every stored point carries a label >= 1 with confidence in (0, 1]; scans
/// are cropped around their own ego position and subsampled per scan before
/// merging, so cross-scan duplicates inside one voxel are kept.
#[derive(Debug, Clone)]
pub struct ReferenceCloud {
    config: ReferenceCloudConfig,
    window: VecDeque<(u32, ScanCloud)>,
    merged: Vec<LabeledPoint>,
    index: VoxelIndex,
}

impl ReferenceCloud {
    pub fn new(config: ReferenceCloudConfig) -> Result<Self> {
        config.validate()?;
        let index = VoxelIndex::build(Vec::new(), config.index_cell)?;
        Ok(ReferenceCloud {
            config,
            window: VecDeque::new(),
            merged: Vec::new(),
            index,
        })
    }

    pub fn config(&self) -> &ReferenceCloudConfig {
        &self.config
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window_scan_indices(&self) -> Vec<u32> {
        self.window.iter().map(|(i, _)| *i).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    pub fn len(&self) -> usize {
        self.merged.len()
    }

    /// Merged window points, oldest scan first.
    pub fn points(&self) -> &[LabeledPoint] {
        &self.merged
    }

    /// Voxel index over the merged points; indices match `points()`.
    pub fn index(&self) -> &VoxelIndex {
        &self.index
    }

    /// Crops `scan` around `ego_center`, subsamples it, appends it to the
    /// window, and evicts the oldest scan when the window overflows.
    ///
    /// The scan must be in the world frame and fully labeled (label >= 1,
    /// confidence > 0 on every point).
    pub fn push_segmented_scan(
        &mut self,
        scan_index: u32,
        scan: &ScanCloud,
        ego_center: Point3,
    ) -> Result<()> {
        if scan.frame != Frame::World {
            return Err(Error::ContractViolation(
                "reference scans must be in the world frame".into(),
            ));
        }
        for (i, p) in scan.points.iter().enumerate() {
            if p.label < 1 || p.confidence <= 0.0 || p.confidence.is_nan() {
                return Err(Error::ContractViolation(format!(
                    "point {i} of scan {scan_index} is not segmented (label {}, confidence {})",
                    p.label, p.confidence
                )));
            }
        }
        let cropped = range_crop(scan, ego_center, self.config.max_range)?;
        let reduced = voxel_subsample(&cropped, self.config.subsample_cell)?;
        self.window.push_back((scan_index, reduced));
        while self.window.len() > self.config.window {
            self.window.pop_front();
        }
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        self.merged.clear();
        for (_, scan) in &self.window {
            self.merged.extend(scan.points.iter().cloned());
        }
        let positions = self.merged.iter().map(|p| p.position).collect();
        self.index = VoxelIndex::build(positions, self.config.index_cell)
            .expect("index_cell validated at construction");
    }
}

/// Noise magnitudes for the SLAM-failure experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseNoiseParams {
    /// Per-axis standard deviation of the translation offset, meters.
    pub sigma_translation: f64,
    /// Standard deviation of the perturbation angle, radians.
    pub sigma_rotation: f64,
    pub seed: u64,
}

impl PoseNoiseParams {
    pub fn new(sigma_translation: f64, sigma_rotation: f64, seed: u64) -> Result<Self> {
        if !sigma_translation.is_finite()
            || !sigma_rotation.is_finite()
            || sigma_translation < 0.0
            || sigma_rotation < 0.0
        {
            return Err(Error::InvalidParameter(
                "noise sigmas must be non-negative".into(),
            ));
        }
        Ok(PoseNoiseParams {
            sigma_translation,
            sigma_rotation,
            seed,
        })
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to each translation and composes
/// each rotation with a random axis-angle rotation of angle |N(0, sigma)|.
/// Deterministic for a fixed seed.
pub fn perturb_poses(poses: &[RigidPose], params: &PoseNoiseParams) -> Result<Vec<RigidPose>> {
    PoseNoiseParams::new(params.sigma_translation, params.sigma_rotation, params.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(poses.len());
    for pose in poses {
        let mut translation = pose.translation();
        if params.sigma_translation > 0.0 {
            let normal = Normal::new(0.0, params.sigma_translation)
                .expect("validated sigma");
            translation += Vector3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            );
        }
        let mut rotation = *pose.rotation();
        if params.sigma_rotation > 0.0 {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let normal = Normal::new(0.0, params.sigma_rotation).expect("validated sigma");
            let angle: f64 = normal.sample(&mut rng);
            let noise = RigidPose::from_axis_angle(
                Vector3::new(axis[0], axis[1], axis[2]),
                angle.abs(),
                Vector3::zeros(),
            );
            rotation = noise.rotation() * rotation;
        }
        // Noise keeps the rotation orthonormal up to rounding.
        out.push(RigidPose::new(rotation, translation).map_err(|e| {
            Error::InvalidPose(format!("perturbed pose left the rotation group: {e}"))
        })?);
    }
    Ok(out)
}
