//! Point-cloud primitives: points, rigid poses, labeled scans, voxel
//! subsampling, range cropping, and an exact voxel-accelerated radius search.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Unit, Vector3};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality check on rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Label value for points that have not been assigned a class yet.
pub const UNLABELED: i32 = -1;

/// A position in 3D space, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }
}

/// A rigid transform: orthonormal rotation (det +1) plus translation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Largest deviation of `m` from a proper rotation: max entry of |mᵀm − I|
/// and |det(m) − 1|.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut worst = (m.determinant() - 1.0).abs();
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Nearest rotation to `m` (polar decomposition via SVD, determinant fixed
/// to +1).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the singular direction with the smallest singular value.
        let mut u_fixed = u;
        for i in 0..3 {
            u_fixed[(i, 2)] = -u_fixed[(i, 2)];
        }
        r = u_fixed * v_t;
    }
    r
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite pose entries".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "rotation deviates from orthonormal by {err:.3e} (tolerance {ROTATION_TOLERANCE:.0e})"
            )));
        }
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    /// Builds a pose from a possibly drifted rotation, snapping it to the
    /// nearest proper rotation when it exceeds the tolerance. Returns the
    /// pose and whether re-orthonormalization was applied.
    pub fn new_reorthonormalized(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<(Self, bool)> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite pose entries".into()));
        }
        if orthonormality_error(&rotation) <= ROTATION_TOLERANCE {
            return Ok((
                RigidPose {
                    rotation,
                    translation,
                },
                false,
            ));
        }
        let snapped = nearest_rotation(&rotation);
        let err = orthonormality_error(&snapped);
        if err > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "rotation not recoverable: residual {err:.3e} after polar decomposition"
            )));
        }
        Ok((
            RigidPose {
                rotation: snapped,
                translation,
            },
            true,
        ))
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidPose {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Sensor position in the world frame.
    pub fn center(&self) -> Point3 {
        Point3::from_vector(self.translation)
    }

    /// R·p + t
    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Inverse transform: Rᵀ(p − t).
    pub fn apply_inverse(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation.transpose() * (p.to_vector() - self.translation))
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Which optional channels a point's feature vector carries.
///
/// Channel order is fixed: occupancy, then reflectivity, then timestamp,
/// skipping absent ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub occupancy: bool,
    pub reflectivity: bool,
    pub timestamp: bool,
}

impl FeatureLayout {
    pub const OCCUPANCY: FeatureLayout = FeatureLayout {
        occupancy: true,
        reflectivity: false,
        timestamp: false,
    };
    pub const OCCUPANCY_REFLECTIVITY: FeatureLayout = FeatureLayout {
        occupancy: true,
        reflectivity: true,
        timestamp: false,
    };

    pub fn channel_count(&self) -> usize {
        self.occupancy as usize + self.reflectivity as usize + self.timestamp as usize
    }

    pub fn occupancy_channel(&self) -> Option<usize> {
        self.occupancy.then_some(0)
    }

    pub fn reflectivity_channel(&self) -> Option<usize> {
        self.reflectivity.then_some(self.occupancy as usize)
    }

    pub fn timestamp_channel(&self) -> Option<usize> {
        self.timestamp
            .then_some(self.occupancy as usize + self.reflectivity as usize)
    }

    pub fn with_timestamp(mut self) -> Self {
        self.timestamp = true;
        self
    }
}

/// One LiDAR return with its feature channels and segmentation state.
///
/// `scan_index` is the scan the point was acquired in; `source_index` is the
/// point's position in that scan before any cropping or subsampling. The
/// pair identifies a point across the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3,
    pub features: Vec<f64>,
    pub label: i32,
    pub confidence: f64,
    pub scan_index: u32,
    pub source_index: u32,
}

impl LabeledPoint {
    pub fn unlabeled(position: Point3, features: Vec<f64>, scan_index: u32, source_index: u32) -> Self {
        LabeledPoint {
            position,
            features,
            label: UNLABELED,
            confidence: 0.0,
            scan_index,
            source_index,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.label != UNLABELED
    }
}

/// Coordinate frame a cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Sensor-local coordinates, as acquired.
    Sensor,
    /// Registered world coordinates.
    World,
}

/// An ordered collection of labeled points sharing one frame and layout.
///
/// Point order is stable through every operation that filters a cloud; label
/// files are written in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCloud {
    pub points: Vec<LabeledPoint>,
    pub frame: Frame,
    pub layout: FeatureLayout,
}

impl ScanCloud {
    pub fn new(points: Vec<LabeledPoint>, frame: Frame, layout: FeatureLayout) -> Self {
        ScanCloud {
            points,
            frame,
            layout,
        }
    }

    pub fn empty(frame: Frame, layout: FeatureLayout) -> Self {
        ScanCloud {
            points: Vec::new(),
            frame,
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Tags every point with `scan_index`, keeping `source_index` intact.
    pub fn set_scan_index(&mut self, scan_index: u32) {
        for p in &mut self.points {
            p.scan_index = scan_index;
        }
    }
}

/// Integer voxel coordinates for `p` at the given cell size. Uses
/// mathematical floor, so negative coordinates round toward −∞.
pub fn voxel_key(p: Point3, cell_size: f64) -> (i64, i64, i64) {
    (
        (p.x / cell_size).floor() as i64,
        (p.y / cell_size).floor() as i64,
        (p.z / cell_size).floor() as i64,
    )
}

fn check_positive(value: f64, name: &str) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

/// Registers a sensor-frame cloud into the world frame: p ↦ R·p + t.
/// Labels, features, and point order are unchanged.
pub fn transform_cloud(cloud: &ScanCloud, pose: &RigidPose) -> Result<ScanCloud> {
    if cloud.frame != Frame::Sensor {
        return Err(Error::ContractViolation(
            "transform_cloud expects a sensor-frame cloud".into(),
        ));
    }
    let err = orthonormality_error(pose.rotation());
    if err > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!(
            "rotation deviates from orthonormal by {err:.3e}"
        )));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let mut out = p.clone();
            out.position = pose.apply(p.position);
            out
        })
        .collect();
    Ok(ScanCloud {
        points,
        frame: Frame::World,
        layout: cloud.layout,
    })
}

/// Keeps at most one point per voxel cell: the first in input order. Output
/// order follows input order.
pub fn voxel_subsample(cloud: &ScanCloud, cell_size: f64) -> Result<ScanCloud> {
    check_positive(cell_size, "cell_size")?;
    let mut seen: HashSet<(i64, i64, i64)> = HashSet::with_capacity(cloud.len());
    let points = cloud
        .points
        .iter()
        .filter(|p| seen.insert(voxel_key(p.position, cell_size)))
        .cloned()
        .collect();
    Ok(ScanCloud {
        points,
        frame: cloud.frame,
        layout: cloud.layout,
    })
}

/// Retains exactly the points with ‖p − center‖ ≤ max_range, preserving order.
pub fn range_crop(cloud: &ScanCloud, center: Point3, max_range: f64) -> Result<ScanCloud> {
    check_positive(max_range, "max_range")?;
    let limit = max_range * max_range;
    let points = cloud
        .points
        .iter()
        .filter(|p| p.position.distance_squared(&center) <= limit)
        .cloned()
        .collect();

    Ok(ScanCloud {
        points,
        frame: cloud.frame,
        layout: cloud.layout,
    })
}

/// Uniform-grid spatial hash over a fixed set of positions.
///
/// Radius queries are exact for radii up to the cell size: all candidates
/// live in the query's voxel or one of its 26 neighbors.
#[derive(Debug, Clone)]
pub struct VoxelIndex {
    cell_size: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    positions: Vec<Point3>,
}

impl VoxelIndex {
    pub fn build(positions: Vec<Point3>, cell_size: f64) -> Result<Self> {
        check_positive(cell_size, "cell_size")?;
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells
                .entry(voxel_key(*p, cell_size))
                .or_default()
                .push(i as u32);
        }
        Ok(VoxelIndex {
            cell_size,
            cells,
            positions,
        })
    }

    pub fn from_cloud(cloud: &ScanCloud, cell_size: f64) -> Result<Self> {
        Self::build(cloud.positions(), cell_size)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn position(&self, index: usize) -> Point3 {
        self.positions[index]
    }

    /// All indexed points within `radius` of `query` (closed ball), each
    /// with its Euclidean distance, sorted by point index.
    ///
    /// `radius` must not exceed the cell size; beyond that the 27-voxel scan
    /// would no longer be exhaustive.
    pub fn radius_neighbors(&self, query: Point3, radius: f64) -> Result<Vec<(usize, f64)>> {
        check_positive(radius, "radius")?;
        if radius > self.cell_size {
            return Err(Error::InvalidParameter(format!(
                "radius {radius} exceeds index cell size {}",
                self.cell_size
            )));
        }
        let (kx, ky, kz) = voxel_key(query, self.cell_size);
        let limit = radius * radius;
        let mut hits = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(indices) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &i in indices {
                        let d2 = self.positions[i as usize].distance_squared(&query);
                        if d2 <= limit {
                            hits.push((i as usize, d2.sqrt()));
                        }
                    }
                }
            }
        }
        hits.sort_unstable_by_key(|&(i, _)| i);
        Ok(hits)
    }
}
