//! Cluster densification: enrich a residual cluster with contextual points.
//!
//! The coarse voxels occupied by the cluster's seeds are subdivided into
//! 3×3×3 sub-voxels. A sub-voxel at offset o ∈ {−1,0,1}³ from the voxel
//! center pulls in the coarse neighbors at offsets {0, o_x}×{0, o_y}×{0, o_z}:
//! a corner sub-voxel adds 7 neighbors plus its own voxel, an edge 3, a face
//! 1, and the center none. Context is every source point inside the selected
//! voxel union, minus the seeds themselves.

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{voxel_key, FeatureLayout, LabeledPoint, Point3};

/// Sub-voxels per axis.
pub const SUBDIVISION: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensificationParams {
    /// Coarse voxel edge length, meters.
    pub voxel_size: f64,
}

impl Default for DensificationParams {
    fn default() -> Self {
        DensificationParams { voxel_size: 2.0 }
    }
}

impl DensificationParams {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !voxel_size.is_finite() || voxel_size <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        Ok(DensificationParams { voxel_size })
    }
}

/// A residual-point group plus its densification context.
///
/// Seeds index into the current scan; context points are copies drawn from
/// the reference cloud and from already-propagated current-scan points, and
/// keep their source labels and confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub seed_indices: Vec<usize>,
    pub seed_points: Vec<LabeledPoint>,
    pub context_points: Vec<LabeledPoint>,
    pub layout: FeatureLayout,
}

impl Cluster {
    pub fn empty(layout: FeatureLayout) -> Self {
        Cluster {
            seed_indices: Vec::new(),
            seed_points: Vec::new(),
            context_points: Vec::new(),
            layout,
        }
    }

    pub fn seed_count(&self) -> usize {
        self.seed_points.len()
    }

    pub fn point_count(&self) -> usize {
        self.seed_points.len() + self.context_points.len()
    }

    /// Seeds first, then context; the exchange protocol and predictions use
    /// this order.
    pub fn points(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.seed_points.iter().chain(self.context_points.iter())
    }
}

/// Coarse voxel key and sub-voxel offset (per-axis −1, 0, or +1) of `p`.
pub fn sub_voxel_offset(p: Point3, voxel_size: f64) -> ((i64, i64, i64), [i8; 3]) {
    let key = voxel_key(p, voxel_size);
    let offsets = [
        (p.x, key.0),
        (p.y, key.1),
        (p.z, key.2),
    ]
    .map(|(coord, k)| {
        let local = coord / voxel_size - k as f64;
        // local lies in [0, 1) up to rounding; clamp guards the edges.
        let third = ((local * SUBDIVISION as f64).floor() as i64).clamp(0, SUBDIVISION - 1);
        (third - 1) as i8
    });
    (key, offsets)
}

/// Coarse-voxel offsets a sub-voxel at `offset` is associated with:
/// {0, o_x} × {0, o_y} × {0, o_z}. Always contains [0, 0, 0].
pub fn neighbor_offsets(offset: [i8; 3]) -> Vec<[i8; 3]> {
    let mut out = vec![[0, 0, 0]];
    for axis in 0..3 {
        if offset[axis] != 0 {
            let mut extended = Vec::with_capacity(out.len() * 2);
            for d in &out {
                let mut with_axis = *d;
                with_axis[axis] = offset[axis];
                extended.push(*d);
                extended.push(with_axis);
            }
            out = extended;
        }
    }
    out
}

/// The coarse voxels selected by a set of seed points: for every seed, its
/// own voxel plus the neighbors associated with its sub-voxel.
pub fn selected_voxel_union(seeds: &[Point3], voxel_size: f64) -> BTreeSet<(i64, i64, i64)> {
    let mut selected = BTreeSet::new();
    for &seed in seeds {
        let (key, offset) = sub_voxel_offset(seed, voxel_size);
        for d in neighbor_offsets(offset) {
            selected.insert((
                key.0 + d[0] as i64,
                key.1 + d[1] as i64,
                key.2 + d[2] as i64,
            ));
        }
    }
    selected
}

/// Fills `cluster.context_points` with every `context_source` point inside
/// the selected voxel union, excluding the seeds themselves (matched by
/// scan and source index).
pub fn densify_cluster(
    cluster: &mut Cluster,
    context_source: &[LabeledPoint],
    params: &DensificationParams,
) -> Result<()> {
    DensificationParams::new(params.voxel_size)?;
    cluster.context_points.clear();
    if cluster.seed_points.is_empty() {
        return Ok(());
    }
    let seeds: Vec<Point3> = cluster.seed_points.iter().map(|p| p.position).collect();
    let selected = selected_voxel_union(&seeds, params.voxel_size);
    let seed_identity: HashSet<(u32, u32)> = cluster
        .seed_points
        .iter()
        .map(|p| (p.scan_index, p.source_index))
        .collect();
    for point in context_source {
        if !selected.contains(&voxel_key(point.position, params.voxel_size)) {
            continue;
        }
        if seed_identity.contains(&(point.scan_index, point.source_index)) {
            continue;
        }
        cluster.context_points.push(point.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UNLABELED;
    use proptest::prelude::*;

    fn seed_cluster(positions: &[(f64, f64, f64)]) -> Cluster {
        let mut cluster = Cluster::empty(FeatureLayout::OCCUPANCY);
        for (i, &(x, y, z)) in positions.iter().enumerate() {
            cluster.seed_indices.push(i);
            cluster.seed_points.push(LabeledPoint::unlabeled(
                Point3::new(x, y, z),
                vec![1.0],
                100,
                i as u32,
            ));
        }
        cluster
    }

    fn context_points(positions: &[(f64, f64, f64)]) -> Vec<LabeledPoint> {
        positions
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| LabeledPoint {
                position: Point3::new(x, y, z),
                features: vec![1.0],
                label: 1,
                confidence: 1.0,
                scan_index: 0,
                source_index: i as u32,
            })
            .collect()
    }

    #[test]
    fn neighbor_offsets_counts_by_sub_voxel_kind() {
        assert_eq!(neighbor_offsets([0, 0, 0]).len(), 1);
        assert_eq!(neighbor_offsets([1, 0, 0]).len(), 2);
        assert_eq!(neighbor_offsets([1, -1, 0]).len(), 4);
        assert_eq!(neighbor_offsets([1, 1, 1]).len(), 8);
    }

    #[test]
    fn all_27_sub_voxel_mappings() {
        // Exhaustive check of the offset rule: the selected set must be
        // exactly {0, o_x} × {0, o_y} × {0, o_z}.
        for ox in -1i8..=1 {
            for oy in -1i8..=1 {
                for oz in -1i8..=1 {
                    let got: BTreeSet<[i8; 3]> =
                        neighbor_offsets([ox, oy, oz]).into_iter().collect();
                    let mut expected = BTreeSet::new();
                    for &dx in &[0, ox] {
                        for &dy in &[0, oy] {
                            for &dz in &[0, oz] {
                                expected.insert([dx, dy, dz]);
                            }
                        }
                    }
                    assert_eq!(got, expected, "offset ({ox},{oy},{oz})");
                }
            }
        }
    }

    #[test]
    fn sub_voxel_offset_identifies_thirds() {
        // Voxel [0,2)^3 with 2 m cells: thirds split at 2/3 and 4/3.
        let (key, off) = sub_voxel_offset(Point3::new(1.0, 1.0, 1.0), 2.0);
        assert_eq!(key, (0, 0, 0));
        assert_eq!(off, [0, 0, 0]);
        let (_, off) = sub_voxel_offset(Point3::new(0.1, 1.0, 1.9), 2.0);
        assert_eq!(off, [-1, 0, 1]);
        // Negative coordinates floor toward -inf.
        let (key, off) = sub_voxel_offset(Point3::new(-0.1, -1.9, -1.0), 2.0);
        assert_eq!(key, (-1, -1, -1));
        assert_eq!(off, [1, -1, 0]);
    }

    #[test]
    fn center_sub_voxel_selects_own_voxel_only() {
        let selected = selected_voxel_union(&[Point3::new(1.0, 1.0, 1.0)], 2.0);
        assert_eq!(selected.len(), 1);
        assert!(selected.contains(&(0, 0, 0)));
    }

    #[test]
    fn corner_sub_voxel_selects_eight_voxels() {
        // (+,+,+) corner of voxel (0,0,0): offsets {0,1}^3.
        let selected = selected_voxel_union(&[Point3::new(1.9, 1.9, 1.9)], 2.0);
        assert_eq!(selected.len(), 8);
        for dx in 0..=1 {
            for dy in 0..=1 {
                for dz in 0..=1 {
                    assert!(selected.contains(&(dx, dy, dz)));
                }
            }
        }
    }

    #[test]
    fn union_contains_every_seed_voxel() {
        let seeds = [
            Point3::new(0.2, 0.3, 1.4),
            Point3::new(-3.0, 5.0, 0.9),
            Point3::new(7.7, -2.2, -0.4),
        ];
        let selected = selected_voxel_union(&seeds, 2.0);
        for s in &seeds {
            assert!(selected.contains(&voxel_key(*s, 2.0)));
        }
    }

    #[test]
    fn empty_context_source_leaves_seeds_only() {
        let mut cluster = seed_cluster(&[(0.5, 0.5, 0.5)]);
        densify_cluster(&mut cluster, &[], &DensificationParams::default()).unwrap();
        assert!(cluster.context_points.is_empty());
        assert_eq!(cluster.point_count(), 1);
    }

    #[test]
    fn context_filtered_by_selected_voxels() {
        // Seed in the center sub-voxel: context only from the same voxel.
        let mut cluster = seed_cluster(&[(1.0, 1.0, 1.0)]);
        let source = context_points(&[
            (0.5, 0.5, 0.5),   // same voxel: kept
            (2.5, 1.0, 1.0),   // +x neighbor: not selected
            (-0.5, 1.0, 1.0),  // -x neighbor: not selected
        ]);
        densify_cluster(&mut cluster, &source, &DensificationParams::default()).unwrap();
        assert_eq!(cluster.context_points.len(), 1);
        assert_eq!(cluster.context_points[0].position, Point3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn seeds_are_excluded_from_context_by_identity() {
        let mut cluster = seed_cluster(&[(1.0, 1.0, 1.0)]);
        // Context source contains a copy of the seed itself.
        let mut source = context_points(&[(0.5, 0.5, 0.5)]);
        source.push(cluster.seed_points[0].clone());
        densify_cluster(&mut cluster, &source, &DensificationParams::default()).unwrap();
        assert_eq!(cluster.context_points.len(), 1);
    }

    #[test]
    fn context_labels_survive() {
        let mut cluster = seed_cluster(&[(1.0, 1.0, 1.0)]);
        let mut source = context_points(&[(0.6, 0.6, 0.6)]);
        source[0].label = 17;
        source[0].confidence = 0.25;
        densify_cluster(&mut cluster, &source, &DensificationParams::default()).unwrap();
        assert_eq!(cluster.context_points[0].label, 17);
        assert_eq!(cluster.context_points[0].confidence, 0.25);
        assert_eq!(cluster.seed_points[0].label, UNLABELED);
    }

    /// Naive oracle: a context point joins if any seed's sub-voxel
    /// association reaches the point's voxel.
    fn context_oracle(
        seeds: &[Point3],
        source: &[LabeledPoint],
        voxel_size: f64,
    ) -> Vec<usize> {
        let mut kept = Vec::new();
        'point: for (i, point) in source.iter().enumerate() {
            let target = voxel_key(point.position, voxel_size);
            for &seed in seeds {
                let (key, offset) = sub_voxel_offset(seed, voxel_size);
                for d in neighbor_offsets(offset) {
                    let candidate = (
                        key.0 + d[0] as i64,
                        key.1 + d[1] as i64,
                        key.2 + d[2] as i64,
                    );
                    if candidate == target {
                        kept.push(i);
                        continue 'point;
                    }
                }
            }
        }
        kept
    }

    proptest! {
        #[test]
        fn densification_matches_naive_oracle(
            seed_coords in proptest::collection::vec(
                ((-6.0f64..6.0), (-6.0f64..6.0), (-6.0f64..6.0)),
                1..12,
            ),
            source_coords in proptest::collection::vec(
                ((-8.0f64..8.0), (-8.0f64..8.0), (-8.0f64..8.0)),
                0..200,
            ),
        ) {
            let mut cluster = seed_cluster(&seed_coords);
            let source = context_points(&source_coords);
            densify_cluster(&mut cluster, &source, &DensificationParams::default()).unwrap();
            let got: Vec<usize> = cluster
                .context_points
                .iter()
                .map(|p| p.source_index as usize)
                .collect();
            let seeds: Vec<Point3> = seed_coords
                .iter()
                .map(|&(x, y, z)| Point3::new(x, y, z))
                .collect();
            let expected = context_oracle(&seeds, &source, 2.0);
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn adding_a_seed_never_shrinks_the_union(
            seed_coords in proptest::collection::vec(
                ((-6.0f64..6.0), (-6.0f64..6.0), (-6.0f64..6.0)),
                1..10,
            ),
            extra in ((-6.0f64..6.0), (-6.0f64..6.0), (-6.0f64..6.0)),
        ) {
            let seeds: Vec<Point3> = seed_coords
                .iter()
                .map(|&(x, y, z)| Point3::new(x, y, z))
                .collect();
            let base = selected_voxel_union(&seeds, 2.0);
            let mut grown = seeds.clone();
            grown.push(Point3::new(extra.0, extra.1, extra.2));
            let bigger = selected_voxel_union(&grown, 2.0);
            prop_assert!(base.is_subset(&bigger));
        }

        #[test]
        fn context_stays_within_bound_of_some_seed(
            seed_coords in proptest::collection::vec(
                ((-6.0f64..6.0), (-6.0f64..6.0), (-6.0f64..6.0)),
                1..8,
            ),
            source_coords in proptest::collection::vec(
                ((-12.0f64..12.0), (-12.0f64..12.0), (-12.0f64..12.0)),
                0..100,
            ),
        ) {
            let voxel = 2.0;
            let mut cluster = seed_cluster(&seed_coords);
            let source = context_points(&source_coords);
            densify_cluster(&mut cluster, &source, &DensificationParams { voxel_size: voxel }).unwrap();
            let bound = voxel * (1.0 + 3.0f64.sqrt());
            for ctx in &cluster.context_points {
                let nearest = cluster
                    .seed_points
                    .iter()
                    .map(|s| s.position.distance(&ctx.position))
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(nearest <= bound + 1e-9);
            }
        }
    }
}
