//! K-means over residual points. Deterministic: k-means++ seeding from a
//! fixed RNG seed, tie-breaks to the lowest center id, empty clusters
//! re-seeded from the point farthest from its center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::densification::Cluster;
use crate::geometry::{Point3, ScanCloud};

pub const DEFAULT_CLUSTER_COUNT: usize = 20;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// Result of one k-means run. `assignment[i]` is the cluster of `points[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub centers: Vec<Point3>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }

    /// Within-cluster sum of squared distances.
    pub fn wcss(&self, points: &[Point3]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| p.distance_squared(&self.centers[c]))
            .sum()
    }
}

fn nearest_center(p: Point3, centers: &[Point3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = p.distance_squared(center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn kmeans_plus_plus_init(points: &[Point3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| p.distance_squared(&centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass at existing centers: fall back to uniform.
            rng.gen_range(0..points.len())
        };
        centers.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min(p.distance_squared(&centers[centers.len() - 1]));
        }
    }
    centers
}

fn centroid(points: &[Point3], members: &[usize]) -> Point3 {
    let n = members.len() as f64;
    let mut x = 0.0;
    let mut y = 0.0;
    let mut z = 0.0;
    for &i in members {
        x += points[i].x;
        y += points[i].y;
        z += points[i].z;
    }
    Point3::new(x / n, y / n, z / n)
}

/// Lloyd's algorithm with k-means++ initialization. The effective cluster
/// count is `min(k, points.len())`; the empty input yields zero clusters.
pub fn kmeans(points: &[Point3], k: usize, max_iters: usize, seed: u64) -> ClusterAssignment {
    if points.is_empty() || k == 0 {
        return ClusterAssignment {
            centers: Vec::new(),
            assignment: Vec::new(),
            iterations: 0,
        };
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest_center(*p, &centers);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut member_lists: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            member_lists[c].push(i);
        }
        for c in 0..k {
            if member_lists[c].is_empty() {
                // Re-seed from the point farthest from its current center.
                let farthest = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = points[a].distance_squared(&centers[assignment[a]]);
                        let db = points[b].distance_squared(&centers[assignment[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[c] = points[farthest];
                // Claim the point so a second empty cluster picks another one.
                assignment[farthest] = c;
            } else {
                centers[c] = centroid(points, &member_lists[c]);
            }
        }
    }
    // Final assignment pass so members match the returned centers.
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest_center(*p, &centers);
    }
    ClusterAssignment {
        centers,
        assignment,
        iterations,
    }
}

/// Groups the scan's residual points into clusters of seed points ordered by
/// cluster id, keeping the original scan indices. Clusters that end up empty
/// are dropped.
pub fn extract_residual_clusters(
    scan: &ScanCloud,
    residual_mask: &[bool],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Vec<Cluster> {
    let indices: Vec<usize> = residual_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| r.then_some(i))
        .collect();
    if indices.is_empty() {
        return Vec::new();
    }
    let positions: Vec<Point3> = indices.iter().map(|&i| scan.points[i].position).collect();
    let result = kmeans(&positions, k, max_iters, seed);
    let mut clusters: Vec<Cluster> = (0..result.num_clusters())
        .map(|_| Cluster::empty(scan.layout))
        .collect();
    for (local, &scan_idx) in indices.iter().enumerate() {
        let c = result.assignment[local];
        clusters[c].seed_indices.push(scan_idx);
        clusters[c].seed_points.push(scan.points[scan_idx].clone());
    }
    clusters.retain(|c| !c.seed_indices.is_empty());
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FeatureLayout, Frame, LabeledPoint};
    use proptest::prelude::*;

    fn points_of(coords: &[(f64, f64, f64)]) -> Vec<Point3> {
        coords.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()
    }

    #[test]
    fn empty_input_gives_zero_clusters() {
        let out = kmeans(&[], 5, 10, 0);
        assert_eq!(out.num_clusters(), 0);
        assert!(out.assignment.is_empty());
    }

    #[test]
    fn single_cluster_center_is_centroid() {
        let pts = points_of(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (1.0, 3.0, 0.0)]);
        let out = kmeans(&pts, 1, 20, 0);
        assert_eq!(out.num_clusters(), 1);
        let c = out.centers[0];
        assert!((c.x - 1.0).abs() < 1e-12);
        assert!((c.y - 1.0).abs() < 1e-12);
        assert!((c.z - 0.0).abs() < 1e-12);
    }

    #[test]
    fn more_clusters_than_points_gives_singletons() {
        let pts = points_of(&[(0.0, 0.0, 0.0), (5.0, 0.0, 0.0), (0.0, 5.0, 0.0)]);
        let out = kmeans(&pts, 20, 20, 1);
        assert_eq!(out.num_clusters(), 3);
        let mut seen = out.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
        assert!((out.wcss(&pts)).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_split() {
        let mut coords = Vec::new();
        for i in 0..10 {
            coords.push((0.1 * i as f64, 0.0, 0.0));
            coords.push((100.0 + 0.1 * i as f64, 0.0, 0.0));
        }
        let pts = points_of(&coords);
        let two = kmeans(&pts, 2, 50, 3);
        // Every blob maps to exactly one cluster.
        for chunk in pts.chunks(2) {
            let a = nearest_center(chunk[0], &two.centers);
            let b = nearest_center(chunk[1], &two.centers);
            assert_ne!(a, b);
        }
        let one = kmeans(&pts, 1, 50, 3);
        assert!(two.wcss(&pts) <= one.wcss(&pts));
    }

    #[test]
    fn same_seed_same_assignment() {
        let pts: Vec<Point3> = (0..200)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 0.37).sin() * 10.0, (f * 0.73).cos() * 10.0, f % 5.0)
            })
            .collect();
        let a = kmeans(&pts, 8, 50, 42);
        let b = kmeans(&pts, 8, 50, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn wcss_is_non_increasing_over_iterations() {
        let pts: Vec<Point3> = (0..150)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 1.7) % 13.0, (f * 2.3) % 7.0, (f * 0.9) % 3.0)
            })
            .collect();
        // Lloyd's is deterministic per seed, so capping iterations replays
        // the same trajectory prefix.
        let mut previous = f64::INFINITY;
        for iters in 1..12 {
            let out = kmeans(&pts, 6, iters, 7);
            let wcss = out.wcss(&pts);
            assert!(
                wcss <= previous + 1e-9,
                "wcss rose from {previous} to {wcss} at {iters} iterations"
            );
            previous = wcss;
        }
    }

    fn residual_scan(coords: &[(f64, f64, f64)]) -> ScanCloud {
        let points = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| {
                LabeledPoint::unlabeled(Point3::new(x, y, z), vec![1.0], 0, i as u32)
            })
            .collect();
        ScanCloud::new(points, Frame::World, FeatureLayout::OCCUPANCY)
    }

    #[test]
    fn no_residual_points_no_clusters() {
        let scan = residual_scan(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let clusters = extract_residual_clusters(&scan, &[false, false], 20, 50, 0);
        assert!(clusters.is_empty());
    }

    #[test]
    fn clusters_partition_the_residual_set() {
        let coords: Vec<(f64, f64, f64)> = (0..60)
            .map(|i| ((i % 10) as f64, (i / 10) as f64 * 8.0, 0.0))
            .collect();
        let scan = residual_scan(&coords);
        let mask = vec![true; scan.len()];
        let clusters = extract_residual_clusters(&scan, &mask, 20, 50, 0);
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.seed_indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn mixed_mask_round_trips_indices() {
        let coords: Vec<(f64, f64, f64)> = (0..20).map(|i| (i as f64, 0.0, 0.0)).collect();
        let scan = residual_scan(&coords);
        let mask: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let clusters = extract_residual_clusters(&scan, &mask, 4, 50, 9);
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.seed_indices.clone()).collect();
        seen.sort_unstable();
        let expected: Vec<usize> = (0..20).filter(|i| i % 3 == 0).collect();
        assert_eq!(seen, expected);
    }

    proptest! {
        #[test]
        fn assignment_is_nearest_center(
            coords in proptest::collection::vec(
                ((-20.0f64..20.0), (-20.0f64..20.0), (-5.0f64..5.0)),
                1..120,
            ),
            k in 1usize..10,
            seed in 0u64..32,
        ) {
            let pts = points_of(&coords);
            let out = kmeans(&pts, k, 50, seed);
            prop_assert_eq!(out.assignment.len(), pts.len());
            for (i, p) in pts.iter().enumerate() {
                let d_assigned = p.distance_squared(&out.centers[out.assignment[i]]);
                for c in &out.centers {
                    prop_assert!(d_assigned <= p.distance_squared(c) + 1e-12);
                }
            }
        }
    }
}
