//! Moving-object-segmentation adaptation: binary/semantic label modes, the
//! ±1 timestamp input feature, and the reduced cluster count.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::ClusterBatch;
use crate::error::{Error, Result};

/// Binary MOS output classes.
pub const BINARY_STATIC: i32 = 1;
pub const BINARY_MOVING: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosMode {
    /// Static vs moving.
    Binary,
    /// The extended class set with per-class moving variants, unchanged.
    Semantic,
}

/// MOS pipeline switches: fewer clusters, a tighter densification
/// neighborhood, and the timestamp channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosConfig {
    pub mode: MosMode,
    /// Cluster count replacing the semantic default.
    pub n_c: usize,
    pub timestamp_feature: bool,
    /// Densification voxel override, meters.
    pub densify_voxel_size: f64,
}

impl MosConfig {
    pub fn new(mode: MosMode) -> Self {
        MosConfig {
            mode,
            n_c: 5,
            timestamp_feature: true,
            densify_voxel_size: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c < 1 {
            return Err(Error::InvalidParameter("n_c must be >= 1".into()));
        }
        if !self.densify_voxel_size.is_finite() || self.densify_voxel_size <= 0.0 {
            return Err(Error::InvalidParameter(
                "densify_voxel_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Appends the timestamp channel: +1 on points of `current_scan`, −1 on
/// everything older. Fails if the batch already carries one.
pub fn attach_timestamp_feature(batch: ClusterBatch, current_scan: u32) -> Result<ClusterBatch> {
    if batch.layout.timestamp {
        return Err(Error::ContractViolation(
            "batch already carries a timestamp channel".into(),
        ));
    }
    let layout = batch.layout.with_timestamp();
    let mut clusters = batch.clusters;
    for cluster in &mut clusters {
        cluster.layout = layout;
        for p in cluster
            .seed_points
            .iter_mut()
            .chain(cluster.context_points.iter_mut())
        {
            let stamp = if p.scan_index == current_scan { 1.0 } else { -1.0 };
            p.features.push(stamp);
        }
    }
    ClusterBatch::new(clusters)
}

/// Which classes of the extended label set are moving variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosClassConfig {
    pub num_classes: u32,
    pub moving_ids: BTreeSet<i32>,
}

impl MosClassConfig {
    pub fn validate(&self) -> Result<()> {
        for &id in &self.moving_ids {
            if id < 1 || id > self.num_classes as i32 {
                return Err(Error::InvalidParameter(format!(
                    "moving id {id} outside 1..={}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: MosClassConfig = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("MOS class config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// Maps extended semantic labels to MOS labels: binary mode collapses to
/// static(1)/moving(2), semantic mode is the identity on declared classes.
pub fn mos_label_mapping(labels: &[i32], config: &MosClassConfig, mode: MosMode) -> Result<Vec<i32>> {
    config.validate()?;
    labels
        .iter()
        .map(|&label| {
            if label < 1 || label > config.num_classes as i32 {
                return Err(Error::InvalidParameter(format!(
                    "label {label} not declared in the MOS class set"
                )));
            }
            Ok(match mode {
                MosMode::Semantic => label,
                MosMode::Binary => {
                    if config.moving_ids.contains(&label) {
                        BINARY_MOVING
                    } else {
                        BINARY_STATIC
                    }
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densification::Cluster;
    use crate::geometry::{FeatureLayout, LabeledPoint, Point3};

    fn mixed_batch(current_scan: u32) -> ClusterBatch {
        let mut cluster = Cluster::empty(FeatureLayout::OCCUPANCY);
        for i in 0..3u32 {
            cluster.seed_indices.push(i as usize);
            cluster.seed_points.push(LabeledPoint::unlabeled(
                Point3::new(i as f64, 0.0, 0.0),
                vec![1.0],
                current_scan,
                i,
            ));
        }
        for (i, scan) in [(0u32, 2u32), (1, 4), (2, current_scan)].iter() {
            cluster.context_points.push(LabeledPoint {
                position: Point3::new(*i as f64, 1.0, 0.0),
                features: vec![1.0],
                label: 3,
                confidence: 0.8,
                scan_index: *scan,
                source_index: *i + 100,
            });
        }
        ClusterBatch::new(vec![cluster]).unwrap()
    }

    #[test]
    fn timestamp_partitions_by_scan_index() {
        let current = 9;
        let batch = attach_timestamp_feature(mixed_batch(current), current).unwrap();
        assert!(batch.layout.timestamp);
        let channel = batch.layout.timestamp_channel().unwrap();
        for cluster in &batch.clusters {
            for p in cluster.points() {
                let expected = if p.scan_index == current { 1.0 } else { -1.0 };
                assert_eq!(p.features[channel], expected);
            }
        }
    }

    #[test]
    fn seeds_only_cluster_is_all_plus_one() {
        let current = 4;
        let mut cluster = Cluster::empty(FeatureLayout::OCCUPANCY);
        cluster.seed_indices.push(0);
        cluster.seed_points.push(LabeledPoint::unlabeled(
            Point3::ORIGIN,
            vec![1.0],
            current,
            0,
        ));
        let batch = ClusterBatch::new(vec![cluster]).unwrap();
        let stamped = attach_timestamp_feature(batch, current).unwrap();
        let channel = stamped.layout.timestamp_channel().unwrap();
        assert_eq!(stamped.clusters[0].seed_points[0].features[channel], 1.0);
    }

    #[test]
    fn double_attach_is_rejected() {
        let current = 9;
        let once = attach_timestamp_feature(mixed_batch(current), current).unwrap();
        assert!(matches!(
            attach_timestamp_feature(once, current),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn binary_mapping_splits_static_and_moving() {
        let config = MosClassConfig {
            num_classes: 25,
            moving_ids: [20, 21, 22, 23, 24, 25].into_iter().collect(),
        };
        let labels = vec![1, 20, 13, 25];
        let out = mos_label_mapping(&labels, &config, MosMode::Binary).unwrap();
        assert_eq!(out, vec![BINARY_STATIC, BINARY_MOVING, BINARY_STATIC, BINARY_MOVING]);
    }

    #[test]
    fn semantic_mapping_is_identity() {
        let config = MosClassConfig {
            num_classes: 25,
            moving_ids: [20].into_iter().collect(),
        };
        let labels = vec![1, 20, 13];
        let out = mos_label_mapping(&labels, &config, MosMode::Semantic).unwrap();
        assert_eq!(out, labels);
    }

    #[test]
    fn undeclared_label_is_rejected() {
        let config = MosClassConfig {
            num_classes: 5,
            moving_ids: [5].into_iter().collect(),
        };
        assert!(mos_label_mapping(&[6], &config, MosMode::Binary).is_err());
        assert!(mos_label_mapping(&[0], &config, MosMode::Semantic).is_err());
    }

    #[test]
    fn config_defaults() {
        let config = MosConfig::new(MosMode::Binary);
        assert_eq!(config.n_c, 5);
        assert!(config.timestamp_feature);
        assert!((config.densify_voxel_size - 1.0).abs() < 1e-12);
        config.validate().unwrap();
    }
}
