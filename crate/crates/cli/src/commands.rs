use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use labelprop_core::accumulation::{perturb_poses as perturb, PoseNoiseParams, ReferenceCloudConfig};
use labelprop_core::backend::{
    ExternalProcessBackend, GroundTruthOracle, NearestNeighborBaseline, SegmentationBackend,
};
use labelprop_core::dataset::{
    label_class, pack_label, read_labels, read_poses, write_kitti_points, write_labels,
    write_poses, SceneManifest, SequenceReader,
};
use labelprop_core::densification::DensificationParams;
use labelprop_core::evaluation::{
    beam_subsample, evaluation_report, BeamInference, ConfusionMatrix, KeepPattern,
    LabelSetMapping,
};
use labelprop_core::mos::{MosConfig, MosMode};
use labelprop_core::pipeline::{export_training_clusters, process_sequence, PipelineConfig};
use labelprop_core::propagation::PropagationParams;
use labelprop_core::synthetic;

use crate::{BackendArgs, PipelineArgs, UsageError};

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn load_sequence(args: &PipelineArgs) -> Result<(SequenceReader, Vec<labelprop_core::ScanCloud>)> {
    require_exists(&args.sequence, "sequence directory")?;
    let reader = SequenceReader::open(&args.sequence)
        .with_context(|| format!("opening sequence {}", args.sequence.display()))?;
    let mut scans = Vec::with_capacity(reader.len());
    for i in 0..reader.len() {
        scans.push(reader.load_scan(i)?);
    }
    Ok((reader, scans))
}

fn load_poses(args: &PipelineArgs, reader: &SequenceReader) -> Result<Vec<labelprop_core::RigidPose>> {
    match &args.poses {
        Some(path) => {
            require_exists(path, "pose file")?;
            let loaded = read_poses(path)?;
            for line in &loaded.reorthonormalized_lines {
                eprintln!(
                    "warning: {}:{line}: rotation drifted and was re-orthonormalized",
                    path.display()
                );
            }
            if loaded.poses.len() != reader.len() {
                bail!(
                    "{}: {} poses for {} scans",
                    path.display(),
                    loaded.poses.len(),
                    reader.len()
                );
            }
            Ok(loaded.poses)
        }
        None => {
            for line in &reader.loaded_poses().reorthonormalized_lines {
                eprintln!(
                    "warning: poses.txt:{line}: rotation drifted and was re-orthonormalized"
                );
            }
            Ok(reader.poses().to_vec())
        }
    }
}

fn build_config(args: &PipelineArgs, reader: &SequenceReader) -> Result<PipelineConfig> {
    let manifest = match &args.partition {
        Some(path) => {
            require_exists(path, "partition file")?;
            SceneManifest::read(path)?
        }
        None => reader
            .manifest()
            .cloned()
            .ok_or_else(|| anyhow!(
                "{}: no scene.json manifest; pass --partition FILE",
                args.sequence.display()
            ))?,
    };
    let mut config = PipelineConfig::new(manifest.partition()?);
    config.propagation = PropagationParams::new(args.dp, 0.5, config.propagation.index_cell)?;
    config.reference = ReferenceCloudConfig {
        window: args.ns,
        subsample_cell: args.subsample,
        max_range: args.range,
        ..ReferenceCloudConfig::default()
    };
    config.cluster_count = args.kc;
    config.seed = args.seed;
    if let Some(mode) = &args.mos {
        let mode = match mode.as_str() {
            "binary" => MosMode::Binary,
            "semantic" => MosMode::Semantic,
            other => bail!("unknown MOS mode {other:?}; expected binary or semantic"),
        };
        let mut mos = MosConfig::new(mode);
        if let Some(voxel) = args.densify_voxel {
            mos.densify_voxel_size = voxel;
        }
        config = config.with_mos(mos);
    } else if let Some(voxel) = args.densify_voxel {
        config.densification = DensificationParams::new(voxel)?;
    }
    config.validate()?;
    Ok(config)
}

fn build_backend(
    args: &BackendArgs,
    reader: &SequenceReader,
) -> Result<Box<dyn SegmentationBackend>> {
    if args.backend == "oracle" {
        if !reader.has_labels() {
            bail!("the oracle backend needs a labels/ directory in the sequence");
        }
        let mut gt = Vec::with_capacity(reader.len());
        for i in 0..reader.len() {
            gt.push(reader.load_labels(i)?.iter().map(|&r| label_class(r)).collect());
        }
        return Ok(Box::new(GroundTruthOracle::new(gt)));
    }
    if args.backend == "nn" {
        return Ok(Box::new(NearestNeighborBaseline::default()));
    }
    if let Some(dir) = args.backend.strip_prefix("external:") {
        let backend = match &args.backend_cmd {
            Some(cmd) => ExternalProcessBackend::with_command(dir, cmd.clone()),
            None => ExternalProcessBackend::new(dir),
        };
        return Ok(Box::new(backend));
    }
    bail!(
        "unknown backend {:?}; expected oracle, nn, or external:DIR",
        args.backend
    );
}

fn load_ground_truth(reader: &SequenceReader) -> Result<Vec<Vec<i32>>> {
    if !reader.has_labels() {
        bail!("sequence has no labels/ directory with ground truth");
    }
    let mut gt = Vec::with_capacity(reader.len());
    for i in 0..reader.len() {
        gt.push(reader.load_labels(i)?.iter().map(|&r| label_class(r)).collect());
    }
    Ok(gt)
}

pub fn run(pipeline: &PipelineArgs, backend_args: &BackendArgs, out: &Path) -> Result<()> {
    let (reader, scans) = load_sequence(pipeline)?;
    let poses = load_poses(pipeline, &reader)?;
    let config = build_config(pipeline, &reader)?;
    let backend = build_backend(backend_args, &reader)?;
    let result = process_sequence(&scans, &poses, &config, backend.as_ref())?;
    fs::create_dir_all(out)?;
    for (i, scan_result) in result.scans.iter().enumerate() {
        let raw: Vec<u32> = scan_result
            .labels
            .iter()
            .map(|&c| pack_label(c, 0))
            .collect();
        write_labels(&out.join(format!("{}.label", reader.scan_stem(i))), &raw)?;
    }
    let total_points: usize = result.scans.iter().map(|s| s.len()).sum();
    let propagated: usize = result.scans.iter().map(|s| s.propagated).sum();
    println!(
        "processed {} scans ({} points, {:.1}% propagated, backend {})",
        result.scans.len(),
        total_points,
        100.0 * propagated as f64 / total_points.max(1) as f64,
        backend.name()
    );
    print!("{}", result.timing.render());
    Ok(())
}

pub fn export_train(pipeline: &PipelineArgs, out: &Path, dropout: f64) -> Result<()> {
    let (reader, scans) = load_sequence(pipeline)?;
    let poses = load_poses(pipeline, &reader)?;
    let config = build_config(pipeline, &reader)?;
    let gt = load_ground_truth(&reader)?;
    let summary =
        export_training_clusters(&scans, &poses, &gt, &config, out, dropout, pipeline.seed)?;
    println!(
        "exported {} clusters from {} scans ({} scans with reflectivity dropped)",
        summary.clusters_written,
        summary.scans,
        summary.dropped_scans.len()
    );
    Ok(())
}

fn load_label_dir(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "label"))
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, p)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{}: no .label files", dir.display());
    }
    Ok(files)
}

pub fn eval(labelset: &str, gt_dir: &Path, pred_dir: &Path, eval_name: Option<&str>) -> Result<()> {
    require_exists(gt_dir, "ground-truth directory")?;
    require_exists(pred_dir, "prediction directory")?;
    let mapping = if Path::new(labelset).is_file() {
        LabelSetMapping::from_path(Path::new(labelset))?
    } else {
        LabelSetMapping::builtin(labelset)?
    };
    if mapping.provisional {
        eprintln!(
            "warning: label set {} carries a provisional source-id table",
            mapping.name
        );
    }
    let gt_files = load_label_dir(gt_dir)?;
    let pred_files = load_label_dir(pred_dir)?;
    if gt_files.len() != pred_files.len() {
        bail!(
            "{} ground-truth files vs {} prediction files",
            gt_files.len(),
            pred_files.len()
        );
    }
    let mut matrix = ConfusionMatrix::new(mapping.num_target_classes());
    for ((gt_stem, gt_path), (pred_stem, pred_path)) in gt_files.iter().zip(&pred_files) {
        if gt_stem != pred_stem {
            bail!("scan name mismatch: {gt_stem} vs {pred_stem}");
        }
        let gt: Vec<i32> = read_labels(gt_path)?.iter().map(|&r| label_class(r)).collect();
        let pred: Vec<i32> = read_labels(pred_path)?
            .iter()
            .map(|&r| label_class(r))
            .collect();
        if gt.len() != pred.len() {
            bail!(
                "{}: {} ground-truth labels vs {} predictions",
                gt_stem,
                gt.len(),
                pred.len()
            );
        }
        let gt = mapping.remap_ground_truths(&gt)?;
        let pred = mapping.remap_predictions(&pred)?;
        matrix.accumulate(&gt, &pred)?;
    }
    let eval_name = eval_name
        .map(str::to_owned)
        .or_else(|| gt_dir.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "eval".into());
    print!("{}", evaluation_report(&eval_name, &mapping, &matrix));
    Ok(())
}

pub fn subsample_beams(sequence: &Path, out: &Path, keep: &str, num_beams: u32) -> Result<()> {
    require_exists(sequence, "sequence directory")?;
    let keep = KeepPattern::parse(keep)?;
    let reader = SequenceReader::open(sequence)?;
    let velodyne = out.join("velodyne");
    fs::create_dir_all(&velodyne)?;
    let labels_dir = out.join("labels");
    if reader.has_labels() {
        fs::create_dir_all(&labels_dir)?;
    }
    let mut warned = false;
    for i in 0..reader.len() {
        let scan = reader.load_scan(i)?;
        let result = beam_subsample(&scan, &keep, num_beams)?;
        if result.inference == BeamInference::QuantileFallback && !warned {
            eprintln!(
                "warning: scan {i}: more than {num_beams} distinct elevations; \
                 falling back to equal-count binning"
            );
            warned = true;
        }
        write_kitti_points(
            &velodyne.join(format!("{}.bin", reader.scan_stem(i))),
            &result.cloud,
        )?;
        if reader.has_labels() {
            let raw = reader.load_labels(i)?;
            let kept: Vec<u32> = result.kept_indices.iter().map(|&j| raw[j]).collect();
            write_labels(
                &labels_dir.join(format!("{}.label", reader.scan_stem(i))),
                &kept,
            )?;
        }
    }
    write_poses(&out.join("poses.txt"), reader.poses())?;
    if let Some(manifest) = reader.manifest() {
        manifest.write(&out.join("scene.json"))?;
    }
    println!("wrote {} subsampled scans to {}", reader.len(), out.display());
    Ok(())
}

pub fn perturb_poses(poses: &Path, out: &Path, sigma_t: f64, sigma_r: f64, seed: u64) -> Result<()> {
    require_exists(poses, "pose file")?;
    let loaded = read_poses(poses)?;
    let params = PoseNoiseParams::new(sigma_t, sigma_r, seed)?;
    let noisy = perturb(&loaded.poses, &params)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_poses(out, &noisy)?;
    println!(
        "perturbed {} poses (sigma_t {sigma_t} m, sigma_r {sigma_r} rad, seed {seed})",
        noisy.len()
    );
    Ok(())
}

pub fn bench(pipeline: &PipelineArgs, backend_args: &BackendArgs) -> Result<()> {
    let (reader, scans) = load_sequence(pipeline)?;
    let poses = load_poses(pipeline, &reader)?;
    let config = build_config(pipeline, &reader)?;
    let backend = build_backend(backend_args, &reader)?;
    let result = process_sequence(&scans, &poses, &config, backend.as_ref())?;
    let total_points: usize = result.scans.iter().map(|s| s.len()).sum();
    println!(
        "{} scans, {} points, backend {}",
        result.scans.len(),
        total_points,
        backend.name()
    );
    print!("{}", result.timing.render());
    Ok(())
}

pub fn make_fixture(out: &Path, scans: usize, seed: u64, no_mover: bool) -> Result<()> {
    let sequence = if no_mover {
        synthetic::static_scene(scans, seed)
    } else {
        synthetic::mover_scene(scans, seed)
    };
    synthetic::write_sequence(out, &sequence)?;
    // Ship an identity mapping so eval works on the fixture out of the box.
    let mut mapping = LabelSetMapping::identity(sequence.manifest.num_classes, "fixture");
    for (class, name) in mapping
        .target_classes
        .iter_mut()
        .zip(&sequence.manifest.class_names)
    {
        class.name = name.clone();
    }
    fs::write(
        out.join("labelset.json"),
        serde_json::to_string_pretty(&mapping)?,
    )?;
    println!(
        "wrote {} synthetic scans ({} points each) to {}",
        sequence.len(),
        sequence.scans.first().map(|s| s.len()).unwrap_or(0),
        out.display()
    );
    Ok(())
}
