//! End-to-end experiments: generate → encode → corrupt → decode → evaluate,
//! with a manifest that reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use orpm_core::decode::{absolute_localization, decode, DecodedPerson, ReadoutConfig};
use orpm_core::encode::{default_tags, encode_scene, EncodeConfig, Scene};
use orpm_core::metrics::{
    evaluate_frame, match_persons, scaled_match_threshold, FrameTally, Matcher, MetricsReport, PCK_THRESHOLD_MM,
};
use orpm_core::multiscale::{msi_decode, ScalePyramid};
use orpm_core::{GridSize, KinematicTree, Pose};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::{self, PosePerson, PosesFile, TreeFile, FORMAT_VERSION};
use crate::harness::{corrupt_maps, generate_scene, CorruptionConfig, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeSettings {
    pub sigma: f64,
    pub write_radius: usize,
    pub tag_spacing: f64,
}

impl Default for EncodeSettings {
    fn default() -> Self {
        let d = EncodeConfig::new(GridSize::new(1, 1));
        Self { sigma: d.sigma, write_radius: d.write_radius, tag_spacing: d.tag_spacing }
    }
}

impl EncodeSettings {
    pub fn config(&self, grid: GridSize) -> EncodeConfig {
        EncodeConfig { grid, sigma: self.sigma, write_radius: self.write_radius, tag_spacing: self.tag_spacing }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    /// Scale label (input resolution, px).
    pub scale: u32,
    pub grid: GridSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Number of scenes (repetitions).
    pub scenes: usize,
    pub scene: SceneConfig,
    /// Output grid of the single-scale path.
    pub grid: GridSize,
    pub encode: EncodeSettings,
    pub corruption: Option<CorruptionConfig>,
    pub readout: ReadoutConfig,
    /// When present, scenes are encoded at every level and decoded by multi-scale fusion.
    pub pyramid: Option<Vec<PyramidLevel>>,
    /// Matching threshold (px); defaults to 40 px scaled to the image size.
    pub match_threshold_px: Option<f64>,
    pub matcher: Matcher,
    pub pck_threshold_mm: f64,
    /// Estimate camera translations so absolute 3DPCK is reported.
    pub localize: bool,
    /// Tree file; the built-in tree when absent.
    pub tree: Option<TreeFile>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            scenes: 10,
            scene: SceneConfig::default(),
            grid: GridSize::new(384, 216),
            encode: EncodeSettings::default(),
            corruption: None,
            readout: ReadoutConfig::default(),
            pyramid: None,
            match_threshold_px: None,
            matcher: Matcher::Greedy,
            pck_threshold_mm: PCK_THRESHOLD_MM,
            localize: false,
            tree: None,
        }
    }
}

impl ExperimentConfig {
    pub fn tree(&self) -> Result<KinematicTree> {
        match &self.tree {
            Some(t) => t.to_tree(),
            None => Ok(KinematicTree::default_tree()),
        }
    }

    fn match_threshold(&self) -> f64 {
        self.match_threshold_px
            .unwrap_or_else(|| scaled_match_threshold(self.scene.image_size[0].max(self.scene.image_size[1])))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.readout.validate()?;
        ensure!(self.grid.cells() > 0, "grid must be non-empty");
        ensure!(self.pck_threshold_mm > 0.0, "pck_threshold_mm must be positive");
        if let Some(levels) = &self.pyramid {
            ensure!(!levels.is_empty(), "pyramid needs at least one level");
        }
        if let Some(c) = &self.corruption {
            c.validate(&self.tree()?)?;
        }
        Ok(())
    }
}

/// Decoded persons of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoses {
    pub scene: usize,
    pub poses: PosesFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub frames: Vec<FramePoses>,
}

struct SceneResult {
    tally: FrameTally,
    poses: FramePoses,
}

fn decode_scene(
    cfg: &ExperimentConfig,
    tree: &KinematicTree,
    scene: &Scene,
    index: usize,
) -> Result<(Vec<DecodedPerson>, GridSize)> {
    let tags = default_tags(scene.len(), cfg.encode.tag_spacing);
    let corrupt = |maps| match &cfg.corruption {
        Some(c) => corrupt_maps(&maps, tree, c, cfg.scene.seed, index as u64),
        None => Ok(maps),
    };
    match &cfg.pyramid {
        None => {
            let maps = corrupt(encode_scene(scene, tree, &cfg.encode.config(cfg.grid), &tags)?)?;
            Ok((decode(&maps, tree, &cfg.readout)?, cfg.grid))
        }
        Some(levels) => {
            let stacks = levels
                .iter()
                .map(|l| corrupt(encode_scene(scene, tree, &cfg.encode.config(l.grid), &tags)?))
                .collect::<Result<Vec<_>>>()?;
            let pyramid = ScalePyramid::new(levels.iter().map(|l| l.scale).collect(), stacks)?;
            let grid = pyramid.target_grid();
            Ok((msi_decode(&pyramid, tree, &cfg.readout)?, grid))
        }
    }
}

fn run_scene(cfg: &ExperimentConfig, tree: &KinematicTree, index: usize) -> Result<SceneResult> {
    let scene = generate_scene(&cfg.scene, tree, index as u64)?;
    let (people, grid) = decode_scene(cfg, tree, &scene, index)?;
    let mut persons: Vec<PosePerson> =
        people.iter().map(|p| PosePerson::from_decoded(p, tree, grid, scene.image_size)).collect();
    if cfg.localize {
        for person in &mut persons {
            let pose = person.to_pose(tree)?;
            let obs: Vec<Option<[f64; 2]>> =
                pose.visible.iter().zip(&pose.coords2d).map(|(v, uv)| v.then_some(*uv)).collect();
            person.translation_mm =
                absolute_localization(&pose.coords3d, &obs, &scene.camera).ok().map(|l| l.translation);
        }
    }
    let preds: Vec<Pose> = persons.iter().map(|p| p.to_pose(tree)).collect::<Result<_>>()?;
    // Predictions that could not be localised are compared root-aligned only.
    let preds: Vec<Pose> = if cfg.localize && preds.iter().any(|p| p.frame != orpm_core::Frame::CameraAbsolute) {
        preds.into_iter().map(|p| p.convert_frame(orpm_core::Frame::PelvisRelative, tree)).collect::<Result<_, _>>()?
    } else {
        preds
    };
    let m = match_persons(&preds, &scene.persons, cfg.match_threshold(), cfg.matcher);
    let tally = evaluate_frame(&m, &preds, &scene.persons, tree, cfg.pck_threshold_mm)?;
    Ok(SceneResult {
        tally,
        poses: FramePoses { scene: index, poses: PosesFile { format_version: FORMAT_VERSION, persons } },
    })
}

/// Runs every scene (in parallel, results kept in scene order) and reduces
/// the per-scene tallies sequentially. Any failing scene fails the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let tree = cfg.tree()?;
    let results: Vec<SceneResult> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| run_scene(cfg, &tree, i).with_context(|| format!("scene {i}")))
        .collect::<Result<_>>()?;
    let mut total = FrameTally::new(tree.len(), cfg.pck_threshold_mm);
    let mut frames = Vec::with_capacity(results.len());
    for r in results {
        total.merge(&r.tally);
        frames.push(r.poses);
    }
    Ok(ExperimentOutput { report: total.report(&tree), frames })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub rng: String,
    pub experiment: ExperimentConfig,
    pub report_sha256: String,
    pub poses_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialised artifacts of a run.
pub struct Artifacts {
    pub report_json: String,
    pub report_csv: String,
    pub poses_json: String,
    pub manifest: Manifest,
}

pub fn artifacts(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<Artifacts> {
    let report_json = formats::to_json(&out.report)?;
    let poses_json = formats::to_json(&out.frames)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        rng: "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed), stream = scene index".into(),
        experiment: cfg.clone(),
        report_sha256: sha256_hex(report_json.as_bytes()),
        poses_sha256: sha256_hex(poses_json.as_bytes()),
    };
    Ok(Artifacts { report_csv: formats::report_csv(&out.report)?, report_json, poses_json, manifest })
}

/// Writes `report.json`, `report.csv`, `poses.json` and `manifest.json`
/// into `dir`. Nothing is written if the run fails.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Artifacts> {
    let out = run_experiment(cfg)?;
    let a = artifacts(cfg, &out)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    };
    write("report.json", &a.report_json)?;
    write("report.csv", &a.report_csv)?;
    write("poses.json", &a.poses_json)?;
    write("manifest.json", &formats::to_json(&a.manifest)?)?;
    Ok(a)
}

/// Outcome of re-running a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub report_matches: bool,
    pub poses_matches: bool,
    pub report_sha256: String,
}

pub fn verify_manifest(manifest: &Manifest) -> Result<Verification> {
    let out = run_experiment(&manifest.experiment)?;
    let a = artifacts(&manifest.experiment, &out)?;
    Ok(Verification {
        report_matches: a.manifest.report_sha256 == manifest.report_sha256,
        poses_matches: a.manifest.poses_sha256 == manifest.poses_sha256,
        report_sha256: a.manifest.report_sha256,
    })
}

/// Clean roundtrip setup: up to 10 upright-ish persons per 1920x1080 image,
/// decoded on a 384x216 grid, joints of different persons at least 8 cells
/// apart, roots always visible and 15% of the other joints occluded.
pub fn roundtrip_config(scenes: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "roundtrip".into(),
        scenes,
        scene: SceneConfig {
            n_persons: crate::harness::PersonCount::Range { min: 1, max: 10 },
            depth_range_m: [4.0, 12.0],
            image_size: [1920, 1080],
            focal_px: 1000.0,
            occlusion_prob: 0.15,
            protect_roots: true,
            min_separation_px: 40.0,
            seed,
            ..SceneConfig::default()
        },
        grid: GridSize::new(384, 216),
        ..ExperimentConfig::default()
    }
}
