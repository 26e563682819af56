use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use orpm::bench::{bench_csv, bench_decode};
use orpm::experiment::{run_to_dir, verify_manifest, ExperimentConfig, Manifest};
use orpm::formats::{
    self, load_config, load_maps, load_tree, parse_grid, parse_size, read_json, save_maps, PosePerson, PosesFile,
    SceneFile, FORMAT_VERSION,
};
use orpm::harness::{corrupt_maps, generate_scene, CorruptionConfig, SceneConfig};
use orpm_core::decode::{decode, ReadoutConfig};
use orpm_core::encode::{default_tags, encode_orpm, encode_scene, gt_positions, EncodeConfig};
use orpm_core::losses::{ae_loss_terms, expand_orpm_mask, map_l2_loss, total_loss, EmbeddingMaps, LossConfig};
use orpm_core::metrics::{bucketed_report, match_persons, scaled_match_threshold, Matcher, PCK_THRESHOLD_MM};
use orpm_core::multiscale::{fuse_pyramid, ScalePyramid};
use orpm_core::MapStack;

#[derive(Parser)]
#[command(name = "orpm", version, about = "Occlusion-robust pose maps: synthesis, decoding, fusion and evaluation")]
struct Cli {
    /// Kinematic tree JSON (built-in 15-joint tree when omitted).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene.
    Gen {
        /// Scene config (TOML or JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scene index within the seed's run.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render the ground-truth map stack of a scene.
    Encode {
        #[arg(long)]
        scene: PathBuf,
        /// Output grid, WxH cells.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 2)]
        write_radius: usize,
        #[arg(long, default_value_t = 4.0)]
        tag_spacing: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Apply noise, jitter and dropout to a map stack.
    Corrupt {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Decode a map stack into poses.
    Decode {
        #[arg(long)]
        maps: PathBuf,
        /// Readout config (TOML or JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image size WxH used to convert cells to pixels (grid size when omitted).
        #[arg(long)]
        image_size: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fuse per-scale map stacks and decode the result.
    Msi {
        /// One stack per scale, coarsest first.
        #[arg(long = "maps", required = true)]
        maps: Vec<PathBuf>,
        /// Scale labels, comma separated, increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        scales: Vec<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image_size: Option<String>,
        #[arg(long)]
        out_maps: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate decoded poses against a scene.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = PCK_THRESHOLD_MM)]
        threshold_mm: f64,
        /// Matching threshold in pixels (40 px at 1024 px, scaled, when omitted).
        #[arg(long)]
        match_px: Option<f64>,
        #[arg(long, value_enum, default_value = "greedy")]
        matcher: MatcherArg,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Run an experiment file, or re-run and verify a manifest.
    Run {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory (required with --config).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Time the decode stages on synthetic scenes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,10,60")]
        persons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "128x128,384x216")]
        grids: Vec<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compute training losses between predicted and target map stacks.
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Scene supplying joint positions for the embedding loss and the ORPM mask.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Only supervise ORPM cells written for the scene.
        #[arg(long, requires = "scene")]
        masked: bool,
        #[arg(long, default_value_t = 2)]
        write_radius: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.001)]
        lambda_ae: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MatcherArg {
    Greedy,
    Optimal,
}

fn readout_config(path: Option<&PathBuf>) -> Result<ReadoutConfig> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => ReadoutConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_poses(
    out: &std::path::Path,
    people: &[orpm_core::decode::DecodedPerson],
    tree: &orpm_core::KinematicTree,
    maps: &MapStack,
    image_size: Option<&String>,
) -> Result<()> {
    let size = match image_size {
        Some(s) => parse_size(s)?,
        None => [maps.grid.width, maps.grid.height],
    };
    let persons = people.iter().map(|p| PosePerson::from_decoded(p, tree, maps.grid, size)).collect();
    formats::write_json(out, &PosesFile { format_version: FORMAT_VERSION, persons })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let tree = load_tree(cli.tree.as_deref())?;
    match cli.command {
        Command::Gen { config, seed, index, out } => {
            let mut cfg: SceneConfig = match config {
                Some(p) => load_config(&p)?,
                None => SceneConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scene = generate_scene(&cfg, &tree, index)?;
            formats::write_json(&out, &SceneFile::from_scene(&scene, &tree))?;
            eprintln!("{} persons -> {}", scene.len(), out.display());
        }
        Command::Encode { scene, grid, sigma, write_radius, tag_spacing, out } => {
            let scene = read_json::<SceneFile>(&scene)?.to_scene(&tree)?;
            let cfg = EncodeConfig { grid: parse_grid(&grid)?, sigma, write_radius, tag_spacing };
            let maps = encode_scene(&scene, &tree, &cfg, &default_tags(scene.len(), tag_spacing))?;
            save_maps(&out, &maps)?;
        }
        Command::Corrupt { maps, config, seed, out } => {
            let cfg: CorruptionConfig = load_config(&config)?;
            let maps = load_maps(&maps)?;
            save_maps(&out, &corrupt_maps(&maps, &tree, &cfg, seed, 0)?)?;
        }
        Command::Decode { maps, config, image_size, out } => {
            let cfg = readout_config(config.as_ref())?;
            let maps = load_maps(&maps)?;
            let people = decode(&maps, &tree, &cfg)?;
            write_poses(&out, &people, &tree, &maps, image_size.as_ref())?;
            eprintln!("{} persons -> {}", people.len(), out.display());
        }
        Command::Msi { maps, scales, config, image_size, out_maps, out } => {
            ensure!(maps.len() == scales.len(), "{} map files but {} scales", maps.len(), scales.len());
            let cfg = readout_config(config.as_ref())?;
            let stacks = maps.iter().map(|p| load_maps(p)).collect::<Result<Vec<_>>>()?;
            let pyramid = ScalePyramid::new(scales, stacks)?;
            let fused = fuse_pyramid(&pyramid, &tree)?;
            save_maps(&out_maps, &fused)?;
            let people = decode(&fused, &tree, &cfg)?;
            write_poses(&out, &people, &tree, &fused, image_size.as_ref())?;
            eprintln!("{} persons -> {}", people.len(), out.display());
        }
        Command::Eval { pred, scene, threshold_mm, match_px, matcher, out_json, out_csv } => {
            let scene = read_json::<SceneFile>(&scene)?.to_scene(&tree)?;
            let preds: PosesFile = read_json(&pred)?;
            let preds = preds.persons.iter().map(|p| p.to_pose(&tree)).collect::<Result<Vec<_>>>()?;
            let threshold =
                match_px.unwrap_or_else(|| scaled_match_threshold(scene.image_size[0].max(scene.image_size[1])));
            let matcher = match matcher {
                MatcherArg::Greedy => Matcher::Greedy,
                MatcherArg::Optimal => Matcher::Optimal,
            };
            let m = match_persons(&preds, &scene.persons, threshold, matcher);
            let report = bucketed_report(&m, &preds, &scene.persons, &tree, threshold_mm)?;
            formats::write_json(&out_json, &report)?;
            if let Some(p) = out_csv {
                std::fs::write(&p, formats::report_csv(&report)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Run { config, manifest, out } => match (config, manifest) {
            (Some(config), None) => {
                let out = out.context("--out is required with --config")?;
                let cfg: ExperimentConfig = load_config(&config)?;
                let a = run_to_dir(&cfg, &out)?;
                println!("report sha256 {}", a.manifest.report_sha256);
            }
            (None, Some(manifest)) => {
                let manifest: Manifest = read_json(&manifest)?;
                let v = verify_manifest(&manifest)?;
                println!("report sha256 {}", v.report_sha256);
                if !(v.report_matches && v.poses_matches) {
                    bail!(
                        "rerun does not reproduce the manifest (report {}, poses {})",
                        v.report_matches,
                        v.poses_matches
                    );
                }
                println!("manifest reproduced");
            }
            _ => unreachable!("clap enforces exactly one of --config and --manifest"),
        },
        Command::Bench { persons, grids, repeats, out } => {
            let grids = grids.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>>>()?;
            let csv = bench_csv(&bench_decode(&persons, &grids, repeats)?)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Loss { pred, target, scene, masked, write_radius, sigma, lambda_ae } => {
            let cfg = LossConfig { sigma, lambda_ae };
            cfg.validate()?;
            let (pred, target) = (load_maps(&pred)?, load_maps(&target)?);
            ensure!(pred.grid == target.grid && pred.joints == target.joints, "map stacks differ in shape");
            let l2d = map_l2_loss(&pred.heatmaps, &target.heatmaps, None)?;
            let scene = scene.map(|p| read_json::<SceneFile>(&p)?.to_scene(&tree)).transpose()?;
            let mask = match (&scene, masked) {
                (Some(s), true) => Some(expand_orpm_mask(&encode_orpm(s, &tree, target.grid, write_radius)?.mask)),
                _ => None,
            };
            let lorpm = map_l2_loss(&pred.orpm, &target.orpm, mask.as_deref())?;
            let ae = match &scene {
                Some(s) => {
                    ensure!(pred.dim == 1, "the embedding loss needs single-channel embeddings");
                    let maps = EmbeddingMaps::new(&pred.embeddings, pred.joints, pred.grid)?;
                    Some(ae_loss_terms(&maps, &gt_positions(s, pred.grid), &cfg)?)
                }
                None => None,
            };
            let lae = ae.map_or(0.0, |a| a.total());
            let summary = serde_json::json!({
                "l2d": l2d,
                "lorpm": lorpm,
                "lae_pull": ae.map(|a| a.pull),
                "lae_push": ae.map(|a| a.push),
                "lae": lae,
                "total": total_loss(l2d, lorpm, lae, &cfg),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}
