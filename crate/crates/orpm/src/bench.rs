//! Per-stage decode timings on synthetic scenes.

use std::time::Instant;

use anyhow::Result;
use orpm_core::decode::{group_joints, nms_peaks, ReadoutConfig, ReadoutContext};
use orpm_core::encode::{default_tags, encode_scene, EncodeConfig};
use orpm_core::multiscale::{fuse_pyramid, ScalePyramid};
use orpm_core::{GridSize, KinematicTree};
use serde::Serialize;

use crate::harness::{generate_scene, PersonCount, PoseSampler, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub persons: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub stage: &'static str,
    /// Median over repeats.
    pub micros: f64,
    /// Relative spread `(max - min) / median` over repeats.
    pub spread: f64,
}

fn summarize(mut samples: Vec<f64>) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let median = samples[samples.len() / 2];
    let spread = if median > 0.0 { (samples[samples.len() - 1] - samples[0]) / median } else { 0.0 };
    (median, spread)
}

/// A scene with `persons` people filling an image whose aspect matches `grid`.
pub fn bench_scene_config(persons: usize, grid: GridSize, seed: u64) -> SceneConfig {
    let image = [grid.width * 5, grid.height * 5];
    SceneConfig {
        n_persons: PersonCount::Fixed(persons),
        depth_range_m: [8.0, 30.0],
        image_size: image,
        focal_px: image[0] as f64 * 0.6,
        pose_sampler: PoseSampler::RandomArticulated { max_angle_deg: 20.0 },
        min_separation_px: 0.0,
        seed,
        ..SceneConfig::default()
    }
}

/// Times NMS, grouping, readout and two-scale fusion for every size pair.
pub fn bench_decode(persons: &[usize], grids: &[GridSize], repeats: usize) -> Result<Vec<BenchRow>> {
    let tree = KinematicTree::default_tree();
    let cfg = ReadoutConfig::default();
    let repeats = repeats.max(1);
    let mut rows = Vec::new();
    for &grid in grids {
        for &n in persons {
            let scene = generate_scene(&bench_scene_config(n, grid, 7), &tree, 0)?;
            let enc = EncodeConfig::new(grid);
            let maps = encode_scene(&scene, &tree, &enc, &default_tags(n, enc.tag_spacing))?;
            let pyramid = ScalePyramid::new(vec![1, 2], vec![maps.clone(), maps.clone()])?;
            let mut times: [Vec<f64>; 4] = Default::default();
            for _ in 0..repeats {
                let t = Instant::now();
                let dets = nms_peaks(&maps, &cfg);
                times[0].push(t.elapsed().as_secs_f64() * 1e6);
                let t = Instant::now();
                let hyps = group_joints(&dets, &tree, &cfg);
                times[1].push(t.elapsed().as_secs_f64() * 1e6);
                let t = Instant::now();
                let people = ReadoutContext::new(&maps, &tree, &cfg, &dets, &hyps).readout_all();
                times[2].push(t.elapsed().as_secs_f64() * 1e6);
                std::hint::black_box(people);
                let t = Instant::now();
                std::hint::black_box(fuse_pyramid(&pyramid, &tree)?);
                times[3].push(t.elapsed().as_secs_f64() * 1e6);
            }
            for (stage, samples) in ["nms", "grouping", "readout", "fusion"].into_iter().zip(times) {
                let (micros, spread) = summarize(samples);
                rows.push(BenchRow { persons: n, grid_w: grid.width, grid_h: grid.height, stage, micros, spread });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
