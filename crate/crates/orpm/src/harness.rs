//! Synthetic scenes and controlled corruption of map stacks.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`; scene `i` of a run uses word stream `i`, corruption
//! of scene `i` uses seed `seed ^ CORRUPTION_SALT` and stream `i`.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Result};
use orpm_core::encode::Scene;
use orpm_core::{Frame, JointId, KinematicTree, MapStack, PinholeCamera, Pose, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const CORRUPTION_SALT: u64 = 0x6f72_706d_6e6f_6973;

/// Generator for scene `index` of a run seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PersonCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl PersonCount {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            PersonCount::Fixed(n) => n,
            PersonCount::Range { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseSampler {
    /// Upright template with sampled bone lengths.
    Standing,
    /// Template bones rotated by random angles up to `max_angle_deg` about
    /// the camera x and z axes, plus a random body yaw.
    RandomArticulated { max_angle_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_persons: PersonCount,
    /// Pelvis depth range (m).
    pub depth_range_m: [f64; 2],
    /// `[W, H]` pixels.
    pub image_size: [usize; 2],
    pub focal_px: f64,
    pub pose_sampler: PoseSampler,
    /// Probability that a non-protected joint is occluded.
    pub occlusion_prob: f64,
    /// Never occlude pelvis and neck.
    pub protect_roots: bool,
    /// Allow persons partly outside the image (their outside joints become invisible).
    pub crop_at_border: bool,
    /// Without cropping, every joint keeps this distance (px) from the border.
    pub border_px: f64,
    /// Minimum pixel distance between joints of different persons (0 disables).
    pub min_separation_px: f64,
    /// Attempts per person before generation fails.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_persons: PersonCount::Range { min: 1, max: 10 },
            depth_range_m: [4.0, 12.0],
            image_size: [1920, 1080],
            focal_px: 1000.0,
            pose_sampler: PoseSampler::RandomArticulated { max_angle_deg: 25.0 },
            occlusion_prob: 0.0,
            protect_roots: true,
            crop_at_border: false,
            border_px: 16.0,
            min_separation_px: 0.0,
            max_attempts: 2000,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if let PersonCount::Range { min, max } = self.n_persons {
            ensure!(min <= max, "n_persons: empty range");
        }
        let [lo, hi] = self.depth_range_m;
        ensure!(lo > 0.0 && lo <= hi, "depth_range_m must satisfy 0 < min <= max");
        ensure!(self.image_size[0] > 0 && self.image_size[1] > 0, "image_size must be positive");
        ensure!(self.focal_px > 0.0, "focal_px must be positive");
        ensure!((0.0..=1.0).contains(&self.occlusion_prob), "occlusion_prob must lie in [0, 1]");
        ensure!(self.border_px >= 0.0 && self.min_separation_px >= 0.0, "distances must be non-negative");
        ensure!(self.max_attempts > 0, "max_attempts must be positive");
        if let PoseSampler::RandomArticulated { max_angle_deg } = self.pose_sampler {
            ensure!(max_angle_deg >= 0.0, "max_angle_deg must be non-negative");
        }
        Ok(())
    }

    pub fn camera(&self) -> PinholeCamera {
        let [w, h] = self.image_size;
        PinholeCamera::new(self.focal_px, self.focal_px, w as f64 / 2.0, h as f64 / 2.0)
    }
}

/// Template bone direction in the person frame (x right, y down, z away).
fn template_direction(tree: &KinematicTree, j: JointId) -> Vec3 {
    use orpm_core::Limb::*;
    let parent = tree.parent(j);
    let first_of_limb = parent.is_some_and(|p| tree.limb_of(p) != tree.limb_of(j));
    match tree.limb_of(j) {
        Torso | HeadChain => [0.0, -1.0, 0.0],
        LeftArm | LeftLeg if first_of_limb => [1.0, 0.0, 0.0],
        RightArm | RightLeg if first_of_limb => [-1.0, 0.0, 0.0],
        _ => [0.0, 1.0, 0.0],
    }
}

fn rotate_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rotate_y(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn rotate_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Parent-relative offsets of one sampled person (pelvis entry zero).
pub fn sample_offsets(tree: &KinematicTree, sampler: PoseSampler, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let band = 0.9 * tree.tolerance();
    let yaw = match sampler {
        PoseSampler::Standing => 0.0,
        PoseSampler::RandomArticulated { .. } => rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    };
    let mut out = vec![[0.0; 3]; tree.len()];
    for &j in &tree.order()[1..] {
        let length = tree.bone_length(j) * (1.0 + rng.random_range(-band..=band));
        let mut d = template_direction(tree, j);
        if let PoseSampler::RandomArticulated { max_angle_deg } = sampler {
            let m = max_angle_deg.to_radians();
            if m > 0.0 {
                d = rotate_x(d, rng.random_range(-m..=m));
                d = rotate_z(d, rng.random_range(-m..=m));
            }
        }
        let d = rotate_y(d, yaw);
        out[j.0] = [d[0] * length, d[1] * length, d[2] * length];
    }
    out
}

fn inside(uv: [f64; 2], size: [usize; 2], margin: f64) -> bool {
    uv[0] >= margin && uv[1] >= margin && uv[0] < size[0] as f64 - margin && uv[1] < size[1] as f64 - margin
}

/// One scene, fully determined by `cfg.seed` and `index`.
pub fn generate_scene(cfg: &SceneConfig, tree: &KinematicTree, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let camera = cfg.camera();
    let n = cfg.n_persons.sample(&mut rng);
    let mut scene = Scene::empty(cfg.image_size, camera);
    let [zmin, zmax] = cfg.depth_range_m.map(|m| m * 1000.0);
    let sep2 = cfg.min_separation_px * cfg.min_separation_px;
    let pelvis = tree.pelvis();
    for id in 0..n {
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let mut offsets = sample_offsets(tree, cfg.pose_sampler, &mut rng);
            let z = if zmax > zmin { rng.random_range(zmin..=zmax) } else { zmin };
            let (w, h) = (cfg.image_size[0] as f64, cfg.image_size[1] as f64);
            let uv = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            offsets[pelvis.0] = camera.back_project(uv, z);
            let mut pose = Pose::new(offsets, Frame::ParentRelative).convert_frame(Frame::CameraAbsolute, tree)?;
            let projected: Option<Vec<[f64; 2]>> = pose.coords3d.iter().map(|p| camera.project(*p)).collect();
            let Some(projected) = projected else { continue };
            let margin = if cfg.crop_at_border { 0.0 } else { cfg.border_px };
            let in_image: Vec<bool> = projected.iter().map(|&p| inside(p, cfg.image_size, margin)).collect();
            if !cfg.crop_at_border && !in_image.iter().all(|v| *v) {
                continue;
            }
            if !in_image[pelvis.0] || !in_image[tree.neck().0] {
                continue;
            }
            let clash = sep2 > 0.0
                && scene.persons.iter().any(|other| {
                    other
                        .coords2d
                        .iter()
                        .any(|a| projected.iter().any(|b| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) < sep2))
                });
            if clash {
                continue;
            }
            pose.visible = tree
                .joints()
                .map(|j| {
                    let protected = cfg.protect_roots && tree.is_root(j);
                    let occluded = !protected && cfg.occlusion_prob > 0.0 && rng.random_bool(cfg.occlusion_prob);
                    in_image[j.0] && !occluded
                })
                .collect();
            pose.coords2d = projected;
            placed = Some(pose);
            break;
        }
        match placed {
            Some(p) => {
                scene.persons.push(p);
                scene.person_ids.push(id as u32);
            }
            None => bail!("could not place person {id} of scene {index} after {} attempts", cfg.max_attempts),
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Std-dev of additive heatmap noise (values re-clamped to [0, 1]).
    pub heatmap_noise_sigma: f64,
    /// Each heatmap plane is shifted by a random integer offset up to this many cells.
    pub peak_jitter_cells: usize,
    /// Std-dev of additive ORPM noise (mm).
    pub orpm_noise_mm: f64,
    /// Std-dev of additive embedding noise.
    pub tag_noise: f64,
    /// Per joint name: probability of removing each peak of that joint.
    pub peak_dropout_prob: BTreeMap<String, f64>,
    /// Radius (cells) zeroed around a dropped peak.
    pub dropout_radius: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            heatmap_noise_sigma: 0.0,
            peak_jitter_cells: 0,
            orpm_noise_mm: 0.0,
            tag_noise: 0.0,
            peak_dropout_prob: BTreeMap::new(),
            dropout_radius: 6,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self, tree: &KinematicTree) -> Result<()> {
        ensure!(
            self.heatmap_noise_sigma >= 0.0 && self.orpm_noise_mm >= 0.0 && self.tag_noise >= 0.0,
            "noise levels must be non-negative"
        );
        for (name, p) in &self.peak_dropout_prob {
            tree.joint(name)?;
            ensure!((0.0..=1.0).contains(p), "peak_dropout_prob[{name}] must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Local maxima at or above 0.5 (window 1), row-major.
fn strong_peaks(plane: &[f64], w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = plane[y * w + x];
            if v < 0.5 {
                continue;
            }
            let mut best = true;
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let i = ny * w + nx;
                    if i != y * w + x && (plane[i] > v || (plane[i] == v && i < y * w + x)) {
                        best = false;
                    }
                }
            }
            if best {
                out.push((x, y));
            }
        }
    }
    out
}

/// Applies, in order: peak dropout, peak jitter, heatmap noise (then
/// clamping), ORPM noise and tag noise. A zero config returns the input unchanged.
pub fn corrupt_maps(
    maps: &MapStack,
    tree: &KinematicTree,
    cfg: &CorruptionConfig,
    seed: u64,
    index: u64,
) -> Result<MapStack> {
    cfg.validate(tree)?;
    ensure!(maps.joints == tree.len(), "map stack has {} joints, tree has {}", maps.joints, tree.len());
    let mut out = maps.clone();
    let mut rng = scene_rng(seed ^ CORRUPTION_SALT, index);
    let g = maps.grid;
    let (w, h) = (g.width, g.height);

    for (name, &p) in &cfg.peak_dropout_prob {
        let j = tree.joint(name)?;
        let plane = out.heatmap_mut(j);
        if p >= 1.0 {
            plane.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let r = cfg.dropout_radius as i64;
        for (px, py) in strong_peaks(plane, w, h) {
            if !rng.random_bool(p) {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (px as i64 + dx, py as i64 + dy);
                    if dx * dx + dy * dy <= r * r && g.contains(x, y) {
                        plane[g.index(x as usize, y as usize)] = 0.0;
                    }
                }
            }
        }
    }

    if cfg.peak_jitter_cells > 0 {
        let m = cfg.peak_jitter_cells as i64;
        for j in tree.joints() {
            let (dx, dy) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            let src = out.heatmap(j).to_vec();
            let plane = out.heatmap_mut(j);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sx, sy) = (x - dx, y - dy);
                    plane[g.index(x as usize, y as usize)] =
                        if g.contains(sx, sy) { src[g.index(sx as usize, sy as usize)] } else { 0.0 };
                }
            }
        }
    }

    if cfg.heatmap_noise_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.heatmap_noise_sigma)?;
        for v in &mut out.heatmaps {
            *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if cfg.orpm_noise_mm > 0.0 {
        let n = Normal::new(0.0, cfg.orpm_noise_mm)?;
        for v in &mut out.orpm {
            *v += n.sample(&mut rng);
        }
    }
    if cfg.tag_noise > 0.0 {
        let n = Normal::new(0.0, cfg.tag_noise)?;
        for v in &mut out.embeddings {
            *v += n.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_has_mean_lengths_when_standing() {
        let tree = KinematicTree::default_tree();
        let mut rng = scene_rng(1, 0);
        let offsets = sample_offsets(&tree, PoseSampler::Standing, &mut rng);
        for j in tree.joints().skip(1) {
            let l = offsets[j.0].iter().map(|v| v * v).sum::<f64>().sqrt();
            let mean = tree.bone_length(j);
            assert!((l - mean).abs() <= 0.9 * tree.tolerance() * mean + 1e-9);
        }
        let elbow = tree.joint("elbow_L").unwrap();
        assert!(offsets[elbow.0][1] > 0.0);
    }

    #[test]
    fn streams_differ_per_scene() {
        let a: u64 = scene_rng(5, 0).random();
        let b: u64 = scene_rng(5, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, scene_rng(5, 0).random::<u64>());
    }
}
