//! Ground-truth map synthesis: what a perfect network would output for a scene.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::maps::{GridSize, MapStack};
use crate::skeleton::{Frame, KinematicTree, Pose};

/// Multi-person ground truth for one image. Persons are camera-absolute
/// poses whose `coords2d` are pixel projections.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    /// `[W, H]` in pixels.
    pub image_size: [usize; 2],
    pub camera: PinholeCamera,
    pub persons: Vec<Pose>,
    pub person_ids: Vec<u32>,
}

impl Scene {
    pub fn empty(image_size: [usize; 2], camera: PinholeCamera) -> Self {
        Self { image_size, camera, persons: Vec::new(), person_ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    /// Checks frames, joint counts and that visible joints project onto their 2D positions.
    pub fn validate(&self, tree: &KinematicTree) -> Result<()> {
        if self.person_ids.len() != self.persons.len() {
            return Err(Error::ShapeMismatch("person_ids and persons differ in length"));
        }
        for p in &self.persons {
            if p.frame != Frame::CameraAbsolute {
                return Err(Error::WrongFrame { expected: "camera_absolute" });
            }
            if p.len() != tree.len() || p.coords2d.len() != tree.len() || p.visible.len() != tree.len() {
                return Err(Error::JointCount { expected: tree.len(), got: p.len() });
            }
            for j in 0..p.len() {
                if !p.visible[j] {
                    continue;
                }
                let uv = self
                    .camera
                    .project(p.coords3d[j])
                    .ok_or(Error::InvalidConfig("visible joint behind the camera"))?;
                let e = p.coords2d[j];
                if (uv[0] - e[0]).abs() > 1e-6 || (uv[1] - e[1]).abs() > 1e-6 {
                    return Err(Error::InvalidConfig("visible joint does not match its projection"));
                }
            }
        }
        Ok(())
    }

    /// Continuous grid coordinates of a pixel position.
    pub fn to_grid(&self, uv: [f64; 2], grid: GridSize) -> [f64; 2] {
        [uv[0] * grid.width as f64 / self.image_size[0] as f64, uv[1] * grid.height as f64 / self.image_size[1] as f64]
    }

    /// Grid cell holding a pixel position (nearest cell), if inside the grid.
    pub fn cell_of(&self, uv: [f64; 2], grid: GridSize) -> Option<(usize, usize)> {
        let g = self.to_grid(uv, grid);
        let (x, y) = (libm::round(g[0]), libm::round(g[1]));
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (x, y) = (x as i64, y as i64);
        grid.contains(x, y).then_some((x as usize, y as usize))
    }

    /// Pixel position of a grid cell (inverse of [`Scene::to_grid`]).
    pub fn to_pixels(&self, cell: [f64; 2], grid: GridSize) -> [f64; 2] {
        [
            cell[0] * self.image_size[0] as f64 / grid.width as f64,
            cell[1] * self.image_size[1] as f64 / grid.height as f64,
        ]
    }

    fn depth(&self, n: usize, tree: &KinematicTree) -> f64 {
        self.persons[n].coords3d[tree.pelvis().0][2]
    }

    /// Person indices in painting order: farthest first, so nearer persons
    /// overwrite; on equal depth the lower index is painted last.
    fn paint_order(&self, tree: &KinematicTree) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.depth(b, tree).total_cmp(&self.depth(a, tree)).then(b.cmp(&a)));
        order
    }

    /// Visible joints of person `n` with their grid cells.
    fn visible_cells(&self, n: usize, grid: GridSize) -> Vec<Option<(usize, usize)>> {
        let p = &self.persons[n];
        (0..p.len()).map(|j| if p.visible[j] { self.cell_of(p.coords2d[j], grid) } else { None }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncodeConfig {
    pub grid: GridSize,
    /// Gaussian standard deviation in grid cells.
    pub sigma: f64,
    /// Disc radius (cells) written around each readout location.
    pub write_radius: usize,
    /// Spacing between consecutive default person tags.
    pub tag_spacing: f64,
}

impl EncodeConfig {
    pub fn new(grid: GridSize) -> Self {
        Self { grid, sigma: 2.0, write_radius: 2, tag_spacing: 4.0 }
    }
}

fn disc(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut cells = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                cells.push((dx, dy));
            }
        }
    }
    cells
}

/// Per joint, the pixel-wise maximum over persons of unit-peak Gaussians
/// centred on each visible joint's cell, truncated at 3 sigma.
pub fn render_heatmaps(scene: &Scene, joints: usize, grid: GridSize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || grid.cells() == 0 {
        return Err(Error::InvalidConfig("sigma must be positive and the grid non-empty"));
    }
    let mut maps = vec![0.0; joints * grid.cells()];
    let reach = 3.0 * sigma;
    let r = libm::ceil(reach) as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for n in 0..scene.len() {
        for (j, cell) in scene.visible_cells(n, grid).into_iter().enumerate().take(joints) {
            let Some((cx, cy)) = cell else { continue };
            let plane = &mut maps[j * grid.cells()..(j + 1) * grid.cells()];
            for dy in -r..=r {
                for dx in -r..=r {
                    let d2 = (dx * dx + dy * dy) as f64;
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if d2 > reach * reach || !grid.contains(x, y) {
                        continue;
                    }
                    let v = libm::exp(-d2 * inv);
                    let i = grid.index(x as usize, y as usize);
                    if v > plane[i] {
                        plane[i] = v;
                    }
                }
            }
        }
    }
    Ok(maps)
}

/// ORPM targets plus the cells that were written and which person owns them.
#[derive(Debug, Clone, PartialEq)]
pub struct OrpmTarget {
    /// `[3][K][H][W]`, mm.
    pub orpm: Vec<f64>,
    /// `[K][H][W]`: cell written by some person.
    pub mask: Vec<bool>,
    /// `[K][H][W]`: index of the person whose value the cell holds.
    pub owner: Vec<Option<u32>>,
}

/// Writes every person's pelvis-relative joint coordinates into the joint's
/// ORPM on discs around each visible readout location. Nearer persons win
/// conflicts.
pub fn encode_orpm(scene: &Scene, tree: &KinematicTree, grid: GridSize, write_radius: usize) -> Result<OrpmTarget> {
    let k = tree.len();
    let cells = grid.cells();
    let mut out =
        OrpmTarget { orpm: vec![0.0; 3 * k * cells], mask: vec![false; k * cells], owner: vec![None; k * cells] };
    let offsets = disc(write_radius);
    for n in scene.paint_order(tree) {
        let rel = scene.persons[n].convert_frame(Frame::PelvisRelative, tree)?;
        let vis = scene.visible_cells(n, grid);
        for j in tree.joints() {
            let value = rel.coords3d[j.0];
            for &loc in tree.readout_locations(j) {
                let Some((cx, cy)) = vis[loc.0] else { continue };
                for &(dx, dy) in &offsets {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if !grid.contains(x, y) {
                        continue;
                    }
                    let c = grid.index(x as usize, y as usize);
                    for (axis, v) in value.iter().enumerate() {
                        out.orpm[(axis * k + j.0) * cells + c] = *v;
                    }
                    out.mask[j.0 * cells + c] = true;
                    out.owner[j.0 * cells + c] = Some(n as u32);
                }
            }
        }
    }
    Ok(out)
}

/// Constant per-person tags written on discs around visible joints; 0 elsewhere.
pub fn synth_embedding_maps(
    scene: &Scene,
    tree: &KinematicTree,
    tags: &[f64],
    grid: GridSize,
    radius: usize,
) -> Result<Vec<f64>> {
    if tags.len() != scene.len() {
        return Err(Error::ShapeMismatch("one tag per person is required"));
    }
    let cells = grid.cells();
    let mut maps = vec![0.0; tree.len() * cells];
    let offsets = disc(radius);
    for n in scene.paint_order(tree) {
        for (j, cell) in scene.visible_cells(n, grid).into_iter().enumerate() {
            let Some((cx, cy)) = cell else { continue };
            for &(dx, dy) in &offsets {
                let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                if grid.contains(x, y) {
                    maps[j * cells + grid.index(x as usize, y as usize)] = tags[n];
                }
            }
        }
    }
    Ok(maps)
}

/// Tags `0, spacing, 2*spacing, ...` in person order.
pub fn default_tags(persons: usize, spacing: f64) -> Vec<f64> {
    (0..persons).map(|n| n as f64 * spacing).collect()
}

/// Full single-scale stack (d = 1) for a scene.
pub fn encode_scene(scene: &Scene, tree: &KinematicTree, cfg: &EncodeConfig, tags: &[f64]) -> Result<MapStack> {
    let k = tree.len();
    let heatmaps = render_heatmaps(scene, k, cfg.grid, cfg.sigma)?;
    let embeddings = synth_embedding_maps(scene, tree, tags, cfg.grid, cfg.write_radius)?;
    let orpm = encode_orpm(scene, tree, cfg.grid, cfg.write_radius)?.orpm;
    Ok(MapStack { grid: cfg.grid, joints: k, dim: 1, heatmaps, embeddings, orpm, orpm_flags: None })
}

/// Grid positions (per person, per joint) of visible joints, as used by the
/// associative-embedding loss.
pub fn gt_positions(scene: &Scene, grid: GridSize) -> Vec<Vec<Option<[usize; 2]>>> {
    (0..scene.len())
        .map(|n| scene.visible_cells(n, grid).into_iter().map(|c| c.map(|(x, y)| [x, y])).collect())
        .collect()
}
