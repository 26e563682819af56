//! Multi-scale inference: per-scale stacks are upsampled to the finest grid
//! and fused into one stack.
//!
//! - heatmaps: mean over scales;
//! - embeddings: per-cell concatenation (d = number of scales);
//! - ORPM: mean over scales weighted, at each cell, by the sum of the
//!   heatmaps of the joint's readout locations.
//!
//! Means are evaluated as `reference + weighted mean of differences` and
//! clamped to the range of the inputs, so fusing identical values returns
//! them bit for bit and zero-weight scales never perturb the result.

use alloc::vec;
use alloc::vec::Vec;

use crate::decode::{self, DecodedPerson, ReadoutConfig};
use crate::error::{Error, Result};
use crate::maps::{GridSize, MapStack};
use crate::skeleton::{JointId, KinematicTree};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    /// Input resolutions (longest side, px), strictly increasing.
    pub scales: Vec<u32>,
    pub stacks: Vec<MapStack>,
}

impl ScalePyramid {
    pub fn new(scales: Vec<u32>, stacks: Vec<MapStack>) -> Result<Self> {
        if stacks.is_empty() || scales.len() != stacks.len() {
            return Err(Error::InvalidConfig("pyramid needs one stack per scale and at least one scale"));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("scales must be strictly increasing"));
        }
        let k = stacks[0].joints;
        for s in &stacks {
            s.validate()?;
            if s.joints != k {
                return Err(Error::ShapeMismatch("stacks disagree on the joint count"));
            }
            if s.dim != 1 {
                return Err(Error::ShapeMismatch("per-scale stacks must have single-channel embeddings"));
            }
        }
        Ok(Self { scales, stacks })
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }

    /// Grid of the highest-resolution scale.
    pub fn target_grid(&self) -> GridSize {
        self.stacks.last().unwrap().grid
    }
}

/// Source coordinate sampled by target cell `dst` (grid coordinates scale linearly).
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let s = dst as f64 * src_len as f64 / dst_len as f64;
    s.min((src_len - 1) as f64)
}

fn bilinear_plane(src: &[f64], from: GridSize, to: GridSize, out: &mut [f64]) {
    for y in 0..to.height {
        let sy = source_coord(y, from.height, to.height);
        let y0 = sy as usize;
        let y1 = (y0 + 1).min(from.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..to.width {
            let sx = source_coord(x, from.width, to.width);
            let x0 = sx as usize;
            let x1 = (x0 + 1).min(from.width - 1);
            let fx = sx - x0 as f64;
            let at = |xx: usize, yy: usize| src[from.index(xx, yy)];
            let top = if fx == 0.0 { at(x0, y0) } else { at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx };
            let v = if fy == 0.0 {
                top
            } else {
                let bottom = if fx == 0.0 { at(x0, y1) } else { at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx };
                top * (1.0 - fy) + bottom * fy
            };
            out[to.index(x, y)] = v;
        }
    }
}

/// Upsamples a stack: heatmaps and ORPM bilinearly, embeddings by nearest
/// neighbour (tags are identities, blending two persons' tags would invent a third).
pub fn resize_maps(stack: &MapStack, target: GridSize) -> Result<MapStack> {
    stack.validate()?;
    let from = stack.grid;
    if target.width < from.width || target.height < from.height {
        return Err(Error::Downscale {
            source_w: from.width,
            source_h: from.height,
            target_w: target.width,
            target_h: target.height,
        });
    }
    if target == from {
        return Ok(stack.clone());
    }
    let (k, d) = (stack.joints, stack.dim);
    let (src_cells, dst_cells) = (from.cells(), target.cells());
    let mut out = MapStack::zeros(k, target, d);
    for plane in 0..k {
        bilinear_plane(
            &stack.heatmaps[plane * src_cells..(plane + 1) * src_cells],
            from,
            target,
            &mut out.heatmaps[plane * dst_cells..(plane + 1) * dst_cells],
        );
    }
    for plane in 0..3 * k {
        bilinear_plane(
            &stack.orpm[plane * src_cells..(plane + 1) * src_cells],
            from,
            target,
            &mut out.orpm[plane * dst_cells..(plane + 1) * dst_cells],
        );
    }
    for j in 0..k {
        for y in 0..target.height {
            let sy = (libm::round(source_coord(y, from.height, target.height)) as usize).min(from.height - 1);
            for x in 0..target.width {
                let sx = (libm::round(source_coord(x, from.width, target.width)) as usize).min(from.width - 1);
                let s = (j * src_cells + from.index(sx, sy)) * d;
                let t = (j * dst_cells + target.index(x, y)) * d;
                out.embeddings[t..t + d].copy_from_slice(&stack.embeddings[s..s + d]);
            }
        }
    }
    if let Some(flags) = &stack.orpm_flags {
        let mut f = vec![false; k * dst_cells];
        for j in 0..k {
            for y in 0..target.height {
                let sy = (libm::round(source_coord(y, from.height, target.height)) as usize).min(from.height - 1);
                for x in 0..target.width {
                    let sx = (libm::round(source_coord(x, from.width, target.width)) as usize).min(from.width - 1);
                    f[j * dst_cells + target.index(x, y)] = flags[j * src_cells + from.index(sx, sy)];
                }
            }
        }
        out.orpm_flags = Some(f);
    }
    Ok(out)
}

fn check_aligned(stacks: &[MapStack]) -> Result<()> {
    let first = stacks.first().ok_or(Error::InvalidConfig("no stacks to fuse"))?;
    if stacks.iter().any(|s| s.grid != first.grid || s.joints != first.joints) {
        return Err(Error::ShapeMismatch("stacks must be resized to a common grid before fusion"));
    }
    Ok(())
}

/// Shifted weighted mean of `values` with non-negative `weights`, clamped to
/// the range of positively weighted values. `None` when all weights are zero.
fn weighted_mean(values: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let (reference, _) = values.clone().find(|(_, w)| *w > 0.0)?;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut lo, mut hi) = (reference, reference);
    for (v, w) in values {
        if w > 0.0 {
            num += w * (v - reference);
            den += w;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Some((reference + num / den).clamp(lo, hi))
}

/// Mean of the resized heatmaps over scales.
pub fn fuse_heatmaps(stacks: &[MapStack]) -> Result<Vec<f64>> {
    check_aligned(stacks)?;
    let n = stacks[0].heatmaps.len();
    Ok((0..n).map(|i| weighted_mean(stacks.iter().map(move |s| (s.heatmaps[i], 1.0))).unwrap()).collect())
}

/// Per-cell concatenation of the resized embeddings, in pyramid order.
pub fn fuse_embeddings(stacks: &[MapStack]) -> Result<Vec<f64>> {
    check_aligned(stacks)?;
    if stacks.iter().any(|s| s.dim != 1) {
        return Err(Error::ShapeMismatch("per-scale embeddings must be single-channel"));
    }
    let m = stacks.len();
    let n = stacks[0].embeddings.len();
    let mut out = vec![0.0; n * m];
    for (i, s) in stacks.iter().enumerate() {
        for (c, v) in s.embeddings.iter().enumerate() {
            out[c * m + i] = *v;
        }
    }
    Ok(out)
}

/// Fused ORPM and, per `[K][H][W]` cell, whether every weight was zero (value set to 0).
pub fn fuse_orpm(stacks: &[MapStack], tree: &KinematicTree) -> Result<(Vec<f64>, Vec<bool>)> {
    check_aligned(stacks)?;
    let first = &stacks[0];
    if first.joints != tree.len() {
        return Err(Error::JointCount { expected: tree.len(), got: first.joints });
    }
    let (k, cells) = (first.joints, first.grid.cells());
    let mut orpm = vec![0.0; 3 * k * cells];
    let mut flags = vec![false; k * cells];
    let mut weights = vec![0.0; stacks.len()];
    for j in tree.joints() {
        let locs = tree.readout_locations(j);
        for c in 0..cells {
            for (w, s) in weights.iter_mut().zip(stacks) {
                *w = locs.iter().map(|l| s.heatmaps[l.0 * cells + c]).sum();
            }
            if weights.iter().all(|w| !(*w > 0.0)) {
                flags[j.0 * cells + c] = true;
                continue;
            }
            for axis in 0..3 {
                let i = (axis * k + j.0) * cells + c;
                let values = stacks.iter().zip(&weights).map(move |(s, w)| (s.orpm[i], *w));
                orpm[i] = weighted_mean(values).unwrap();
            }
        }
    }
    Ok((orpm, flags))
}

/// Resizes every scale to the finest grid and fuses the three map families.
pub fn fuse_pyramid(pyramid: &ScalePyramid, tree: &KinematicTree) -> Result<MapStack> {
    let target = pyramid.target_grid();
    let resized = pyramid.stacks.iter().map(|s| resize_maps(s, target)).collect::<Result<Vec<_>>>()?;
    let (orpm, flags) = fuse_orpm(&resized, tree)?;
    Ok(MapStack {
        grid: target,
        joints: resized[0].joints,
        dim: resized.len(),
        heatmaps: fuse_heatmaps(&resized)?,
        embeddings: fuse_embeddings(&resized)?,
        orpm,
        orpm_flags: Some(flags),
    })
}

/// Fusion followed by ordinary decoding with the d = M tag distance.
pub fn msi_decode(pyramid: &ScalePyramid, tree: &KinematicTree, cfg: &ReadoutConfig) -> Result<Vec<DecodedPerson>> {
    let fused = fuse_pyramid(pyramid, tree)?;
    decode::decode(&fused, tree, cfg)
}

/// Bounds of the per-scale values at a fused cell, for invariant checks.
pub fn value_range(stacks: &[MapStack], j: JointId, axis: usize, x: usize, y: usize) -> (f64, f64) {
    stacks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        let v = s.orpm[s.orpm_index(axis, j, x, y)];
        (lo.min(v), hi.max(v))
    })
}
