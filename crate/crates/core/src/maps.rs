//! Dense per-joint maps on a shared grid.
//!
//! Layouts (x fastest):
//! - heatmaps: `[K][H][W]`
//! - embeddings: `[K][H][W][d]`
//! - orpm: `[3][K][H][W]`, channel order X, Y, Z (mm)

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::skeleton::{JointId, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSize {
    pub width: usize,
    pub height: usize,
}

impl GridSize {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn cells(self) -> usize {
        self.width * self.height
    }

    pub fn contains(self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn index(self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub grid: GridSize,
    pub joints: usize,
    pub dim: usize,
    pub heatmaps: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub orpm: Vec<f64>,
    /// Per `[K][H][W]` cell: `true` where the ORPM value carries no information
    /// (zero fusion weight). `None` means every cell is usable.
    pub orpm_flags: Option<Vec<bool>>,
}

impl MapStack {
    pub fn zeros(joints: usize, grid: GridSize, dim: usize) -> Self {
        let n = joints * grid.cells();
        Self {
            grid,
            joints,
            dim,
            heatmaps: vec![0.0; n],
            embeddings: vec![0.0; n * dim],
            orpm: vec![0.0; 3 * n],
            orpm_flags: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints * self.grid.cells();
        if self.dim == 0 {
            return Err(Error::ShapeMismatch("embedding dimension must be at least 1"));
        }
        if self.heatmaps.len() != n || self.embeddings.len() != n * self.dim || self.orpm.len() != 3 * n {
            return Err(Error::ShapeMismatch("map buffer sizes do not match K, W, H, d"));
        }
        if let Some(f) = &self.orpm_flags {
            if f.len() != n {
                return Err(Error::ShapeMismatch("orpm flag buffer size"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn plane(&self, j: JointId) -> usize {
        j.0 * self.grid.cells()
    }

    #[inline]
    pub fn cell_index(&self, j: JointId, x: usize, y: usize) -> usize {
        self.plane(j) + self.grid.index(x, y)
    }

    pub fn heatmap(&self, j: JointId) -> &[f64] {
        let p = self.plane(j);
        &self.heatmaps[p..p + self.grid.cells()]
    }

    pub fn heatmap_mut(&mut self, j: JointId) -> &mut [f64] {
        let p = self.plane(j);
        let n = self.grid.cells();
        &mut self.heatmaps[p..p + n]
    }

    #[inline]
    pub fn heat(&self, j: JointId, x: usize, y: usize) -> f64 {
        self.heatmaps[self.cell_index(j, x, y)]
    }

    #[inline]
    pub fn tag(&self, j: JointId, x: usize, y: usize) -> &[f64] {
        let i = self.cell_index(j, x, y) * self.dim;
        &self.embeddings[i..i + self.dim]
    }

    #[inline]
    pub fn orpm_index(&self, axis: usize, j: JointId, x: usize, y: usize) -> usize {
        (axis * self.joints + j.0) * self.grid.cells() + self.grid.index(x, y)
    }

    #[inline]
    pub fn orpm_at(&self, j: JointId, x: usize, y: usize) -> Vec3 {
        [
            self.orpm[self.orpm_index(0, j, x, y)],
            self.orpm[self.orpm_index(1, j, x, y)],
            self.orpm[self.orpm_index(2, j, x, y)],
        ]
    }

    pub fn set_orpm(&mut self, j: JointId, x: usize, y: usize, v: Vec3) {
        for (axis, value) in v.into_iter().enumerate() {
            let i = self.orpm_index(axis, j, x, y);
            self.orpm[i] = value;
        }
    }

    /// `true` if the ORPM cell was flagged as carrying no information.
    pub fn orpm_flagged(&self, j: JointId, x: usize, y: usize) -> bool {
        self.orpm_flags.as_ref().is_some_and(|f| f[self.cell_index(j, x, y)])
    }
}
