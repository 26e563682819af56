//! Training losses as plain functions: associative-embedding grouping loss
//! (with its analytic gradient), map L2 loss and the weighted total.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::maps::GridSize;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    /// Push-loss scale.
    pub sigma: f64,
    /// Weight of the embedding loss in the total.
    pub lambda_ae: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { sigma: 1.0, lambda_ae: 0.001 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.lambda_ae >= 0.0) {
            return Err(Error::InvalidConfig("sigma must be > 0 and lambda_ae >= 0"));
        }
        Ok(())
    }
}

/// Single-channel embedding maps, `[K][H][W]`.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingMaps<'a> {
    pub data: &'a [f64],
    pub joints: usize,
    pub grid: GridSize,
}

impl<'a> EmbeddingMaps<'a> {
    pub fn new(data: &'a [f64], joints: usize, grid: GridSize) -> Result<Self> {
        if data.len() != joints * grid.cells() {
            return Err(Error::ShapeMismatch("embedding buffer is not K*W*H"));
        }
        Ok(Self { data, joints, grid })
    }

    fn index(&self, k: usize, pos: [usize; 2]) -> usize {
        k * self.grid.cells() + self.grid.index(pos[0], pos[1])
    }
}

/// Per person, per joint: ground-truth grid position, or `None` when the
/// joint has no 2D annotation.
pub type GtPositions = [Vec<Option<[usize; 2]>>];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeLoss {
    pub pull: f64,
    pub push: f64,
}

impl AeLoss {
    pub fn total(&self) -> f64 {
        self.pull + self.push
    }
}

/// Embedding values read at each annotated joint, grouped by person; persons
/// with no annotated joint are dropped.
struct Reads {
    values: Vec<Vec<(usize, f64)>>,
    means: Vec<f64>,
}

fn gather(maps: &EmbeddingMaps<'_>, positions: &GtPositions) -> Result<Reads> {
    let mut values = Vec::with_capacity(positions.len());
    for person in positions {
        if person.len() > maps.joints {
            return Err(Error::ShapeMismatch("more joints than embedding maps"));
        }
        let mut reads = Vec::new();
        for (k, pos) in person.iter().enumerate() {
            let Some(pos) = *pos else { continue };
            if pos[0] >= maps.grid.width || pos[1] >= maps.grid.height {
                return Err(Error::OutOfGrid {
                    x: pos[0],
                    y: pos[1],
                    width: maps.grid.width,
                    height: maps.grid.height,
                });
            }
            reads.push((k, maps.data[maps.index(k, pos)]));
        }
        if !reads.is_empty() {
            values.push(reads);
        }
    }
    let means = values.iter().map(|r| r.iter().map(|(_, e)| e).sum::<f64>() / r.len() as f64).collect();
    Ok(Reads { values, means })
}

/// Pull and push terms of the grouping loss. Missing joints are excluded and
/// each person's pull term is normalised by its own joint count.
pub fn ae_loss_terms(maps: &EmbeddingMaps<'_>, positions: &GtPositions, cfg: &LossConfig) -> Result<AeLoss> {
    cfg.validate()?;
    let reads = gather(maps, positions)?;
    let n = reads.values.len();
    if n == 0 {
        return Ok(AeLoss { pull: 0.0, push: 0.0 });
    }
    let nf = n as f64;
    let pull = reads
        .values
        .iter()
        .zip(&reads.means)
        .map(|(r, mean)| r.iter().map(|(_, e)| (mean - e) * (mean - e)).sum::<f64>() / r.len() as f64)
        .sum::<f64>()
        / nf;
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let mut push = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let d = reads.means[a] - reads.means[b];
            push += 2.0 * libm::exp(-d * d * inv);
        }
    }
    push /= nf * nf;
    Ok(AeLoss { pull, push })
}

pub fn ae_loss(maps: &EmbeddingMaps<'_>, positions: &GtPositions, cfg: &LossConfig) -> Result<f64> {
    ae_loss_terms(maps, positions, cfg).map(|l| l.total())
}

/// Analytic gradient of [`ae_loss`] with respect to each read embedding value.
#[derive(Debug, Clone, PartialEq)]
pub struct AeGradient {
    /// Same shape as the positions: `Some(dL/de)` for every annotated joint.
    pub reads: Vec<Vec<Option<f64>>>,
}

impl AeGradient {
    /// Accumulates the read gradients into a `[K][H][W]` map; cells read by
    /// several persons receive the sum.
    pub fn scatter(&self, positions: &GtPositions, joints: usize, grid: GridSize) -> Vec<f64> {
        let mut out = vec![0.0; joints * grid.cells()];
        for (person, grads) in positions.iter().zip(&self.reads) {
            for (k, (pos, g)) in person.iter().zip(grads).enumerate() {
                if let (Some(pos), Some(g)) = (pos, g) {
                    out[k * grid.cells() + grid.index(pos[0], pos[1])] += g;
                }
            }
        }
        out
    }
}

pub fn ae_loss_grad(maps: &EmbeddingMaps<'_>, positions: &GtPositions, cfg: &LossConfig) -> Result<AeGradient> {
    cfg.validate()?;
    let reads = gather(maps, positions)?;
    let n = reads.values.len() as f64;
    let s2 = cfg.sigma * cfg.sigma;
    let inv = 1.0 / (2.0 * s2);

    // d(push)/d(mean_a) for each kept person.
    let push_grad: Vec<f64> = (0..reads.means.len())
        .map(|a| {
            let mut g = 0.0;
            for b in 0..reads.means.len() {
                if a != b {
                    let d = reads.means[a] - reads.means[b];
                    g += -2.0 * d / s2 * libm::exp(-d * d * inv);
                }
            }
            g / (n * n)
        })
        .collect();

    let mut out: Vec<Vec<Option<f64>>> = positions.iter().map(|p| vec![None; p.len()]).collect();
    let mut kept = 0;
    for (person, slot) in positions.iter().zip(out.iter_mut()) {
        if person.iter().all(Option::is_none) {
            continue;
        }
        let r = &reads.values[kept];
        let mean = reads.means[kept];
        let kn = r.len() as f64;
        for &(k, e) in r {
            slot[k] = Some(2.0 * (e - mean) / (n * kn) + push_grad[kept] / kn);
        }
        kept += 1;
    }
    Ok(AeGradient { reads: out })
}

/// Mean squared difference over the cells selected by `mask` (all cells when
/// `None`). Returns 0 when no cell is selected.
pub fn map_l2_loss(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch("prediction and target sizes differ"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    match mask {
        Some(mask) => {
            if mask.len() != pred.len() {
                return Err(Error::ShapeMismatch("mask size differs from maps"));
            }
            for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
                if m {
                    sum += (p - t) * (p - t);
                    count += 1;
                }
            }
        }
        None => {
            for (p, t) in pred.iter().zip(target) {
                sum += (p - t) * (p - t);
            }
            count = pred.len();
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// ORPM mask `[K][H][W]` broadcast over the three coordinate planes.
pub fn expand_orpm_mask(mask: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(3 * mask.len());
    for _ in 0..3 {
        out.extend_from_slice(mask);
    }
    out
}

pub fn total_loss(l2d: f64, lorpm: f64, lae: f64, cfg: &LossConfig) -> f64 {
    l2d + lorpm + cfg.lambda_ae * lae
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid() -> GridSize {
        GridSize::new(4, 4)
    }

    type Cell = [usize; 2];

    /// Two joints, person n reads cell (n, 0) of both maps.
    fn two_person_maps(tags: [f64; 2]) -> (Vec<f64>, Vec<Vec<Option<Cell>>>) {
        let g = grid();
        let mut data = vec![0.0; 2 * g.cells()];
        for k in 0..2 {
            for (n, t) in tags.iter().enumerate() {
                data[k * g.cells() + g.index(n, 0)] = *t;
            }
        }
        let pos = vec![vec![Some([0, 0]), Some([0, 0])], vec![Some([1, 0]), Some([1, 0])]];
        (data, pos)
    }

    #[test]
    fn single_person_constant_is_zero() {
        let g = grid();
        let data = vec![1.5; 3 * g.cells()];
        let maps = EmbeddingMaps::new(&data, 3, g).unwrap();
        let pos = vec![vec![Some([0, 0]), Some([2, 1]), Some([3, 3])]];
        let cfg = LossConfig::default();
        assert_eq!(ae_loss(&maps, &pos, &cfg).unwrap(), 0.0);
        let grad = ae_loss_grad(&maps, &pos, &cfg).unwrap();
        assert!(grad.reads[0].iter().all(|g| *g == Some(0.0)));
    }

    #[test]
    fn separated_pair() {
        let (data, pos) = two_person_maps([0.0, 2.0]);
        let maps = EmbeddingMaps::new(&data, 2, grid()).unwrap();
        let l = ae_loss_terms(&maps, &pos, &LossConfig::default()).unwrap();
        assert_eq!(l.pull, 0.0);
        assert!((l.push - 0.5 * libm::exp(-2.0)).abs() < 1e-15);
        assert!((l.total() - 0.067_667_641_618_306_35).abs() < 1e-12);
    }

    #[test]
    fn colliding_pair() {
        let (data, pos) = two_person_maps([3.0, 3.0]);
        let maps = EmbeddingMaps::new(&data, 2, grid()).unwrap();
        assert_eq!(ae_loss(&maps, &pos, &LossConfig::default()).unwrap(), 0.5);
    }

    #[test]
    fn no_persons_is_zero() {
        let data = vec![0.0; grid().cells()];
        let maps = EmbeddingMaps::new(&data, 1, grid()).unwrap();
        assert_eq!(ae_loss(&maps, &[], &LossConfig::default()).unwrap(), 0.0);
        let missing = vec![vec![None]];
        assert_eq!(ae_loss(&maps, &missing, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn out_of_grid_rejected() {
        let data = vec![0.0; grid().cells()];
        let maps = EmbeddingMaps::new(&data, 1, grid()).unwrap();
        let pos = vec![vec![Some([4, 0])]];
        assert!(matches!(ae_loss(&maps, &pos, &LossConfig::default()), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn missing_joints_renormalise() {
        // Person with reads 1 and 3 (third joint missing): pull = ((2-1)^2 + (2-3)^2)/2 = 1.
        let g = grid();
        let mut data = vec![0.0; 3 * g.cells()];
        data[0] = 1.0;
        data[g.cells()] = 3.0;
        let maps = EmbeddingMaps::new(&data, 3, g).unwrap();
        let pos = vec![vec![Some([0, 0]), Some([0, 0]), None]];
        let l = ae_loss_terms(&maps, &pos, &LossConfig::default()).unwrap();
        assert_eq!(l.pull, 1.0);
        assert_eq!(l.push, 0.0);
    }

    #[test]
    fn l2_examples() {
        let t = vec![0.25, 0.5, 1.0];
        assert_eq!(map_l2_loss(&t, &t, None).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert_eq!(map_l2_loss(&p, &t, None).unwrap(), 1.0);
        let mut q = t.clone();
        q[1] = 7.0;
        assert_eq!(map_l2_loss(&q, &t, Some(&[true, false, true])).unwrap(), 0.0);
        assert_eq!(map_l2_loss(&q, &t, Some(&[false; 3])).unwrap(), 0.0);
        assert!(map_l2_loss(&q, &t[..2], None).is_err());
    }

    #[test]
    fn total_examples() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(1.0, 1.0, 1000.0, &cfg), 3.0);
        let zero = LossConfig { lambda_ae: 0.0, ..cfg };
        assert_eq!(total_loss(0.0, 0.0, 12.5, &zero), 0.0);
        assert_eq!(total_loss(0.75, 2.5, 0.0, &cfg), 3.25);
    }
}
