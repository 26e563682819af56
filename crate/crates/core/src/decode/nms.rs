use alloc::vec::Vec;

use super::{Detection, ReadoutConfig};
use crate::maps::MapStack;
use crate::skeleton::JointId;

/// Local maxima of every heatmap.
///
/// A cell is a peak when its value is at least `tau_c` and it beats every
/// other cell of its `(2w+1)^2` window; equal values are won by the smaller
/// row-major index. Detections come out grouped by joint, row-major within a
/// joint, each carrying the embedding read at its cell.
pub fn nms_peaks(maps: &MapStack, cfg: &ReadoutConfig) -> Vec<Detection> {
    let grid = maps.grid;
    let (w, h) = (grid.width as i64, grid.height as i64);
    let win = cfg.nms_window as i64;
    let mut out = Vec::new();
    for j in 0..maps.joints {
        let joint = JointId(j);
        let plane = maps.heatmap(joint);
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                let v = plane[i];
                if !(v >= cfg.tau_c) {
                    continue;
                }
                let mut is_peak = true;
                'window: for ny in (y - win).max(0)..=(y + win).min(h - 1) {
                    for nx in (x - win).max(0)..=(x + win).min(w - 1) {
                        let ni = (ny * w + nx) as usize;
                        if ni == i {
                            continue;
                        }
                        let u = plane[ni];
                        if u > v || (u == v && ni < i) {
                            is_peak = false;
                            break 'window;
                        }
                    }
                }
                if is_peak {
                    out.push(Detection {
                        joint,
                        x: x as usize,
                        y: y as usize,
                        score: v,
                        tag: maps.tag(joint, x as usize, y as usize).to_vec(),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::GridSize;
    use alloc::vec::Vec;

    fn stack(w: usize, h: usize) -> MapStack {
        MapStack::zeros(1, GridSize::new(w, h), 1)
    }

    /// Independent brute-force oracle: compare against every cell in the window.
    fn oracle(plane: &[f64], w: usize, h: usize, win: usize, tau: f64) -> Vec<(usize, usize)> {
        let mut peaks = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if v < tau {
                    continue;
                }
                let dominated = (0..h).any(|qy| {
                    (0..w).any(|qx| {
                        let near = qx.abs_diff(x) <= win && qy.abs_diff(y) <= win && (qx, qy) != (x, y);
                        let u = plane[qy * w + qx];
                        near && (u > v || (u == v && qy * w + qx < y * w + x))
                    })
                });
                if !dominated {
                    peaks.push((x, y));
                }
            }
        }
        peaks
    }

    fn cfg(window: usize) -> ReadoutConfig {
        ReadoutConfig { tau_c: 0.5, nms_window: window, ..ReadoutConfig::default() }
    }

    #[test]
    fn zero_map_has_no_peaks() {
        assert!(nms_peaks(&stack(16, 16), &cfg(2)).is_empty());
    }

    #[test]
    fn single_gaussian() {
        let mut m = stack(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let (dx, dy) = (x as f64 - 10.0, y as f64 - 10.0);
                let d2 = dx * dx + dy * dy;
                m.heatmaps[y * 32 + x] = libm::exp(-d2 / 8.0);
            }
        }
        let d = nms_peaks(&m, &cfg(2));
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].x, d[0].y, d[0].score), (10, 10, 1.0));
    }

    #[test]
    fn window_controls_separation() {
        let mut m = stack(16, 8);
        m.heatmaps[4 * 16 + 5] = 0.9;
        m.heatmaps[4 * 16 + 8] = 0.8;
        for (win, expected) in [(1, 2), (3, 1)] {
            let got: Vec<_> = nms_peaks(&m, &cfg(win)).iter().map(|d| (d.x, d.y)).collect();
            assert_eq!(got, oracle(&m.heatmaps, 16, 8, win, 0.5));
            assert_eq!(got.len(), expected);
        }
    }

    #[test]
    fn plateau_tie_goes_to_first_cell() {
        let mut m = stack(8, 8);
        m.heatmaps[3 * 8 + 3] = 0.7;
        m.heatmaps[3 * 8 + 4] = 0.7;
        let d = nms_peaks(&m, &cfg(1));
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].x, d[0].y), (3, 3));
    }

    #[test]
    fn matches_oracle_on_pseudo_random_maps() {
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        for trial in 0..50 {
            let (w, h) = (12 + trial % 5, 9 + trial % 3);
            let mut m = stack(w, h);
            for v in m.heatmaps.iter_mut() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                // coarse quantisation makes ties common
                *v = (state % 8) as f64 / 7.0;
            }
            for win in 1..4 {
                let got: Vec<_> = nms_peaks(&m, &cfg(win)).iter().map(|d| (d.x, d.y)).collect();
                assert_eq!(got, oracle(&m.heatmaps, w, h, win, 0.5));
            }
        }
    }
}
