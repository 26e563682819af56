use alloc::vec::Vec;

use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::skeleton::{distance, Vec3};

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE_MM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// Camera-space position of the pose origin (mm).
    pub translation: Vec3,
    /// Root-mean-square reprojection residual (px) at `translation`.
    pub rms_px: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared residuals after the initial guess and each accepted step.
    pub cost_history: Vec<f64>,
}

/// Translation `t` minimising `sum_j |project(P_j + t) - p_j|^2` over joints
/// with both a 3D coordinate and a 2D observation (pixels).
///
/// Starts from the linear least-squares solution of the cross-multiplied
/// projection equations and refines with Levenberg-Marquardt.
pub fn absolute_localization(
    pose3d: &[Vec3],
    pose2d: &[Option<[f64; 2]>],
    camera: &PinholeCamera,
) -> Result<Localization> {
    let pairs: Vec<(Vec3, [f64; 2])> = pose3d.iter().zip(pose2d).filter_map(|(p, uv)| uv.map(|uv| (*p, uv))).collect();
    if pairs.len() < 3 {
        return Err(Error::InsufficientData("at least 3 joints with 2D and 3D positions are needed"));
    }
    let spread = pairs.iter().flat_map(|a| pairs.iter().map(move |b| distance(a.0, b.0))).fold(0.0, f64::max);
    if spread < 1e-6 {
        return Err(Error::InsufficientData("3D joints are coincident"));
    }

    let mut t = linear_init(&pairs, camera)?;
    let min_depth = pairs.iter().map(|(p, _)| p[2] + t[2]).fold(f64::INFINITY, f64::min);
    if min_depth <= 0.0 {
        t[2] += 1000.0 - min_depth;
    }

    let mut cost = cost_at(&pairs, camera, t);
    let mut history = alloc::vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&pairs, camera, t);
        let mut a = jtj;
        for i in 0..3 {
            a[i][i] += lambda * jtj[i][i].max(1e-12);
        }
        let Some(step) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else { break };
        let step_norm = libm::sqrt(step[0] * step[0] + step[1] * step[1] + step[2] * step[2]);
        let cand = [t[0] + step[0], t[1] + step[1], t[2] + step[2]];
        let cand_cost = cost_at(&pairs, camera, cand);
        if cand_cost <= cost {
            t = cand;
            cost = cand_cost;
            history.push(cost);
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if step_norm < STEP_TOLERANCE_MM || cost == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(Localization {
        translation: t,
        rms_px: libm::sqrt(cost / pairs.len() as f64),
        iterations,
        converged,
        cost_history: history,
    })
}

fn cost_at(pairs: &[(Vec3, [f64; 2])], cam: &PinholeCamera, t: Vec3) -> f64 {
    let mut c = 0.0;
    for (p, uv) in pairs {
        let q = [p[0] + t[0], p[1] + t[1], p[2] + t[2]];
        match cam.project(q) {
            Some(proj) => {
                let (du, dv) = (proj[0] - uv[0], proj[1] - uv[1]);
                c += du * du + dv * dv;
            }
            None => return f64::INFINITY,
        }
    }
    c
}

fn normal_equations(pairs: &[(Vec3, [f64; 2])], cam: &PinholeCamera, t: Vec3) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for (p, uv) in pairs {
        let (x, y, z) = (p[0] + t[0], p[1] + t[1], p[2] + t[2]);
        let ru = cam.fx * x / z + cam.cx - uv[0];
        let rv = cam.fy * y / z + cam.cy - uv[1];
        let ju = [cam.fx / z, 0.0, -cam.fx * x / (z * z)];
        let jv = [0.0, cam.fy / z, -cam.fy * y / (z * z)];
        for a in 0..3 {
            jtr[a] += ju[a] * ru + jv[a] * rv;
            for b in 0..3 {
                jtj[a][b] += ju[a] * ju[b] + jv[a] * jv[b];
            }
        }
    }
    (jtj, jtr)
}

/// `fx*tx - (u-cx)*tz = (u-cx)*Z - fx*X` and the analogous row for v.
fn linear_init(pairs: &[(Vec3, [f64; 2])], cam: &PinholeCamera) -> Result<Vec3> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (p, uv) in pairs {
        let (a, b) = (uv[0] - cam.cx, uv[1] - cam.cy);
        let rows = [([cam.fx, 0.0, -a], a * p[2] - cam.fx * p[0]), ([0.0, cam.fy, -b], b * p[2] - cam.fy * p[1])];
        for (row, rhs) in rows {
            for i in 0..3 {
                atb[i] += row[i] * rhs;
                for k in 0..3 {
                    ata[i][k] += row[i] * row[k];
                }
            }
        }
    }
    solve3(ata, atb).ok_or(Error::InsufficientData("2D observations do not constrain the translation"))
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve3_identity_and_singular() {
        let a = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = solve3(a, [3.0, 5.0, 5.0]).unwrap();
        for (v, e) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!(solve3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]], [1.0, 2.0, 3.0]).is_none());
    }
}
