use crate::skeleton::Vec3;

/// Pinhole intrinsics in pixels. Camera frame: x right, y down, z forward (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Projects a camera-space point; `None` for points at or behind the camera plane.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        if p[2] <= 0.0 {
            return None;
        }
        Some([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    /// Camera-space point at depth `z` whose projection is `uv`.
    pub fn back_project(&self, uv: [f64; 2], z: f64) -> Vec3 {
        [(uv[0] - self.cx) * z / self.fx, (uv[1] - self.cy) * z / self.fy, z]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_back_project() {
        let cam = PinholeCamera::new(1000.0, 900.0, 512.0, 384.0);
        let p = [120.0, -340.0, 5000.0];
        let uv = cam.project(p).unwrap();
        let q = cam.back_project(uv, 5000.0);
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-9);
        }
        assert!(cam.project([0.0, 0.0, 0.0]).is_none());
        assert!(cam.project([0.0, 0.0, -1.0]).is_none());
    }
}
