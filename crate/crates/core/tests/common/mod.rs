#![allow(dead_code)]

use orpm_core::encode::{default_tags, encode_scene, EncodeConfig, Scene};
use orpm_core::{Frame, GridSize, KinematicTree, MapStack, PinholeCamera, Pose, Vec3};

pub const IMAGE: [usize; 2] = [1024, 1024];

pub fn camera() -> PinholeCamera {
    PinholeCamera::new(1000.0, 1000.0, 512.0, 512.0)
}

/// Unit direction of each default-tree bone (camera axes: x right, y down).
fn direction(name: &str) -> Vec3 {
    match name {
        "neck" | "head" => [0.0, -1.0, 0.0],
        "shoulder_L" | "hip_L" => [1.0, 0.0, 0.0],
        "shoulder_R" | "hip_R" => [-1.0, 0.0, 0.0],
        _ => [0.0, 1.0, 0.0],
    }
}

/// Upright person with mean bone lengths and its pelvis at `pelvis`.
pub fn standing(tree: &KinematicTree, pelvis: Vec3) -> Pose {
    let mut rel = vec![[0.0; 3]; tree.len()];
    rel[tree.pelvis().0] = pelvis;
    for j in tree.joints().filter(|&j| j != tree.pelvis()) {
        let d = direction(tree.name(j));
        let l = tree.bone_length(j);
        rel[j.0] = [d[0] * l, d[1] * l, d[2] * l];
    }
    let abs = Pose::new(rel, Frame::ParentRelative).convert_frame(Frame::CameraAbsolute, tree).unwrap();
    with_projections(abs, &camera())
}

pub fn with_projections(mut pose: Pose, cam: &PinholeCamera) -> Pose {
    pose.coords2d = pose.coords3d.iter().map(|p| cam.project(*p).unwrap()).collect();
    pose.visible = vec![true; pose.len()];
    pose
}

pub fn scene(persons: Vec<Pose>) -> Scene {
    let n = persons.len();
    Scene { image_size: IMAGE, camera: camera(), persons, person_ids: (0..n as u32).collect() }
}

/// `n` upright persons side by side at 5 m, 1 m apart.
pub fn row_scene(tree: &KinematicTree, n: usize) -> Scene {
    let start = -(n as f64 - 1.0) * 500.0;
    scene((0..n).map(|i| standing(tree, [start + i as f64 * 1000.0, 0.0, 5000.0])).collect())
}

pub fn grid() -> GridSize {
    GridSize::new(128, 128)
}

pub fn encode(tree: &KinematicTree, s: &Scene) -> MapStack {
    let cfg = EncodeConfig::new(grid());
    encode_scene(s, tree, &cfg, &default_tags(s.len(), cfg.tag_spacing)).unwrap()
}

pub fn pelvis_relative(tree: &KinematicTree, p: &Pose) -> Vec<Vec3> {
    p.convert_frame(Frame::PelvisRelative, tree).unwrap().coords3d
}

/// Index of the ground-truth person whose pelvis cell the decoded person used.
pub fn gt_index_of(s: &Scene, tree: &KinematicTree, cell: [usize; 2]) -> usize {
    (0..s.len())
        .find(|&n| {
            let p = &s.persons[n];
            [tree.pelvis(), tree.neck()]
                .iter()
                .any(|r| s.cell_of(p.coords2d[r.0], grid()).map(|(x, y)| [x, y]) == Some(cell))
        })
        .expect("decoded root does not sit on any ground-truth root")
}
