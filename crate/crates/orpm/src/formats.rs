//! On-disk formats. Every JSON document carries a `format_version`.
//!
//! - tree JSON: joints with parent names, limbs and mean bone lengths;
//! - scene JSON: camera, image size and persons as named joints;
//! - map stack binary: `"ORPM"`, then `u32` LE version, K, W, H, d, then
//!   `f32` LE heatmaps, embeddings and ORPM in their in-memory layouts;
//! - poses JSON: decoded persons with 2D pixels, 3D millimetres, the root
//!   used and per-joint provenance;
//! - metrics report JSON and CSV.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use orpm_core::decode::{DecodedPerson, Provenance};
use orpm_core::encode::Scene;
use orpm_core::metrics::MetricsReport;
use orpm_core::skeleton::TreeSpec;
use orpm_core::{Frame, GridSize, KinematicTree, Limb, MapStack, PinholeCamera, Pose, Vec3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const MAPS_MAGIC: &[u8; 4] = b"ORPM";

fn check_version(v: u32, what: &str) -> Result<()> {
    ensure!(v == FORMAT_VERSION, "{what}: unsupported format_version {v} (expected {FORMAT_VERSION})");
    Ok(())
}

/// Reads a TOML or JSON config, chosen by file extension (JSON otherwise).
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Kinematic tree

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJoint {
    pub name: String,
    pub parent: Option<String>,
    pub limb: Limb,
    /// Mean length of the bone to the parent; omitted for the pelvis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bone_length_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRoots {
    pub pelvis: String,
    pub neck: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub format_version: u32,
    pub joints: Vec<TreeJoint>,
    pub roots: TreeRoots,
    pub tolerance: f64,
}

impl TreeFile {
    pub fn from_tree(tree: &KinematicTree) -> Self {
        let joints = tree
            .joints()
            .map(|j| TreeJoint {
                name: tree.name(j).to_string(),
                parent: tree.parent(j).map(|p| tree.name(p).to_string()),
                limb: tree.limb_of(j),
                bone_length_mm: tree.parent(j).map(|_| tree.bone_length(j)),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            joints,
            roots: TreeRoots { pelvis: tree.name(tree.pelvis()).to_string(), neck: tree.name(tree.neck()).to_string() },
            tolerance: tree.tolerance(),
        }
    }

    pub fn to_tree(&self) -> Result<KinematicTree> {
        check_version(self.format_version, "tree")?;
        let index: HashMap<&str, usize> = self.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
        let lookup = |name: &str| index.get(name).copied().with_context(|| format!("tree: unknown joint {name:?}"));
        let parent =
            self.joints.iter().map(|j| j.parent.as_deref().map(lookup).transpose()).collect::<Result<Vec<_>>>()?;
        let bone_length = self
            .joints
            .iter()
            .map(|j| match (&j.parent, j.bone_length_mm) {
                (None, _) => Ok(0.0),
                (Some(_), Some(l)) => Ok(l),
                (Some(_), None) => bail!("tree: joint {:?} has no bone_length_mm", j.name),
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = TreeSpec {
            names: self.joints.iter().map(|j| j.name.clone()).collect(),
            parent,
            limb: self.joints.iter().map(|j| j.limb).collect(),
            bone_length,
            tolerance: self.tolerance,
            pelvis: lookup(&self.roots.pelvis)?,
            neck: lookup(&self.roots.neck)?,
        };
        Ok(KinematicTree::new(spec)?)
    }
}

/// The tree at `path`, or the built-in tree.
pub fn load_tree(path: Option<&Path>) -> Result<KinematicTree> {
    match path {
        Some(p) => read_json::<TreeFile>(p)?.to_tree(),
        None => Ok(KinematicTree::default_tree()),
    }
}

// ---------------------------------------------------------------------------
// Scenes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneJoint {
    pub name: String,
    pub xyz_mm: Vec3,
    pub uv_px: [f64; 2],
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePerson {
    pub id: u32,
    pub joints: Vec<SceneJoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format_version: u32,
    /// `[W, H]` pixels.
    pub image_size: [usize; 2],
    pub camera: PinholeCamera,
    /// Camera-space coordinates.
    pub persons: Vec<ScenePerson>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, tree: &KinematicTree) -> Self {
        let persons = scene
            .persons
            .iter()
            .zip(&scene.person_ids)
            .map(|(p, &id)| ScenePerson {
                id,
                joints: tree
                    .joints()
                    .map(|j| SceneJoint {
                        name: tree.name(j).to_string(),
                        xyz_mm: p.coords3d[j.0],
                        uv_px: p.coords2d[j.0],
                        visible: p.visible[j.0],
                    })
                    .collect(),
            })
            .collect();
        Self { format_version: FORMAT_VERSION, image_size: scene.image_size, camera: scene.camera, persons }
    }

    pub fn to_scene(&self, tree: &KinematicTree) -> Result<Scene> {
        check_version(self.format_version, "scene")?;
        let k = tree.len();
        let mut persons = Vec::with_capacity(self.persons.len());
        for person in &self.persons {
            let mut coords = vec![None; k];
            let mut pose = Pose::new(vec![[0.0; 3]; k], Frame::CameraAbsolute);
            for joint in &person.joints {
                let j = tree.joint(&joint.name)?;
                ensure!(coords[j.0].is_none(), "scene: person {} lists {:?} twice", person.id, joint.name);
                coords[j.0] = Some(joint.xyz_mm);
                pose.coords2d[j.0] = joint.uv_px;
                pose.visible[j.0] = joint.visible;
            }
            for (j, c) in coords.into_iter().enumerate() {
                pose.coords3d[j] =
                    c.with_context(|| format!("scene: person {} lacks joint {:?}", person.id, tree.names()[j]))?;
            }
            persons.push(pose);
        }
        let scene = Scene {
            image_size: self.image_size,
            camera: self.camera,
            persons,
            person_ids: self.persons.iter().map(|p| p.id).collect(),
        };
        scene.validate(tree)?;
        Ok(scene)
    }
}

// ---------------------------------------------------------------------------
// Map stacks

pub fn write_maps<W: Write>(mut w: W, maps: &MapStack) -> Result<()> {
    maps.validate()?;
    w.write_all(MAPS_MAGIC)?;
    for v in [FORMAT_VERSION, maps.joints as u32, maps.grid.width as u32, maps.grid.height as u32, maps.dim as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * (maps.heatmaps.len() + maps.embeddings.len() + maps.orpm.len()));
    for v in maps.heatmaps.iter().chain(&maps.embeddings).chain(&maps.orpm) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_maps<R: Read>(mut r: R) -> Result<MapStack> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("map stack: truncated header")?;
    ensure!(&magic == MAPS_MAGIC, "map stack: bad magic {magic:?}");
    let mut header = [0u32; 5];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).context("map stack: truncated header")?;
        *h = u32::from_le_bytes(b);
    }
    let [version, k, w, h, d] = header.map(|v| v as usize);
    check_version(version as u32, "map stack")?;
    ensure!(k > 0 && w > 0 && h > 0 && d > 0, "map stack: empty dimension in header");
    let mut maps = MapStack::zeros(k, GridSize::new(w, h), d);
    let total = maps.heatmaps.len() + maps.embeddings.len() + maps.orpm.len();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    ensure!(bytes.len() == 4 * total, "map stack: expected {} data bytes, found {}", 4 * total, bytes.len());
    let mut values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for v in maps.heatmaps.iter_mut().chain(maps.embeddings.iter_mut()).chain(maps.orpm.iter_mut()) {
        *v = values.next().unwrap();
    }
    Ok(maps)
}

pub fn save_maps(path: &Path, maps: &MapStack) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_maps(std::io::BufWriter::new(f), maps)
}

pub fn load_maps(path: &Path) -> Result<MapStack> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_maps(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

// ---------------------------------------------------------------------------
// Decoded poses

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJoint {
    pub name: String,
    /// Pixel position of the joint's detection; absent when undetected.
    pub uv_px: Option<[f64; 2]>,
    pub score: Option<f64>,
    /// Pelvis-relative position.
    pub xyz_mm: Vec3,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePerson {
    pub root: String,
    pub root_score: f64,
    pub reference_tag: Vec<f64>,
    /// Camera-space pelvis position, when localised.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_mm: Option<Vec3>,
    pub joints: Vec<PoseJoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosesFile {
    pub format_version: u32,
    pub persons: Vec<PosePerson>,
}

/// Converts grid cells to pixels for a `[W, H]` image.
pub fn cell_to_px(cell: [usize; 2], grid: GridSize, image_size: [usize; 2]) -> [f64; 2] {
    [
        cell[0] as f64 * image_size[0] as f64 / grid.width as f64,
        cell[1] as f64 * image_size[1] as f64 / grid.height as f64,
    ]
}

impl PosePerson {
    pub fn from_decoded(p: &DecodedPerson, tree: &KinematicTree, grid: GridSize, image_size: [usize; 2]) -> Self {
        let joints = tree
            .joints()
            .map(|j| {
                let det = p.joints2d[j.0].as_ref();
                PoseJoint {
                    name: tree.name(j).to_string(),
                    uv_px: det.map(|d| cell_to_px(d.cell, grid, image_size)),
                    score: det.map(|d| d.score),
                    xyz_mm: p.pose.coords3d[j.0],
                    provenance: p.provenance[j.0],
                }
            })
            .collect();
        Self {
            root: tree.name(p.root).to_string(),
            root_score: p.root_score,
            reference_tag: p.reference_tag.clone(),
            translation_mm: None,
            joints,
        }
    }

    /// Pose for evaluation: camera-absolute when a translation is known,
    /// pelvis-relative otherwise. `coords2d` are pixels of detected joints.
    pub fn to_pose(&self, tree: &KinematicTree) -> Result<Pose> {
        let k = tree.len();
        let mut pose = Pose::new(vec![[0.0; 3]; k], Frame::PelvisRelative);
        let mut seen = vec![false; k];
        for joint in &self.joints {
            let j = tree.joint(&joint.name)?;
            seen[j.0] = true;
            pose.coords3d[j.0] = joint.xyz_mm;
            if let Some(uv) = joint.uv_px {
                pose.coords2d[j.0] = uv;
                pose.visible[j.0] = true;
            }
        }
        ensure!(seen.iter().all(|s| *s), "poses: a person does not list every joint");
        match self.translation_mm {
            Some(t) => Ok(pose.translated(t)?),
            None => Ok(pose),
        }
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CsvRow<'a> {
    scope: &'a str,
    label: &'a str,
    persons: u64,
    matched_persons: u64,
    mpjpe_mm: Option<f64>,
    pck3d_r_all: Option<f64>,
    pck3d_r_matched: Option<f64>,
    pck3d_a_all: Option<f64>,
    pck3d_a_matched: Option<f64>,
}

/// One row for the overall numbers, one per populated distance bucket and one per joint.
pub fn report_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let o = &report.overall;
    w.serialize(CsvRow {
        scope: "overall",
        label: "all",
        persons: o.persons,
        matched_persons: o.matched_persons,
        mpjpe_mm: o.mpjpe_mm,
        pck3d_r_all: o.pck3d_r_all,
        pck3d_r_matched: o.pck3d_r_matched,
        pck3d_a_all: o.pck3d_a_all,
        pck3d_a_matched: o.pck3d_a_matched,
    })?;
    for b in &report.per_distance {
        let s = &b.summary;
        w.serialize(CsvRow {
            scope: "distance",
            label: &b.label,
            persons: s.persons,
            matched_persons: s.matched_persons,
            mpjpe_mm: s.mpjpe_mm,
            pck3d_r_all: s.pck3d_r_all,
            pck3d_r_matched: s.pck3d_r_matched,
            pck3d_a_all: s.pck3d_a_all,
            pck3d_a_matched: s.pck3d_a_matched,
        })?;
    }
    for j in &report.per_joint {
        w.serialize(CsvRow {
            scope: "joint",
            label: &j.joint,
            persons: j.tally.total,
            matched_persons: j.tally.matched,
            mpjpe_mm: j.mpjpe_mm,
            pck3d_r_all: j.pck3d_r_all,
            pck3d_r_matched: j.pck3d_r_matched,
            pck3d_a_all: None,
            pck3d_a_matched: None,
        })?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Parses `WxH` (e.g. `384x216`).
pub fn parse_size(s: &str) -> Result<[usize; 2]> {
    let (w, h) = s.split_once(['x', 'X']).with_context(|| format!("expected WxH, got {s:?}"))?;
    Ok([w.trim().parse()?, h.trim().parse()?])
}

pub fn parse_grid(s: &str) -> Result<GridSize> {
    let [w, h] = parse_size(s)?;
    ensure!(w > 0 && h > 0, "grid dimensions must be positive");
    Ok(GridSize::new(w, h))
}
