//! Kinematic tree, pose frames and ORPM readout locations.
//!
//! A joint's 3D coordinates are written into its ORPM at the two root joints
//! (pelvis and neck), at the joint itself, and at every other joint of its
//! limb. [`KinematicTree::readout_locations`] enumerates those locations and
//! [`KinematicTree::limb_fallback`] gives the order in which the refinement
//! step walks back along the limb.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct JointId(pub usize);

impl JointId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum Limb {
    HeadChain,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    Torso,
}

impl Limb {
    pub const ALL: [Limb; 6] =
        [Limb::HeadChain, Limb::LeftArm, Limb::RightArm, Limb::LeftLeg, Limb::RightLeg, Limb::Torso];

    pub fn as_str(self) -> &'static str {
        match self {
            Limb::HeadChain => "head-chain",
            Limb::LeftArm => "left-arm",
            Limb::RightArm => "right-arm",
            Limb::LeftLeg => "left-leg",
            Limb::RightLeg => "right-leg",
            Limb::Torso => "torso",
        }
    }
}

/// Joint set with parent links, limb membership and mean bone lengths.
///
/// Constructed through [`KinematicTree::new`], which checks the structural
/// invariants; the value is immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    names: Vec<String>,
    parent: Vec<Option<JointId>>,
    limb: Vec<Limb>,
    pelvis: JointId,
    neck: JointId,
    bone_length: Vec<f64>,
    tolerance: f64,
    order: Vec<JointId>,
    chains: Vec<(Limb, Vec<JointId>)>,
    readout: Vec<Vec<JointId>>,
}

/// Index-based description accepted by [`KinematicTree::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    pub names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    pub limb: Vec<Limb>,
    /// Mean length (mm) of the bone joining each joint to its parent; ignored for the pelvis.
    pub bone_length: Vec<f64>,
    /// Relative half-width of the accepted band around each mean bone length.
    pub tolerance: f64,
    pub pelvis: usize,
    pub neck: usize,
}

impl KinematicTree {
    pub fn new(spec: TreeSpec) -> Result<Self> {
        let k = spec.names.len();
        let invalid = |msg: String| Err(Error::InvalidTree(msg));
        if k < 2 {
            return invalid("a tree needs at least pelvis and neck".into());
        }
        if spec.parent.len() != k || spec.limb.len() != k || spec.bone_length.len() != k {
            return invalid("names, parent, limb and bone_length lengths differ".into());
        }
        if spec.pelvis >= k || spec.neck >= k || spec.pelvis == spec.neck {
            return invalid("pelvis and neck must be two distinct joints".into());
        }
        if !(spec.tolerance > 0.0 && spec.tolerance <= 1.0) {
            return invalid("tolerance must lie in (0, 1]".into());
        }
        for (j, p) in spec.parent.iter().enumerate() {
            match p {
                None if j != spec.pelvis => return invalid(format!("joint `{}` has no parent", spec.names[j])),
                Some(_) if j == spec.pelvis => return invalid("pelvis must not have a parent".into()),
                Some(p) if *p >= k => return invalid(format!("joint `{}` has an out-of-range parent", spec.names[j])),
                _ => {}
            }
        }
        for j in 0..k {
            if j != spec.pelvis && !(spec.bone_length[j] > 0.0) {
                return invalid(format!("bone length of `{}` must be positive", spec.names[j]));
            }
            for i in 0..j {
                if spec.names[i] == spec.names[j] {
                    return invalid(format!("duplicate joint name `{}`", spec.names[j]));
                }
            }
        }

        // Every joint must reach the pelvis in fewer than k steps.
        for j in 0..k {
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = spec.parent[cur] {
                cur = p;
                steps += 1;
                if steps > k {
                    return invalid(format!("cycle through joint `{}`", spec.names[j]));
                }
            }
        }

        let mut children = vec![Vec::new(); k];
        for (j, p) in spec.parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        let mut order = Vec::with_capacity(k);
        let mut queue = alloc::collections::VecDeque::from([spec.pelvis]);
        while let Some(j) = queue.pop_front() {
            order.push(JointId(j));
            queue.extend(children[j].iter().copied());
        }

        let is_ancestor = |anc: usize, mut j: usize| loop {
            if j == anc {
                return true;
            }
            match spec.parent[j] {
                Some(p) => j = p,
                None => return false,
            }
        };
        if !is_ancestor(spec.pelvis, spec.neck) {
            return invalid("neck is not connected to the pelvis".into());
        }
        for j in 0..k {
            if spec.limb[j] == Limb::HeadChain && !is_ancestor(spec.neck, j) {
                return invalid(format!("head-chain joint `{}` does not hang below the neck", spec.names[j]));
            }
        }

        let mut chains = Vec::new();
        for limb in Limb::ALL {
            let members: Vec<usize> = (0..k).filter(|&j| spec.limb[j] == limb).collect();
            if members.is_empty() {
                continue;
            }
            let in_limb = |j: usize| spec.limb[j] == limb;
            let starts: Vec<usize> =
                members.iter().copied().filter(|&j| spec.parent[j].is_none_or(|p| !in_limb(p))).collect();
            if starts.len() != 1 {
                return invalid(format!("limb {} is not a single chain", limb.as_str()));
            }
            let mut chain = vec![JointId(starts[0])];
            let mut cur = starts[0];
            loop {
                let next: Vec<usize> = children[cur].iter().copied().filter(|&c| in_limb(c)).collect();
                match next.len() {
                    0 => break,
                    1 => {
                        cur = next[0];
                        chain.push(JointId(cur));
                    }
                    _ => return invalid(format!("limb {} branches", limb.as_str())),
                }
            }
            if chain.len() != members.len() {
                return invalid(format!("limb {} is not connected", limb.as_str()));
            }
            chains.push((limb, chain));
        }

        let pelvis = JointId(spec.pelvis);
        let neck = JointId(spec.neck);
        let readout = (0..k)
            .map(|j| {
                let j = JointId(j);
                let mut locs = vec![pelvis, neck];
                if j != pelvis && j != neck {
                    locs.push(j);
                    let chain = &chains.iter().find(|(l, _)| *l == spec.limb[j.0]).unwrap().1;
                    locs.extend(chain.iter().copied().filter(|&l| l != j && l != pelvis && l != neck));
                }
                locs
            })
            .collect();

        Ok(Self {
            names: spec.names,
            parent: spec.parent.into_iter().map(|p| p.map(JointId)).collect(),
            limb: spec.limb,
            pelvis,
            neck,
            bone_length: spec.bone_length,
            tolerance: spec.tolerance,
            order,
            chains,
            readout,
        })
    }

    /// The built-in 15-joint tree with anthropometric mean bone lengths.
    pub fn default_tree() -> Self {
        use Limb::*;
        #[rustfmt::skip]
        let joints: [(&str, Option<usize>, Limb, f64); 15] = [
            ("pelvis",     None,     Torso,     0.0),
            ("neck",       Some(0),  Torso,     500.0),
            ("head",       Some(1),  HeadChain, 200.0),
            ("shoulder_L", Some(1),  LeftArm,   180.0),
            ("elbow_L",    Some(3),  LeftArm,   290.0),
            ("wrist_L",    Some(4),  LeftArm,   250.0),
            ("shoulder_R", Some(1),  RightArm,  180.0),
            ("elbow_R",    Some(6),  RightArm,  290.0),
            ("wrist_R",    Some(7),  RightArm,  250.0),
            ("hip_L",      Some(0),  LeftLeg,   110.0),
            ("knee_L",     Some(9),  LeftLeg,   430.0),
            ("ankle_L",    Some(10), LeftLeg,   420.0),
            ("hip_R",      Some(0),  RightLeg,  110.0),
            ("knee_R",     Some(12), RightLeg,  430.0),
            ("ankle_R",    Some(13), RightLeg,  420.0),
        ];
        Self::new(TreeSpec {
            names: joints.iter().map(|j| j.0.to_string()).collect(),
            parent: joints.iter().map(|j| j.1).collect(),
            limb: joints.iter().map(|j| j.2).collect(),
            bone_length: joints.iter().map(|j| j.3).collect(),
            tolerance: 0.2,
            pelvis: 0,
            neck: 1,
        })
        .expect("built-in tree is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn joints(&self) -> impl Iterator<Item = JointId> + '_ {
        (0..self.len()).map(JointId)
    }

    pub fn name(&self, j: JointId) -> &str {
        &self.names[j.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn joint(&self, name: &str) -> Result<JointId> {
        self.names.iter().position(|n| n == name).map(JointId).ok_or_else(|| Error::UnknownJoint(name.to_string()))
    }

    pub fn parent(&self, j: JointId) -> Option<JointId> {
        self.parent[j.0]
    }

    pub fn limb_of(&self, j: JointId) -> Limb {
        self.limb[j.0]
    }

    pub fn pelvis(&self) -> JointId {
        self.pelvis
    }

    pub fn neck(&self) -> JointId {
        self.neck
    }

    pub fn is_root(&self, j: JointId) -> bool {
        j == self.pelvis || j == self.neck
    }

    /// Mean length (mm) of the bone between `j` and its parent; 0 for the pelvis.
    pub fn bone_length(&self, j: JointId) -> f64 {
        self.bone_length[j.0]
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Replaces the mean bone lengths, e.g. with statistics gathered from a training set.
    pub fn with_bone_lengths(mut self, lengths: Vec<f64>, tolerance: f64) -> Result<Self> {
        if lengths.len() != self.len() {
            return Err(Error::JointCount { expected: self.len(), got: lengths.len() });
        }
        if !(tolerance > 0.0 && tolerance <= 1.0) {
            return Err(Error::InvalidTree("tolerance must lie in (0, 1]".into()));
        }
        for j in self.joints() {
            if j != self.pelvis && !(lengths[j.0] > 0.0) {
                return Err(Error::InvalidTree(format!("bone length of `{}` must be positive", self.name(j))));
            }
        }
        self.bone_length = lengths;
        self.tolerance = tolerance;
        Ok(self)
    }

    /// Joints in breadth-first order from the pelvis (every parent precedes its children).
    pub fn order(&self) -> &[JointId] {
        &self.order
    }

    /// Joints of `limb`, from the joint nearest the pelvis to the extremity.
    pub fn chain(&self, limb: Limb) -> &[JointId] {
        self.chains.iter().find(|(l, _)| *l == limb).map(|(_, c)| c.as_slice()).unwrap_or(&[])
    }

    /// Path from `j` up to and including the pelvis.
    pub fn path_to_pelvis(&self, j: JointId) -> Vec<JointId> {
        let mut path = vec![j];
        let mut cur = j;
        while let Some(p) = self.parent[cur.0] {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Grid locations at which joint `j`'s coordinates are stored in its ORPM:
    /// pelvis, neck, `j` itself, then the other joints of `j`'s limb from the
    /// limb start outward. Root joints return just the two roots.
    pub fn readout_locations(&self, j: JointId) -> &[JointId] {
        &self.readout[j.0]
    }

    pub fn readout_locations_by_name(&self, name: &str) -> Result<&[JointId]> {
        Ok(self.readout_locations(self.joint(name)?))
    }

    /// Refinement candidates after the joint's own cell: the other limb joints
    /// walking from the extremity back toward the limb start.
    pub fn limb_fallback(&self, j: JointId) -> impl Iterator<Item = JointId> + '_ {
        let (pelvis, neck) = (self.pelvis, self.neck);
        let chain = if self.is_root(j) { &[][..] } else { self.chain(self.limb_of(j)) };
        chain.iter().rev().copied().filter(move |&l| l != j && l != pelvis && l != neck)
    }

    /// Length of the longest limb chain, roots excluded.
    pub fn longest_chain(&self) -> usize {
        self.chains.iter().map(|(_, c)| c.iter().filter(|&&j| !self.is_root(j)).count()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Frame {
    ParentRelative,
    PelvisRelative,
    CameraAbsolute,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::ParentRelative => "parent_relative",
            Frame::PelvisRelative => "pelvis_relative",
            Frame::CameraAbsolute => "camera_absolute",
        }
    }
}

/// One person's joints.
///
/// In the parent-relative frame the pelvis entry holds the root translation
/// (the absolute pelvis position, or zero when unknown); every other entry is
/// the offset from the joint's parent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub coords3d: Vec<Vec3>,
    pub frame: Frame,
    pub coords2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Pose {
    pub fn new(coords3d: Vec<Vec3>, frame: Frame) -> Self {
        let k = coords3d.len();
        Self { coords3d, frame, coords2d: vec![[0.0; 2]; k], visible: vec![false; k] }
    }

    pub fn len(&self) -> usize {
        self.coords3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords3d.is_empty()
    }

    pub fn convert_frame(&self, target: Frame, tree: &KinematicTree) -> Result<Pose> {
        if self.len() != tree.len() {
            return Err(Error::JointCount { expected: tree.len(), got: self.len() });
        }
        let src = &self.coords3d;
        let pelvis = tree.pelvis().0;
        let mut out = vec![[0.0; 3]; src.len()];
        use Frame::*;
        match (self.frame, target) {
            (a, b) if a == b => return Ok(self.clone()),
            (ParentRelative, PelvisRelative) | (ParentRelative, CameraAbsolute) => {
                if target == CameraAbsolute {
                    out[pelvis] = src[pelvis];
                }
                for &j in &tree.order()[1..] {
                    let p = tree.parent(j).unwrap().0;
                    out[j.0] = add(out[p], src[j.0]);
                }
            }
            (PelvisRelative, ParentRelative) | (CameraAbsolute, ParentRelative) => {
                out[pelvis] = src[pelvis];
                for &j in &tree.order()[1..] {
                    let p = tree.parent(j).unwrap().0;
                    out[j.0] = sub(src[j.0], src[p]);
                }
            }
            (CameraAbsolute, PelvisRelative) => {
                let root = src[pelvis];
                for (o, s) in out.iter_mut().zip(src) {
                    *o = sub(*s, root);
                }
                out[pelvis] = [0.0; 3];
            }
            (PelvisRelative, CameraAbsolute) => return Err(Error::MissingTranslation),
            _ => unreachable!(),
        }
        Ok(Pose { coords3d: out, frame: target, coords2d: self.coords2d.clone(), visible: self.visible.clone() })
    }

    /// Places a pelvis-relative pose in camera space by translating it by `t`.
    pub fn translated(&self, t: Vec3) -> Result<Pose> {
        if self.frame != Frame::PelvisRelative {
            return Err(Error::WrongFrame { expected: "pelvis_relative" });
        }
        Ok(Pose {
            coords3d: self.coords3d.iter().map(|&p| add(p, t)).collect(),
            frame: Frame::CameraAbsolute,
            coords2d: self.coords2d.clone(),
            visible: self.visible.clone(),
        })
    }
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    libm::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
}

pub(crate) fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}
