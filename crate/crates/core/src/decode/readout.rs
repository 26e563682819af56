use alloc::vec;
use alloc::vec::Vec;

use super::{DecodedPerson, Detection, JointDetection, PersonHypothesis, ReadoutConfig};
use crate::error::{Error, Result};
use crate::maps::MapStack;
use crate::skeleton::{distance, Frame, JointId, KinematicTree, Pose};

/// Where a joint's final 3D coordinates were read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", content = "joint", rename_all = "snake_case")
)]
pub enum Provenance {
    /// The pelvis, fixed at the origin of the pelvis-relative frame.
    Origin,
    /// Kept from the full-pose readout at the root cell.
    FullReadout,
    /// Refined at the joint's own detection.
    OwnCell,
    /// Refined at the detection of another joint of the same limb.
    Limb(JointId),
}

/// First criterion a candidate readout cell violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutFailure {
    /// Fused ORPM has no support at this cell.
    ZeroWeight,
    Confidence,
    Proximity,
    Anthropometric,
}

/// Everything the readout and refinement steps need about one frame.
pub struct ReadoutContext<'a> {
    pub maps: &'a MapStack,
    pub tree: &'a KinematicTree,
    pub cfg: &'a ReadoutConfig,
    pub detections: &'a [Detection],
    pub hypotheses: &'a [PersonHypothesis],
    owner: Vec<Option<usize>>,
}

impl<'a> ReadoutContext<'a> {
    pub fn new(
        maps: &'a MapStack,
        tree: &'a KinematicTree,
        cfg: &'a ReadoutConfig,
        detections: &'a [Detection],
        hypotheses: &'a [PersonHypothesis],
    ) -> Self {
        let mut owner = vec![None; detections.len()];
        for (h, hyp) in hypotheses.iter().enumerate() {
            for d in hyp.detections() {
                owner[d] = Some(h);
            }
        }
        Self { maps, tree, cfg, detections, hypotheses, owner }
    }

    fn empty_pose(&self) -> Pose {
        Pose::new(vec![[0.0; 3]; self.tree.len()], Frame::PelvisRelative)
    }

    /// Reads all joints at the cell of `root_det`; the pelvis is pinned to the origin.
    fn read_all_at(&self, person: usize, root_det: usize) -> Pose {
        let hyp = &self.hypotheses[person];
        let d = &self.detections[root_det];
        let mut pose = self.empty_pose();
        for j in self.tree.joints() {
            if j != self.tree.pelvis() {
                pose.coords3d[j.0] = self.maps.orpm_at(j, d.x, d.y);
            }
            if let Some(m) = hyp.member(j) {
                let md = &self.detections[m];
                pose.coords2d[j.0] = [md.x as f64, md.y as f64];
                pose.visible[j.0] = true;
            }
        }
        pose
    }

    /// Full-pose readout at the pelvis cell, or at the neck cell when the pelvis
    /// was not detected. Returns the pose and the root joint used.
    pub fn readout_full_pose(&self, person: usize) -> Result<(Pose, JointId)> {
        let hyp = &self.hypotheses[person];
        let root = [self.tree.pelvis(), self.tree.neck()]
            .into_iter()
            .find(|&r| hyp.member(r).is_some())
            .ok_or(Error::NoRoot)?;
        Ok((self.read_all_at(person, hyp.member(root).unwrap()), root))
    }

    /// Checks the readout criteria for reading joint `j` of `person` at the
    /// cell of detection `det`, against the partially refined `current` pose.
    pub fn is_valid_readout(
        &self,
        det: usize,
        j: JointId,
        person: usize,
        current: &Pose,
    ) -> core::result::Result<(), ReadoutFailure> {
        let d = &self.detections[det];
        if self.maps.orpm_flagged(j, d.x, d.y) {
            return Err(ReadoutFailure::ZeroWeight);
        }
        if !(d.score >= self.cfg.tau_c) {
            return Err(ReadoutFailure::Confidence);
        }
        let crowded = self.detections.iter().enumerate().any(|(i, other)| {
            self.owner[i].is_some_and(|o| o != person) && other.cell_distance(d.x, d.y) < self.cfg.tau_d
        });
        if crowded {
            return Err(ReadoutFailure::Proximity);
        }
        if let Some(parent) = self.tree.parent(j) {
            let mean = self.tree.bone_length(j);
            let len = distance(self.maps.orpm_at(j, d.x, d.y), current.coords3d[parent.0]);
            if (len - mean).abs() > self.cfg.limb_tolerance * mean {
                return Err(ReadoutFailure::Anthropometric);
            }
        }
        Ok(())
    }

    /// Per joint (parents first): the joint's own detection, then the limb's
    /// detections from the extremity back; the first valid cell overwrites the
    /// joint. Joints without a valid cell keep the full-readout value.
    pub fn refine_pose(&self, person: usize, base: &Pose) -> (Pose, Vec<Provenance>) {
        let hyp = &self.hypotheses[person];
        let mut pose = base.clone();
        let mut provenance = vec![Provenance::FullReadout; self.tree.len()];
        for &j in self.tree.order() {
            if j == self.tree.pelvis() {
                provenance[j.0] = Provenance::Origin;
                continue;
            }
            let own = hyp.member(j).map(|d| (d, Provenance::OwnCell));
            let limb = self.tree.limb_fallback(j).filter_map(|l| hyp.member(l).map(|d| (d, Provenance::Limb(l))));
            for (d, source) in own.into_iter().chain(limb) {
                if self.is_valid_readout(d, j, person, &pose).is_ok() {
                    let det = &self.detections[d];
                    pose.coords3d[j.0] = self.maps.orpm_at(j, det.x, det.y);
                    provenance[j.0] = source;
                    break;
                }
            }
        }
        (pose, provenance)
    }

    fn decode_person(&self, person: usize) -> Option<DecodedPerson> {
        let hyp = &self.hypotheses[person];
        let (base, root) = match self.readout_full_pose(person) {
            Ok(r) => r,
            Err(_) if self.cfg.keep_rootless => {
                let best = hyp
                    .detections()
                    .min_by(|&a, &b| self.detections[b].score.total_cmp(&self.detections[a].score).then(a.cmp(&b)))?;
                (self.read_all_at(person, best), self.detections[best].joint)
            }
            Err(_) => return None,
        };
        let (pose, provenance) = self.refine_pose(person, &base);
        let joints2d = hyp
            .members
            .iter()
            .map(|m| {
                m.map(|d| {
                    let det = &self.detections[d];
                    JointDetection { cell: [det.x, det.y], score: det.score }
                })
            })
            .collect();
        Some(DecodedPerson {
            pose,
            joints2d,
            root,
            root_score: self.detections[hyp.member(root).unwrap()].score,
            provenance,
            reference_tag: hyp.reference_tag.clone(),
        })
    }

    /// Decodes every hypothesis, drops rootless ones (unless configured
    /// otherwise) and orders the result by descending root score.
    pub fn readout_all(&self) -> Vec<DecodedPerson> {
        let mut people: Vec<(usize, DecodedPerson)> =
            (0..self.hypotheses.len()).filter_map(|h| self.decode_person(h).map(|p| (h, p))).collect();
        people.sort_by(|a, b| b.1.root_score.total_cmp(&a.1.root_score).then(a.0.cmp(&b.0)));
        people.into_iter().map(|(_, p)| p).collect()
    }
}
