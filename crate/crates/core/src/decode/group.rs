use alloc::vec;
use alloc::vec::Vec;

use super::{Detection, ReadoutConfig};
use crate::skeleton::{JointId, KinematicTree};

/// Euclidean distance between tag vectors divided by `sqrt(d)`, so that a
/// threshold keeps its single-scale meaning for concatenated multi-scale tags.
pub fn tag_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    libm::sqrt(s / a.len().max(1) as f64)
}

/// A person being assembled: at most one detection per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonHypothesis {
    /// Per joint, index into the detection list.
    pub members: Vec<Option<usize>>,
    /// Running mean of the member tags.
    pub reference_tag: Vec<f64>,
    count: usize,
}

impl PersonHypothesis {
    fn seed(joints: usize, idx: usize, det: &Detection) -> Self {
        let mut members = vec![None; joints];
        members[det.joint.0] = Some(idx);
        Self { members, reference_tag: det.tag.clone(), count: 1 }
    }

    fn add(&mut self, idx: usize, det: &Detection) {
        debug_assert!(self.members[det.joint.0].is_none());
        self.members[det.joint.0] = Some(idx);
        self.count += 1;
        let n = self.count as f64;
        for (r, t) in self.reference_tag.iter_mut().zip(&det.tag) {
            *r += (t - *r) / n;
        }
    }

    pub fn member(&self, j: JointId) -> Option<usize> {
        self.members[j.0]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn detections(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().flatten().copied()
    }
}

/// Greedy associative-embedding grouping.
///
/// Necks seed the first persons (highest score first). Then, for each joint
/// type in tree order starting at the neck, the highest-scoring free detection
/// whose tag lies within `tau_ae` of a person lacking that joint joins the
/// nearest such person, and the person's reference tag is updated; repeated
/// until nothing joins. Score ties go to the smaller tag distance. Detections
/// left over seed new persons one at a time (highest score first), each
/// followed by another assignment pass.
pub fn group_joints(detections: &[Detection], tree: &KinematicTree, cfg: &ReadoutConfig) -> Vec<PersonHypothesis> {
    let k = tree.len();
    let mut by_joint: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, d) in detections.iter().enumerate() {
        by_joint[d.joint.0].push(i);
    }
    let neck = tree.neck();
    let mut joint_order = vec![neck];
    joint_order.extend(tree.order().iter().copied().filter(|&j| j != neck));

    let by_score = |a: &usize, b: &usize| detections[*b].score.total_cmp(&detections[*a].score).then(a.cmp(b));

    let mut assigned = vec![false; detections.len()];
    let mut hyps = Vec::new();
    let mut necks = by_joint[neck.0].clone();
    necks.sort_by(by_score);
    for i in necks {
        assigned[i] = true;
        hyps.push(PersonHypothesis::seed(k, i, &detections[i]));
    }

    loop {
        assignment_pass(detections, &by_joint, &joint_order, &mut assigned, &mut hyps, cfg.tau_ae);
        let next = (0..detections.len()).filter(|&i| !assigned[i]).min_by(by_score);
        let Some(i) = next else { break };
        assigned[i] = true;
        hyps.push(PersonHypothesis::seed(k, i, &detections[i]));
    }
    hyps
}

fn assignment_pass(
    detections: &[Detection],
    by_joint: &[Vec<usize>],
    joint_order: &[JointId],
    assigned: &mut [bool],
    hyps: &mut [PersonHypothesis],
    tau_ae: f64,
) {
    for &j in joint_order {
        loop {
            // (detection, hypothesis, score, distance)
            let mut best: Option<(usize, usize, f64, f64)> = None;
            for &d in &by_joint[j.0] {
                if assigned[d] {
                    continue;
                }
                let det = &detections[d];
                let mut nearest: Option<(usize, f64)> = None;
                for (h, hyp) in hyps.iter().enumerate() {
                    if hyp.members[j.0].is_some() {
                        continue;
                    }
                    let dist = tag_distance(&det.tag, &hyp.reference_tag);
                    if dist < tau_ae && nearest.is_none_or(|(_, nd)| dist < nd) {
                        nearest = Some((h, dist));
                    }
                }
                let Some((h, dist)) = nearest else { continue };
                let better = match best {
                    None => true,
                    Some((_, _, bs, bd)) => det.score > bs || (det.score == bs && dist < bd),
                };
                if better {
                    best = Some((d, h, det.score, dist));
                }
            }
            match best {
                Some((d, h, _, _)) => {
                    assigned[d] = true;
                    hyps[h].add(d, &detections[d]);
                }
                None => break,
            }
        }
    }
}
