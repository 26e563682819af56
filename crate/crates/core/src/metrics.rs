//! Person matching, MPJPE, 3DPCK and per-distance / per-joint reports.
//!
//! Counts are kept as integers in [`Tally`] so that reports over many frames
//! are exact sums of per-frame reports.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hungarian;
use crate::skeleton::{distance, norm, Frame, KinematicTree, Pose};

/// Default 3DPCK threshold (mm).
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// Default matching threshold (px) at a 1024-px image side.
pub const MATCH_THRESHOLD_PX_AT_1024: f64 = 40.0;
/// Lower edges of the camera-distance buckets (m); the last bucket is open.
pub const BUCKET_EDGES_M: [f64; 5] = [0.0, 10.0, 20.0, 30.0, 40.0];

/// Match threshold for an image whose longer side is `max_side` pixels.
pub fn scaled_match_threshold(max_side: usize) -> f64 {
    MATCH_THRESHOLD_PX_AT_1024 * max_side as f64 / 1024.0
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchResult {
    /// `(pred, gt)` index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl MatchResult {
    pub fn pred_for(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Matcher {
    /// Ascending mean distance, ties by (gt, pred) index.
    #[default]
    Greedy,
    /// Maximum number of admissible pairs, then minimum total distance.
    Optimal,
}

/// Mean 2D distance over joints visible in both poses; `None` without any.
pub fn mean_2d_distance(pred: &Pose, gt: &Pose) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..pred.len().min(gt.len()) {
        if pred.visible[j] && gt.visible[j] {
            let (a, b) = (pred.coords2d[j], gt.coords2d[j]);
            sum += libm::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Matches predictions to ground-truth persons on 2D joint positions (pixels).
/// A pair is admissible when its mean distance is below `threshold_px`.
pub fn match_persons(preds: &[Pose], gts: &[Pose], threshold_px: f64, matcher: Matcher) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (p, pred) in preds.iter().enumerate() {
            if let Some(d) = mean_2d_distance(pred, gt) {
                if d < threshold_px {
                    candidates.push((d, g, p));
                }
            }
        }
    }
    let mut pairs = match matcher {
        Matcher::Greedy => greedy(candidates, gts.len(), preds.len()),
        Matcher::Optimal => optimal(&candidates, gts.len(), preds.len()),
    };
    pairs.sort_by_key(|&(p, g)| (g, p));
    let unmatched_gt = (0..gts.len()).filter(|g| !pairs.iter().any(|p| p.1 == *g)).collect();
    let unmatched_pred = (0..preds.len()).filter(|p| !pairs.iter().any(|q| q.0 == *p)).collect();
    MatchResult { pairs, unmatched_gt, unmatched_pred }
}

fn greedy(mut candidates: Vec<(f64, usize, usize)>, n_gt: usize, n_pred: usize) -> Vec<(usize, usize)> {
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; n_gt];
    let mut pred_used = vec![false; n_pred];
    let mut pairs = Vec::new();
    for (_, g, p) in candidates {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push((p, g));
        }
    }
    pairs
}

fn optimal(candidates: &[(f64, usize, usize)], n_gt: usize, n_pred: usize) -> Vec<(usize, usize)> {
    let n = n_gt.max(n_pred);
    if candidates.is_empty() {
        return Vec::new();
    }
    // Any admissible pair is cheaper than every inadmissible one combined
    // with an optimal set of admissible pairs, so cardinality comes first.
    let big = 1.0 + candidates.iter().map(|c| c.0).sum::<f64>();
    let mut cost = vec![big; n * n];
    for &(d, g, p) in candidates {
        cost[g * n + p] = d;
    }
    let assignment = hungarian::assign(&cost, n);
    let mut pairs = Vec::new();
    for (g, &p) in assignment.iter().enumerate() {
        if g < n_gt && p < n_pred && candidates.iter().any(|c| c.1 == g && c.2 == p) {
            pairs.push((p, g));
        }
    }
    pairs
}

/// Frame in which 3D errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum PckMode {
    /// Both poses re-expressed relative to their pelvis.
    RootAligned,
    /// Original camera space; both poses must be camera-absolute.
    Absolute,
}

/// Which ground-truth persons enter the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Every ground-truth person; undetected persons count all joints as wrong.
    All,
    /// Matched persons only.
    Matched,
}

fn in_frame(pose: &Pose, mode: PckMode, tree: &KinematicTree) -> Result<Pose> {
    match mode {
        PckMode::RootAligned => pose.convert_frame(Frame::PelvisRelative, tree),
        PckMode::Absolute if pose.frame == Frame::CameraAbsolute => Ok(pose.clone()),
        PckMode::Absolute => Err(Error::WrongFrame { expected: "camera_absolute" }),
    }
}

/// Per-joint Euclidean errors (mm) between a prediction and a ground truth.
pub fn joint_errors(pred: &Pose, gt: &Pose, tree: &KinematicTree, mode: PckMode) -> Result<Vec<f64>> {
    let (p, g) = (in_frame(pred, mode, tree)?, in_frame(gt, mode, tree)?);
    Ok(p.coords3d.iter().zip(&g.coords3d).map(|(a, b)| distance(*a, *b)).collect())
}

fn check_match(m: &MatchResult, preds: &[Pose], gts: &[Pose]) -> Result<()> {
    if m.pairs.iter().any(|&(p, g)| p >= preds.len() || g >= gts.len())
        || m.unmatched_gt.iter().any(|&g| g >= gts.len())
    {
        return Err(Error::ShapeMismatch("match refers to persons that do not exist"));
    }
    Ok(())
}

/// Mean per-joint position error (mm) over matched pairs, after root alignment.
pub fn mpjpe(m: &MatchResult, preds: &[Pose], gts: &[Pose], tree: &KinematicTree) -> Result<f64> {
    check_match(m, preds, gts)?;
    if m.pairs.is_empty() {
        return Err(Error::UndefinedMetric("no matched pairs"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &(p, g) in &m.pairs {
        for e in joint_errors(&preds[p], &gts[g], tree, PckMode::RootAligned)? {
            sum += e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no annotated joints"));
    }
    Ok(sum / n as f64)
}

/// Percentage of ground-truth joints with error below `threshold_mm`.
pub fn pck3d(
    m: &MatchResult,
    preds: &[Pose],
    gts: &[Pose],
    tree: &KinematicTree,
    mode: PckMode,
    threshold_mm: f64,
    variant: Variant,
) -> Result<f64> {
    if !(threshold_mm > 0.0) {
        return Err(Error::InvalidConfig("threshold_mm must be positive"));
    }
    check_match(m, preds, gts)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for &(p, g) in &m.pairs {
        let errors = joint_errors(&preds[p], &gts[g], tree, mode)?;
        correct += errors.iter().filter(|&&e| e < threshold_mm).count();
        total += errors.len();
    }
    if variant == Variant::All {
        total += m.unmatched_gt.iter().map(|&g| gts[g].len()).sum::<usize>();
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no ground-truth joints"));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Additive counts behind every reported number.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tally {
    pub persons: u64,
    pub matched_persons: u64,
    /// Joints of all ground-truth persons.
    pub joints: u64,
    /// Joints of matched ground-truth persons.
    pub matched_joints: u64,
    /// Matched joints under the threshold after root alignment.
    pub correct_r: u64,
    /// Matched joints under the threshold in camera space; `None` once any
    /// contributing frame lacked camera-absolute predictions.
    pub correct_a: Option<u64>,
    /// Sum of root-aligned errors over matched joints (mm).
    pub error_sum_mm: f64,
}

impl Tally {
    fn empty() -> Self {
        Self { correct_a: Some(0), ..Self::default() }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.persons += other.persons;
        self.matched_persons += other.matched_persons;
        self.joints += other.joints;
        self.matched_joints += other.matched_joints;
        self.correct_r += other.correct_r;
        self.correct_a = self.correct_a.zip(other.correct_a).map(|(a, b)| a + b);
        self.error_sum_mm += other.error_sum_mm;
    }

    pub fn summary(&self) -> Summary {
        let pct = |c: u64, n: u64| (n > 0).then(|| 100.0 * c as f64 / n as f64);
        Summary {
            mpjpe_mm: (self.matched_joints > 0).then(|| self.error_sum_mm / self.matched_joints as f64),
            pck3d_r_all: pct(self.correct_r, self.joints),
            pck3d_r_matched: pct(self.correct_r, self.matched_joints),
            pck3d_a_all: self.correct_a.and_then(|c| pct(c, self.joints)),
            pck3d_a_matched: self.correct_a.and_then(|c| pct(c, self.matched_joints)),
            persons: self.persons,
            matched_persons: self.matched_persons,
        }
    }
}

/// Metrics derived from a [`Tally`]; undefined values are `None`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mpjpe_mm: Option<f64>,
    pub pck3d_r_all: Option<f64>,
    pub pck3d_r_matched: Option<f64>,
    pub pck3d_a_all: Option<f64>,
    pub pck3d_a_matched: Option<f64>,
    pub persons: u64,
    pub matched_persons: u64,
}

/// Per-joint counts, root-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointTally {
    pub total: u64,
    pub matched: u64,
    pub correct_r: u64,
    pub error_sum_mm: f64,
}

/// Everything needed to build a [`MetricsReport`]; frames are combined with [`FrameTally::merge`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameTally {
    pub threshold_mm: f64,
    pub overall: Tally,
    /// One entry per bucket of [`BUCKET_EDGES_M`].
    pub buckets: Vec<Tally>,
    pub joints: Vec<JointTally>,
    pub unmatched_pred: u64,
}

impl FrameTally {
    pub fn new(joints: usize, threshold_mm: f64) -> Self {
        Self {
            threshold_mm,
            overall: Tally::empty(),
            buckets: vec![Tally::empty(); BUCKET_EDGES_M.len()],
            joints: vec![JointTally::default(); joints],
            unmatched_pred: 0,
        }
    }

    pub fn merge(&mut self, other: &FrameTally) {
        self.overall.merge(&other.overall);
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.merge(b);
        }
        for (a, b) in self.joints.iter_mut().zip(&other.joints) {
            a.total += b.total;
            a.matched += b.matched;
            a.correct_r += b.correct_r;
            a.error_sum_mm += b.error_sum_mm;
        }
        self.unmatched_pred += other.unmatched_pred;
    }

    pub fn report(&self, tree: &KinematicTree) -> MetricsReport {
        let per_distance = self
            .buckets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.persons > 0)
            .map(|(i, t)| BucketRow {
                label: bucket_label(i),
                min_m: BUCKET_EDGES_M[i],
                max_m: BUCKET_EDGES_M.get(i + 1).copied(),
                summary: t.summary(),
                tally: t.clone(),
            })
            .collect();
        let per_joint = tree
            .joints()
            .map(|j| {
                let t = &self.joints[j.0];
                JointRow {
                    joint: tree.name(j).into(),
                    mpjpe_mm: (t.matched > 0).then(|| t.error_sum_mm / t.matched as f64),
                    pck3d_r_all: (t.total > 0).then(|| 100.0 * t.correct_r as f64 / t.total as f64),
                    pck3d_r_matched: (t.matched > 0).then(|| 100.0 * t.correct_r as f64 / t.matched as f64),
                    tally: t.clone(),
                }
            })
            .collect();
        MetricsReport {
            threshold_mm: self.threshold_mm,
            overall: self.overall.summary(),
            counts: self.overall.clone(),
            unmatched_pred: self.unmatched_pred,
            per_distance,
            per_joint,
        }
    }
}

/// Index into [`BUCKET_EDGES_M`] for a camera distance in millimetres.
pub fn bucket_of(distance_mm: f64) -> usize {
    let m = distance_mm / 1000.0;
    BUCKET_EDGES_M.iter().rposition(|&lo| m >= lo).unwrap_or(0)
}

pub fn bucket_label(i: usize) -> String {
    use alloc::format;
    match BUCKET_EDGES_M.get(i + 1) {
        Some(hi) if i == 0 => format!("<{hi}m"),
        Some(hi) => format!("{}-{hi}m", BUCKET_EDGES_M[i]),
        None => format!(">{}m", BUCKET_EDGES_M[i]),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BucketRow {
    pub label: String,
    pub min_m: f64,
    pub max_m: Option<f64>,
    pub summary: Summary,
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointRow {
    pub joint: String,
    pub mpjpe_mm: Option<f64>,
    pub pck3d_r_all: Option<f64>,
    pub pck3d_r_matched: Option<f64>,
    pub tally: JointTally,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub threshold_mm: f64,
    pub overall: Summary,
    pub counts: Tally,
    pub unmatched_pred: u64,
    /// Populated buckets only.
    pub per_distance: Vec<BucketRow>,
    pub per_joint: Vec<JointRow>,
}

/// Counts for one frame. Ground truths must be camera-absolute (their pelvis
/// distance selects the bucket); predictions may be pelvis-relative, in which
/// case absolute 3DPCK is unavailable.
pub fn evaluate_frame(
    m: &MatchResult,
    preds: &[Pose],
    gts: &[Pose],
    tree: &KinematicTree,
    threshold_mm: f64,
) -> Result<FrameTally> {
    if !(threshold_mm > 0.0) {
        return Err(Error::InvalidConfig("threshold_mm must be positive"));
    }
    check_match(m, preds, gts)?;
    if gts.iter().any(|g| g.frame != Frame::CameraAbsolute) {
        return Err(Error::WrongFrame { expected: "camera_absolute" });
    }
    let k = tree.len();
    let mut tally = FrameTally::new(k, threshold_mm);
    let absolute = m.pairs.iter().all(|&(p, _)| preds[p].frame == Frame::CameraAbsolute);
    for (g, gt) in gts.iter().enumerate() {
        if gt.len() != k {
            return Err(Error::JointCount { expected: k, got: gt.len() });
        }
        let mut t = Tally::empty();
        t.persons = 1;
        t.joints = k as u64;
        for jt in &mut tally.joints {
            jt.total += 1;
        }
        if let Some(p) = m.pred_for(g) {
            let errors = joint_errors(&preds[p], gt, tree, PckMode::RootAligned)?;
            t.matched_persons = 1;
            t.matched_joints = k as u64;
            for (j, &e) in errors.iter().enumerate() {
                let ok = e < threshold_mm;
                t.correct_r += ok as u64;
                t.error_sum_mm += e;
                let jt = &mut tally.joints[j];
                jt.matched += 1;
                jt.correct_r += ok as u64;
                jt.error_sum_mm += e;
            }
            t.correct_a = if absolute {
                let abs = joint_errors(&preds[p], gt, tree, PckMode::Absolute)?;
                Some(abs.iter().filter(|&&e| e < threshold_mm).count() as u64)
            } else {
                None
            };
        } else if !absolute {
            t.correct_a = None;
        }
        let b = bucket_of(norm(gt.coords3d[tree.pelvis().0]));
        tally.buckets[b].merge(&t);
        tally.overall.merge(&t);
    }
    tally.unmatched_pred = m.unmatched_pred.len() as u64;
    Ok(tally)
}

/// Single-frame report: overall, per-distance and per-joint metrics.
pub fn bucketed_report(
    m: &MatchResult,
    preds: &[Pose],
    gts: &[Pose],
    tree: &KinematicTree,
    threshold_mm: f64,
) -> Result<MetricsReport> {
    Ok(evaluate_frame(m, preds, gts, tree, threshold_mm)?.report(tree))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn person(tree: &KinematicTree, offset: [f64; 3], u: f64) -> Pose {
        let k = tree.len();
        let mut p = Pose::new(
            (0..k).map(|j| [offset[0] + j as f64 * 10.0, offset[1] - j as f64 * 20.0, offset[2] + j as f64]).collect(),
            Frame::CameraAbsolute,
        );
        p.coords2d = (0..k).map(|j| [u + j as f64, 100.0 + j as f64]).collect();
        p.visible = vec![true; k];
        p
    }

    #[test]
    fn identical_sets_match_perfectly() {
        let t = KinematicTree::default_tree();
        let gts = vec![person(&t, [0.0, 0.0, 5000.0], 100.0), person(&t, [900.0, 0.0, 5000.0], 400.0)];
        let m = match_persons(&gts, &gts, 40.0, Matcher::Greedy);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert!(m.unmatched_gt.is_empty() && m.unmatched_pred.is_empty());
        assert_eq!(match_persons(&gts, &gts, 40.0, Matcher::Optimal), m);
    }

    #[test]
    fn no_predictions() {
        let t = KinematicTree::default_tree();
        let gts = vec![person(&t, [0.0, 0.0, 5000.0], 100.0)];
        let m = match_persons(&[], &gts, 40.0, Matcher::Greedy);
        assert_eq!(m.unmatched_gt, vec![0]);
        assert!(matches!(mpjpe(&m, &[], &gts, &t), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_gt() {
        let t = KinematicTree::default_tree();
        let gts = vec![person(&t, [0.0; 3], 90.0), person(&t, [0.0; 3], 110.0)];
        let preds = vec![person(&t, [0.0; 3], 100.0)];
        let m = match_persons(&preds, &gts, 40.0, Matcher::Greedy);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.unmatched_gt, vec![1]);
    }

    #[test]
    fn optimal_maximises_pairs() {
        // Greedy takes (g0,p0) at 5 and leaves g1 unmatched; optimal pairs both.
        let t = KinematicTree::default_tree();
        let gts = vec![person(&t, [0.0; 3], 100.0), person(&t, [0.0; 3], 130.0)];
        let preds = vec![person(&t, [0.0; 3], 105.0), person(&t, [0.0; 3], 70.0)];
        let g = match_persons(&preds, &gts, 36.0, Matcher::Greedy);
        assert_eq!(g.pairs.len(), 1);
        let o = match_persons(&preds, &gts, 36.0, Matcher::Optimal);
        assert_eq!(o.pairs, vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn worked_values() {
        let t = KinematicTree::default_tree();
        let gt = person(&t, [100.0, 200.0, 5000.0], 100.0);
        let m = MatchResult { pairs: vec![(0, 0)], ..Default::default() };

        let shifted = Pose { coords3d: gt.coords3d.iter().map(|p| [p[0] + 30.0, p[1], p[2]]).collect(), ..gt.clone() };
        let pel = gt.convert_frame(Frame::PelvisRelative, &t).unwrap();
        let mut off = pel.clone();
        for (j, c) in off.coords3d.iter_mut().enumerate() {
            if j != 0 {
                c[0] += 30.0;
            }
        }
        let e = mpjpe(&m, &[off], core::slice::from_ref(&gt), &t).unwrap();
        assert!((e - 30.0 * 14.0 / 15.0).abs() < 1e-9);
        // A rigid shift disappears under root alignment.
        assert_eq!(mpjpe(&m, core::slice::from_ref(&shifted), core::slice::from_ref(&gt), &t).unwrap(), 0.0);
        assert_eq!(
            pck3d(&m, &[shifted], core::slice::from_ref(&gt), &t, PckMode::Absolute, 20.0, Variant::All).unwrap(),
            0.0
        );

        let mut bad = gt.clone();
        bad.coords3d[5][2] += 200.0;
        let p = pck3d(&m, &[bad], core::slice::from_ref(&gt), &t, PckMode::RootAligned, 150.0, Variant::All).unwrap();
        assert!((p - 100.0 * 14.0 / 15.0).abs() < 1e-9);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(5_000.0), 0);
        assert_eq!(bucket_of(10_000.0), 1);
        assert_eq!(bucket_of(35_000.0), 3);
        assert_eq!(bucket_of(41_000.0), 4);
        assert_eq!(bucket_label(0), "<10m");
        assert_eq!(bucket_label(2), "20-30m");
        assert_eq!(bucket_label(4), ">40m");
    }
}
