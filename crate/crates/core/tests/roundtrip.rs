mod common;

use common::*;
use orpm_core::decode::{decode, Provenance, ReadoutConfig};
use orpm_core::{Frame, KinematicTree, MapStack};

fn erase_peaks(maps: &mut MapStack, tree: &KinematicTree, names: &[&str]) {
    for n in names {
        let j = tree.joint(n).unwrap();
        maps.heatmap_mut(j).iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn three_person_scene_is_recovered_exactly() {
    let tree = KinematicTree::default_tree();
    let s = row_scene(&tree, 3);
    s.validate(&tree).unwrap();
    let maps = encode(&tree, &s);
    let people = decode(&maps, &tree, &ReadoutConfig::default()).unwrap();
    assert_eq!(people.len(), 3);
    let mut seen = [false; 3];
    for p in &people {
        assert_eq!(p.pose.frame, Frame::PelvisRelative);
        assert_eq!(p.root, tree.pelvis());
        let n = gt_index_of(&s, &tree, p.joints2d[tree.pelvis().0].as_ref().unwrap().cell);
        assert!(!seen[n]);
        seen[n] = true;
        assert_eq!(p.pose.coords3d, pelvis_relative(&tree, &s.persons[n]));
        assert!(p.joints2d.iter().all(Option::is_some));
        assert!(p.provenance.iter().skip(1).all(|&v| v == Provenance::OwnCell));
    }
}

#[test]
fn erased_extremities_are_still_recovered() {
    let tree = KinematicTree::default_tree();
    let s = row_scene(&tree, 3);
    let clean = decode(&encode(&tree, &s), &tree, &ReadoutConfig::default()).unwrap();
    let mut maps = encode(&tree, &s);
    erase_peaks(&mut maps, &tree, &["wrist_L", "wrist_R", "ankle_L", "ankle_R", "head"]);
    let occluded = decode(&maps, &tree, &ReadoutConfig::default()).unwrap();
    assert_eq!(occluded.len(), 3);
    for (a, b) in clean.iter().zip(&occluded) {
        assert_eq!(a.pose.coords3d, b.pose.coords3d);
    }
    let wrist = tree.joint("wrist_L").unwrap();
    assert_eq!(occluded[0].provenance[wrist.0], Provenance::Limb(tree.joint("elbow_L").unwrap()));
    assert_eq!(occluded[0].provenance[tree.joint("head").unwrap().0], Provenance::FullReadout);
}

#[test]
fn all_zero_maps_decode_to_nothing() {
    let tree = KinematicTree::default_tree();
    let maps = MapStack::zeros(tree.len(), grid(), 1);
    assert!(decode(&maps, &tree, &ReadoutConfig::default()).unwrap().is_empty());
}

#[test]
fn decode_is_deterministic() {
    let tree = KinematicTree::default_tree();
    let maps = encode(&tree, &row_scene(&tree, 4));
    let a = decode(&maps, &tree, &ReadoutConfig::default()).unwrap();
    let b = decode(&maps, &tree, &ReadoutConfig::default()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn joint_count_mismatch_is_rejected() {
    let tree = KinematicTree::default_tree();
    let maps = MapStack::zeros(3, grid(), 1);
    assert!(decode(&maps, &tree, &ReadoutConfig::default()).is_err());
}
