use spinewalker::labeling::{label_instances, DEFAULT_SIGMA};
use spinewalker::lossmath::dice;
use spinewalker::phantom::{crop_fov, generate_phantom, PhantomSpec};
use spinewalker::segbackend::{Mode, OracleSegmenter};
use spinewalker::traversal::{find_start, scan_for_bone, traverse, TerminationReason, TraversalConfig};
use spinewalker::{Grid, SpineGroundTruth, Volume};

fn phantom(seed: u64) -> (Volume, SpineGroundTruth) {
    generate_phantom(&PhantomSpec::default(), seed).unwrap()
}

fn oracle_run(vol: &Volume, truth: &SpineGroundTruth, mode: Mode) -> spinewalker::TraversalResult {
    let cfg = TraversalConfig { mode, ..TraversalConfig::default() };
    let mut oracle = OracleSegmenter::new(truth, 0.0, 1);
    traverse(vol, &mut oracle, &cfg).unwrap()
}

#[test]
fn full_spine_yields_24_instances_in_cranial_order() {
    let (vol, truth) = phantom(11);
    let res = oracle_run(&vol, &truth, Mode::TopDown);
    assert_eq!(res.instances.len(), 24);
    assert!(res.instances.windows(2).all(|w| w[0].centroid_mm[2] < w[1].centroid_mm[2]));
    let labeling = label_instances(&res, DEFAULT_SIGMA).unwrap().unwrap();
    let levels: Vec<u8> = labeling.levels.iter().map(|l| l.unwrap()).collect();
    assert_eq!(levels, (1..=24).collect::<Vec<u8>>());
    assert_eq!(labeling.l1.unwrap().instance, 19);
}

#[test]
fn lower_crop_yields_lumbar_and_lower_thoracic() {
    let (vol, truth) = phantom(12);
    let (cv, ct) = crop_fov(&vol, &truth, (478.0, 800.0)).unwrap();
    let res = oracle_run(&cv, &ct, Mode::TopDown);
    assert_eq!(res.instances.len(), ct.n_instances());
    assert_eq!(res.instances.len(), 8);
    let labeling = label_instances(&res, DEFAULT_SIGMA).unwrap().unwrap();
    let l1 = labeling.l1.unwrap();
    let truth_l1 = ct.l1_instance.unwrap() as usize - 1;
    assert_eq!(l1.instance, truth_l1);
}

#[test]
fn empty_volume_finds_no_bone() {
    let vol: Volume = Grid::filled([96, 96, 96], [1.0; 3], 40).unwrap();
    let truth = SpineGroundTruth {
        labels: Grid::filled([96, 96, 96], [1.0; 3], 0).unwrap(),
        level_of_instance: vec![],
        l1_instance: None,
    };
    let cfg = TraversalConfig { patch_size: [64; 3], scan_stride_vox: 32, ..TraversalConfig::default() };
    let mut oracle = OracleSegmenter::new(&truth, 0.0, 0);
    let res = traverse(&vol, &mut oracle, &cfg).unwrap();
    assert!(res.instances.is_empty());
    assert_eq!(res.termination, TerminationReason::NoNewBone);
    assert!(res.calls <= cfg.call_bound(vol.dims(), vol.spacing()));
}

#[test]
fn spine_starting_mid_scan_is_found_by_scanning() {
    let spec = PhantomSpec { n_vertebrae: 6, cranial_offset_mm: 150.0, dims: [160, 128, 400], ..PhantomSpec::default() };
    let (vol, truth) = generate_phantom(&spec, 3).unwrap();
    let cfg = TraversalConfig::default();
    assert!(find_start(&vol, &cfg).is_none());
    let mut oracle = OracleSegmenter::new(&truth, 0.0, 0);
    let seed = scan_for_bone(&vol, &mut oracle, &cfg).unwrap().expect("bone in scan");
    assert!(seed[2] > 150.0);

    let res = traverse(&vol, &mut oracle, &cfg).unwrap();
    assert_eq!(res.instances.len(), 6);
}

#[test]
fn bottom_up_matches_top_down() {
    let (vol, truth) = phantom(13);
    let down = oracle_run(&vol, &truth, Mode::TopDown);
    let up = oracle_run(&vol, &truth, Mode::BottomUp);
    assert_eq!(down.instances.len(), up.instances.len());
    let n = down.instances.len();
    for (i, d) in down.instances.iter().enumerate() {
        let u = &up.instances[n - 1 - i];
        let a = d.mask.to_volume(vol.dims(), vol.spacing());
        let b = u.mask.to_volume(vol.dims(), vol.spacing());
        assert!(dice(&a, &b).unwrap() >= 0.99, "instance {i}");
    }
}

#[test]
fn committed_masks_are_disjoint_and_within_bound() {
    let (vol, truth) = phantom(14);
    let cfg = TraversalConfig::default();
    let mut oracle = OracleSegmenter::new(&truth, 0.5, 2);
    let res = traverse(&vol, &mut oracle, &cfg).unwrap();
    assert!(res.calls <= cfg.call_bound(vol.dims(), vol.spacing()));
    let mut owner = vec![false; vol.len()];
    for inst in &res.instances {
        for i in inst.mask.volume_indices(vol.dims()) {
            assert!(!owner[i]);
            owner[i] = true;
        }
    }
}
