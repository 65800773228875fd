use spinewalker::metrics::{summarize, CaseResult};

fn case(i: usize, err: f64, shift: i32) -> CaseResult {
    CaseResult {
        case_id: format!("c{i}"),
        predicted_l1_centroid_mm: Some([0.0, 0.0, err]),
        true_l1_z_extent_mm: (0.0, 10.0),
        true_l1_centroid_mm: [0.0, 0.0, 0.0],
        dice: vec![0.9 + 0.001 * i as f64, 0.95],
        correct: shift == 0,
        shift: Some(shift),
        err_mm: Some(err),
    }
}

#[test]
fn summary_is_order_independent() {
    let cases: Vec<CaseResult> = (0..40).map(|i| case(i, (i * 7 % 13) as f64 * 1.3, [0, 0, 0, 1, -1][i % 5])).collect();
    let a = summarize(&cases).unwrap();
    let mut rev = cases.clone();
    rev.reverse();
    let mut shuffled = cases.clone();
    shuffled.rotate_left(17);
    for other in [rev, shuffled] {
        let b = summarize(&other).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
    assert_eq!(a.n_cases, 40);
    assert_eq!(a.n_correct, 24);
    assert_eq!(a.shift_histogram["1"], 8);
}

#[test]
fn empty_input_is_an_error() {
    assert!(summarize(&[]).is_err());
}
