use proptest::prelude::*;
use tseg::image::Mask;
use tseg::metrics::{iou, mean_iou, record, EvalRecord};
use tseg::synth::ExprKind;

fn strip(width: usize, from: usize, to: usize) -> Mask {
    let mut m = Mask::empty(4, width);
    for y in 0..4 {
        for x in from..to {
            m.set(y, x, true);
        }
    }
    m
}

#[test]
fn half_overlap_counts() {
    // Two 4×8 strips sharing 4×4 pixels: 16 / (32 + 32 − 16).
    let a = strip(16, 0, 8);
    let b = strip(16, 4, 12);
    let (mut inter, mut union) = (0usize, 0usize);
    for k in 0..a.data.len() {
        inter += usize::from(a.data[k] && b.data[k]);
        union += usize::from(a.data[k] || b.data[k]);
    }
    assert_eq!((inter, union), (16, 48));
    assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn iou_is_symmetric_and_monotone() {
    let gt = strip(16, 2, 10);
    let pred = strip(16, 6, 14);
    assert_eq!(iou(&pred, &gt).unwrap(), iou(&gt, &pred).unwrap());
    let mut better = pred.clone();
    better.set(0, 2, true);
    assert!(iou(&better, &gt).unwrap() > iou(&pred, &gt).unwrap());
    assert!(iou(&Mask::empty(4, 4), &Mask::empty(4, 5)).is_err());
}

fn records(ious: &[f64]) -> Vec<EvalRecord> {
    ious.iter()
        .enumerate()
        .map(|(i, &v)| EvalRecord {
            scene: i as u64,
            expression: "red thing".into(),
            kind: ExprKind::ColorThing,
            intersection: 0,
            union: 0,
            iou: v,
        })
        .collect()
}

#[test]
fn mean_is_unweighted() {
    // A tiny perfect pair and a large miss count equally.
    let small = record(0, "a".into(), ExprKind::ColorThing, &strip(16, 0, 1), &strip(16, 0, 1)).unwrap();
    let large = record(1, "b".into(), ExprKind::ColorThing, &strip(16, 0, 16), &Mask::empty(4, 16)).unwrap();
    assert_eq!(mean_iou(&[small, large]).unwrap(), 0.5);
    assert!(mean_iou(&[]).is_err());
}

proptest! {
    #[test]
    fn mean_is_permutation_invariant(mut ious in proptest::collection::vec(0.0f64..=1.0, 1..40), seed in any::<u64>()) {
        let before = mean_iou(&records(&ious)).unwrap();
        // Fisher-Yates driven by a splitmix sequence.
        let mut state = seed;
        for i in (1..ious.len()).rev() {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            let j = ((z ^ (z >> 31)) % (i as u64 + 1)) as usize;
            ious.swap(i, j);
        }
        let after = mean_iou(&records(&ious)).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
    }
}
