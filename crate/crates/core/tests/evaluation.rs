use daunet::arch::Variant;
use daunet::eval::{ablation_report, confusion, metrics, ConfusionMatrix, EvalError, Metric, MetricsReport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loop_confusion(pred: &[u8], truth: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        match (pred[i], truth[i]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

#[test]
fn confusion_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let density = rng.random_range(0.0..1.0);
        let mut draw = || (0..256).map(|_| rng.random_bool(density) as u8).collect::<Vec<_>>();
        let (pred, truth) = (draw(), draw());
        let cm = confusion(&pred, &truth).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), loop_confusion(&pred, &truth));
        assert_eq!(cm.total(), 256);
    }
}

#[test]
fn trivial_confusions() {
    let truth: Vec<u8> = (0..100).map(|i| (i % 7 == 0) as u8).collect();
    let n = truth.iter().filter(|&&t| t == 1).count() as u64;
    let cm = confusion(&truth, &truth).unwrap();
    assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (n, 100 - n, 0, 0));
    let inverted: Vec<u8> = truth.iter().map(|t| 1 - t).collect();
    let cm = confusion(&inverted, &truth).unwrap();
    assert_eq!((cm.tp, cm.tn), (0, 0));
}

#[test]
fn bad_inputs_rejected() {
    assert!(matches!(confusion(&[0, 1], &[0]), Err(EvalError::SizeMismatch { pred: 2, truth: 1 })));
    assert!(matches!(confusion(&[0, 2], &[0, 1]), Err(EvalError::InvalidLabel { index: 1, label: 2 })));
}

#[test]
fn metric_arithmetic() {
    let row = metrics("x", &ConfusionMatrix { tp: 50, fp: 50, tn: 0, fn_: 50 });
    assert_eq!(row.precision, Metric::Defined(50.0));
    assert_eq!(row.recall, Metric::Defined(50.0));
    assert_eq!(row.f1, Metric::Defined(50.0));
    assert!((row.iou.value().unwrap() - 100.0 / 3.0).abs() < 1e-12);
    let perfect = metrics("x", &ConfusionMatrix { tp: 1, fp: 0, tn: 0, fn_: 0 });
    assert!([perfect.iou, perfect.precision, perfect.recall, perfect.f1].iter().all(|m| *m == Metric::Defined(100.0)));
    let missed = metrics("x", &ConfusionMatrix { tp: 0, fp: 0, tn: 5, fn_: 3 });
    assert!(matches!(missed.precision, Metric::Undefined(_)));
    assert_eq!(missed.recall, Metric::Defined(0.0));
    assert_eq!(missed.precision.to_string(), "undef");
}

proptest! {
    #[test]
    fn metric_properties(tp in 0u64..10_000, fp in 0u64..10_000, tn in 0u64..10_000, fn_ in 0u64..10_000) {
        let cm = ConfusionMatrix { tp, fp, tn, fn_ };
        let row = metrics("x", &cm);
        for m in [row.iou, row.precision, row.recall, row.f1] {
            if let Some(v) = m.value() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }
        // swapping prediction and truth exchanges fp and fn
        let t = cm.transposed();
        prop_assert_eq!((t.fp, t.fn_, t.tp, t.tn), (fn_, fp, tp, tn));
        prop_assert_eq!(metrics("x", &t).iou, row.iou);
        prop_assert_eq!(metrics("x", &t).precision, row.recall);
        if let (Some(iou), Some(f1)) = (row.iou.value(), row.f1.value()) {
            prop_assert!((iou - 100.0 * f1 / (200.0 - f1)).abs() < 1e-9);
        }
        if let (Some(p), Some(r), Some(f1)) = (row.precision.value(), row.recall.value(), row.f1.value()) {
            if p + r > 0.0 {
                prop_assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn micro_average_sums_counts() {
    let a = ConfusionMatrix { tp: 10, fp: 0, tn: 80, fn_: 10 };
    let b = ConfusionMatrix { tp: 0, fp: 30, tn: 70, fn_: 0 };
    let report = MetricsReport::from_scenes(&[("a".into(), a), ("b".into(), b)]);
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.aggregate.iou, Metric::Defined(20.0));
    assert!(report.to_csv().lines().count() == 4);
}

/// Table I rows: IoU, precision, recall, F-score.
const TABLE_ONE: [(&str, [f64; 4]); 5] = [
    ("FCN", [48.15, 75.96, 56.81, 65.00]),
    ("U-Net", [48.18, 75.42, 57.15, 65.03]),
    ("PSPNet", [52.63, 77.56, 62.08, 68.97]),
    ("DeeplabV3+", [57.25, 79.6, 67.1, 72.81]),
    ("DA-U-Net", [59.41, 70.06, 79.62, 74.54]),
];

#[test]
fn published_metric_rows_are_consistent() {
    // counts implied by the published precision and recall reproduce the other two columns
    for (name, [iou, p, r, f1]) in TABLE_ONE {
        let tp = 1_000_000u64;
        let fp = (tp as f64 * (100.0 / p - 1.0)).round() as u64;
        let fn_ = (tp as f64 * (100.0 / r - 1.0)).round() as u64;
        let row = metrics(name, &ConfusionMatrix { tp, fp, tn: 0, fn_ });
        assert!((row.iou.value().unwrap() - iou).abs() < 0.015, "{name} iou {}", row.iou);
        assert!((row.f1.value().unwrap() - f1).abs() < 0.015, "{name} f1 {}", row.f1);
    }
}

fn with_iou(iou_bp: u64) -> ConfusionMatrix {
    let rest = 10_000 - iou_bp;
    ConfusionMatrix { tp: iou_bp, fp: rest / 2, tn: 50_000, fn_: rest - rest / 2 }
}

#[test]
fn ablation_table_reproduces_published_layout() {
    let report = ablation_report(&[
        (Variant::DAUNet, with_iou(5941)),
        (Variant::UNet, with_iou(4818)),
        (Variant::AUNet, with_iou(5244)),
        (Variant::DUNet, with_iou(5461)),
    ]);
    let table = report.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("Method") && lines[0].contains("Attention Module"));
    assert!(lines[0].contains("Dilated Convolution+ASPP") && lines[0].ends_with("IoU"));
    let expected = [
        ("U-Net", "×", "×", "48.18 "),
        ("D-U-Net", "×", "✓", "54.61 "),
        ("A-U-Net", "✓", "×", "52.44 "),
        ("DA-U-Net", "✓", "✓", "59.41*"),
    ];
    for (line, (name, att, dil, iou)) in lines[1..5].iter().zip(expected) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[..3], [name, att, dil], "{line}");
        assert_eq!(cells[3], iou.trim_end(), "{line}");
    }
    assert_eq!(report.rows.iter().filter(|r| r.best).count(), 1);
    let csv = report.to_csv();
    assert!(csv.lines().nth(4).unwrap().starts_with("DA-U-Net,true,true,59.41"));
}

#[test]
fn ablation_ties_and_single_rows() {
    let single = ablation_report(&[(Variant::AUNet, with_iou(3000))]);
    assert_eq!(single.rows.len(), 1);
    assert!(single.rows[0].best);
    let tied = ablation_report(&[(Variant::UNet, with_iou(5000)), (Variant::DUNet, with_iou(5000))]);
    assert!(tied.rows.iter().all(|r| r.best));
}
