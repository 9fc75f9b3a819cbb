use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use pyrprune::eval::refgen::{extract_unique_references, ImageLabels, LabeledObject};
use pyrprune::eval::vqa::{normalize, score_dataset, AnswerScorer, Lexicon, Prediction, QaRecord, QuestionType};
use pyrprune::eval::{covered_area, parse_jsonl, recall, trace_recall, GroundTruthRegion};
use pyrprune::prune::{run, HeatmapOracle, LayoutConfig, PruneConfig};
use pyrprune::pyramid::{PyramidConfig, PyramidGeometry, Rect};

fn rect() -> impl Strategy<Value = Rect> {
    (0.0f64..90.0, 0.0f64..90.0, 1.0f64..40.0, 1.0f64..40.0).prop_map(|(x, y, w, h)| Rect::new(x, y, x + w, y + h))
}

fn labels() -> impl Strategy<Value = ImageLabels> {
    let obj = (0usize..3, 0u32..45, 0u32..45, 1u32..12, 1u32..12).prop_map(|(c, x, y, w, h)| LabeledObject {
        category: ["car", "ship", "tank"][c].to_string(),
        bbox: [
            f64::from(x * 10),
            f64::from(y * 10),
            f64::from(x * 10 + w * 5),
            f64::from(y * 10 + h * 5),
        ],
    });
    prop::collection::vec(obj, 0..12).prop_map(|objects| ImageLabels {
        image: "img".into(),
        width: 600.0,
        height: 600.0,
        objects,
    })
}

proptest! {
    #[test]
    fn coverage_grows_with_the_retained_set(fps in prop::collection::vec(rect(), 0..10), extra in rect(), region in rect()) {
        let a = covered_area(&fps, &region) / region.area();
        let mut more = fps.clone();
        more.push(extra);
        let b = covered_area(&more, &region) / region.area();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn recall_is_a_fraction(hits in prop::collection::vec(any::<bool>(), 0..50)) {
        let r = recall(&hits);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn scoring_ignores_case_and_spacing(word in "[a-z]{1,8}( [a-z]{1,8}){0,2}", gold in "[a-z]{1,8}") {
        let s = AnswerScorer::default();
        let shouted = format!("  {}  ", word.to_uppercase().replace(' ', "   "));
        prop_assert_eq!(s.score(Some(&word), &gold), s.score(Some(&shouted), &gold));
        prop_assert_eq!(s.score(Some(&gold), &word), s.score(Some(&gold), &shouted));
        // answers made only of articles normalise to nothing and never score
        prop_assert_eq!(s.score(Some(&shouted), &word), !normalize(&word).is_empty());
    }

    #[test]
    fn references_ignore_label_order(l in labels(), rot in 0usize..12) {
        let mut shuffled = l.clone();
        if !shuffled.objects.is_empty() {
            let k = rot % shuffled.objects.len();
            shuffled.objects.rotate_left(k);
            shuffled.objects.reverse();
        }
        let a = extract_unique_references(&l).unwrap();
        prop_assert_eq!(&a, &extract_unique_references(&shuffled).unwrap());
        let unique: HashSet<&str> = a.iter().map(|r| r.reference.as_str()).collect();
        prop_assert_eq!(unique.len(), a.len());
    }
}

#[test]
fn five_box_scene() {
    let obj = |c: &str, b: [f64; 4]| LabeledObject {
        category: c.into(),
        bbox: b,
    };
    let l = ImageLabels {
        image: "scene".into(),
        width: 900.0,
        height: 900.0,
        objects: vec![
            obj("ship", [20.0, 20.0, 80.0, 80.0]),
            obj("ship", [400.0, 420.0, 440.0, 460.0]),
            obj("ship", [800.0, 800.0, 830.0, 830.0]),
            obj("plane", [450.0, 100.0, 550.0, 160.0]),
            obj("car", [100.0, 700.0, 110.0, 705.0]),
        ],
    };
    let refs: Vec<String> = extract_unique_references(&l).unwrap().into_iter().map(|r| r.reference).collect();
    assert_eq!(
        refs,
        [
            "the bottom-most ship",
            "the largest ship",
            "the left-most ship",
            "the only plane",
            "the only ship in the bottom-right corner of the image",
            "the only ship in the center of the image",
            "the only ship in the top-left corner of the image",
            "the right-most ship",
            "the smallest ship",
            "the top-most ship",
        ]
    );
}

#[test]
fn recall_over_pruning_traces() {
    let g = PyramidGeometry::plan(2000, 2000, &PyramidConfig::default()).unwrap();
    let target = Rect::new(1200.0, 300.0, 1500.0, 600.0);
    let mut oracle = HeatmapOracle::from_rects(&[target]);
    let mut trace = run(&g, &mut oracle, LayoutConfig::default(), &PruneConfig::default()).unwrap();
    trace.image.id = Some("a".into());
    let traces = HashMap::from([("a".to_string(), trace)]);
    let regions = vec![
        GroundTruthRegion {
            image: "a".into(),
            bbox: target.to_array(),
        },
        GroundTruthRegion {
            image: "a".into(),
            bbox: [0.0, 1700.0, 300.0, 2000.0],
        },
        GroundTruthRegion {
            image: "missing".into(),
            bbox: [0.0, 0.0, 10.0, 10.0],
        },
    ];
    let r = trace_recall(&traces, &regions);
    assert_eq!((r.total, r.hits), (2, 1));
    assert_eq!(r.recall, 0.5);
    assert_eq!(r.skipped.len(), 1);
}

#[test]
fn dataset_scoring_from_jsonl() {
    let qa: Vec<QaRecord> = parse_jsonl(concat!(
        r#"{"image":"i1","question":"what colour","type":"color","answer":"grey"}"#,
        "\n\n",
        r#"{"image":"i1","question":"how many","type":"count","answer":"3"}"#,
        "\n",
        r#"{"image":"i2","question":"what colour","type":"color","answer":"red"}"#,
    ))
    .unwrap();
    let preds: Vec<Prediction> = parse_jsonl(concat!(
        r#"{"image":"i1","question":"what colour","prediction":"Gray"}"#,
        "\n",
        r#"{"image":"i1","question":"how many","prediction":"4"}"#,
    ))
    .unwrap();
    let scorer = AnswerScorer {
        lexicon: Lexicon::from_map(BTreeMap::from([("gray".into(), vec!["grey".into()])])),
        ..AnswerScorer::default()
    };
    let r = score_dataset(&qa, &preds, &scorer);
    assert_eq!(r.missing_predictions, 1);
    assert_eq!(r.per_type[QuestionType::Color.name()].correct, 1);
    assert_eq!(r.per_type["count"].accuracy, 0.0);
    assert_eq!(r.average, 0.25);
    assert!((r.overall - 1.0 / 3.0).abs() < 1e-12);
    assert!(parse_jsonl::<QaRecord>("{bad json}").is_err());
}
