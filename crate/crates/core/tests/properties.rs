use std::collections::HashMap;

use proptest::prelude::*;

use detnoise::cinj::{threshold_rank, LossQueue, Verdict};
use detnoise::coco;
use detnoise::geometry::{average3, blend, fitness, iou};
use detnoise::metrics::{self, LabelTruth, StageBox};
use detnoise::noise::{
    compose_corruptions, BoxNoiseSpec, LabelNoiseKind, LabelNoiseSpec, TransitionMatrix,
};
use detnoise::pipeline::{self, PipelineConfig, Status};
use detnoise::synth::{self, SynthConfig};
use detnoise::{AnnotatedObject, BoundingBox, ClassLabel, Dataset, ImageRecord};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (-1e3f64..1e3, -1e3f64..1e3, 0.5f64..500.0, 0.5f64..500.0)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (
        2usize..6,
        prop::collection::vec(
            prop::collection::vec(
                (
                    0.0f64..500.0,
                    0.0f64..400.0,
                    1.0f64..120.0,
                    1.0f64..70.0,
                    0usize..100,
                ),
                0..5,
            ),
            0..6,
        ),
    )
        .prop_map(|(classes, images)| {
            let mut ds = Dataset::with_class_count(classes);
            let mut next = 1u64;
            for (i, objs) in images.into_iter().enumerate() {
                let id = i as u64 + 10;
                let mut im = ImageRecord::new(id, 640, 480);
                for (x, y, w, h, l) in objs {
                    im.objects.push(AnnotatedObject {
                        object_id: next,
                        image_id: id,
                        bbox: BoundingBox::new(x, y, x + w, y + h).unwrap(),
                        label: ClassLabel(l % classes),
                        flags: Default::default(),
                    });
                    next += 1;
                }
                ds.images.push(im);
            }
            ds
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn fitness_translation_invariant(a in arb_box(), b in arb_box(), dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
        let f0 = fitness(&a, &b, 0.1);
        let f1 = fitness(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap(), 0.1);
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs().max(1.0));
        prop_assert!(fitness(&a, &a, 0.1) == 1.0);
    }

    #[test]
    fn blend_stays_between(a in arb_box(), b in arb_box(), alpha in 0.0f64..=1.0) {
        let m = blend(&a, &b, alpha).corners();
        for ((u, v), w) in a.corners().iter().zip(b.corners()).zip(m) {
            prop_assert!(w >= u.min(v) - 1e-9 && w <= u.max(v) + 1e-9);
        }
        prop_assert_eq!(blend(&a, &b, 0.0), a);
        prop_assert_eq!(blend(&a, &b, 1.0), b);
    }

    #[test]
    fn average3_permutation_invariant(a in arb_box(), b in arb_box(), c in arb_box()) {
        let m = average3(&a, &b, &c);
        prop_assert_eq!(m, average3(&b, &c, &a));
        prop_assert_eq!(m, average3(&c, &b, &a));
        prop_assert_eq!(average3(&a, &a, &a), a);
    }

    #[test]
    fn transition_rows_are_distributions(n in 2usize..40, rate in 0.0f64..0.99, pair in any::<bool>()) {
        let kind = if pair { LabelNoiseKind::Pair } else { LabelNoiseKind::Symmetric };
        let q = TransitionMatrix::build(kind, n, rate).unwrap();
        for i in 0..n {
            let row = q.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn queue_matches_sorted_window(
        cap in 1usize..64,
        rate in 0.01f64..=1.0,
        losses in prop::collection::vec(0.0f64..10.0, 0..200),
    ) {
        prop_assume!(threshold_rank(rate, cap) >= 1);
        let mut q = LossQueue::new(cap, rate).unwrap();
        for (i, &l) in losses.iter().enumerate() {
            let window: Vec<f64> = losses[i.saturating_sub(cap)..i].to_vec();
            let j = q.judge(i as u64, l);
            if window.len() < cap {
                prop_assert_eq!(j.verdict, Verdict::Deferred);
            } else {
                let mut sorted = window.clone();
                sorted.sort_by(f64::total_cmp);
                let t = sorted[threshold_rank(rate, cap) - 1];
                prop_assert_eq!(j.threshold, Some(t));
                prop_assert_eq!(j.verdict == Verdict::Noisy, l > t);
            }
            q.push(i as u64, l);
            prop_assert!(q.len() <= cap);
        }
    }

    #[test]
    fn dataset_round_trips(ds in arb_dataset()) {
        let text = coco::dataset_to_string(&ds).unwrap();
        let back = coco::parse_dataset(&text).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(coco::dataset_to_string(&back).unwrap(), text);
    }

    #[test]
    fn corrupted_boxes_stay_valid(ds in arb_dataset(), seed in any::<u64>(), n in 0.0f64..0.49) {
        let (noisy, record) = compose_corruptions(
            &ds,
            Some(&LabelNoiseSpec { kind: LabelNoiseKind::Symmetric, rate: 0.4 }),
            Some(&BoxNoiseSpec::uniform(n).unwrap()),
            seed,
        ).unwrap();
        noisy.validate().unwrap();
        for o in noisy.objects() {
            prop_assert!(o.bbox.x1() >= 0.0 && o.bbox.y1() >= 0.0);
            prop_assert!(o.bbox.x2() <= 640.0 && o.bbox.y2() <= 480.0);
        }
        prop_assert_eq!(record.restore(&noisy).images, ds.images);
    }

    #[test]
    fn corruption_ignores_image_order(ds in arb_dataset(), seed in any::<u64>()) {
        let spec = LabelNoiseSpec { kind: LabelNoiseKind::Symmetric, rate: 0.5 };
        let boxes = BoxNoiseSpec::gaussian(0.1).unwrap();
        let (a, _) = compose_corruptions(&ds, Some(&spec), Some(&boxes), seed).unwrap();
        let mut rev = ds.clone();
        rev.images.reverse();
        let (b, _) = compose_corruptions(&rev, Some(&spec), Some(&boxes), seed).unwrap();
        let ia = a.object_index();
        for o in b.objects() {
            prop_assert_eq!(&ia[&o.object_id].bbox, &o.bbox);
            prop_assert_eq!(ia[&o.object_id].label, o.label);
        }
    }

    #[test]
    fn corloc_matches_brute_force(ds in arb_dataset(), dx in -100.0f64..100.0) {
        let stage: Vec<StageBox> = StageBox::from_dataset(&ds)
            .into_iter()
            .map(|s| StageBox { bbox: s.bbox.translate(dx, 0.0).unwrap(), ..s })
            .collect();
        let mut hits = 0;
        for s in &stage {
            let mut any = false;
            for im in &ds.images {
                for o in &im.objects {
                    any |= im.image_id == s.image_id && iou(&s.bbox, &o.bbox) > 0.7;
                }
            }
            hits += usize::from(any);
        }
        let expect = if stage.is_empty() { 0.0 } else { hits as f64 / stage.len() as f64 };
        prop_assert_eq!(metrics::corloc(&stage, &ds, 0.7).unwrap(), expect);
    }
}

fn small_benchmark(seed: u64, objects: usize) -> (Dataset, Dataset) {
    let clean = synth::generate(&SynthConfig {
        objects,
        seed,
        ..Default::default()
    })
    .unwrap();
    let (noisy, _) = compose_corruptions(
        &clean,
        Some(&LabelNoiseSpec {
            kind: LabelNoiseKind::Symmetric,
            rate: 0.4,
        }),
        Some(&BoxNoiseSpec::uniform(0.2).unwrap()),
        seed,
    )
    .unwrap();
    (clean, noisy)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn outcome_log_invariants(seed in any::<u64>(), queue_length in 8usize..64, t_refine in 0.3f64..0.9) {
        let (clean, noisy) = small_benchmark(seed, 150);
        let cfg = PipelineConfig {
            queue_length,
            t_refine,
            acceptance_rate: Some(0.6),
            epochs: 3,
            seed,
            ..Default::default()
        };
        let out = pipeline::refine_dataset(&noisy, &clean, &cfg).unwrap();
        for e in &out.epochs {
            let emitted: HashMap<u64, &AnnotatedObject> = e.emitted.object_index();
            for o in &e.outcomes {
                match o.status {
                    Status::KeptClean | Status::Unmatched => {
                        prop_assert_eq!(o.final_label, o.input_label);
                        prop_assert!(o.verdict != Verdict::Noisy);
                    }
                    Status::Relabeled => prop_assert!(o.pseudo_prob.unwrap() > t_refine),
                    Status::Discarded => {
                        prop_assert!(!emitted.contains_key(&o.object_id));
                        prop_assert!(o.pseudo_prob.unwrap() <= t_refine);
                    }
                }
                if o.status != Status::Discarded {
                    let em = emitted[&o.object_id];
                    prop_assert_eq!(Some(em.bbox), o.final_box);
                    prop_assert_eq!(em.label, o.final_label);
                }
            }
            e.emitted.validate().unwrap();
            prop_assert_eq!(e.carried.object_count(), noisy.object_count());
        }
        let truth = LabelTruth::from_clean(&clean);
        let c = metrics::confusion(&out.last().outcomes, &truth).unwrap();
        if let (Some(tp), Some(fn_)) = (c.tp, c.fn_) {
            prop_assert!((tp + fn_ - 1.0).abs() <= 1e-12);
        }
        if let (Some(tn), Some(fp)) = (c.tn, c.fp) {
            prop_assert!((tn + fp - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn perfect_oracle_on_clean_data_discards_nothing() {
    let clean = synth::generate(&SynthConfig {
        objects: 300,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let cfg = PipelineConfig {
        oracle_preset: "perfect".into(),
        acceptance_rate: Some(0.8),
        epochs: 3,
        seed: 2,
        ..Default::default()
    };
    let out = pipeline::refine_dataset(&clean, &clean, &cfg).unwrap();
    for e in &out.epochs {
        assert!(e.outcomes.iter().all(|o| o.status != Status::Discarded));
        assert_eq!(e.emitted.object_count(), clean.object_count());
    }
}

#[test]
fn results_independent_of_worker_count() {
    let (clean, noisy) = small_benchmark(21, 400);
    let cfg = PipelineConfig {
        seed: 21,
        ..Default::default()
    };
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pipeline::refine_dataset(&noisy, &clean, &cfg).unwrap())
    };
    let a = run_with(1);
    let b = run_with(4);
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(x.outcomes, y.outcomes);
        assert_eq!(x.emitted, y.emitted);
    }
}
