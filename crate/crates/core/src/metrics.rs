//! Evaluation of corrupted and refined annotations against clean ground truth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cinj::Verdict;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::noise::CorruptionRecord;
use crate::pipeline::RefinementOutcome;
use crate::types::{BoundingBox, ClassLabel, Dataset};

pub const DEFAULT_CORLOC_IOU: f64 = 0.7;

/// A box at some pipeline stage, tied to its object and image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBox {
    pub image_id: u64,
    pub object_id: u64,
    pub bbox: BoundingBox,
}

impl StageBox {
    pub fn from_dataset(ds: &Dataset) -> Vec<StageBox> {
        ds.objects()
            .map(|o| StageBox {
                image_id: o.image_id,
                object_id: o.object_id,
                bbox: o.bbox,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorLocReport {
    pub corloc_noisy: f64,
    pub corloc_cm: f64,
    pub corloc_final: f64,
    pub iou_threshold: f64,
}

fn check_ids(stage: &[StageBox], clean: &Dataset) -> Result<HashMap<u64, BoundingBox>> {
    let index: HashMap<u64, BoundingBox> = clean.objects().map(|o| (o.object_id, o.bbox)).collect();
    for s in stage {
        match clean.object_index().get(&s.object_id) {
            None => {
                return Err(Error::IdMismatch(format!(
                    "object {} is not in the clean dataset",
                    s.object_id
                )))
            }
            Some(o) if o.image_id != s.image_id => {
                return Err(Error::IdMismatch(format!(
                    "object {} belongs to image {} in the clean dataset, not {}",
                    s.object_id, o.image_id, s.image_id
                )))
            }
            _ => {}
        }
    }
    Ok(index)
}

/// Fraction of stage boxes whose IoU with *any* clean box of the same image
/// exceeds `threshold`.
pub fn corloc(stage: &[StageBox], clean: &Dataset, threshold: f64) -> Result<f64> {
    check_ids(stage, clean)?;
    if stage.is_empty() {
        return Ok(0.0);
    }
    let mut by_image: HashMap<u64, Vec<BoundingBox>> = HashMap::new();
    for o in clean.objects() {
        by_image.entry(o.image_id).or_default().push(o.bbox);
    }
    let hits = stage
        .iter()
        .filter(|s| {
            by_image
                .get(&s.image_id)
                .is_some_and(|bs| bs.iter().any(|c| iou(&s.bbox, c) > threshold))
        })
        .count();
    Ok(hits as f64 / stage.len() as f64)
}

/// Stricter variant: the stage box must overlap its *own* clean box.
pub fn corloc_same_object(stage: &[StageBox], clean: &Dataset, threshold: f64) -> Result<f64> {
    let index = check_ids(stage, clean)?;
    if stage.is_empty() {
        return Ok(0.0);
    }
    let hits = stage
        .iter()
        .filter(|s| iou(&s.bbox, &index[&s.object_id]) > threshold)
        .count();
    Ok(hits as f64 / stage.len() as f64)
}

/// Clean label of every object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTruth {
    labels: HashMap<u64, ClassLabel>,
}

impl LabelTruth {
    pub fn from_clean(clean: &Dataset) -> Self {
        Self {
            labels: clean.objects().map(|o| (o.object_id, o.label)).collect(),
        }
    }

    /// Clean labels recovered from a corrupted dataset and its record.
    pub fn from_record(noisy: &Dataset, record: &CorruptionRecord) -> Self {
        Self::from_clean(&record.restore(noisy))
    }

    pub fn get(&self, object_id: u64) -> Option<ClassLabel> {
        self.labels.get(&object_id).copied()
    }

    fn require(&self, object_id: u64) -> Result<ClassLabel> {
        self.get(object_id).ok_or_else(|| {
            Error::IdMismatch(format!("no ground-truth label for object {object_id}"))
        })
    }
}

/// Judgment accuracy over judged (non-deferred) objects.
///
/// `tp` is the fraction of truly noisy labels judged noisy, `tn` the
/// fraction of truly clean labels judged clean; `fn_` and `fp` are their
/// complements. A fraction is `None` when its population is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgmentConfusion {
    pub noisy_total: usize,
    pub clean_total: usize,
    pub tp_count: usize,
    pub tn_count: usize,
    pub tp: Option<f64>,
    pub tn: Option<f64>,
    pub fp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_: Option<f64>,
}

pub fn confusion(outcomes: &[RefinementOutcome], truth: &LabelTruth) -> Result<JudgmentConfusion> {
    let (mut noisy_total, mut clean_total, mut tp_count, mut tn_count) = (0, 0, 0, 0);
    for o in outcomes.iter().filter(|o| o.verdict != Verdict::Deferred) {
        let truly_noisy = o.input_label != truth.require(o.object_id)?;
        let judged_noisy = o.verdict == Verdict::Noisy;
        if truly_noisy {
            noisy_total += 1;
            tp_count += usize::from(judged_noisy);
        } else {
            clean_total += 1;
            tn_count += usize::from(!judged_noisy);
        }
    }
    let frac = |k: usize, total: usize| (total > 0).then(|| k as f64 / total as f64);
    Ok(JudgmentConfusion {
        noisy_total,
        clean_total,
        tp_count,
        tn_count,
        tp: frac(tp_count, noisy_total),
        tn: frac(tn_count, clean_total),
        fp: frac(clean_total - tn_count, clean_total),
        fn_: frac(noisy_total - tp_count, noisy_total),
    })
}

/// Fraction of objects in `emitted` whose label differs from the clean label.
/// Objects absent from `emitted` (discarded) are excluded from numerator and
/// denominator.
pub fn residual_noise_rate(emitted: &Dataset, truth: &LabelTruth) -> Result<f64> {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for o in emitted.objects() {
        total += 1;
        wrong += usize::from(o.label != truth.require(o.object_id)?);
    }
    Ok(if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    })
}

pub const RESIDUAL_DENOMINATOR_NOTE: &str =
    "discarded objects are excluded from both numerator and denominator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub clean_counts: Vec<usize>,
    pub noisy_counts: Vec<usize>,
}

impl LossHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,clean,noisy\n");
        for i in 0..self.clean_counts.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.clean_counts[i],
                self.noisy_counts[i]
            ));
        }
        s
    }
}

/// Bin recorded losses into shared bins, split by whether the object's
/// input label was truly clean or noisy.
pub fn loss_histogram(
    outcomes: &[RefinementOutcome],
    truth: &LabelTruth,
    bins: usize,
) -> Result<LossHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in outcomes {
        lo = lo.min(o.loss);
        hi = hi.max(o.loss);
    }
    if outcomes.is_empty() {
        lo = 0.0;
        hi = 1.0;
    } else if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut clean_counts = vec![0; bins];
    let mut noisy_counts = vec![0; bins];
    for o in outcomes {
        let k = (((o.loss - lo) / width).floor() as usize).min(bins - 1);
        if o.input_label != truth.require(o.object_id)? {
            noisy_counts[k] += 1;
        } else {
            clean_counts[k] += 1;
        }
    }
    Ok(LossHistogram {
        edges,
        clean_counts,
        noisy_counts,
    })
}

/// Metrics that compare a refined dataset against clean annotations without
/// an outcome log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvaluation {
    pub objects: usize,
    pub clean_objects: usize,
    /// Clean objects missing from the evaluated dataset.
    pub missing: usize,
    pub corloc: f64,
    pub corloc_same_object: f64,
    pub iou_threshold: f64,
    pub residual_noise_rate: f64,
    pub residual_note: String,
    /// Only present when a corruption record was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_label_flips: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_box_changes: Option<usize>,
    /// Per-class count of wrong labels, keyed by clean class index.
    pub wrong_by_class: BTreeMap<usize, usize>,
}

pub fn evaluate_dataset(
    evaluated: &Dataset,
    clean: &Dataset,
    record: Option<&CorruptionRecord>,
    threshold: f64,
) -> Result<DatasetEvaluation> {
    let stage = StageBox::from_dataset(evaluated);
    let truth = LabelTruth::from_clean(clean);
    let corloc_any = corloc(&stage, clean, threshold)?;
    let corloc_same = corloc_same_object(&stage, clean, threshold)?;
    let residual = residual_noise_rate(evaluated, &truth)?;
    let mut wrong_by_class = BTreeMap::new();
    for o in evaluated.objects() {
        let t = truth.require(o.object_id)?;
        if t != o.label {
            *wrong_by_class.entry(t.0).or_insert(0) += 1;
        }
    }
    Ok(DatasetEvaluation {
        objects: evaluated.object_count(),
        clean_objects: clean.object_count(),
        missing: clean.object_count() - evaluated.object_count(),
        corloc: corloc_any,
        corloc_same_object: corloc_same,
        iou_threshold: threshold,
        residual_noise_rate: residual,
        residual_note: RESIDUAL_DENOMINATOR_NOTE.to_string(),
        record_label_flips: record.map(|r| r.label_flips()),
        record_box_changes: record.map(|r| r.entries.values().filter(|e| e.box_changed()).count()),
        wrong_by_class,
    })
}
