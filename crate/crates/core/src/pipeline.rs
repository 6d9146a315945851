//! Per-epoch refinement: center matching, noise judgment, pseudo-labelling
//! and box averaging over a whole dataset.
//!
//! Detector training between epochs is replaced by an oracle schedule: epoch
//! `k` uses entry `k` of the schedule (the last entry repeats), reseeded per
//! epoch. Refined annotations carry over from one epoch to the next.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cinj::{default_acceptance_rate, LossQueue, Verdict, DEFAULT_QUEUE_LENGTH};
use crate::coco;
use crate::error::{Error, Result};
use crate::geometry::{average2, average3, DEFAULT_GAMMA};
use crate::matching::{match_box, MatchParams, MatchResult, DEFAULT_T_CM};
use crate::metrics::{self, CorLocReport, JudgmentConfusion, LabelTruth, StageBox};
use crate::noise::{CorruptionRecord, CorruptionStep};
use crate::oracle::{cross_entropy, respond, ClassScores, DetectorResponse, OracleConfig};
use crate::rng::{derive_seed, tag};
use crate::types::{AnnotatedObject, BoundingBox, ClassLabel, Dataset, ImageRecord};

pub const DEFAULT_T_REFINE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub queue_length: usize,
    /// Derived from the dataset's recorded label-noise rate when unset.
    pub acceptance_rate: Option<f64>,
    pub t_cm: f64,
    pub t_refine: f64,
    pub gamma: f64,
    /// Epochs at the start of the run whose verdicts are all deferred.
    pub warm_up_epochs: usize,
    /// Total epochs, warm-up included.
    pub epochs: usize,
    pub refine_boxes_during_warmup: bool,
    /// Used when `oracle` is empty.
    pub oracle_preset: String,
    /// Per-epoch oracle settings; the last entry repeats.
    pub oracle: Vec<OracleConfig>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            queue_length: DEFAULT_QUEUE_LENGTH,
            acceptance_rate: None,
            t_cm: DEFAULT_T_CM,
            t_refine: DEFAULT_T_REFINE,
            gamma: DEFAULT_GAMMA,
            warm_up_epochs: 1,
            epochs: 2,
            refine_boxes_during_warmup: true,
            oracle_preset: "high_fidelity".into(),
            oracle: Vec::new(),
            seed: 0,
        }
    }
}

/// Acceptance rate used when neither config nor dataset metadata gives one.
pub const FALLBACK_ACCEPTANCE_RATE: f64 = 0.8;

/// Combined label-flip rate of every label corruption recorded in `meta`.
pub fn recorded_label_noise_rate(ds: &Dataset) -> Option<f64> {
    let mut keep = 1.0;
    let mut any = false;
    for step in &ds.meta.corruptions {
        if let CorruptionStep::Label { rate, .. } = step {
            keep *= 1.0 - rate;
            any = true;
        }
    }
    any.then_some(1.0 - keep)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.t_refine > 0.0 && self.t_refine < 1.0) {
            return Err(Error::Config(format!(
                "t_refine must be in (0, 1), got {}",
                self.t_refine
            )));
        }
        if self.t_cm.is_nan() || self.t_cm > 1.0 {
            return Err(Error::Config(format!(
                "t_cm must be at most 1, got {}",
                self.t_cm
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(r) = self.acceptance_rate {
            LossQueue::new(self.queue_length, r)?;
        } else if self.queue_length == 0 {
            return Err(Error::Config("queue length must be positive".into()));
        }
        Ok(())
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            t_cm: self.t_cm,
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    pub fn resolve_acceptance_rate(&self, noisy: &Dataset) -> f64 {
        self.acceptance_rate.unwrap_or_else(|| {
            recorded_label_noise_rate(noisy)
                .map(default_acceptance_rate)
                .unwrap_or(FALLBACK_ACCEPTANCE_RATE)
        })
    }

    /// Oracle settings for `epoch`, with an epoch-specific seed.
    pub fn oracle_for_epoch(&self, epoch: usize, class_count: usize) -> Result<OracleConfig> {
        let mut cfg = match self.oracle.get(epoch).or(self.oracle.last()) {
            Some(c) => *c,
            None => OracleConfig::preset(&self.oracle_preset, class_count, 0)?,
        };
        cfg.seed = derive_seed(self.seed, &[tag::ORACLE_EPOCH, epoch as u64, cfg.seed]);
        cfg.validate(class_count)?;
        Ok(cfg)
    }

    pub fn is_judging(&self, epoch: usize) -> bool {
        epoch >= self.warm_up_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    KeptClean,
    Relabeled,
    Discarded,
    /// No proposal passed the fitness filter; annotation kept as is.
    Unmatched,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::KeptClean => "kept-clean",
            Status::Relabeled => "relabeled",
            Status::Discarded => "discarded",
            Status::Unmatched => "unmatched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub object_id: u64,
    pub image_id: u64,
    pub epoch: usize,
    pub input_label: ClassLabel,
    pub final_label: ClassLabel,
    pub input_box: BoundingBox,
    pub b_star: BoundingBox,
    /// `None` for discarded objects.
    pub final_box: Option<BoundingBox>,
    pub status: Status,
    pub matched: bool,
    pub candidate_count: usize,
    pub loss: f64,
    pub threshold: Option<f64>,
    pub verdict: Verdict,
    /// Foreground argmax of the scores at `b*`, only computed for noisy verdicts.
    pub pseudo_label: Option<ClassLabel>,
    pub pseudo_prob: Option<f64>,
}

/// Confidence gate on a pseudo-label: the foreground argmax and its
/// probability, if that probability exceeds `t_refine`.
pub fn pseudo_label(scores: &ClassScores, t_refine: f64) -> (ClassLabel, f64, bool) {
    let (label, p) = scores.argmax_foreground();
    (label, p, p > t_refine)
}

/// The gate written as "more probable than every other class together".
/// Coincides with `p > 0.5` for normalised vectors.
pub fn exceeds_remaining_mass(scores: &ClassScores) -> bool {
    let (label, p) = scores.argmax_foreground();
    let rest: f64 = scores
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label.0)
        .map(|(_, v)| v)
        .sum();
    p > rest
}

/// Everything about an object that does not depend on the queue.
struct Prepared {
    matched: MatchResult,
    loss: f64,
    scores_at_b_star: ClassScores,
    candidate_scores: Vec<ClassScores>,
}

fn prepare(obj: &AnnotatedObject, response: &DetectorResponse, cfg: &PipelineConfig) -> Prepared {
    let matched = match_box(
        obj.object_id,
        &obj.bbox,
        &response.proposals,
        &cfg.match_params(),
    );
    let scores_at_b_star = response.score_of(&matched.b_star);
    let loss = cross_entropy(&scores_at_b_star, obj.label);
    let candidate_scores = matched
        .candidates
        .iter()
        .map(|c| response.score_of(&c.bbox))
        .collect();
    Prepared {
        matched,
        loss,
        scores_at_b_star,
        candidate_scores,
    }
}

/// Mean of `b*` and the regressed forms of the two candidates most confident
/// in `label`.
fn final_box(prep: &Prepared, response: &DetectorResponse, label: ClassLabel) -> BoundingBox {
    let mut order: Vec<usize> = (0..prep.candidate_scores.len()).collect();
    order.sort_by(|&a, &b| {
        prep.candidate_scores[b]
            .prob(label)
            .total_cmp(&prep.candidate_scores[a].prob(label))
    });
    let regressed = |i: usize| response.regress(&prep.matched.candidates[i].bbox);
    let b_star = &prep.matched.b_star;
    match order.as_slice() {
        [] => *b_star,
        [a] => average2(b_star, &regressed(*a)),
        [a, b, ..] => average3(b_star, &regressed(*a), &regressed(*b)),
    }
}

fn finish(
    obj: &AnnotatedObject,
    prep: Prepared,
    response: &DetectorResponse,
    queue: &mut LossQueue,
    cfg: &PipelineConfig,
    epoch: usize,
) -> RefinementOutcome {
    let judging = cfg.is_judging(epoch);
    let judgment = if judging {
        queue.judge(obj.object_id, prep.loss)
    } else {
        crate::cinj::Judgment {
            object_id: obj.object_id,
            loss: prep.loss,
            threshold: None,
            verdict: Verdict::Deferred,
        }
    };

    let mut final_label = obj.label;
    let mut status = if prep.matched.matched {
        Status::KeptClean
    } else {
        Status::Unmatched
    };
    let (mut pseudo, mut pseudo_prob) = (None, None);
    if judgment.verdict == Verdict::Noisy {
        let (label, p, accepted) = pseudo_label(&prep.scores_at_b_star, cfg.t_refine);
        pseudo = Some(label);
        pseudo_prob = Some(p);
        if accepted {
            final_label = label;
            status = Status::Relabeled;
        } else {
            status = Status::Discarded;
        }
    }

    let final_bbox = match status {
        Status::Discarded => None,
        _ if !judging && !cfg.refine_boxes_during_warmup => Some(obj.bbox),
        _ => Some(final_box(&prep, response, final_label)),
    };

    queue.push(obj.object_id, prep.loss);

    RefinementOutcome {
        object_id: obj.object_id,
        image_id: obj.image_id,
        epoch,
        input_label: obj.label,
        final_label,
        input_box: obj.bbox,
        b_star: prep.matched.b_star,
        final_box: final_bbox,
        status,
        matched: prep.matched.matched,
        candidate_count: prep.matched.candidates.len(),
        loss: prep.loss,
        threshold: judgment.threshold,
        verdict: judgment.verdict,
        pseudo_label: pseudo,
        pseudo_prob,
    }
}

/// Refine a single object against its image's detector response. Pushes the
/// object's loss into `queue` after judging it.
pub fn refine_object(
    obj: &AnnotatedObject,
    response: &DetectorResponse,
    queue: &mut LossQueue,
    cfg: &PipelineConfig,
    epoch: usize,
) -> RefinementOutcome {
    let prep = prepare(obj, response, cfg);
    finish(obj, prep, response, queue, cfg, epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochResult {
    pub epoch: usize,
    /// Training annotations for this epoch; discarded objects are absent.
    pub emitted: Dataset,
    /// Annotations carried into the next epoch; discarded objects keep their
    /// input annotation.
    pub carried: Dataset,
    pub outcomes: Vec<RefinementOutcome>,
}

pub fn run_epoch(
    ds: &Dataset,
    truth: &Dataset,
    oracle: &OracleConfig,
    queue: &mut LossQueue,
    cfg: &PipelineConfig,
    epoch: usize,
) -> Result<EpochResult> {
    let class_count = ds.class_count();
    let truth_images: Vec<&ImageRecord> = ds
        .images
        .iter()
        .map(|im| {
            truth.image(im.image_id).ok_or_else(|| {
                Error::IdMismatch(format!("image {} has no ground truth", im.image_id))
            })
        })
        .collect::<Result<_>>()?;

    let prepared: Vec<(DetectorResponse, Vec<Prepared>)> = ds
        .images
        .par_iter()
        .zip(truth_images.par_iter())
        .map(|(im, t)| {
            let response = respond(t, class_count, oracle);
            let preps = im
                .objects
                .iter()
                .map(|o| prepare(o, &response, cfg))
                .collect();
            (response, preps)
        })
        .collect();

    let mut outcomes = Vec::with_capacity(ds.object_count());
    let mut emitted = Dataset {
        categories: ds.categories.clone(),
        images: Vec::with_capacity(ds.images.len()),
        meta: ds.meta.clone(),
    };
    let mut carried = emitted.clone();

    for (im, (response, preps)) in ds.images.iter().zip(prepared) {
        let mut em = ImageRecord {
            objects: Vec::new(),
            ..im.clone()
        };
        let mut ca = em.clone();
        for (obj, prep) in im.objects.iter().zip(preps) {
            let out = finish(obj, prep, &response, queue, cfg, epoch);
            let mut next = obj.clone();
            next.flags.judged_noisy = out.verdict == Verdict::Noisy;
            match out.final_box {
                Some(b) => {
                    next.bbox = b;
                    next.label = out.final_label;
                    next.flags.refined = b != obj.bbox || out.final_label != obj.label;
                    next.flags.discarded = false;
                    em.objects.push(next.clone());
                }
                None => next.flags.discarded = true,
            }
            ca.objects.push(next);
            outcomes.push(out);
        }
        emitted.images.push(em);
        carried.images.push(ca);
    }

    Ok(EpochResult {
        epoch,
        emitted,
        carried,
        outcomes,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub acceptance_rate: f64,
    pub epochs: Vec<EpochResult>,
    pub queue: LossQueue,
}

impl RunOutput {
    pub fn last(&self) -> &EpochResult {
        self.epochs
            .last()
            .expect("validated configs run at least one epoch")
    }

    /// Outcomes of the last epoch that judged labels at all.
    pub fn last_judging(&self) -> Option<&EpochResult> {
        self.epochs
            .iter()
            .rev()
            .find(|e| e.outcomes.iter().any(|o| o.verdict != Verdict::Deferred))
    }
}

/// Run every epoch in memory. `truth` drives the oracle.
pub fn refine_dataset(noisy: &Dataset, truth: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    noisy.validate()?;
    let acceptance_rate = cfg.resolve_acceptance_rate(noisy);
    let mut queue = LossQueue::new(cfg.queue_length, acceptance_rate)?;
    let mut current = noisy.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let oracle = cfg.oracle_for_epoch(epoch, noisy.class_count())?;
        let result = run_epoch(&current, truth, &oracle, &mut queue, cfg, epoch)?;
        current = result.carried.clone();
        epochs.push(result);
    }
    Ok(RunOutput {
        acceptance_rate,
        epochs,
        queue,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub judging: bool,
    pub objects: usize,
    pub kept_clean: usize,
    pub relabeled: usize,
    pub discarded: usize,
    pub unmatched: usize,
    pub deferred: usize,
    pub judged_noisy: usize,
    pub labels_changed: usize,
    pub mean_candidates: f64,
    pub mean_loss: f64,
    pub last_threshold: Option<f64>,
}

impl EpochSummary {
    pub fn from_outcomes(epoch: usize, judging: bool, outcomes: &[RefinementOutcome]) -> Self {
        let count = |s: Status| outcomes.iter().filter(|o| o.status == s).count();
        let n = outcomes.len();
        let mean = |f: &dyn Fn(&RefinementOutcome) -> f64| {
            if n == 0 {
                0.0
            } else {
                outcomes.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            epoch,
            judging,
            objects: n,
            kept_clean: count(Status::KeptClean),
            relabeled: count(Status::Relabeled),
            discarded: count(Status::Discarded),
            unmatched: count(Status::Unmatched),
            deferred: outcomes
                .iter()
                .filter(|o| o.verdict == Verdict::Deferred)
                .count(),
            judged_noisy: outcomes
                .iter()
                .filter(|o| o.verdict == Verdict::Noisy)
                .count(),
            labels_changed: outcomes
                .iter()
                .filter(|o| o.final_box.is_some() && o.final_label != o.input_label)
                .count(),
            mean_candidates: mean(&|o| o.candidate_count as f64),
            mean_loss: mean(&|o| o.loss),
            last_threshold: outcomes.iter().rev().find_map(|o| o.threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Injected label-noise rate measured against the clean labels.
    pub injected_label_noise_rate: f64,
    /// Any clean box in the image counts as a hit.
    pub corloc: CorLocReport,
    /// The object's own clean box must be hit.
    pub corloc_same_object: CorLocReport,
    pub confusion: JudgmentConfusion,
    pub residual_noise_rate: f64,
    pub residual_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Evaluation {
    Available(RunMetrics),
    Unavailable { reason: String },
}

impl Evaluation {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        match self {
            Evaluation::Available(m) => Some(m),
            Evaluation::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub acceptance_rate: f64,
    pub recorded_label_noise_rate: Option<f64>,
    pub objects: usize,
    pub epochs: Vec<EpochSummary>,
    pub evaluation: Evaluation,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Stage boxes of the noisy input, after center matching of the noisy input
/// (first epoch), and after the last epoch's refinement (discarded objects
/// keep their input box).
pub fn stage_boxes(noisy: &Dataset, first: &EpochResult, last: &EpochResult) -> [Vec<StageBox>; 3] {
    let noisy_stage = StageBox::from_dataset(noisy);
    let cm = first
        .outcomes
        .iter()
        .map(|o| StageBox {
            image_id: o.image_id,
            object_id: o.object_id,
            bbox: o.b_star,
        })
        .collect();
    let fin = last
        .outcomes
        .iter()
        .map(|o| StageBox {
            image_id: o.image_id,
            object_id: o.object_id,
            bbox: o.final_box.unwrap_or(o.input_box),
        })
        .collect();
    [noisy_stage, cm, fin]
}

pub fn evaluate_run(noisy: &Dataset, output: &RunOutput, clean: &Dataset) -> Result<RunMetrics> {
    let truth = LabelTruth::from_clean(clean);
    let thr = metrics::DEFAULT_CORLOC_IOU;
    let [s_noisy, s_cm, s_final] = stage_boxes(noisy, &output.epochs[0], output.last());
    let corloc = CorLocReport {
        corloc_noisy: metrics::corloc(&s_noisy, clean, thr)?,
        corloc_cm: metrics::corloc(&s_cm, clean, thr)?,
        corloc_final: metrics::corloc(&s_final, clean, thr)?,
        iou_threshold: thr,
    };
    let corloc_same_object = CorLocReport {
        corloc_noisy: metrics::corloc_same_object(&s_noisy, clean, thr)?,
        corloc_cm: metrics::corloc_same_object(&s_cm, clean, thr)?,
        corloc_final: metrics::corloc_same_object(&s_final, clean, thr)?,
        iou_threshold: thr,
    };
    let judged: &[RefinementOutcome] = output.last_judging().map_or(&[], |e| &e.outcomes);
    Ok(RunMetrics {
        injected_label_noise_rate: metrics::residual_noise_rate(noisy, &truth)?,
        corloc,
        corloc_same_object,
        confusion: metrics::confusion(judged, &truth)?,
        residual_noise_rate: metrics::residual_noise_rate(&output.last().emitted, &truth)?,
        residual_note: metrics::RESIDUAL_DENOMINATOR_NOTE.to_string(),
    })
}

pub fn build_report(
    noisy: &Dataset,
    output: &RunOutput,
    clean: Option<&Dataset>,
    cfg: &PipelineConfig,
) -> Result<RunReport> {
    let evaluation = match clean {
        Some(c) => Evaluation::Available(evaluate_run(noisy, output, c)?),
        None => Evaluation::Unavailable {
            reason: "no clean dataset supplied".into(),
        },
    };
    Ok(RunReport {
        config: cfg.clone(),
        acceptance_rate: output.acceptance_rate,
        recorded_label_noise_rate: recorded_label_noise_rate(noisy),
        objects: noisy.object_count(),
        epochs: output
            .epochs
            .iter()
            .map(|e| EpochSummary::from_outcomes(e.epoch, cfg.is_judging(e.epoch), &e.outcomes))
            .collect(),
        evaluation,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    pub noisy: PathBuf,
    pub clean: Option<PathBuf>,
    pub record: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct OutcomeRow {
    epoch: usize,
    image_id: u64,
    object_id: u64,
    status: &'static str,
    verdict: Verdict,
    matched: bool,
    candidates: usize,
    loss: f64,
    threshold: Option<f64>,
    input_label: usize,
    final_label: usize,
    pseudo_label: Option<usize>,
    pseudo_prob: Option<f64>,
    b_star_x1: f64,
    b_star_y1: f64,
    b_star_x2: f64,
    b_star_y2: f64,
    final_x1: Option<f64>,
    final_y1: Option<f64>,
    final_x2: Option<f64>,
    final_y2: Option<f64>,
}

pub fn write_outcomes_csv(outcomes: &[RefinementOutcome], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for o in outcomes {
        let [bx1, by1, bx2, by2] = o.b_star.corners();
        let f = o.final_box.map(|b| b.corners());
        w.serialize(OutcomeRow {
            epoch: o.epoch,
            image_id: o.image_id,
            object_id: o.object_id,
            status: o.status.as_str(),
            verdict: o.verdict,
            matched: o.matched,
            candidates: o.candidate_count,
            loss: o.loss,
            threshold: o.threshold,
            input_label: o.input_label.0,
            final_label: o.final_label.0,
            pseudo_label: o.pseudo_label.map(|l| l.0),
            pseudo_prob: o.pseudo_prob,
            b_star_x1: bx1,
            b_star_y1: by1,
            b_star_x2: bx2,
            b_star_y2: by2,
            final_x1: f.map(|c| c[0]),
            final_y1: f.map(|c| c[1]),
            final_x2: f.map(|c| c[2]),
            final_y2: f.map(|c| c[3]),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load inputs, refine, and write `epoch_<k>.json`, `refined.json`,
/// `queue.json` and `report.json` into `out_dir`.
pub fn run(
    inputs: &RunInputs,
    out_dir: impl AsRef<Path>,
    cfg: &PipelineConfig,
    outcomes_csv: Option<&Path>,
) -> Result<RunReport> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let noisy = coco::load_dataset(&inputs.noisy)?;
    let clean = inputs.clean.as_ref().map(coco::load_dataset).transpose()?;
    let record = inputs
        .record
        .as_ref()
        .map(CorruptionRecord::load)
        .transpose()?;
    let truth = match (&clean, &record) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => r.restore(&noisy),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "the simulated detector needs ground truth: pass a clean dataset or a corruption record"
                    .into(),
            ))
        }
    };

    let output = refine_dataset(&noisy, &truth, cfg)?;
    let report = build_report(&noisy, &output, clean.as_ref(), cfg)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for e in &output.epochs {
        coco::save_dataset(
            &e.emitted,
            out_dir.join(format!("epoch_{}.json", e.epoch + 1)),
        )?;
    }
    coco::save_dataset(&output.last().emitted, out_dir.join("refined.json"))?;
    output.queue.save(out_dir.join("queue.json"))?;
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, report.to_json()?).map_err(|e| Error::io(&report_path, e))?;
    if let Some(p) = outcomes_csv {
        let all: Vec<RefinementOutcome> = output
            .epochs
            .iter()
            .flat_map(|e| e.outcomes.iter().cloned())
            .collect();
        write_outcomes_csv(&all, p)?;
    }
    Ok(report)
}
