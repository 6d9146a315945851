//! Simulated detector.
//!
//! Stands in for a partially trained two-stage detector: given the clean
//! ground truth of one image it emits region proposals with objectness, a
//! class-probability vector for any queried region, and a regressed box for
//! any queried region. Fidelity is controlled by [`OracleConfig`].
//!
//! The separation between losses of clean and corrupted labels is a property
//! of this model by construction: the probability vector peaks on the true
//! class with probability `classification_accuracy`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{blend, iou};
use crate::rng::{self, tag};
use crate::types::{BoundingBox, ClassLabel, ImageRecord};

/// Probability floor applied before taking the log in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Queries whose best IoU with any object falls below this are background.
pub const BACKGROUND_IOU: f64 = 0.1;

const MAX_PROPOSAL_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Relative std. dev. of proposal corner noise around each object.
    pub proposal_jitter: f64,
    pub proposals_per_object: usize,
    /// Background proposals per image.
    pub distractor_count: usize,
    /// Probability that the score vector peaks on the true class.
    pub classification_accuracy: f64,
    /// Spread of peak confidence and of the off-peak mass.
    pub score_temperature: f64,
    /// Fraction of the gap to the matched object closed by `regress`.
    pub regression_shrink: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::high_fidelity(0)
    }
}

impl OracleConfig {
    pub fn perfect(seed: u64) -> Self {
        Self {
            proposal_jitter: 0.0,
            proposals_per_object: 4,
            distractor_count: 10,
            classification_accuracy: 1.0,
            score_temperature: 0.0,
            regression_shrink: 1.0,
            seed,
        }
    }

    pub fn high_fidelity(seed: u64) -> Self {
        Self {
            proposal_jitter: 0.04,
            proposals_per_object: 8,
            distractor_count: 20,
            classification_accuracy: 0.95,
            score_temperature: 0.5,
            regression_shrink: 0.6,
            seed,
        }
    }

    /// Accuracy just above chance with soft score vectors.
    pub fn uninformative(class_count: usize, seed: u64) -> Self {
        Self {
            proposal_jitter: 0.1,
            proposals_per_object: 4,
            distractor_count: 20,
            classification_accuracy: 1.0 / class_count as f64 + 1e-3,
            score_temperature: 0.5,
            regression_shrink: 0.0,
            seed,
        }
    }

    pub fn preset(name: &str, class_count: usize, seed: u64) -> Result<Self> {
        match name {
            "perfect" => Ok(Self::perfect(seed)),
            "high_fidelity" | "high-fidelity" => Ok(Self::high_fidelity(seed)),
            "uninformative" => Ok(Self::uninformative(class_count, seed)),
            other => Err(Error::Config(format!(
                "unknown oracle preset `{other}` (expected perfect, high_fidelity, uninformative)"
            ))),
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        let chance = 1.0 / class_count as f64;
        if !(self.classification_accuracy > chance && self.classification_accuracy <= 1.0) {
            return Err(Error::Config(format!(
                "classification_accuracy must be in (1/{class_count}, 1], got {}",
                self.classification_accuracy
            )));
        }
        if !(0.0..=1.0).contains(&self.regression_shrink) {
            return Err(Error::Config(format!(
                "regression_shrink must be in [0, 1], got {}",
                self.regression_shrink
            )));
        }
        if !(self.proposal_jitter >= 0.0 && self.proposal_jitter.is_finite()) {
            return Err(Error::Config(
                "proposal_jitter must be finite and >= 0".into(),
            ));
        }
        if !(self.score_temperature >= 0.0 && self.score_temperature.is_finite()) {
            return Err(Error::Config(
                "score_temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub objectness: f64,
}

/// Probabilities over `n` foreground classes followed by one background entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    probs: Vec<f64>,
}

impl ClassScores {
    /// `probs` must hold `n + 1` non-negative entries summing to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument(
                "score vector needs at least one class and background".into(),
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must lie in [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn class_count(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, label: ClassLabel) -> f64 {
        self.probs[label.0]
    }

    pub fn background(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Highest-probability foreground class, lowest index on ties.
    pub fn argmax_foreground(&self) -> (ClassLabel, f64) {
        let fg = &self.probs[..self.probs.len() - 1];
        let mut best = 0;
        for (i, &p) in fg.iter().enumerate().skip(1) {
            if p > fg[best] {
                best = i;
            }
        }
        (ClassLabel(best), fg[best])
    }
}

/// `-ln p(y)` with `p(y)` floored at [`PROB_FLOOR`].
pub fn cross_entropy(scores: &ClassScores, y: ClassLabel) -> f64 {
    -scores.prob(y).max(PROB_FLOOR).ln()
}

/// Everything the refinement stage may ask of the detector for one image.
#[derive(Debug, Clone)]
pub struct DetectorResponse {
    pub image_id: u64,
    /// Sorted by objectness, descending; ties keep generation order.
    pub proposals: Vec<Proposal>,
    truth: Vec<(BoundingBox, ClassLabel)>,
    class_count: usize,
    accuracy: f64,
    temperature: f64,
    shrink: f64,
    score_seed: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

impl DetectorResponse {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Index and IoU of the ground-truth object overlapping `b` the most.
    fn nearest(&self, b: &BoundingBox) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (t, _)) in self.truth.iter().enumerate() {
            let v = iou(b, t);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        best
    }

    /// Class probabilities for a queried region. A pure function of the
    /// region's coordinates and the response seed.
    pub fn score_of(&self, b: &BoundingBox) -> ClassScores {
        let n = self.class_count;
        let key: Vec<u64> = b.corners().iter().map(|c| c.to_bits()).collect();
        let mut rng = rng::stream(self.score_seed, &key);

        let peak = match self.nearest(b) {
            Some((i, v)) if v >= BACKGROUND_IOU => {
                let truth = self.truth[i].1 .0;
                let u: f64 = rng.random();
                if u < self.accuracy || n == 1 {
                    truth
                } else {
                    let k = rng.random_range(0..n - 1);
                    if k >= truth {
                        k + 1
                    } else {
                        k
                    }
                }
            }
            _ => n,
        };

        let xi: f64 = StandardNormal.sample(&mut rng);
        let confidence = if self.temperature == 0.0 {
            self.accuracy
        } else {
            sigmoid(logit(self.accuracy) + self.temperature * xi)
        };
        let weights: Vec<f64> = (0..=n)
            .map(|i| {
                if i == peak {
                    0.0
                } else {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    (self.temperature * eta).exp()
                }
            })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let mut probs: Vec<f64> = weights
            .iter()
            .map(|w| (1.0 - confidence) * w / wsum)
            .collect();
        probs[peak] = confidence;
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        ClassScores { probs }
    }

    /// Move `b` toward its best-overlapping object by the shrink fraction.
    /// Regions overlapping nothing are returned unchanged.
    pub fn regress(&self, b: &BoundingBox) -> BoundingBox {
        match self.nearest(b) {
            Some((i, v)) if v > 0.0 => blend(b, &self.truth[i].0, self.shrink),
            _ => *b,
        }
    }
}

/// Build the detector response for one image from its clean annotations.
pub fn respond(image: &ImageRecord, class_count: usize, cfg: &OracleConfig) -> DetectorResponse {
    let (w, h) = (f64::from(image.width), f64::from(image.height));
    let mut rng = rng::stream(cfg.seed, &[tag::ORACLE_PROPOSALS, image.image_id]);
    let mut proposals = Vec::new();

    for o in &image.objects {
        for _ in 0..cfg.proposals_per_object {
            if cfg.proposal_jitter == 0.0 {
                proposals.push(Proposal {
                    bbox: o.bbox,
                    objectness: 1.0,
                });
                continue;
            }
            let (bw, bh) = (o.bbox.width(), o.bbox.height());
            let jittered = (0..MAX_PROPOSAL_TRIES).find_map(|_| {
                let mut e = [0.0f64; 4];
                for v in &mut e {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * cfg.proposal_jitter;
                }
                BoundingBox::new(
                    o.bbox.x1() + e[0] * bw,
                    o.bbox.y1() + e[1] * bh,
                    o.bbox.x2() + e[2] * bw,
                    o.bbox.y2() + e[3] * bh,
                )
                .and_then(|b| b.clamp_to(w, h))
                .ok()
            });
            if let Some(bbox) = jittered {
                proposals.push(Proposal {
                    bbox,
                    objectness: iou(&bbox, &o.bbox),
                });
            }
        }
    }

    for _ in 0..cfg.distractor_count {
        let bw = rng.random_range(0.05..0.5) * w;
        let bh = rng.random_range(0.05..0.5) * h;
        let x1 = rng.random_range(0.0..(w - bw));
        let y1 = rng.random_range(0.0..(h - bh));
        let objectness = rng.random_range(0.0..0.3);
        if let Ok(bbox) = BoundingBox::new(x1, y1, x1 + bw, y1 + bh) {
            proposals.push(Proposal { bbox, objectness });
        }
    }

    proposals.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));

    DetectorResponse {
        image_id: image.image_id,
        proposals,
        truth: image.objects.iter().map(|o| (o.bbox, o.label)).collect(),
        class_count,
        accuracy: cfg.classification_accuracy,
        temperature: cfg.score_temperature,
        shrink: cfg.regression_shrink,
        score_seed: rng::derive_seed(cfg.seed, &[tag::ORACLE_SCORES, image.image_id]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fitness, DEFAULT_GAMMA};
    use crate::types::{AnnotatedObject, ObjectFlags};

    fn image() -> ImageRecord {
        let mut im = ImageRecord::new(3, 640, 480);
        for (i, (b, l)) in [
            ([50.0, 50.0, 150.0, 200.0], 1),
            ([300.0, 100.0, 420.0, 180.0], 4),
        ]
        .into_iter()
        .enumerate()
        {
            im.objects.push(AnnotatedObject {
                object_id: i as u64,
                image_id: 3,
                bbox: BoundingBox::try_from(b).unwrap(),
                label: ClassLabel(l),
                flags: ObjectFlags::default(),
            });
        }
        im
    }

    #[test]
    fn perfect_oracle_limits() {
        let im = image();
        let r = respond(&im, 5, &OracleConfig::perfect(9));
        for o in &im.objects {
            assert!(r.proposals.iter().any(|p| p.bbox == o.bbox));
            let s = r.score_of(&o.bbox);
            assert!(s.prob(o.label) >= 0.99);
            assert_eq!(r.regress(&o.bbox), o.bbox);
            let best = r
                .proposals
                .iter()
                .map(|p| fitness(&o.bbox, &p.bbox, DEFAULT_GAMMA))
                .fold(f64::MIN, f64::max);
            assert_eq!(best, 1.0);
        }
    }

    #[test]
    fn proposals_sorted_and_valid() {
        let r = respond(&image(), 5, &OracleConfig::high_fidelity(1));
        assert!(r
            .proposals
            .windows(2)
            .all(|w| w[0].objectness >= w[1].objectness));
        assert!(r
            .proposals
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.objectness)));
        assert_eq!(r.proposals.len(), 2 * 8 + 20);
    }

    #[test]
    fn deterministic_responses() {
        let cfg = OracleConfig::high_fidelity(77);
        let a = respond(&image(), 5, &cfg);
        let b = respond(&image(), 5, &cfg);
        assert_eq!(a.proposals, b.proposals);
        let q = BoundingBox::new(55.0, 40.0, 160.0, 190.0).unwrap();
        assert_eq!(a.score_of(&q), b.score_of(&q));
        assert_eq!(a.score_of(&q), a.score_of(&q));
        assert_eq!(a.regress(&q), b.regress(&q));
    }

    #[test]
    fn background_region_peaks_on_background() {
        let r = respond(&image(), 5, &OracleConfig::high_fidelity(2));
        let s = r.score_of(&BoundingBox::new(500.0, 400.0, 600.0, 470.0).unwrap());
        let (_, p) = s.argmax_foreground();
        assert!(s.background() > p);
    }

    #[test]
    fn scores_normalised() {
        let r = respond(&image(), 5, &OracleConfig::high_fidelity(5));
        for p in &r.proposals {
            let s = r.score_of(&p.bbox);
            let sum: f64 = s.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(s.class_count(), 5);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let s = ClassScores::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&s, ClassLabel(0)), 0.0);
        assert!((cross_entropy(&s, ClassLabel(1)) - (-(1e-12f64).ln())).abs() < 1e-12);
        let half = ClassScores::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert!((cross_entropy(&half, ClassLabel(0)) - std::f64::consts::LN_2).abs() < 1e-15);
        let peaked = ClassScores::new(vec![0.9, 0.04, 0.03, 0.03]).unwrap();
        assert!(
            cross_entropy(&peaked, ClassLabel(1)) > 10.0 * cross_entropy(&peaked, ClassLabel(0))
        );
    }

    #[test]
    fn class_scores_validation() {
        assert!(ClassScores::new(vec![0.5, 0.6]).is_err());
        assert!(ClassScores::new(vec![1.0]).is_err());
        assert!(ClassScores::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = OracleConfig::high_fidelity(0);
        c.classification_accuracy = 0.2;
        assert!(c.validate(5).is_err());
        c.classification_accuracy = 0.21;
        assert!(c.validate(5).is_ok());
        c.regression_shrink = 1.5;
        assert!(c.validate(5).is_err());
        assert!(OracleConfig::preset("nope", 5, 0).is_err());
    }
}
