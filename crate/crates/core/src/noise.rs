//! Label and box corruption models.
//!
//! Labels are resampled from a row-stochastic transition matrix (symmetric or
//! pair structure). Box corners are moved by relative offsets `δ` scaled by
//! the box width/height:
//!
//! ```text
//! x1' = x1 + δ1 (x2 - x1)    x2' = x2 + δ2 (x2 - x1)
//! y1' = y1 + δ3 (y2 - y1)    y2' = y2 + δ4 (y2 - y1)
//! ```
//!
//! with `δ ~ U(-N, N)` or `δ ~ N(0, σ²)`. Perturbed boxes are clipped to the
//! image; a draw that leaves no valid box is rejected and all four offsets
//! are redrawn.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::types::{BoundingBox, ClassLabel, Dataset};

/// Redraws allowed per box before giving up.
pub const MAX_RESAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelNoiseKind {
    Symmetric,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxNoiseKind {
    Uniform,
    Gaussian,
}

/// Row-stochastic `n x n` label transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    kind: LabelNoiseKind,
    n: usize,
    rate: f64,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn build(kind: LabelNoiseKind, n: usize, rate: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "transition matrix needs at least 2 classes, got {n}"
            )));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "noise rate must be in [0, 1), got {rate}"
            )));
        }
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut entries[i * n..(i + 1) * n];
            match kind {
                LabelNoiseKind::Symmetric => {
                    let off = rate / (n - 1) as f64;
                    row.iter_mut().for_each(|e| *e = off);
                    row[i] = 1.0 - rate;
                }
                LabelNoiseKind::Pair => {
                    row[i] = 1.0 - rate;
                    row[(i + 1) % n] = rate;
                }
            }
        }
        Ok(Self {
            kind,
            n,
            rate,
            entries,
        })
    }

    pub fn kind(&self) -> LabelNoiseKind {
        self.kind
    }

    pub fn class_count(&self) -> usize {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }

    /// Inverse-CDF pick from row `from` given `u` in `[0, 1)`.
    /// Zero-probability entries are never returned.
    pub fn sample(&self, from: ClassLabel, u: f64) -> ClassLabel {
        let row = self.row(from.0);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return ClassLabel(j);
            }
        }
        // Rounding left u above the accumulated total.
        let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(from.0);
        ClassLabel(last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseSpec {
    pub kind: LabelNoiseKind,
    pub rate: f64,
}

impl LabelNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidArgument(format!(
                "label noise rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Box perturbation model. `param` is `N_BBox` for uniform noise and the
/// standard deviation `σ` of the relative offset for gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxNoiseSpec {
    pub kind: BoxNoiseKind,
    pub param: f64,
}

impl BoxNoiseSpec {
    pub fn uniform(n_bbox: f64) -> Result<Self> {
        let s = Self {
            kind: BoxNoiseKind::Uniform,
            param: n_bbox,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        let s = Self {
            kind: BoxNoiseKind::Gaussian,
            param: sigma,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            // Worst-case width after perturbation is (1 - 2N) w.
            BoxNoiseKind::Uniform if !(0.0..0.5).contains(&self.param) => {
                Err(Error::InvalidArgument(format!(
                    "uniform box noise must be in [0, 0.5), got {}",
                    self.param
                )))
            }
            BoxNoiseKind::Gaussian if !(self.param > 0.0 && self.param.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian sigma must be > 0, got {}", self.param)),
            ),
            _ => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        self.kind == BoxNoiseKind::Uniform && self.param == 0.0
    }
}

fn split_spec(s: &str) -> Result<(&str, f64)> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("expected KIND:VALUE, got `{s}`")))?;
    let value = value
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("`{value}` is not a number")))?;
    Ok((kind.trim(), value))
}

impl FromStr for LabelNoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rate) = split_spec(s)?;
        let kind = match kind.to_ascii_lowercase().as_str() {
            "symmetric" => LabelNoiseKind::Symmetric,
            "pair" => LabelNoiseKind::Pair,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown label noise `{other}` (expected symmetric or pair)"
                )))
            }
        };
        let spec = Self { kind, rate };
        spec.validate()?;
        Ok(spec)
    }
}

impl FromStr for BoxNoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = split_spec(s)?;
        match kind.to_ascii_lowercase().as_str() {
            "uniform" => Self::uniform(param),
            "gaussian" => Self::gaussian(param),
            other => Err(Error::InvalidArgument(format!(
                "unknown box noise `{other}` (expected uniform or gaussian)"
            ))),
        }
    }
}

impl fmt::Display for LabelNoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            LabelNoiseKind::Symmetric => "symmetric",
            LabelNoiseKind::Pair => "pair",
        };
        write!(f, "{k}:{}", self.rate)
    }
}

impl fmt::Display for BoxNoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            BoxNoiseKind::Uniform => "uniform",
            BoxNoiseKind::Gaussian => "gaussian",
        };
        write!(f, "{k}:{}", self.param)
    }
}

/// One applied corruption, as stored in a dataset's `noise_meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum CorruptionStep {
    Label {
        kind: LabelNoiseKind,
        rate: f64,
        seed: u64,
    },
    Box {
        kind: BoxNoiseKind,
        param: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub image_id: u64,
    pub original_label: ClassLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted_label: Option<ClassLabel>,
    pub original_box: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted_box: Option<BoundingBox>,
}

impl RecordEntry {
    pub fn label_changed(&self) -> bool {
        self.corrupted_label.is_some()
    }

    pub fn box_changed(&self) -> bool {
        self.corrupted_box.is_some()
    }
}

/// Ground truth of what a corruption pass changed, keyed by object id.
/// Objects whose annotation is unchanged are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorruptionRecord {
    pub entries: BTreeMap<u64, RecordEntry>,
}

impl CorruptionRecord {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, object_id: u64) -> Option<&RecordEntry> {
        self.entries.get(&object_id)
    }

    pub fn label_flips(&self) -> usize {
        self.entries.values().filter(|e| e.label_changed()).count()
    }

    /// Fold `later` (applied on top of `self`) into one record against the
    /// original clean annotations.
    pub fn merge(mut self, later: CorruptionRecord) -> Self {
        for (id, e) in later.entries {
            match self.entries.get_mut(&id) {
                Some(cur) => {
                    if let Some(l) = e.corrupted_label {
                        cur.corrupted_label = (l != cur.original_label).then_some(l);
                    }
                    if let Some(b) = e.corrupted_box {
                        cur.corrupted_box = (b != cur.original_box).then_some(b);
                    }
                }
                None => {
                    self.entries.insert(id, e);
                }
            }
        }
        self.entries
            .retain(|_, e| e.label_changed() || e.box_changed());
        self
    }

    /// Reconstruct the clean dataset from a corrupted one.
    pub fn restore(&self, noisy: &Dataset) -> Dataset {
        let mut ds = noisy.clone();
        for o in ds.objects_mut() {
            if let Some(e) = self.entries.get(&o.object_id) {
                o.label = e.original_label;
                o.bbox = e.original_box;
            }
            o.flags = Default::default();
        }
        ds
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Resample every label from its transition-matrix row.
pub fn corrupt_labels(
    ds: &Dataset,
    matrix: &TransitionMatrix,
    seed: u64,
) -> Result<(Dataset, CorruptionRecord)> {
    ds.validate()?;
    if matrix.class_count() != ds.class_count() {
        return Err(Error::InvalidArgument(format!(
            "transition matrix is {0}x{0} but the dataset has {1} classes",
            matrix.class_count(),
            ds.class_count()
        )));
    }
    let mut out = ds.clone();
    let mut record = CorruptionRecord::default();
    for o in out.objects_mut() {
        let mut rng = rng::stream(seed, &[tag::LABEL_NOISE, o.object_id]);
        let u: f64 = rng.random();
        let new_label = matrix.sample(o.label, u);
        if new_label != o.label {
            record.entries.insert(
                o.object_id,
                RecordEntry {
                    image_id: o.image_id,
                    original_label: o.label,
                    corrupted_label: Some(new_label),
                    original_box: o.bbox,
                    corrupted_box: None,
                },
            );
            o.label = new_label;
            o.flags.label_corrupted = true;
        }
    }
    out.meta.corruptions.push(CorruptionStep::Label {
        kind: matrix.kind(),
        rate: matrix.rate(),
        seed,
    });
    Ok((out, record))
}

/// Apply the relative-offset formula with explicit offsets `[δ1, δ2, δ3, δ4]`.
/// Returns `None` when the result (before clipping) is not a valid box.
pub fn perturb_box(b: &BoundingBox, deltas: [f64; 4]) -> Option<BoundingBox> {
    let (w, h) = (b.width(), b.height());
    BoundingBox::new(
        b.x1() + deltas[0] * w,
        b.y1() + deltas[2] * h,
        b.x2() + deltas[1] * w,
        b.y2() + deltas[3] * h,
    )
    .ok()
}

fn draw_deltas(spec: &BoxNoiseSpec, rng: &mut rng::StreamRng) -> [f64; 4] {
    match spec.kind {
        BoxNoiseKind::Uniform => {
            let p = spec.param;
            std::array::from_fn(|_| rng.random_range(-p..=p))
        }
        BoxNoiseKind::Gaussian => {
            let normal = Normal::new(0.0, spec.param).expect("sigma validated");
            std::array::from_fn(|_| normal.sample(rng))
        }
    }
}

/// Perturb every box with the given noise model, clipping to image bounds.
pub fn corrupt_boxes(
    ds: &Dataset,
    spec: &BoxNoiseSpec,
    seed: u64,
) -> Result<(Dataset, CorruptionRecord)> {
    ds.validate()?;
    spec.validate()?;
    let mut out = ds.clone();
    let mut record = CorruptionRecord::default();
    if !spec.is_identity() {
        for im in &mut out.images {
            let (w, h) = (f64::from(im.width), f64::from(im.height));
            for o in &mut im.objects {
                let mut rng = rng::stream(seed, &[tag::BOX_NOISE, o.object_id]);
                let noisy = (0..MAX_RESAMPLE)
                    .find_map(|_| {
                        perturb_box(&o.bbox, draw_deltas(spec, &mut rng))
                            .and_then(|b| b.clamp_to(w, h).ok())
                    })
                    .ok_or(Error::Resample {
                        object_id: o.object_id,
                        attempts: MAX_RESAMPLE,
                    })?;
                if noisy != o.bbox {
                    record.entries.insert(
                        o.object_id,
                        RecordEntry {
                            image_id: o.image_id,
                            original_label: o.label,
                            corrupted_label: None,
                            original_box: o.bbox,
                            corrupted_box: Some(noisy),
                        },
                    );
                    o.bbox = noisy;
                    o.flags.box_corrupted = true;
                }
            }
        }
    }
    out.meta.corruptions.push(CorruptionStep::Box {
        kind: spec.kind,
        param: spec.param,
        seed,
    });
    Ok((out, record))
}

/// Label corruption followed by box corruption, each on its own sub-stream
/// of `seed`. Either stage may be skipped.
pub fn compose_corruptions(
    ds: &Dataset,
    label: Option<&LabelNoiseSpec>,
    boxes: Option<&BoxNoiseSpec>,
    seed: u64,
) -> Result<(Dataset, CorruptionRecord)> {
    let mut cur = ds.clone();
    let mut record = CorruptionRecord::default();
    if let Some(spec) = label {
        spec.validate()?;
        let matrix = TransitionMatrix::build(spec.kind, ds.class_count(), spec.rate)?;
        let (next, r) = corrupt_labels(&cur, &matrix, rng::derive_seed(seed, &[tag::LABEL_NOISE]))?;
        cur = next;
        record = record.merge(r);
    }
    if let Some(spec) = boxes {
        let (next, r) = corrupt_boxes(&cur, spec, rng::derive_seed(seed, &[tag::BOX_NOISE]))?;
        cur = next;
        record = record.merge(r);
    }
    cur.meta.seed = Some(seed);
    Ok((cur, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AnnotatedObject, ImageRecord, ObjectFlags};

    fn grid_dataset(classes: usize, objects: usize) -> Dataset {
        let mut ds = Dataset::with_class_count(classes);
        for i in 0..objects as u64 {
            let mut im = ImageRecord::new(i, 1000, 1000);
            im.objects.push(AnnotatedObject {
                object_id: i,
                image_id: i,
                bbox: BoundingBox::new(300.0, 300.0, 400.0, 450.0).unwrap(),
                label: ClassLabel(i as usize % classes),
                flags: ObjectFlags::default(),
            });
            ds.images.push(im);
        }
        ds
    }

    #[test]
    fn symmetric_matrix_n3() {
        let q = TransitionMatrix::build(LabelNoiseKind::Symmetric, 3, 0.3).unwrap();
        let expected = [[0.7, 0.15, 0.15], [0.15, 0.7, 0.15], [0.15, 0.15, 0.7]];
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(q.get(i, j), v, "({i},{j})");
            }
        }
    }

    #[test]
    fn pair_matrix_n3() {
        let q = TransitionMatrix::build(LabelNoiseKind::Pair, 3, 0.3).unwrap();
        let expected = [[0.7, 0.3, 0.0], [0.0, 0.7, 0.3], [0.3, 0.0, 0.7]];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(q.row(i), row);
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let q = TransitionMatrix::build(LabelNoiseKind::Symmetric, 5, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(q.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn invalid_matrix_arguments() {
        assert!(TransitionMatrix::build(LabelNoiseKind::Symmetric, 1, 0.2).is_err());
        assert!(TransitionMatrix::build(LabelNoiseKind::Pair, 3, 1.0).is_err());
        assert!(TransitionMatrix::build(LabelNoiseKind::Pair, 3, -0.1).is_err());
    }

    #[test]
    fn sample_never_picks_zero_entries() {
        let q = TransitionMatrix::build(LabelNoiseKind::Pair, 4, 0.3).unwrap();
        for k in 0..1000 {
            let u = k as f64 / 1000.0;
            let to = q.sample(ClassLabel(2), u);
            assert!(to == ClassLabel(2) || to == ClassLabel(3));
        }
        assert_eq!(q.sample(ClassLabel(3), 1.0 - f64::EPSILON), ClassLabel(3));
        assert_eq!(q.sample(ClassLabel(3), 0.0), ClassLabel(0));
    }

    #[test]
    fn zero_label_noise_is_identity() {
        let ds = grid_dataset(4, 50);
        let q = TransitionMatrix::build(LabelNoiseKind::Symmetric, 4, 0.0).unwrap();
        let (out, rec) = corrupt_labels(&ds, &q, 1).unwrap();
        assert!(rec.is_empty());
        assert_eq!(out.images, ds.images);
    }

    #[test]
    fn class_count_mismatch() {
        let ds = grid_dataset(4, 5);
        let q = TransitionMatrix::build(LabelNoiseKind::Symmetric, 3, 0.2).unwrap();
        assert!(matches!(
            corrupt_labels(&ds, &q, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_box_noise_is_identity() {
        let ds = grid_dataset(2, 20);
        let (out, rec) = corrupt_boxes(&ds, &BoxNoiseSpec::uniform(0.0).unwrap(), 3).unwrap();
        assert!(rec.is_empty());
        assert_eq!(out.images, ds.images);
    }

    #[test]
    fn uniform_box_bounds_on_100px_box() {
        let mut ds = Dataset::with_class_count(2);
        for i in 0..500u64 {
            let mut im = ImageRecord::new(i, 1000, 1000);
            im.objects.push(AnnotatedObject {
                object_id: i,
                image_id: i,
                bbox: BoundingBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                label: ClassLabel(0),
                flags: ObjectFlags::default(),
            });
            ds.images.push(im);
        }
        let (out, _) = corrupt_boxes(&ds, &BoxNoiseSpec::uniform(0.2).unwrap(), 11).unwrap();
        for o in out.objects() {
            let c = o.bbox.corners();
            assert!((0.0..=20.0).contains(&c[0]));
            assert!((80.0..=120.0).contains(&c[2]));
            assert!((0.0..=20.0).contains(&c[1]));
            assert!((80.0..=120.0).contains(&c[3]));
            assert!(o.bbox.width() >= 60.0);
        }
    }

    #[test]
    fn uniform_spec_bounds() {
        assert!(BoxNoiseSpec::uniform(0.5).is_err());
        assert!(BoxNoiseSpec::uniform(-0.1).is_err());
        assert!(BoxNoiseSpec::gaussian(0.0).is_err());
        assert!("uniform:0.49".parse::<BoxNoiseSpec>().is_ok());
        assert!("symmetric:1.2".parse::<LabelNoiseSpec>().is_err());
        assert!("bogus:0.2".parse::<LabelNoiseSpec>().is_err());
        assert!("pair".parse::<LabelNoiseSpec>().is_err());
    }

    #[test]
    fn record_merge_and_restore() {
        let ds = grid_dataset(5, 200);
        let (noisy, rec) = compose_corruptions(
            &ds,
            Some(&"symmetric:0.4".parse().unwrap()),
            Some(&"uniform:0.2".parse().unwrap()),
            5,
        )
        .unwrap();
        assert_eq!(rec.len(), 200);
        assert!(rec.label_flips() > 40);
        let back = rec.restore(&noisy);
        assert_eq!(back.images, ds.images);
        assert_eq!(noisy.meta.corruptions.len(), 2);
        assert_eq!(noisy.meta.seed, Some(5));

        let text = rec.to_json().unwrap();
        assert_eq!(CorruptionRecord::from_json(&text).unwrap(), rec);
    }
}
