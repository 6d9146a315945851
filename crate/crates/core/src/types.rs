//! Annotation data model shared by every stage of the toolkit.
//!
//! Boxes are held in corner form `[x1, y1, x2, y2]` with 64-bit coordinates.
//! The COCO `[x, y, w, h]` form only exists at the file boundary, see
//! [`crate::coco`].

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::CorruptionStep;

/// Axis-aligned rectangle in pixel coordinates with `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invariant(
                None,
                format!("non-finite box coordinate in [{x1}, {y1}, {x2}, {y2}]"),
            ));
        }
        if x1 >= x2 {
            return Err(Error::invariant(
                None,
                format!("box requires x1 < x2, got x1={x1} x2={x2}"),
            ));
        }
        if y1 >= y2 {
            return Err(Error::invariant(
                None,
                format!("box requires y1 < y2, got y1={y1} y2={y2}"),
            ));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// COCO `[x, y, w, h]` form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    /// Caller guarantees the invariants (e.g. convex combinations of valid boxes).
    pub(crate) fn from_corners_unchecked(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        debug_assert!(
            x1 < x2 && y1 < y2,
            "degenerate box [{x1}, {y1}, {x2}, {y2}]"
        );
        Self { x1, y1, x2, y2 }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// `W + H`, the size proxy used by center matching.
    pub fn half_perimeter(&self) -> f64 {
        self.width() + self.height()
    }

    /// Clip to `[0, width] x [0, height]`. Errors when nothing positive is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Result<Self> {
        Self::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Uniform scaling by `factor > 0` about `(cx, cy)`.
    pub fn scale_about(&self, cx: f64, cy: f64, factor: f64) -> Result<Self> {
        Self::new(
            cx + (self.x1 - cx) * factor,
            cy + (self.y1 - cy) * factor,
            cx + (self.x2 - cx) * factor,
            cy + (self.y2 - cy) * factor,
        )
    }
}

impl fmt::Debug for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// Foreground class index in `[0, n)`, the position of the class in
/// [`Dataset::categories`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Provenance markers carried with each object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectFlags {
    pub label_corrupted: bool,
    pub box_corrupted: bool,
    pub judged_noisy: bool,
    pub refined: bool,
    pub discarded: bool,
}

impl ObjectFlags {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject {
    pub object_id: u64,
    pub image_id: u64,
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub flags: ObjectFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

impl ImageRecord {
    pub fn new(image_id: u64, width: u32, height: u32) -> Self {
        Self {
            image_id,
            width,
            height,
            objects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// Seed and ordered list of corruptions applied to a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub corruptions: Vec<CorruptionStep>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub categories: Vec<Category>,
    pub images: Vec<ImageRecord>,
    pub meta: NoiseMeta,
}

impl Dataset {
    pub fn new(categories: Vec<Category>) -> Self {
        Self {
            categories,
            images: Vec::new(),
            meta: NoiseMeta::default(),
        }
    }

    /// Dataset with classes `0..n` named `class_<i>`.
    pub fn with_class_count(n: usize) -> Self {
        Self::new(
            (0..n)
                .map(|i| Category {
                    id: i as u64 + 1,
                    name: format!("class_{i}"),
                })
                .collect(),
        )
    }

    pub fn class_count(&self) -> usize {
        self.categories.len()
    }

    pub fn object_count(&self) -> usize {
        self.images.iter().map(|im| im.objects.len()).sum()
    }

    pub fn objects(&self) -> impl Iterator<Item = &AnnotatedObject> {
        self.images.iter().flat_map(|im| im.objects.iter())
    }

    pub fn objects_mut(&mut self) -> impl Iterator<Item = &mut AnnotatedObject> {
        self.images.iter_mut().flat_map(|im| im.objects.iter_mut())
    }

    /// `object_id -> object` lookup.
    pub fn object_index(&self) -> HashMap<u64, &AnnotatedObject> {
        self.objects().map(|o| (o.object_id, o)).collect()
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    /// Check every dataset invariant, reporting the first offending record.
    pub fn validate(&self) -> Result<()> {
        let n = self.class_count();
        let mut category_ids = HashSet::new();
        for c in &self.categories {
            if !category_ids.insert(c.id) {
                return Err(Error::schema(
                    None,
                    format!("duplicate category id {}", c.id),
                ));
            }
        }
        let mut image_ids = HashSet::new();
        let mut object_ids = HashSet::new();
        for im in &self.images {
            if !image_ids.insert(im.image_id) {
                return Err(Error::schema(
                    None,
                    format!("duplicate image id {}", im.image_id),
                ));
            }
            if im.width == 0 || im.height == 0 {
                return Err(Error::invariant(
                    None,
                    format!(
                        "image {} has zero extent {}x{}",
                        im.image_id, im.width, im.height
                    ),
                ));
            }
            for o in &im.objects {
                if !object_ids.insert(o.object_id) {
                    return Err(Error::invariant(Some(o.object_id), "duplicate object id"));
                }
                if o.image_id != im.image_id {
                    return Err(Error::invariant(
                        Some(o.object_id),
                        format!(
                            "object filed under image {} but references image {}",
                            im.image_id, o.image_id
                        ),
                    ));
                }
                if o.label.0 >= n {
                    return Err(Error::invariant(
                        Some(o.object_id),
                        format!("label {} out of range for {n} classes", o.label.0),
                    ));
                }
                // Re-run the box checks so hand-built datasets get the same diagnostics.
                let c = o.bbox.corners();
                BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| match e {
                    Error::Invariant { message, .. } => {
                        Error::invariant(Some(o.object_id), message)
                    }
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}
