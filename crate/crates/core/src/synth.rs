//! Seeded generator of clean synthetic datasets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::intersection_area;
use crate::rng::{self, tag};
use crate::types::{AnnotatedObject, BoundingBox, ClassLabel, Dataset, ImageRecord, ObjectFlags};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    pub classes: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub max_objects_per_image: usize,
    pub min_side: f64,
    pub max_side: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 1000,
            classes: 20,
            image_width: 640,
            image_height: 480,
            max_objects_per_image: 4,
            min_side: 40.0,
            max_side: 200.0,
            seed: 0,
        }
    }
}

const PLACEMENT_TRIES: usize = 200;

/// Images with 1 to `max_objects_per_image` pairwise disjoint boxes, until
/// exactly `objects` objects exist. Ids start at 1.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if cfg.max_objects_per_image == 0
        || !(cfg.min_side > 0.0 && cfg.min_side <= cfg.max_side)
        || cfg.max_side >= f64::from(cfg.image_width.min(cfg.image_height))
    {
        return Err(Error::InvalidArgument(
            "object sizes do not fit the image".into(),
        ));
    }
    let (w, h) = (f64::from(cfg.image_width), f64::from(cfg.image_height));
    let mut ds = Dataset::with_class_count(cfg.classes);
    let mut next_object = 1u64;
    let mut image_id = 1u64;
    while (next_object as usize) <= cfg.objects {
        let mut r = rng::stream(cfg.seed, &[tag::SYNTH, image_id]);
        let remaining = cfg.objects + 1 - next_object as usize;
        let want = r.random_range(1..=cfg.max_objects_per_image).min(remaining);
        let mut im = ImageRecord::new(image_id, cfg.image_width, cfg.image_height);
        for _ in 0..want {
            let placed = (0..PLACEMENT_TRIES).find_map(|_| {
                let bw = r.random_range(cfg.min_side..=cfg.max_side);
                let bh = r.random_range(cfg.min_side..=cfg.max_side);
                let x = r.random_range(0.0..(w - bw)).round();
                let y = r.random_range(0.0..(h - bh)).round();
                let b = BoundingBox::new(x, y, x + bw.round(), y + bh.round()).ok()?;
                im.objects
                    .iter()
                    .all(|o| intersection_area(&o.bbox, &b) == 0.0)
                    .then_some(b)
            });
            let Some(bbox) = placed else { break };
            let label = ClassLabel(r.random_range(0..cfg.classes));
            im.objects.push(AnnotatedObject {
                object_id: next_object,
                image_id,
                bbox,
                label,
                flags: ObjectFlags::default(),
            });
            next_object += 1;
        }
        ds.images.push(im);
        image_id += 1;
    }
    Ok(ds)
}
