//! COCO-subset JSON reading and writing.
//!
//! Files carry `categories`, `images`, `annotations` (with `bbox` as
//! `[x, y, w, h]`) and an optional `noise_meta` block. Written files always
//! include `noise_meta`, and each annotation additionally carries its exact
//! corner form under `bbox_xyxy` plus non-empty provenance `flags`. When
//! `bbox_xyxy` is present on read it is authoritative, which makes
//! save/load bit-exact: `x + (x2 - x1)` does not reproduce `x2` in general.
//! Numbers are written in shortest round-trip form.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{
    AnnotatedObject, BoundingBox, Category, ClassLabel, Dataset, ImageRecord, NoiseMeta,
    ObjectFlags,
};

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default, skip_deserializing)]
    area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox_xyxy: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "ObjectFlags::is_empty")]
    flags: ObjectFlags,
}

#[derive(Debug, Serialize)]
struct CocoFileOut<'a> {
    categories: &'a [Category],
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    noise_meta: &'a NoiseMeta,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_string(ds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parse and fully validate a dataset from JSON text.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::schema(None, "top level must be a JSON object"))?;

    let categories: Vec<Category> = required_list(obj, "categories")?;
    let images: Vec<CocoImage> = required_list(obj, "images")?;
    let meta: NoiseMeta = match obj.get("noise_meta") {
        None | Some(Value::Null) => NoiseMeta::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::schema(None, format!("noise_meta: {e}")))?,
    };

    let label_of: HashMap<u64, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();
    if label_of.len() != categories.len() {
        return Err(Error::schema(None, "duplicate category id"));
    }

    let mut ds = Dataset::new(categories);
    ds.meta = meta;
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for im in images {
        if slot.insert(im.id, ds.images.len()).is_some() {
            return Err(Error::schema(None, format!("duplicate image id {}", im.id)));
        }
        if im.width == 0 || im.height == 0 {
            return Err(Error::invariant(
                None,
                format!("image {} has zero extent {}x{}", im.id, im.width, im.height),
            ));
        }
        ds.images.push(ImageRecord::new(im.id, im.width, im.height));
    }

    let raw_annotations = match obj.get("annotations") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(Error::schema(None, "`annotations` must be an array")),
        None => return Err(Error::schema(None, "missing field `annotations`")),
    };
    for raw in raw_annotations {
        let hint = raw.get("id").and_then(Value::as_u64);
        let ann: CocoAnnotation =
            serde_json::from_value(raw.clone()).map_err(|e| Error::schema(hint, e.to_string()))?;
        let id = Some(ann.id);
        let label = *label_of.get(&ann.category_id).ok_or_else(|| {
            Error::invariant(
                id,
                format!(
                    "category_id {} is not one of the {} declared categories",
                    ann.category_id,
                    label_of.len()
                ),
            )
        })?;
        let bbox = annotation_box(&ann).map_err(|e| match e {
            Error::Invariant { message, .. } => Error::invariant(id, message),
            other => other,
        })?;
        let &idx = slot.get(&ann.image_id).ok_or_else(|| {
            Error::schema(id, format!("references unknown image {}", ann.image_id))
        })?;
        ds.images[idx].objects.push(AnnotatedObject {
            object_id: ann.id,
            image_id: ann.image_id,
            bbox,
            label: ClassLabel(label),
            flags: ann.flags,
        });
    }

    ds.validate()?;
    Ok(ds)
}

fn annotation_box(ann: &CocoAnnotation) -> Result<BoundingBox> {
    let [x, y, w, h] = ann.bbox;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invariant(
            None,
            format!("bbox [{x}, {y}, {w}, {h}] has non-positive width or height"),
        ));
    }
    let Some(c) = ann.bbox_xyxy else {
        return BoundingBox::from_xywh(x, y, w, h);
    };
    let b = BoundingBox::try_from(c)?;
    let derived = [x, y, x + w, y + h];
    for (a, d) in c.iter().zip(derived) {
        if (a - d).abs() > 1e-6 * d.abs().max(1.0) {
            return Err(Error::invariant(
                None,
                format!("bbox_xyxy {c:?} disagrees with bbox {:?}", ann.bbox),
            ));
        }
    }
    Ok(b)
}

fn required_list<T: for<'de> Deserialize<'de>>(
    obj: &serde_json::Map<String, Value>,
    key: &str,
) -> Result<Vec<T>> {
    let v = obj
        .get(key)
        .ok_or_else(|| Error::schema(None, format!("missing field `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::schema(None, format!("{key}: {e}")))
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    ds.validate()?;
    let out = CocoFileOut {
        categories: &ds.categories,
        images: ds
            .images
            .iter()
            .map(|im| CocoImage {
                id: im.image_id,
                width: im.width,
                height: im.height,
            })
            .collect(),
        annotations: ds
            .objects()
            .map(|o| CocoAnnotation {
                id: o.object_id,
                image_id: o.image_id,
                category_id: ds.categories[o.label.0].id,
                bbox: o.bbox.to_xywh(),
                area: o.bbox.area(),
                bbox_xyxy: Some(o.bbox.corners()),
                flags: o.flags,
            })
            .collect(),
        noise_meta: &ds.meta,
    };
    let mut s = serde_json::to_string_pretty(&out)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "categories": [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}],
        "images": [{"id": 7, "width": 100, "height": 50}],
        "annotations": [{"id": 3, "image_id": 7, "category_id": 1, "bbox": [0, 0, 10, 10]}]
    }"#;

    #[test]
    fn minimal_file_loads() {
        let ds = parse_dataset(MINIMAL).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.object_count(), 1);
        let o = ds.objects().next().unwrap();
        assert_eq!(o.bbox.corners(), [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(o.label, ClassLabel(0));
        assert_eq!(ds.meta, NoiseMeta::default());
    }

    #[test]
    fn inverted_box_names_object() {
        let text = MINIMAL.replace(
            r#""bbox": [0, 0, 10, 10]"#,
            r#""bbox": [10, 0, 5, 10], "bbox_xyxy": [10, 0, 5, 10]"#,
        );
        let err = parse_dataset(&text).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Invariant {
                    object_id: Some(3),
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn negative_width_names_object() {
        let text = MINIMAL.replace("[0, 0, 10, 10]", "[10, 0, -5, 10]");
        let err = parse_dataset(&text).unwrap_err();
        assert_eq!(err.object_id(), Some(3));
    }

    #[test]
    fn unknown_category_is_rejected() {
        let text = MINIMAL.replace(r#""category_id": 1"#, r#""category_id": 3"#);
        let err = parse_dataset(&text).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Invariant {
                    object_id: Some(3),
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn missing_field_is_schema_error() {
        let text = MINIMAL.replace(r#""category_id": 1, "#, "");
        let err = parse_dataset(&text).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Schema {
                    object_id: Some(3),
                    ..
                }
            ),
            "{err}"
        );
        let err = parse_dataset(r#"{"images": [], "annotations": []}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_dataset("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn unknown_image_and_duplicate_ids() {
        let text = MINIMAL.replace(r#""image_id": 7"#, r#""image_id": 8"#);
        assert_eq!(parse_dataset(&text).unwrap_err().object_id(), Some(3));

        let dup = r#"{
            "categories": [{"id": 1, "name": "cat"}],
            "images": [{"id": 7, "width": 100, "height": 50}],
            "annotations": [
                {"id": 3, "image_id": 7, "category_id": 1, "bbox": [0, 0, 10, 10]},
                {"id": 3, "image_id": 7, "category_id": 1, "bbox": [0, 0, 12, 10]}
            ]
        }"#;
        assert_eq!(parse_dataset(dup).unwrap_err().object_id(), Some(3));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::with_class_count(3);
        let text = dataset_to_string(&ds).unwrap();
        assert!(text.contains("noise_meta"));
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn non_integer_corners_round_trip_exactly() {
        let mut ds = Dataset::with_class_count(1);
        let mut im = ImageRecord::new(1, 640, 480);
        im.objects.push(AnnotatedObject {
            object_id: 1,
            image_id: 1,
            bbox: BoundingBox::new(0.1, 0.2, 0.30000000000000004, 100.0 / 3.0).unwrap(),
            label: ClassLabel(0),
            flags: ObjectFlags {
                refined: true,
                ..Default::default()
            },
        });
        ds.images.push(im);
        let back = parse_dataset(&dataset_to_string(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
