//! Dataset ingestion: annotation manifests, patch extraction, mixture
//! sampling and statistics.
//!
//! A dataset is one JSON manifest:
//!
//! ```json
//! {
//!   "images": [{"id": 1, "file": "img/0001.png", "width": 640, "height": 480}],
//!   "annotations": [{"image_id": 1, "bbox": [x, y, w, h], "label": "car", "score": 0.9}]
//! }
//! ```
//!
//! `score` is optional; detector imports carry it and are filtered at the
//! confidence threshold, human annotations omit it.

pub mod mixture;
pub mod patch;
pub mod stats;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::semantic::ClassLabel;

/// Detector imports below this confidence are dropped.
pub const DEFAULT_MIN_SCORE: f32 = 0.3;

#[derive(Debug, Deserialize)]
struct RawManifest {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: u64,
    file: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    image_id: u64,
    bbox: [f64; 4],
    label: String,
    #[serde(default)]
    score: Option<f64>,
}

/// An axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    /// Clamps to `[0, width] x [0, height]`; returns `None` when nothing
    /// remains.
    pub fn clamped(&self, width: f32, height: f32) -> Option<BoundingBox> {
        let x = self.x.clamp(0.0, width);
        let y = self.y.clamp(0.0, height);
        let w = (self.x + self.w).clamp(0.0, width) - x;
        let h = (self.y + self.h).clamp(0.0, height) - y;
        if w > 0.0 && h > 0.0 {
            Some(BoundingBox { x, y, w, h })
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub score: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub image_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Default, Clone)]
pub struct LoadWarnings {
    pub missing_images: Vec<PathBuf>,
    pub records_without_boxes: usize,
    pub dropped_annotations: usize,
}

/// A loaded dataset: validated records plus a summary of what was
/// skipped.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub dataset_id: String,
    pub records: Vec<AnnotationRecord>,
    pub warnings: LoadWarnings,
}

impl AnnotationSet {
    pub fn sample_count(&self) -> usize {
        self.records.iter().map(|r| r.annotations.len()).sum()
    }
}

/// Parses and validates a manifest. Bounding boxes are clamped to image
/// bounds; annotations with `score` below `min_score` are filtered;
/// records whose image file is missing, or that end up with no valid
/// boxes, are skipped with a warning.
pub fn load_annotations(manifest_path: impl AsRef<Path>, min_score: f32) -> Result<AnnotationSet> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path, e))?;
    let raw: RawManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        detail: format!("line {} column {}: {}", e.line(), e.column(), e),
    })?;

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dataset_id = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let mut by_image: HashMap<u64, Vec<Annotation>> = HashMap::new();
    let mut warnings = LoadWarnings::default();
    for ann in raw.annotations {
        let label = match ClassLabel::new(&ann.label) {
            Ok(l) => l,
            Err(_) => {
                warnings.dropped_annotations += 1;
                continue;
            }
        };
        if let Some(score) = ann.score {
            if (score as f32) < min_score {
                warnings.dropped_annotations += 1;
                continue;
            }
        }
        by_image.entry(ann.image_id).or_default().push(Annotation {
            bbox: BoundingBox {
                x: ann.bbox[0] as f32,
                y: ann.bbox[1] as f32,
                w: ann.bbox[2] as f32,
                h: ann.bbox[3] as f32,
            },
            label,
            score: ann.score.map(|s| s as f32),
        });
    }

    let mut records = Vec::new();
    for img in raw.images {
        let path = base.join(&img.file);
        if !path.is_file() {
            warnings.missing_images.push(path);
            continue;
        }
        let (w, h) = (img.width as f32, img.height as f32);
        let annotations: Vec<Annotation> = by_image
            .remove(&img.id)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|a| match a.bbox.clamped(w, h) {
                Some(bbox) => Some(Annotation { bbox, ..a }),
                None => {
                    warnings.dropped_annotations += 1;
                    None
                }
            })
            .collect();
        if annotations.is_empty() {
            warnings.records_without_boxes += 1;
            log::warn!(
                "dataset {dataset_id}: image {} has no usable boxes, skipping",
                img.id
            );
            continue;
        }
        records.push(AnnotationRecord {
            image_id: img.id,
            image_path: path,
            width: img.width as usize,
            height: img.height as usize,
            annotations,
        });
    }

    Ok(AnnotationSet {
        dataset_id,
        records,
        warnings,
    })
}
