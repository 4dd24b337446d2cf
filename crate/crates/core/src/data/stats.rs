//! Dataset statistics: sample proportions and per-image mean-brightness
//! histograms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AnnotationSet;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const BRIGHTNESS_BINS: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStatsEntry {
    pub dataset_id: String,
    pub samples: usize,
    pub proportion: f64,
    pub images: usize,
    pub unreadable_images: usize,
    /// Histogram of per-image mean intensity over `[0, 1]`.
    pub brightness_histogram: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub datasets: Vec<DatasetStatsEntry>,
}

/// Counts samples per dataset and histograms per-image mean brightness.
/// Unreadable images are skipped and counted.
pub fn compute_stats(sets: &[AnnotationSet]) -> Result<DatasetStats> {
    if sets.is_empty() {
        return Err(Error::invalid_argument("no datasets given"));
    }
    let total: usize = sets.iter().map(|s| s.sample_count()).sum();
    let mut datasets = Vec::with_capacity(sets.len());
    for set in sets {
        let mut histogram = vec![0u64; BRIGHTNESS_BINS];
        let mut unreadable = 0usize;
        for record in &set.records {
            match ImageTensor::load(&record.image_path) {
                Ok(img) => {
                    let b = img.mean_brightness().clamp(0.0, 1.0);
                    let bin = ((b * BRIGHTNESS_BINS as f32) as usize)
                        .min(BRIGHTNESS_BINS - 1);
                    histogram[bin] += 1;
                }
                Err(_) => unreadable += 1,
            }
        }
        let samples = set.sample_count();
        datasets.push(DatasetStatsEntry {
            dataset_id: set.dataset_id.clone(),
            samples,
            proportion: if total > 0 {
                samples as f64 / total as f64
            } else {
                0.0
            },
            images: set.records.len(),
            unreadable_images: unreadable,
            brightness_histogram: histogram,
        });
    }
    Ok(DatasetStats { datasets })
}

const PALETTE: [[u8; 3]; 6] = [
    [66, 133, 244],
    [219, 68, 55],
    [244, 180, 0],
    [15, 157, 88],
    [171, 71, 188],
    [0, 172, 193],
];

/// Renders the brightness histograms as stacked bar charts (one row per
/// dataset) into a PNG.
pub fn render_histogram_png(stats: &DatasetStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bar_w = 12u32;
    let row_h = 80u32;
    let margin = 10u32;
    let width = BRIGHTNESS_BINS as u32 * bar_w + 2 * margin;
    let height = stats.datasets.len() as u32 * (row_h + margin) + margin;
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    for (di, entry) in stats.datasets.iter().enumerate() {
        let base_y = margin + di as u32 * (row_h + margin);
        let max = entry.brightness_histogram.iter().copied().max().unwrap_or(1).max(1);
        let color = image::Rgb(PALETTE[di % PALETTE.len()]);
        for (bi, &count) in entry.brightness_histogram.iter().enumerate() {
            let h = ((count as f64 / max as f64) * (row_h as f64 - 2.0)) as u32;
            let x0 = margin + bi as u32 * bar_w;
            for x in x0..x0 + bar_w - 1 {
                for y in (base_y + row_h - h)..(base_y + row_h) {
                    img.put_pixel(x, y, color);
                }
                // baseline tick
                img.put_pixel(x, base_y + row_h - 1, image::Rgb([120, 120, 120]));
            }
        }
    }
    img.save(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}
