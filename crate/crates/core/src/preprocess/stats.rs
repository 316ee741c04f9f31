use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::sensor::SensorClass;

pub fn histogram(image: &GrayImage) -> [u64; 256] {
    let mut counts = [0u64; 256];
    for &p in image.pixels() {
        counts[p as usize] += 1;
    }
    counts
}

pub fn histogram_csv(counts: &[u64; 256]) -> String {
    let mut s = String::from("bin,count\n");
    for (b, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{b},{c}");
    }
    s
}

/// Per-image luminance mean and population variance, from exact integer sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMoments {
    pub mean: f64,
    pub variance: f64,
}

pub fn image_moments(image: &GrayImage) -> ImageMoments {
    let n = image.pixels().len() as u128;
    let (mut sum, mut sumsq) = (0u128, 0u128);
    for &p in image.pixels() {
        sum += p as u128;
        sumsq += (p as u128) * (p as u128);
    }
    ImageMoments {
        mean: sum as f64 / n as f64,
        variance: (n * sumsq - sum * sum) as f64 / (n * n) as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl FiveNumber {
    pub fn from_values(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub sensor: SensorClass,
    pub images: usize,
    pub mean_luminance: f64,
    pub luminance: FiveNumber,
    pub variance: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl StatsTable {
    pub fn row(&self, sensor: SensorClass) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.sensor == sensor)
    }

    /// `sensor,metric,min,q1,median,q3,max`, two metrics per sensor.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sensor,metric,min,q1,median,q3,max\n");
        for r in &self.rows {
            for (metric, f) in [("luminance", &r.luminance), ("variance", &r.variance)] {
                let _ = writeln!(s, "{},{metric},{},{},{},{},{}", r.sensor, f.min, f.q1, f.median, f.q3, f.max);
            }
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::write(path, e))
    }
}

/// Aggregates per-image statistics by sensor; rows come out in canonical order.
pub fn stats_from_images<'a>(images: impl IntoIterator<Item = (SensorClass, &'a GrayImage)>) -> Result<StatsTable> {
    let mut per: Vec<Vec<ImageMoments>> = vec![Vec::new(); SensorClass::COUNT];
    for (sensor, img) in images {
        per[sensor.index()].push(image_moments(img));
    }
    let rows: Vec<StatsRow> = per
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(i, m)| {
            let means: Vec<f64> = m.iter().map(|x| x.mean).collect();
            let vars: Vec<f64> = m.iter().map(|x| x.variance).collect();
            StatsRow {
                sensor: SensorClass::ALL[i],
                images: m.len(),
                mean_luminance: means.iter().sum::<f64>() / means.len() as f64,
                luminance: FiveNumber::from_values(&means),
                variance: FiveNumber::from_values(&vars),
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no images to summarize".into()));
    }
    Ok(StatsTable { rows })
}

pub fn dataset_stats(manifest: &DatasetManifest) -> Result<StatsTable> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset("manifest has no records".into()));
    }
    let images = manifest
        .records()
        .iter()
        .map(|r| Ok((r.sensor, GrayImage::load(&r.path)?)))
        .collect::<Result<Vec<_>>>()?;
    stats_from_images(images.iter().map(|(s, i)| (*s, i)))
}
