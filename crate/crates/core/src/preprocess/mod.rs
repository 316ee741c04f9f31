//! Contrast enhancement, ROI cropping, size normalization, patch extraction
//! and dataset-level intensity statistics.

mod clahe;
mod patches;
mod resize;
mod roi;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::GrayImage;

pub use clahe::{clahe, ClaheParams};
pub use patches::{extract_patches, patch_count, Patch, PatchPolicy, PATCH_SIZE};
pub use resize::resize_bilinear;
pub use roi::{extract_roi, gaussian_blur, largest_component_box, otsu_threshold, RoiBox, RoiParams};
pub use stats::{
    dataset_stats, histogram, histogram_csv, image_moments, quantile_sorted, stats_from_images, FiveNumber,
    ImageMoments, StatsRow, StatsTable,
};

/// Default normalized size for ROI images.
pub const DEFAULT_ROI_SIZE: (usize, usize) = (192, 96);
/// Default normalized size for uncropped images.
pub const DEFAULT_RAW_SIZE: (usize, usize) = (288, 192);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaheOrder {
    BeforeRoi,
    #[default]
    AfterRoi,
}

/// Per-image preprocessing chain. Stages that are `None` are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub clahe: Option<ClaheParams>,
    pub clahe_order: ClaheOrder,
    pub roi: Option<RoiParams>,
    /// Target (width, height) for bilinear size normalization.
    pub resize: Option<(usize, usize)>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clahe: Some(ClaheParams::default()),
            clahe_order: ClaheOrder::AfterRoi,
            roi: None,
            resize: None,
        }
    }
}

/// ROI crop, size normalization and CLAHE, in the configured order.
pub fn preprocess_image(image: &GrayImage, config: &PreprocessConfig) -> Result<GrayImage> {
    let mut img = image.clone();
    if let (Some(p), ClaheOrder::BeforeRoi) = (&config.clahe, config.clahe_order) {
        img = clahe(&img, p)?;
    }
    if let Some(r) = &config.roi {
        img = extract_roi(&img, r)?.0;
    }
    if let Some((w, h)) = config.resize {
        img = resize_bilinear(&img, w, h)?;
    }
    if let (Some(p), ClaheOrder::AfterRoi) = (&config.clahe, config.clahe_order) {
        img = clahe(&img, p)?;
    }
    Ok(img)
}
