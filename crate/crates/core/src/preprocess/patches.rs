use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Side length of network input patches.
pub const PATCH_SIZE: usize = 96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchPolicy {
    /// Non-overlapping grid anchored at the top-left corner; right and bottom
    /// remainders are dropped.
    #[default]
    GridNonOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub pixels: Vec<u8>,
    pub size: usize,
    pub source_id: String,
    /// Top-left corner in the source image.
    pub origin: (usize, usize),
}

pub fn patch_count(width: usize, height: usize, patch_size: usize) -> usize {
    (width / patch_size) * (height / patch_size)
}

pub fn extract_patches(image: &GrayImage, patch_size: usize, policy: PatchPolicy, source_id: &str) -> Result<Vec<Patch>> {
    let (w, h) = (image.width(), image.height());
    if patch_size == 0 {
        return Err(Error::InvalidInput("patch size must be positive".into()));
    }
    if w < patch_size || h < patch_size {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            patch: patch_size,
        });
    }
    match policy {
        PatchPolicy::GridNonOverlap => {
            let mut out = Vec::with_capacity(patch_count(w, h, patch_size));
            for gy in 0..h / patch_size {
                for gx in 0..w / patch_size {
                    let (x0, y0) = (gx * patch_size, gy * patch_size);
                    let mut pixels = Vec::with_capacity(patch_size * patch_size);
                    for y in y0..y0 + patch_size {
                        pixels.extend_from_slice(&image.row(y)[x0..x0 + patch_size]);
                    }
                    out.push(Patch {
                        pixels,
                        size: patch_size,
                        source_id: source_id.to_string(),
                        origin: (x0, y0),
                    });
                }
            }
            Ok(out)
        }
    }
}
