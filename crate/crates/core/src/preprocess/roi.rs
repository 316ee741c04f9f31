//! Finger region extraction: Gaussian blur, global Otsu threshold, largest
//! 4-connected foreground component, tight bounding box, inward margin.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiParams {
    /// Half-width of the Gaussian kernel; sigma is half of it. 0 disables blurring.
    pub blur_radius: usize,
    pub margin: usize,
}

impl Default for RoiParams {
    fn default() -> Self {
        Self {
            blur_radius: 3,
            margin: 2,
        }
    }
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RoiBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn shrink(&self, margin: usize) -> Option<RoiBox> {
        let b = RoiBox {
            x0: self.x0 + margin,
            y0: self.y0 + margin,
            x1: self.x1.checked_sub(margin)?,
            y1: self.y1.checked_sub(margin)?,
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }
}

pub fn gaussian_blur(image: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return image.clone();
    }
    let sigma = radius as f64 / 2.0;
    let kernel: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();

    let (w, h) = (image.width(), image.height());
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        let row = image.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[clamp(x as isize + k as isize - radius as isize, w)] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for (k, &kv) in kernel.iter().enumerate() {
            acc += kv * tmp[clamp(y as isize + k as isize - radius as isize, h) * w + x];
        }
        acc.round().clamp(0.0, 255.0) as u8
    })
}

/// Otsu's threshold: pixels strictly above the returned level are foreground.
pub fn otsu_threshold(image: &GrayImage) -> u8 {
    let hist = super::histogram(image);
    let total = image.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let mut best = (0u8, -1.0f64);
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.1 {
            best = (t as u8, between);
        }
    }
    best.0
}

/// Bounding box of the largest 4-connected region of `mask` (row-major).
/// Ties go to the component reached first in raster order.
pub fn largest_component_box(mask: &[bool], width: usize, height: usize) -> Option<RoiBox> {
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(usize, RoiBox)> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        let mut b = RoiBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % width, i / width);
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x + 1);
            b.y1 = b.y1.max(y + 1);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if best.as_ref().is_none_or(|(s, _)| size > *s) {
            best = Some((size, b));
        }
    }
    best.map(|(_, b)| b)
}

pub fn extract_roi(image: &GrayImage, params: &RoiParams) -> Result<(GrayImage, RoiBox)> {
    let blurred = gaussian_blur(image, params.blur_radius);
    let (lo, hi) = blurred.min_max();
    if lo == hi {
        return Err(Error::RoiNotFound);
    }
    let t = otsu_threshold(&blurred);
    let mask: Vec<bool> = blurred.pixels().iter().map(|&p| p > t).collect();
    let bbox = largest_component_box(&mask, image.width(), image.height()).ok_or(Error::RoiNotFound)?;
    let bbox = bbox.shrink(params.margin).ok_or(Error::RoiNotFound)?;
    let crop = image.crop(bbox.x0, bbox.y0, bbox.x1, bbox.y1)?;
    Ok((crop, bbox))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_image() -> GrayImage {
        GrayImage::from_fn(200, 200, |x, y| {
            if (50..150).contains(&x) && (70..130).contains(&y) {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn bright_rectangle() {
        let p = RoiParams { blur_radius: 3, margin: 0 };
        let (crop, b) = extract_roi(&rect_image(), &p).unwrap();
        assert_eq!(b, RoiBox { x0: 50, y0: 70, x1: 150, y1: 130 });
        assert_eq!((crop.width(), crop.height()), (100, 60));
        assert!(crop.pixels().iter().all(|&v| v == 255));
    }

    #[test]
    fn margin_shrinks() {
        let (_, b) = extract_roi(&rect_image(), &RoiParams { blur_radius: 3, margin: 2 }).unwrap();
        assert_eq!(b, RoiBox { x0: 52, y0: 72, x1: 148, y1: 128 });
    }

    #[test]
    fn constant_image_has_no_roi() {
        for v in [0u8, 128, 255] {
            let img = GrayImage::filled(50, 40, v);
            assert!(matches!(extract_roi(&img, &RoiParams::default()), Err(Error::RoiNotFound)));
        }
    }

    #[test]
    fn margin_can_consume_box() {
        let img = GrayImage::from_fn(20, 20, |x, y| if x == 5 && y == 5 { 255 } else { 0 });
        let p = RoiParams { blur_radius: 0, margin: 1 };
        assert!(matches!(extract_roi(&img, &p), Err(Error::RoiNotFound)));
    }

    #[test]
    fn largest_component_wins() {
        let img = GrayImage::from_fn(40, 20, |x, y| {
            if (2..6).contains(&x) && (2..6).contains(&y) || (20..35).contains(&x) && (5..15).contains(&y) {
                200
            } else {
                10
            }
        });
        let (_, b) = extract_roi(&img, &RoiParams { blur_radius: 0, margin: 0 }).unwrap();
        assert_eq!(b, RoiBox { x0: 20, y0: 5, x1: 35, y1: 15 });
    }

    #[test]
    fn otsu_splits_bimodal() {
        let img = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 40 } else { 200 });
        let t = otsu_threshold(&img);
        assert!((40..200).contains(&t));
    }
}
