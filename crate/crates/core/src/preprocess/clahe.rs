//! Contrast-limited adaptive histogram equalization, following the OpenCV
//! formulation: per-tile clipped-histogram LUTs blended bilinearly between
//! tile centres. Images whose size is not a multiple of the grid are
//! extended by reflect-101 for LUT estimation only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub clip_limit: f64,
    /// (rows, cols)
    pub tile_grid: (usize, usize),
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            clip_limit: 2.0,
            tile_grid: (8, 8),
        }
    }
}

fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

pub fn clahe(image: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let (rows, cols) = params.tile_grid;
    let (w, h) = (image.width(), image.height());
    if rows == 0 || cols == 0 || w < cols || h < rows {
        return Err(Error::TileError {
            width: w,
            height: h,
            rows,
            cols,
        });
    }
    if !(params.clip_limit > 0.0 && params.clip_limit.is_finite()) {
        return Err(Error::InvalidInput(format!("clip limit must be positive, got {}", params.clip_limit)));
    }

    let tile_w = w.div_ceil(cols);
    let tile_h = h.div_ceil(rows);
    let tile_area = tile_w * tile_h;
    let clip = ((params.clip_limit * tile_area as f64 / 256.0) as usize).max(1);
    let lut_scale = 255.0 / tile_area as f64;

    let mut luts = vec![[0u8; 256]; rows * cols];
    for ty in 0..rows {
        for tx in 0..cols {
            let mut hist = [0usize; 256];
            for y in ty * tile_h..(ty + 1) * tile_h {
                let sy = reflect101(y as isize, h);
                let row = image.row(sy);
                for x in tx * tile_w..(tx + 1) * tile_w {
                    hist[row[reflect101(x as isize, w)] as usize] += 1;
                }
            }

            let mut clipped = 0;
            for b in hist.iter_mut() {
                if *b > clip {
                    clipped += *b - clip;
                    *b = clip;
                }
            }
            let batch = clipped / 256;
            let mut residual = clipped - batch * 256;
            for b in hist.iter_mut() {
                *b += batch;
            }
            if residual > 0 {
                let step = (256 / residual).max(1);
                let mut i = 0;
                while i < 256 && residual > 0 {
                    hist[i] += 1;
                    residual -= 1;
                    i += step;
                }
            }

            let lut = &mut luts[ty * cols + tx];
            let mut sum = 0usize;
            for (v, b) in hist.iter().enumerate() {
                sum += b;
                lut[v] = (sum as f64 * lut_scale).round().min(255.0) as u8;
            }
        }
    }

    let inv_tw = 1.0 / tile_w as f64;
    let inv_th = 1.0 / tile_h as f64;
    let xmap: Vec<(usize, usize, f64)> = (0..w)
        .map(|x| {
            let txf = x as f64 * inv_tw - 0.5;
            let t1 = txf.floor();
            let a = txf - t1;
            let t1 = t1 as isize;
            (t1.max(0) as usize, ((t1 + 1) as usize).min(cols - 1), a)
        })
        .collect();

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let tyf = y as f64 * inv_th - 0.5;
        let t1 = tyf.floor();
        let ya = tyf - t1;
        let t1 = t1 as isize;
        let ty1 = t1.max(0) as usize;
        let ty2 = ((t1 + 1) as usize).min(rows - 1);
        let row = image.row(y);
        for x in 0..w {
            let v = row[x] as usize;
            let (tx1, tx2, xa) = xmap[x];
            let top = luts[ty1 * cols + tx1][v] as f64 * (1.0 - xa) + luts[ty1 * cols + tx2][v] as f64 * xa;
            let bot = luts[ty2 * cols + tx1][v] as f64 * (1.0 - xa) + luts[ty2 * cols + tx2][v] as f64 * xa;
            out.push((top * (1.0 - ya) + bot * ya).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}
