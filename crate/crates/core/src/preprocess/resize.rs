use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(image: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("target size {width}x{height} must be positive")));
    }
    let (sw, sh) = (image.width(), image.height());
    if (sw, sh) == (width, height) {
        return Ok(image.clone());
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(width, sw);
    let ys = axis(height, sh);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        let r0 = image.row(y0);
        let r1 = image.row(y1);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] as f64 * (1.0 - fx) + r0[x1] as f64 * fx;
            let bot = r1[x0] as f64 * (1.0 - fx) + r1[x1] as f64 * fx;
            out.push((top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant() {
        let img = GrayImage::from_fn(10, 7, |x, y| (x * 20 + y) as u8);
        assert_eq!(resize_bilinear(&img, 10, 7).unwrap(), img);
        let c = GrayImage::filled(13, 9, 77);
        let r = resize_bilinear(&c, 40, 5).unwrap();
        assert!(r.pixels().iter().all(|&p| p == 77));
    }

    #[test]
    fn upsample_interpolates() {
        let img = GrayImage::new(2, 1, vec![0, 200]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        assert_eq!(r.pixels(), &[0, 50, 150, 200]);
    }
}
