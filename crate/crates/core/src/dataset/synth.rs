use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SampleKind, SampleRecord};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::sensor::SensorClass;

pub const MIN_SYNTHETIC_SIZE: usize = 96;

/// Acquisition signature of one simulated sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSensorProfile {
    pub sensor: SensorClass,
    /// Seeds the per-class fixed-pattern noise field.
    pub fpn_seed: u64,
    /// Multiplicative amplitude of the fixed pattern, in `[0, 0.1]`.
    pub fpn_strength: f64,
    /// Additive offset in gray levels, in `[-40, 40]`.
    pub luminance_offset: f64,
    pub read_noise_sigma: f64,
    /// Radial fall-off in `[0, 1]`; 0 disables vignetting.
    pub vignette_strength: f64,
}

impl SyntheticSensorProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("{}: {what}", self.sensor)));
        if !(0.0..=0.1).contains(&self.fpn_strength) {
            return bad("fpn_strength outside [0, 0.1]");
        }
        if !(-40.0..=40.0).contains(&self.luminance_offset) {
            return bad("luminance_offset outside [-40, 40]");
        }
        if !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite()) {
            return bad("read_noise_sigma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.vignette_strength) {
            return bad("vignette_strength outside [0, 1]");
        }
        Ok(())
    }
}

/// One distinct profile per sensor, canonical order.
pub fn default_profiles() -> Vec<SyntheticSensorProfile> {
    // (fpn_strength, luminance_offset, read_noise_sigma, vignette_strength)
    const PARAMS: [(f64, f64, f64, f64); 8] = [
        (0.06, -20.0, 2.0, 0.30),
        (0.03, 30.0, 1.0, 0.10),
        (0.08, 0.0, 3.0, 0.50),
        (0.05, 10.0, 1.5, 0.20),
        (0.10, -35.0, 2.5, 0.00),
        (0.04, 20.0, 4.0, 0.40),
        (0.07, -10.0, 0.5, 0.60),
        (0.09, 38.0, 2.0, 0.25),
    ];
    SensorClass::ALL
        .iter()
        .zip(PARAMS)
        .map(|(&sensor, (s, o, n, v))| SyntheticSensorProfile {
            sensor,
            fpn_seed: 1_000 + sensor.index() as u64 * 7_919,
            fpn_strength: s,
            luminance_offset: o,
            read_noise_sigma: n,
            vignette_strength: v,
        })
        .collect()
}

/// Zero-mean, unit-variance fixed pattern for a sensor, row-major `height x width`.
///
/// The mixture of pixel, column, row and periodic components is itself drawn
/// from the seed, so different seeds differ in both realization and texture.
pub fn fixed_pattern_noise(seed: u64, width: usize, height: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_pixel: f64 = rng.random_range(0.4..1.0);
    let w_col: f64 = rng.random_range(0.0..0.8);
    let w_row: f64 = rng.random_range(0.0..0.8);
    let w_per: f64 = rng.random_range(0.0..0.8);
    let px: f64 = rng.random_range(2..=6) as f64;
    let py: f64 = rng.random_range(2..=6) as f64;

    let cols: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
    let rows: Vec<f64> = (0..height).map(|_| rng.sample(StandardNormal)).collect();
    let mut field = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let white: f64 = rng.sample(StandardNormal);
            let periodic = (2.0 * PI * x as f64 / px).cos() * (2.0 * PI * y as f64 / py).cos();
            field.push(w_pixel * white + w_col * cols[x] + w_row * rows[y] + w_per * periodic);
        }
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    field.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    field
}

fn image_seed(seed: u64, class: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((class as u64) << 40) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Vein-like scene before any sensor effect: a bright finger band on a dark
/// background with band-limited shading and dark curvilinear strokes.
fn base_scene(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    let w = width as f64;
    let h = height as f64;
    let center = h * rng.random_range(0.46..0.54);
    let wobble = h * rng.random_range(0.0..0.04);
    let wobble_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let half_width = h * rng.random_range(0.30..0.36);
    let brightness: f64 = rng.random_range(140.0..170.0);
    let background: f64 = rng.random_range(18.0..30.0);

    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) / w,
                rng.random_range(0.5..3.0) / h,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(3.0..9.0),
            )
        })
        .collect();

    let n_veins = rng.random_range(3..=6);
    let veins: Vec<[f64; 6]> = (0..n_veins)
        .map(|_| {
            [
                center + half_width * rng.random_range(-0.7..0.7),
                rng.random_range(2.0..8.0),
                w * rng.random_range(0.4..1.5),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(20.0..45.0),
                rng.random_range(1.2..2.6),
            ]
        })
        .collect();

    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let yf = y as f64;
        for x in 0..width {
            let xf = x as f64;
            let mid = center + wobble * (2.0 * PI * xf / w + wobble_phase).sin();
            let d = ((yf - mid) / half_width).abs();
            let finger = (1.0 - d.powi(4)).max(0.0);
            let mut shade = 0.0;
            for &(fx, fy, ph, amp) in &waves {
                shade += amp * (2.0 * PI * (fx * xf + fy * yf) + ph).sin();
            }
            let mut vein = 0.0;
            for v in &veins {
                let path = v[0] + v[1] * (2.0 * PI * xf / v[2] + v[3]).sin();
                let dist = yf - path;
                vein += v[4] * (-(dist * dist) / (2.0 * v[5] * v[5])).exp();
            }
            out.push(background + finger * (brightness + shade - vein));
        }
    }
    out
}

/// Renders sample `index` of a sensor class. Deterministic in all arguments.
pub fn render_sample(profile: &SyntheticSensorProfile, fpn: &[f64], width: usize, height: usize, seed: u64, index: usize) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, profile.sensor.index(), index));
    let base = base_scene(&mut rng, width, height);
    let noise = Normal::new(0.0, profile.read_noise_sigma).expect("validated sigma");
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut v = base[i] * (1.0 + profile.fpn_strength * fpn[i]) + profile.luminance_offset;
            v += noise.sample(&mut rng);
            let r2 = (((x as f64 - cx) / cx.max(1.0)).powi(2) + ((y as f64 - cy) / cy.max(1.0)).powi(2)) / 2.0;
            v *= 1.0 - profile.vignette_strength * r2;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, pixels).expect("dimensions match")
}

/// Writes `per_class` PNGs per profile under `out_dir/<SENSOR>/` and returns
/// the manifest of everything written.
pub fn generate_synthetic_dataset(
    profiles: &[SyntheticSensorProfile],
    per_class: usize,
    size: (usize, usize),
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let (width, height) = size;
    if width < MIN_SYNTHETIC_SIZE || height < MIN_SYNTHETIC_SIZE {
        return Err(Error::SizeTooSmall {
            width,
            height,
            min: MIN_SYNTHETIC_SIZE,
        });
    }
    if per_class == 0 {
        return Err(Error::InvalidInput("per_class must be at least 1".into()));
    }
    for sensor in SensorClass::ALL {
        let n = profiles.iter().filter(|p| p.sensor == sensor).count();
        if n != 1 {
            return Err(Error::InvalidInput(format!("expected exactly one profile for {sensor}, found {n}")));
        }
    }
    for p in profiles {
        p.validate()?;
    }
    let mut seeds: Vec<u64> = profiles.iter().map(|p| p.fpn_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != profiles.len() {
        return Err(Error::InvalidInput("sensor profiles must use distinct fpn_seed values".into()));
    }

    let out_dir = out_dir.as_ref();
    let mut ordered: Vec<&SyntheticSensorProfile> = profiles.iter().collect();
    ordered.sort_by_key(|p| p.sensor.index());

    let mut records = Vec::with_capacity(per_class * ordered.len());
    for profile in ordered {
        let dir = out_dir.join(profile.sensor.name());
        fs::create_dir_all(&dir).map_err(|e| Error::write(&dir, e))?;
        let fpn = fixed_pattern_noise(profile.fpn_seed, width, height);
        let written: Vec<Result<SampleRecord>> = (0..per_class)
            .into_par_iter()
            .map(|i| {
                let name = format!("{}_{i:04}.png", profile.sensor.name());
                let path = dir.join(&name);
                render_sample(profile, &fpn, width, height, seed, i).save_png(&path)?;
                Ok(SampleRecord {
                    sample_id: format!("{}/{name}", profile.sensor.name()),
                    sensor: profile.sensor,
                    path,
                    kind: SampleKind::Raw,
                    width,
                    height,
                })
            })
            .collect();
        for r in written {
            records.push(r?);
        }
    }
    Ok(DatasetManifest::new(records, Some(seed)))
}
