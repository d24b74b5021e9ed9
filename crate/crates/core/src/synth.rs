//! Deterministic synthetic slides for tests, benchmarks and demos.

use crate::image::RasterImage;
use crate::rng::{derive_seed, SplitMix64};

/// Uniform random RGB noise.
pub fn noise_image(width: usize, height: usize, seed: u64) -> RasterImage {
    let mut rng = SplitMix64::new(seed);
    let samples = (0..width * height * 3)
        .map(|_| (rng.next_u64() >> 56) as u8)
        .collect();
    RasterImage::new(width, height, samples).expect("dimensions checked by caller")
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut SplitMix64, n: usize, min_len: f64, max_len: f64) -> Vec<Wave> {
    let unit = |r: &mut SplitMix64| (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    (0..n)
        .map(|_| {
            let len = min_len + (max_len - min_len) * unit(rng);
            let theta = std::f64::consts::TAU * unit(rng);
            let k = std::f64::consts::TAU / len;
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: std::f64::consts::TAU * unit(rng),
                amp: 0.5 + unit(rng),
            }
        })
        .collect()
}

fn field(ws: &[Wave], x: f64, y: f64) -> f64 {
    let norm: f64 = ws.iter().map(|w| w.amp).sum();
    let s: f64 = ws
        .iter()
        .map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin())
        .sum();
    0.5 + 0.5 * s / norm
}

/// Smooth H&E-like texture: a pink/purple stain mixture driven by a
/// low-frequency field plus ±`grain` levels of per-pixel grain. When
/// `background` is true, part of the slide becomes near-white glass.
pub fn stained_tissue(
    width: usize,
    height: usize,
    seed: u64,
    grain: u8,
    background: bool,
) -> RasterImage {
    let mut rng = SplitMix64::new(seed);
    let stain = waves(&mut rng, 6, 40.0, 240.0);
    let density = waves(&mut rng, 4, 60.0, 300.0);
    let glass = waves(&mut rng, 3, 300.0, 700.0);
    let eosin = [232.0, 150.0, 188.0];
    let hema = [118.0, 72.0, 158.0];
    let g = i32::from(grain);
    RasterImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let h = derive_seed(seed, (y * width + x) as u64);
        let jitter = |k: u32| {
            if g == 0 {
                0
            } else {
                ((h >> (k * 16)) % (2 * g as u64 + 1)) as i32 - g
            }
        };
        if background && field(&glass, fx, fy) > 0.72 {
            let v = (243 + jitter(3).clamp(-2, 2)) as u8;
            return [v, v, v.saturating_sub(1)];
        }
        let t = field(&stain, fx, fy);
        let d = 0.75 + 0.25 * field(&density, fx, fy);
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let v = (eosin[c] * (1.0 - t) + hema[c] * t) * d;
            rgb[c] = (v.round() as i32 + jitter(c as u32)).clamp(0, 255) as u8;
        }
        rgb
    })
    .expect("dimensions checked by caller")
}
