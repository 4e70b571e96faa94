//! Procedural skin/hair/background images for desk-scale training runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::io::{save_image, save_labelmap, DatasetManifest};
use crate::error::{ensure, Result};
use crate::field::FeatureField;
use crate::pipeline::LabelMap;
use crate::spgraph::ImagePlane;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_SKIN: u8 = 1;
pub const CLASS_HAIR: u8 = 2;
pub const CLASS_NAMES: [&str; 3] = ["bg", "skin", "hair"];

/// Smallest share of the pixels any class may have in a generated image.
const MIN_CLASS_FRACTION: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyFaceConfig {
    pub size: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise_sigma: f64,
}

impl ToyFaceConfig {
    pub fn new(size: usize) -> Self {
        Self { size, noise_sigma: 0.05 }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn draw_masks(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let s = n as f64;
    let cx = s * rng.random_range(0.42..0.58);
    let cy = s * rng.random_range(0.52..0.62);
    let a = s * rng.random_range(0.17..0.25);
    let b = s * rng.random_range(0.21..0.28);
    // hair: inside a larger, raised ellipse, outside the face, above the face centre
    let grow = rng.random_range(1.25..1.45);
    let lift = b * rng.random_range(0.12..0.25);
    let (ha, hb, hcy) = (a * grow, b * grow, cy - lift);
    let mut labels = vec![CLASS_BACKGROUND; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let face = ((px - cx) / a).powi(2) + ((py - cy) / b).powi(2) <= 1.0;
            let outer = ((px - cx) / ha).powi(2) + ((py - hcy) / hb).powi(2) <= 1.0;
            labels[y * n + x] = if face {
                CLASS_SKIN
            } else if outer && py < cy {
                CLASS_HAIR
            } else {
                CLASS_BACKGROUND
            };
        }
    }
    labels
}

/// One image and its exact generating masks. Values are quantized to 8 bits so
/// in-memory samples equal their on-disk form.
pub fn toy_face(rng: &mut ChaCha8Rng, cfg: &ToyFaceConfig) -> Result<(ImagePlane, LabelMap)> {
    let n = cfg.size;
    ensure(n >= 16, || format!("toy faces need size >= 16, got {n}"))?;
    let labels = loop {
        let l = draw_masks(rng, n);
        let min_count = (MIN_CLASS_FRACTION * (n * n) as f64).ceil() as usize;
        if (0..3u8).all(|k| l.iter().filter(|&&v| v == k).count() >= min_count) {
            break l;
        }
    };
    let bg0 = [
        rng.random_range(0.15..0.45),
        rng.random_range(0.35..0.7),
        rng.random_range(0.55..0.9),
    ];
    let bg1 = jitter(rng, bg0, 0.15);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let skin = jitter(rng, [0.88, 0.68, 0.55], 0.07);
    let hair_shade = rng.random_range(0.08..0.35);
    let hair = [hair_shade, hair_shade * rng.random_range(0.6..0.9), hair_shade * rng.random_range(0.4..0.8)];
    let texture = 0.06;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");

    let mut data = vec![0.0; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let t = 0.5 + 0.5 * (dx * (x as f64 / n as f64 - 0.5) + dy * (y as f64 / n as f64 - 0.5)) * 2f64.sqrt();
            let tex = rng.random_range(-texture..texture);
            for c in 0..3 {
                let base = match labels[i] {
                    CLASS_SKIN => skin[c],
                    CLASS_HAIR => hair[c],
                    _ => bg0[c] + (bg1[c] - bg0[c]) * t + tex,
                };
                let v = (base + noise.sample(rng)).clamp(0.0, 1.0);
                data[c * n * n + i] = (v * 255.0).round() / 255.0;
            }
        }
    }
    let image = ImagePlane::new(FeatureField::from_vec(3, n, n, data)?)?;
    Ok((image, LabelMap::new(n, n, labels)?))
}

/// Generates `count` toy faces into `dir` and writes `dir/manifest.tsv`.
///
/// Image `i` depends only on `(seed, i)`.
pub fn generate_toy_faces(
    seed: u64,
    count: usize,
    size: usize,
    size_multiple: usize,
    dir: &Path,
) -> Result<DatasetManifest> {
    ensure(count >= 1, || "count must be at least 1".into())?;
    ensure(size_multiple > 0 && size.is_multiple_of(size_multiple), || {
        format!("size {size} is not a multiple of {size_multiple} required by the network")
    })?;
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let cfg = ToyFaceConfig::new(size);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (img, lab) = toy_face(&mut rng, &cfg)?;
        let ip = dir.join(format!("face_{i:04}.ppm"));
        let lp = dir.join(format!("face_{i:04}_labels.pgm"));
        save_image(&ip, &img)?;
        save_labelmap(&lp, &lab)?;
        entries.push((ip, lp));
    }
    let m = DatasetManifest {
        entries,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    m.save(&dir.join("manifest.tsv"))?;
    Ok(m)
}

/// Corrupts pixels within `radius` of a label boundary: each takes the color of a
/// random pixel in its `(2·radius+1)²` window plus Gaussian noise of `sigma`.
/// Labels are unchanged.
pub fn boundary_noise(
    image: &ImagePlane,
    labels: &LabelMap,
    rng: &mut ChaCha8Rng,
    radius: usize,
    sigma: f64,
) -> Result<ImagePlane> {
    let f = image.field();
    let (c, h, w) = f.shape();
    ensure(labels.height() == h && labels.width() == w, || "labels do not match the image".into())?;
    let noise = Normal::new(0.0, sigma).map_err(|e| crate::error::Error::invalid(e.to_string()))?;
    let r = radius as isize;
    let near_boundary = |y: usize, x: usize| {
        let l = labels.get(y, x);
        (-r..=r).any(|oy| {
            (-r..=r).any(|ox| {
                let (ny, nx) = (y as isize + oy, x as isize + ox);
                ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && labels.get(ny as usize, nx as usize) != l
            })
        })
    };
    let mut out = f.clone();
    for y in 0..h {
        for x in 0..w {
            if !near_boundary(y, x) {
                continue;
            }
            let sy = (y as isize + rng.random_range(-(r as i64)..=r as i64) as isize).clamp(0, h as isize - 1) as usize;
            let sx = (x as isize + rng.random_range(-(r as i64)..=r as i64) as isize).clamp(0, w as isize - 1) as usize;
            for ch in 0..c {
                let v = (f.get(ch, sy, sx) + noise.sample(rng)).clamp(0.0, 1.0);
                out.set(ch, y, x, (v * 255.0).round() / 255.0);
            }
        }
    }
    ImagePlane::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_toy_faces(7, 3, 32, 8, a.path()).unwrap();
        generate_toy_faces(7, 3, 32, 8, b.path()).unwrap();
        for name in ["face_0002.ppm", "face_0002_labels.pgm", "manifest.tsv"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn every_class_is_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ToyFaceConfig::new(64);
        for _ in 0..100 {
            let (_, l) = toy_face(&mut rng, &cfg).unwrap();
            let n = l.as_slice().len() as f64;
            for k in 0..3u8 {
                let frac = l.as_slice().iter().filter(|&&v| v == k).count() as f64 / n;
                assert!(frac >= 0.02, "class {k} covers {frac}");
            }
            assert!(l.max_class() <= 2);
        }
    }

    #[test]
    fn size_must_suit_the_network() {
        let d = tempfile::tempdir().unwrap();
        assert!(generate_toy_faces(1, 1, 36, 8, d.path()).is_err());
        assert!(generate_toy_faces(1, 0, 32, 8, d.path()).is_err());
    }

    #[test]
    fn boundary_noise_touches_only_boundary_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (img, lab) = toy_face(&mut rng, &ToyFaceConfig::new(32)).unwrap();
        let noisy = boundary_noise(&img, &lab, &mut rng, 1, 0.1).unwrap();
        let (h, w) = (32, 32);
        let mut changed = 0;
        for y in 0..h {
            for x in 0..w {
                let moved = (0..3).any(|c| noisy.field().get(c, y, x) != img.field().get(c, y, x));
                if moved {
                    changed += 1;
                    let l = lab.get(y, x);
                    let near = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                        .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| lab.get(yy, xx) != l));
                    assert!(near, "pixel ({y},{x}) changed away from a boundary");
                }
            }
        }
        assert!(changed > 0);
    }
}
