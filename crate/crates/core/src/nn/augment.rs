//! Photometric jitter and horizontal mirroring of training samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::camera::{hsv_to_rgb, rgb_to_hsv};
use crate::types::Command;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub photometric: bool,
    pub flip: bool,
    /// Maximum hue shift in cycles.
    pub hue: f64,
    pub saturation: (f64, f64),
    pub contrast: (f64, f64),
    /// Maximum additive brightness change.
    pub brightness: f64,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            photometric: true,
            flip: true,
            hue: 0.05,
            saturation: (0.8, 1.2),
            contrast: (0.8, 1.2),
            brightness: 0.1,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig {
            photometric: false,
            flip: false,
            ..Default::default()
        }
    }
}

/// The random choices behind one augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub hue: f64,
    pub saturation: f64,
    pub contrast: f64,
    pub brightness: f64,
    pub flip: bool,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        hue: 0.0,
        saturation: 1.0,
        contrast: 1.0,
        brightness: 0.0,
        flip: false,
    };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut d = Self::IDENTITY;
        if cfg.photometric {
            d.hue = rng.gen_range(-cfg.hue..=cfg.hue);
            d.saturation = rng.gen_range(cfg.saturation.0..=cfg.saturation.1);
            d.contrast = rng.gen_range(cfg.contrast.0..=cfg.contrast.1);
            d.brightness = rng.gen_range(-cfg.brightness..=cfg.brightness);
        }
        if cfg.flip {
            d.flip = rng.gen_bool(cfg.flip_probability);
        }
        d
    }

    pub fn is_photometric_identity(&self) -> bool {
        self.hue == 0.0 && self.saturation == 1.0 && self.contrast == 1.0 && self.brightness == 0.0
    }
}

/// Hue, saturation, brightness, then contrast around the per-channel mean.
/// `img` is interleaved RGB in `[0, 1]`.
pub fn photometric(img: &mut [f32], d: &AugmentDraw) {
    if d.is_photometric_identity() {
        return;
    }
    for px in img.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv([px[0] as f64, px[1] as f64, px[2] as f64]);
        let rgb = hsv_to_rgb(h + d.hue, (s * d.saturation).clamp(0.0, 1.0), v);
        for c in 0..3 {
            px[c] = (rgb[c] + d.brightness).clamp(0.0, 1.0) as f32;
        }
    }
    let n = (img.len() / 3).max(1) as f64;
    let mut mean = [0.0f64; 3];
    for px in img.chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c] as f64;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for px in img.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = ((px[c] as f64 - mean[c]) * d.contrast + mean[c]).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Mirrors an interleaved `width`-pixel-wide image left to right.
pub fn mirror_image<P: Copy>(img: &mut [P], width: usize, channels: usize) {
    for row in img.chunks_exact_mut(width * channels) {
        for x in 0..width / 2 {
            let y = width - 1 - x;
            for c in 0..channels {
                row.swap(x * channels + c, y * channels + c);
            }
        }
    }
}

/// Applies a draw to an image and its labels.
pub fn apply(img: &mut [f32], width: usize, command: &mut Command, target: &mut [f32; 2], d: &AugmentDraw) {
    photometric(img, d);
    if d.flip {
        mirror_image(img, width, 3);
        target.swap(0, 1);
        *command = command.mirrored();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_an_involution() {
        let mut img: Vec<f32> = (0..5 * 2 * 3).map(|i| i as f32 / 30.0).collect();
        let orig = img.clone();
        let mut cmd = Command::Left;
        let mut t = [0.8, 0.2];
        let d = AugmentDraw {
            flip: true,
            ..AugmentDraw::IDENTITY
        };
        apply(&mut img, 5, &mut cmd, &mut t, &d);
        assert_eq!(cmd, Command::Right);
        assert_eq!(t, [0.2, 0.8]);
        assert_ne!(img, orig);
        apply(&mut img, 5, &mut cmd, &mut t, &d);
        assert_eq!((img, cmd, t), (orig, Command::Left, [0.8, 0.2]));
    }

    #[test]
    fn straight_sample_label_is_fixed() {
        let mut img = vec![0.5f32; 12];
        let mut cmd = Command::Straight;
        let mut t = [0.6, 0.6];
        let d = AugmentDraw {
            flip: true,
            ..AugmentDraw::IDENTITY
        };
        apply(&mut img, 2, &mut cmd, &mut t, &d);
        assert_eq!((cmd, t), (Command::Straight, [0.6, 0.6]));
    }
}
