//! Stochastic training augmentations, applied consistently across all
//! channels of a stack.
//!
//! Geometric transforms (horizontal flip, zoom) move every channel
//! identically; color jitter touches only `RgbImage` channels, with one
//! parameter draw shared by every image triplet in the stack. Flow and
//! foreground-mask channels pass through color jitter bit-identically.
//!
//! Each sample's randomness derives from `(seed, epoch, index)`, so the same
//! sample sees the same augmentation in reruns regardless of batch order.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::color::{hsv_to_rgb, rgb_to_hsv};
use crate::error::{CoreError, Result};
use crate::rng::{rng_for2, Stage};
use crate::tensor::{resize_plane, ChannelRole, ChannelStack, Frame};

/// Augmentation ranges and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f32,
    pub hue_range: (f32, f32),
    pub saturation_range: (f32, f32),
    pub brightness_range: (f32, f32),
    pub contrast_range: (f32, f32),
    pub zoom_range: (f32, f32),
    /// Probability that each color transform, and the zoom, is applied.
    pub apply_prob: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            hue_range: (-0.08, 0.08),
            saturation_range: (0.6, 1.6),
            brightness_range: (-0.05, 0.05),
            contrast_range: (0.7, 1.3),
            zoom_range: (0.02, 0.10),
            apply_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_prob", self.flip_prob), ("apply_prob", self.apply_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        for (name, (lo, hi)) in [
            ("hue_range", self.hue_range),
            ("saturation_range", self.saturation_range),
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
            ("zoom_range", self.zoom_range),
        ] {
            if !(lo <= hi) {
                return Err(CoreError::Config(format!("{name} is inverted: [{lo}, {hi}]")));
            }
        }
        if self.zoom_range.0 < 0.0 || self.zoom_range.1 >= 1.0 {
            return Err(CoreError::Config("zoom_range must lie within [0,1)".into()));
        }
        Ok(())
    }
}

/// Identifies one training sample's augmentation stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleKey {
    pub epoch: u64,
    pub index: u64,
}

/// Color-jitter parameters; identity when deltas are 0 and factors 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub hue_delta: f32,
    pub saturation_factor: f32,
    pub brightness_delta: f32,
    pub contrast_factor: f32,
}

impl ColorJitter {
    pub fn identity() -> Self {
        ColorJitter {
            hue_delta: 0.0,
            saturation_factor: 1.0,
            brightness_delta: 0.0,
            contrast_factor: 1.0,
        }
    }
}

/// Hue/saturation in HSV space, then additive brightness, then contrast
/// about the per-channel mean; output clamped to [0,1].
pub fn hsv_color_jitter(rgb: &Frame, jitter: &ColorJitter) -> Result<Frame> {
    if rgb.channels() != 3 {
        return Err(CoreError::Channel(format!(
            "color jitter requires 3 channels, got {}",
            rgb.channels()
        )));
    }
    let n = rgb.height() * rgb.width();
    let mut planes = [rgb.plane(0).to_vec(), rgb.plane(1).to_vec(), rgb.plane(2).to_vec()];
    jitter_planes(&mut planes, n, jitter);
    let mut data = Vec::with_capacity(3 * n);
    for p in &planes {
        data.extend_from_slice(p);
    }
    Frame::new(rgb.height(), rgb.width(), 3, data)
}

fn jitter_planes(planes: &mut [Vec<f32>; 3], n: usize, j: &ColorJitter) {
    // Hue/saturation pass in HSV.
    if j.hue_delta != 0.0 || j.saturation_factor != 1.0 {
        for i in 0..n {
            let (h, s, v) = rgb_to_hsv(planes[0][i], planes[1][i], planes[2][i]);
            let h = h + j.hue_delta;
            let s = (s * j.saturation_factor).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            planes[0][i] = r;
            planes[1][i] = g;
            planes[2][i] = b;
        }
    }
    // Additive brightness.
    if j.brightness_delta != 0.0 {
        for p in planes.iter_mut() {
            for v in p.iter_mut() {
                *v = (*v + j.brightness_delta).clamp(0.0, 1.0);
            }
        }
    }
    // Contrast about the per-channel mean.
    if j.contrast_factor != 1.0 {
        for p in planes.iter_mut() {
            let mean = p.iter().sum::<f32>() / n as f32;
            for v in p.iter_mut() {
                *v = ((*v - mean) * j.contrast_factor + mean).clamp(0.0, 1.0);
            }
        }
    }
}

/// Apply flip, color jitter and zoom to a stack with one RNG stream derived
/// from `(cfg.seed, key)`. Draw order is fixed: flip gate; per color
/// transform a gate then (if applied) its parameter; zoom gate then crop
/// fraction and offsets.
pub fn augment_stack(stack: &ChannelStack, cfg: &AugmentConfig, key: SampleKey) -> Result<ChannelStack> {
    cfg.validate()?;
    if stack.roles().iter().any(|r| matches!(r, ChannelRole::Raw)) {
        return Err(CoreError::Contract(
            "stack has untagged channels; augmentation needs role tags".into(),
        ));
    }
    let mut rng = rng_for2(cfg.seed, Stage::Augment, key.epoch, key.index);

    let flip = rng.gen_range(0.0..1.0f32) < cfg.flip_prob;

    let mut jitter = ColorJitter::identity();
    if rng.gen_range(0.0..1.0f32) < cfg.apply_prob {
        jitter.hue_delta = rng.gen_range(cfg.hue_range.0..=cfg.hue_range.1);
    }
    if rng.gen_range(0.0..1.0f32) < cfg.apply_prob {
        jitter.saturation_factor = rng.gen_range(cfg.saturation_range.0..=cfg.saturation_range.1);
    }
    if rng.gen_range(0.0..1.0f32) < cfg.apply_prob {
        jitter.brightness_delta = rng.gen_range(cfg.brightness_range.0..=cfg.brightness_range.1);
    }
    if rng.gen_range(0.0..1.0f32) < cfg.apply_prob {
        jitter.contrast_factor = rng.gen_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    }

    let (h, w) = (stack.height(), stack.width());
    let zoom = if rng.gen_range(0.0..1.0f32) < cfg.apply_prob {
        let fraction = rng.gen_range(cfg.zoom_range.0..=cfg.zoom_range.1);
        let crop_h = (((h as f32) * (1.0 - fraction)).round() as usize).clamp(1, h);
        let crop_w = (((w as f32) * (1.0 - fraction)).round() as usize).clamp(1, w);
        let off_y = if crop_h < h { rng.gen_range(0..=(h - crop_h)) } else { 0 };
        let off_x = if crop_w < w { rng.gen_range(0..=(w - crop_w)) } else { 0 };
        Some((crop_h, crop_w, off_y, off_x))
    } else {
        None
    };

    apply_transforms(stack, flip, &jitter, zoom)
}

/// Deterministic application used by `augment_stack` and by tests that force
/// specific transforms.
pub fn apply_transforms(
    stack: &ChannelStack,
    flip: bool,
    jitter: &ColorJitter,
    zoom: Option<(usize, usize, usize, usize)>,
) -> Result<ChannelStack> {
    let (h, w) = (stack.height(), stack.width());
    let n = h * w;
    let channels = stack.channels();
    let roles = stack.roles().to_vec();

    let mut planes: Vec<Vec<f32>> = (0..channels).map(|c| stack.plane(c).to_vec()).collect();

    // 1. Horizontal flip, every channel.
    if flip {
        for p in planes.iter_mut() {
            for row in p.chunks_exact_mut(w) {
                row.reverse();
            }
        }
    }

    // 2. Color jitter, image triplets only, same parameters for each triplet.
    if *jitter != ColorJitter::identity() {
        let mut c = 0;
        while c < channels {
            if roles[c].is_rgb_image() {
                if c + 2 >= channels
                    || roles[c + 1] != roles[c]
                    || roles[c + 2] != roles[c]
                {
                    return Err(CoreError::Contract(format!(
                        "image channels at {c} do not form a triplet"
                    )));
                }
                let (a, rest) = planes[c..].split_at_mut(1);
                let (b, rest2) = rest.split_at_mut(1);
                let mut triplet = [
                    core::mem::take(&mut a[0]),
                    core::mem::take(&mut b[0]),
                    core::mem::take(&mut rest2[0]),
                ];
                jitter_planes(&mut triplet, n, jitter);
                let [p0, p1, p2] = triplet;
                planes[c] = p0;
                planes[c + 1] = p1;
                planes[c + 2] = p2;
                c += 3;
            } else {
                c += 1;
            }
        }
    }

    // 3. Zoom: crop and resize back, every channel identically.
    if let Some((crop_h, crop_w, off_y, off_x)) = zoom {
        for p in planes.iter_mut() {
            let mut cropped = Vec::with_capacity(crop_h * crop_w);
            for y in 0..crop_h {
                let start = (y + off_y) * w + off_x;
                cropped.extend_from_slice(&p[start..start + crop_w]);
            }
            let mut resized = alloc::vec![0.0f32; n];
            resize_plane(&cropped, crop_h, crop_w, h, w, &mut resized);
            *p = resized;
        }
    }

    let mut data = Vec::with_capacity(n * channels);
    for p in &planes {
        data.extend_from_slice(p);
    }
    ChannelStack::new(h, w, data, roles)
}
