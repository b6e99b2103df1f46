//! Per-pixel adaptive Gaussian-mixture background/foreground segmentation
//! over a 3-frame burst.
//!
//! Each pixel holds up to `max_components` weighted Gaussians over intensity.
//! A frame update matches each pixel against its mixture, adapts the matched
//! component (or replaces the weakest one), renormalizes, prunes, and labels
//! the pixel foreground unless its matched component belongs to the
//! background prefix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::tensor::Frame;

/// Mixture parameters. Intensities are in [0,1], so variances are in
/// squared [0,1] units; `var_threshold` is a squared-Mahalanobis cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Mog2Params {
    pub max_components: usize,
    /// Update rate; raised far above streaming defaults because a burst has
    /// only three frames.
    pub learning_rate: f32,
    pub var_threshold: f32,
    pub background_ratio: f32,
    pub var_init: f32,
    pub var_min: f32,
    pub var_max: f32,
    /// Components with weight below `learning_rate * complexity_prune` are
    /// dropped after each update.
    pub complexity_prune: f32,
}

impl Default for Mog2Params {
    fn default() -> Self {
        Mog2Params {
            max_components: 5,
            learning_rate: 0.3,
            var_threshold: 16.0,
            background_ratio: 0.9,
            var_init: 0.0225,
            var_min: 0.0004,
            var_max: 0.25,
            complexity_prune: 0.05,
        }
    }
}

impl Mog2Params {
    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 {
            return Err(CoreError::Config("max_components must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(CoreError::Config(format!(
                "learning_rate must be in (0,1], got {}",
                self.learning_rate
            )));
        }
        if !(self.background_ratio > 0.0 && self.background_ratio < 1.0) {
            return Err(CoreError::Config(format!(
                "background_ratio must be in (0,1), got {}",
                self.background_ratio
            )));
        }
        if !(self.var_min <= self.var_init && self.var_init <= self.var_max) {
            return Err(CoreError::Config(format!(
                "variance bounds must satisfy var_min <= var_init <= var_max, got {} / {} / {}",
                self.var_min, self.var_init, self.var_max
            )));
        }
        if !(self.var_threshold > 0.0) {
            return Err(CoreError::Config("var_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// One Gaussian component of a pixel's mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f32,
    pub mean: f32,
    pub variance: f32,
}

/// Binary foreground mask stored as 0.0/1.0 floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(CoreError::Dimension(format!(
                "mask length {} != {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(CoreError::Numeric("mask values must be exactly 0 or 1".into()));
        }
        Ok(ForegroundMask { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Element-wise union with another mask.
    pub fn union(&self, other: &ForegroundMask) -> Result<ForegroundMask> {
        if self.height != other.height || self.width != other.width {
            return Err(CoreError::Dimension("mask size mismatch in union".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| if a == 1.0 || b == 1.0 { 1.0 } else { 0.0 })
            .collect();
        ForegroundMask::new(self.height, self.width, values)
    }

    pub fn to_frame(&self) -> Frame {
        Frame::new(self.height, self.width, 1, self.values.clone()).expect("mask is a valid frame")
    }
}

/// Per-pixel mixture grid for one burst. Confine an instance to one thread;
/// distinct bursts use distinct instances.
#[derive(Debug, Clone)]
pub struct Mog2Model {
    height: usize,
    width: usize,
    params: Mog2Params,
    /// Flat component storage: `max_components` slots per pixel.
    slots: Vec<Component>,
    counts: Vec<u8>,
}

impl Mog2Model {
    /// Initialize from the first frame of a burst: one component per pixel
    /// with weight 1, the pixel's intensity as mean, and `var_init` variance.
    pub fn init(frame: &Frame, params: &Mog2Params) -> Result<Self> {
        params.validate()?;
        let gray = as_gray(frame)?;
        let (h, w) = (frame.height(), frame.width());
        let k = params.max_components;
        let mut slots = vec![Component { weight: 0.0, mean: 0.0, variance: 0.0 }; h * w * k];
        for (i, &v) in gray.iter().enumerate() {
            slots[i * k] = Component { weight: 1.0, mean: v, variance: params.var_init };
        }
        Ok(Mog2Model {
            height: h,
            width: w,
            params: params.clone(),
            slots,
            counts: vec![1; h * w],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The mixture of one pixel, strongest component first.
    pub fn mixture(&self, y: usize, x: usize) -> &[Component] {
        let k = self.params.max_components;
        let i = y * self.width + x;
        &self.slots[i * k..i * k + self.counts[i] as usize]
    }

    /// Update the model with the next frame and segment it.
    pub fn update(&mut self, frame: &Frame) -> Result<ForegroundMask> {
        if frame.height() != self.height || frame.width() != self.width {
            return Err(CoreError::Dimension(format!(
                "frame is {}x{}, model is {}x{}",
                frame.height(),
                frame.width(),
                self.height,
                self.width
            )));
        }
        let gray = as_gray(frame)?;
        let k = self.params.max_components;
        let mut mask = vec![0.0f32; self.height * self.width];
        for (i, &value) in gray.iter().enumerate() {
            let count = self.counts[i] as usize;
            let comps = &mut self.slots[i * k..i * k + k];
            let (new_count, foreground) = update_pixel(comps, count, value, &self.params);
            self.counts[i] = new_count as u8;
            if foreground {
                mask[i] = 1.0;
            }
        }
        ForegroundMask::new(self.height, self.width, mask)
    }
}

fn as_gray(frame: &Frame) -> Result<Vec<f32>> {
    if frame.channels() == 1 {
        Ok(frame.plane(0).to_vec())
    } else {
        Ok(frame.rgb_to_gray()?.plane(0).to_vec())
    }
}

/// Scalar mixture update for one pixel. Returns the new component count and
/// whether the pixel is foreground.
///
/// Steps, in order: match the closest component within the squared-Mahalanobis
/// threshold; decay all weights by (1-alpha) and reinforce the matched one
/// (or replace the weakest with a fresh component); renormalize; prune
/// weights below alpha * cT and renormalize again; sort by
/// weight/sqrt(variance) descending; label foreground unless the matched
/// component sits inside the smallest prefix whose cumulative weight reaches
/// the background ratio.
fn update_pixel(comps: &mut [Component], count: usize, value: f32, p: &Mog2Params) -> (usize, bool) {
    let alpha = p.learning_rate;

    // Closest match within threshold.
    let mut matched: Option<usize> = None;
    let mut best_d2 = f32::INFINITY;
    for (idx, c) in comps.iter().enumerate().take(count) {
        let diff = value - c.mean;
        let d2 = diff * diff / c.variance;
        if d2 < p.var_threshold && d2 < best_d2 {
            best_d2 = d2;
            matched = Some(idx);
        }
    }

    let mut count = count;
    let fresh = matched.is_none();
    for c in comps.iter_mut().take(count) {
        c.weight *= 1.0 - alpha;
    }
    let matched_idx = match matched {
        Some(mi) => {
            let c = &mut comps[mi];
            c.weight += alpha;
            let rho = alpha / c.weight;
            let diff = value - c.mean;
            c.mean += rho * diff;
            c.variance += rho * (diff * diff - c.variance);
            c.variance = c.variance.clamp(p.var_min, p.var_max);
            mi
        }
        None => {
            let slot = if count < comps.len() {
                count += 1;
                count - 1
            } else {
                // Replace the weakest component.
                let mut weakest = 0;
                for idx in 1..count {
                    if comps[idx].weight < comps[weakest].weight {
                        weakest = idx;
                    }
                }
                weakest
            };
            comps[slot] = Component { weight: alpha, mean: value, variance: p.var_init };
            slot
        }
    };

    // Renormalize.
    let total: f32 = comps.iter().take(count).map(|c| c.weight).sum();
    if total > 0.0 {
        for c in comps.iter_mut().take(count) {
            c.weight /= total;
        }
    }

    // Prune, tracking where the matched component ends up.
    let cutoff = alpha * p.complexity_prune;
    let mut kept = 0usize;
    let mut kept_match: Option<usize> = None;
    for idx in 0..count {
        if comps[idx].weight >= cutoff {
            if idx == matched_idx {
                kept_match = Some(kept);
            }
            comps[kept] = comps[idx];
            kept += 1;
        }
    }
    count = kept;
    let total: f32 = comps.iter().take(count).map(|c| c.weight).sum();
    if total > 0.0 {
        for c in comps.iter_mut().take(count) {
            c.weight /= total;
        }
    }

    // Sort by weight / sqrt(variance), stable, descending.
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| {
        let ka = comps[a].weight / comps[a].variance.sqrt();
        let kb = comps[b].weight / comps[b].variance.sqrt();
        kb.partial_cmp(&ka).unwrap_or(core::cmp::Ordering::Equal)
    });
    let sorted: Vec<Component> = order.iter().map(|&i| comps[i]).collect();
    let match_after_sort = kept_match.and_then(|mi| order.iter().position(|&o| o == mi));
    comps[..count].copy_from_slice(&sorted);

    // Background prefix test.
    let foreground = if fresh {
        true
    } else {
        match match_after_sort {
            None => true, // matched component was pruned away
            Some(mi) => {
                let mut cum = 0.0f32;
                let mut prefix_end = count;
                for (idx, c) in comps.iter().enumerate().take(count) {
                    cum += c.weight;
                    if cum >= p.background_ratio {
                        prefix_end = idx;
                        break;
                    }
                }
                mi > prefix_end
            }
        }
    };

    (count, foreground)
}

/// Foreground mask of a whole burst: initialize on frame 1, update with
/// frames 2 and 3, and take the union of the two masks.
pub fn burst_foreground(frames: &[Frame; 3], params: &Mog2Params) -> Result<ForegroundMask> {
    let mut model = Mog2Model::init(&frames[0], params)?;
    let mask2 = model.update(&frames[1])?;
    let mask3 = model.update(&frames[2])?;
    mask2.union(&mask3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gray(h: usize, w: usize, v: f32) -> Frame {
        Frame::constant(h, w, 1, v).unwrap()
    }

    #[test]
    fn identical_update_is_all_background() {
        let p = Mog2Params::default();
        let f = gray(4, 4, 0.4);
        let mut model = Mog2Model::init(&f, &p).unwrap();
        let mask = model.update(&f).unwrap();
        assert_eq!(mask.foreground_fraction(), 0.0);
    }

    // (0.9-0.2)^2 / 0.0225 = 21.8 > 16, so the jump exceeds the threshold.
    #[test]
    fn large_jump_is_all_foreground() {
        let p = Mog2Params::default();
        let mut model = Mog2Model::init(&gray(3, 3, 0.2), &p).unwrap();
        let mask = model.update(&gray(3, 3, 0.9)).unwrap();
        assert_eq!(mask.foreground_fraction(), 1.0);
    }

    // Matched update with a single full-weight component: the weight stays 1
    // after decay + reinforce + renormalize, so rho = alpha and
    // mean' = mean + rho * (value - mean).
    #[test]
    fn matched_update_moves_mean_toward_value() {
        let p = Mog2Params::default();
        let mut model = Mog2Model::init(&gray(1, 1, 0.2), &p).unwrap();
        model.update(&gray(1, 1, 0.3)).unwrap();
        let c = model.mixture(0, 0)[0];
        let expected_mean = 0.2 + p.learning_rate * (0.3f32 - 0.2);
        assert!((c.mean - expected_mean).abs() < 1e-6, "{} vs {expected_mean}", c.mean);
        assert!((c.weight - 1.0).abs() < 1e-6);
    }

    /// Independent scalar reference: the documented update contract applied
    /// step by step to a plain Vec, in the same arithmetic order.
    fn reference_update(
        comps: &mut Vec<(f32, f32, f32)>, // (weight, mean, variance)
        value: f32,
        p: &Mog2Params,
    ) -> bool {
        let alpha = p.learning_rate;
        let mut matched = None;
        let mut best = f32::INFINITY;
        for (i, &(_, m, v)) in comps.iter().enumerate() {
            let d2 = (value - m) * (value - m) / v;
            if d2 < p.var_threshold && d2 < best {
                best = d2;
                matched = Some(i);
            }
        }
        for c in comps.iter_mut() {
            c.0 *= 1.0 - alpha;
        }
        let fresh = matched.is_none();
        let mi = match matched {
            Some(i) => {
                comps[i].0 += alpha;
                let rho = alpha / comps[i].0;
                let diff = value - comps[i].1;
                comps[i].1 += rho * diff;
                comps[i].2 =
                    (comps[i].2 + rho * (diff * diff - comps[i].2)).clamp(p.var_min, p.var_max);
                i
            }
            None => {
                if comps.len() < p.max_components {
                    comps.push((alpha, value, p.var_init));
                    comps.len() - 1
                } else {
                    let mut weakest = 0;
                    for i in 1..comps.len() {
                        if comps[i].0 < comps[weakest].0 {
                            weakest = i;
                        }
                    }
                    comps[weakest] = (alpha, value, p.var_init);
                    weakest
                }
            }
        };
        let total: f32 = comps.iter().map(|c| c.0).sum();
        for c in comps.iter_mut() {
            c.0 /= total;
        }
        let cutoff = alpha * p.complexity_prune;
        let before = comps.clone();
        comps.clear();
        let mut new_mi = None;
        for (i, c) in before.iter().enumerate() {
            if c.0 >= cutoff {
                if i == mi {
                    new_mi = Some(comps.len());
                }
                comps.push(*c);
            }
        }
        let total: f32 = comps.iter().map(|c| c.0).sum();
        for c in comps.iter_mut() {
            c.0 /= total;
        }
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by(|&a, &b| {
            (comps[b].0 / comps[b].2.sqrt())
                .partial_cmp(&(comps[a].0 / comps[a].2.sqrt()))
                .unwrap()
        });
        let sorted: Vec<(f32, f32, f32)> = order.iter().map(|&i| comps[i]).collect();
        let mi_sorted = new_mi.and_then(|m| order.iter().position(|&o| o == m));
        *comps = sorted;
        if fresh {
            return true;
        }
        match mi_sorted {
            None => true,
            Some(m) => {
                let mut cum = 0.0;
                let mut prefix_end = comps.len();
                for (i, c) in comps.iter().enumerate() {
                    cum += c.0;
                    if cum >= p.background_ratio {
                        prefix_end = i;
                        break;
                    }
                }
                m > prefix_end
            }
        }
    }

    #[test]
    fn single_pixel_trajectory_matches_scalar_reference() {
        let p = Mog2Params::default();
        let mut rng = crate::rng::rng_for(11, crate::rng::Stage::SynthBurst, 0);
        for _seq in 0..100 {
            let init: f32 = rng.gen_range(0.0..=1.0);
            let mut model = Mog2Model::init(&gray(1, 1, init), &p).unwrap();
            let mut reference = alloc::vec![(1.0f32, init, p.var_init)];
            for _step in 0..12 {
                let value: f32 = rng.gen_range(0.0..=1.0);
                let mask = model.update(&gray(1, 1, value)).unwrap();
                let expect_fg = reference_update(&mut reference, value, &p);
                assert_eq!(mask.values()[0] == 1.0, expect_fg);
                let mix = model.mixture(0, 0);
                assert_eq!(mix.len(), reference.len());
                for (c, r) in mix.iter().zip(reference.iter()) {
                    assert_eq!(c.weight, r.0);
                    assert_eq!(c.mean, r.1);
                    assert_eq!(c.variance, r.2);
                }
            }
        }
    }

    #[test]
    fn weights_sum_to_one_and_variances_stay_clamped() {
        let p = Mog2Params::default();
        let mut rng = crate::rng::rng_for(5, crate::rng::Stage::SynthBurst, 7);
        let mut model = Mog2Model::init(&gray(2, 2, 0.5), &p).unwrap();
        for _ in 0..30 {
            let v: f32 = rng.gen_range(0.0..=1.0);
            model.update(&gray(2, 2, v)).unwrap();
            for y in 0..2 {
                for x in 0..2 {
                    let mix = model.mixture(y, x);
                    let sum: f32 = mix.iter().map(|c| c.weight).sum();
                    assert!((sum - 1.0).abs() <= 1e-6, "weights sum {sum}");
                    for c in mix {
                        assert!(c.variance >= p.var_min && c.variance <= p.var_max);
                    }
                }
            }
        }
    }

    #[test]
    fn static_burst_yields_empty_mask() {
        let f = gray(8, 8, 0.33);
        let mask = burst_foreground(&[f.clone(), f.clone(), f], &Mog2Params::default()).unwrap();
        assert_eq!(mask.foreground_fraction(), 0.0);
    }

    fn square_frame(h: usize, w: usize, x0: usize, side: usize) -> Frame {
        let mut data = alloc::vec![0.1f32; h * w];
        for y in 2..2 + side {
            for x in x0..x0 + side {
                data[y * w + x] = 0.9;
            }
        }
        Frame::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn moving_square_mask_overlaps_ground_truth_union() {
        let (h, w, side) = (16, 32, 8);
        let frames = [
            square_frame(h, w, 2, side),
            square_frame(h, w, 6, side),
            square_frame(h, w, 10, side),
        ];
        let mask = burst_foreground(&frames, &Mog2Params::default()).unwrap();
        // Ground truth union of the frame-2 and frame-3 square positions.
        let mut gt = alloc::vec![0.0f32; h * w];
        for y in 2..2 + side {
            for x in 6..10 + side {
                gt[y * w + x] = 1.0;
            }
        }
        let mut inter = 0.0;
        let mut union = 0.0;
        for (m, g) in mask.values().iter().zip(&gt) {
            if *m == 1.0 && *g == 1.0 {
                inter += 1.0;
            }
            if *m == 1.0 || *g == 1.0 {
                union += 1.0;
            }
        }
        let iou = inter / union;
        assert!(iou >= 0.5, "IoU {iou}");
    }

    // A +0.02 global step has squared Mahalanobis 0.0004/0.0225 << 16 and
    // must stay background.
    #[test]
    fn small_illumination_step_stays_background() {
        let p = Mog2Params::default();
        let frames = [gray(8, 8, 0.40), gray(8, 8, 0.42), gray(8, 8, 0.44)];
        let mask = burst_foreground(&frames, &p).unwrap();
        assert!(mask.foreground_fraction() < 0.05);
    }

    #[test]
    fn update_rejects_mismatched_dimensions() {
        let p = Mog2Params::default();
        let mut model = Mog2Model::init(&gray(4, 4, 0.5), &p).unwrap();
        assert!(matches!(model.update(&gray(4, 5, 0.5)), Err(CoreError::Dimension(_))));
    }

    #[test]
    fn masks_are_exactly_binary() {
        let mut rng = crate::rng::rng_for(2, crate::rng::Stage::SynthBurst, 3);
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            let data: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..=1.0)).collect();
            Frame::new(8, 8, 1, data).unwrap()
        };
        let frames = [make(&mut rng), make(&mut rng), make(&mut rng)];
        let mask = burst_foreground(&frames, &Mog2Params::default()).unwrap();
        assert!(mask.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
