//! The channel-stack classifier: two conv-relu-pool stages over K input
//! channels, global average pooling, and a sigmoid head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::ops::{
    check_input_dims, trunk_backward, trunk_forward, TrunkCache, TrunkGrads, TrunkView, C1, C2,
    FEATURES, KSIZE,
};
use super::{bce_from_logit, he_uniform, sigmoid, standard_normal, ParamLayout, Scalar, Volume};
use crate::error::{CoreError, Result};
use crate::tensor::ChannelRole;

#[derive(Debug, Clone)]
pub struct CnnModel<F> {
    in_channels: usize,
    params: Vec<F>,
    layout: ParamLayout,
}

fn cnn_layout(in_channels: usize) -> ParamLayout {
    let mut layout = ParamLayout::default();
    layout.push("conv1.weight", &[C1, in_channels, KSIZE, KSIZE]);
    layout.push("conv1.bias", &[C1]);
    layout.push("conv2.weight", &[C2, C1, KSIZE, KSIZE]);
    layout.push("conv2.bias", &[C2]);
    layout.push("head.weight", &[1, FEATURES]);
    layout.push("head.bias", &[1]);
    layout
}

impl<F: Scalar> CnnModel<F> {
    /// Cold start: He-uniform convolutions and head, zero biases.
    pub fn new(in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let layout = cnn_layout(in_channels);
        let mut params = vec![F::zero(); layout.total];
        let w1 = layout.find("conv1.weight").unwrap().clone();
        he_uniform(rng, in_channels * KSIZE * KSIZE, &mut params[w1.offset..w1.offset + w1.len]);
        let w2 = layout.find("conv2.weight").unwrap().clone();
        he_uniform(rng, C1 * KSIZE * KSIZE, &mut params[w2.offset..w2.offset + w2.len]);
        let hw = layout.find("head.weight").unwrap().clone();
        he_uniform(rng, FEATURES, &mut params[hw.offset..hw.offset + hw.len]);
        CnnModel { in_channels, params, layout }
    }

    /// Wrap an existing flat parameter vector (checkpoint restore).
    pub fn from_params(in_channels: usize, params: Vec<F>) -> Result<Self> {
        let layout = cnn_layout(in_channels);
        if params.len() != layout.total {
            return Err(CoreError::Contract(format!(
                "expected {} parameters for a {in_channels}-channel model, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(CnnModel { in_channels, params, layout })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn cast<G: Scalar>(&self) -> CnnModel<G> {
        CnnModel {
            in_channels: self.in_channels,
            params: self.params.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
            layout: self.layout.clone(),
        }
    }

    fn trunk_view(&self) -> TrunkView<'_, F> {
        TrunkView {
            w1: self.layout.slice(&self.params, "conv1.weight").unwrap(),
            b1: self.layout.slice(&self.params, "conv1.bias").unwrap(),
            w2: self.layout.slice(&self.params, "conv2.weight").unwrap(),
            b2: self.layout.slice(&self.params, "conv2.bias").unwrap(),
            in_channels: self.in_channels,
        }
    }

    fn logit(&self, x: &Volume<F>, cache: &mut TrunkCache<F>) -> Result<(F, Vec<F>)> {
        check_input_dims(x, self.in_channels)?;
        let features = trunk_forward(&self.trunk_view(), x, cache);
        let head_w = self.layout.slice(&self.params, "head.weight")?;
        let head_b = self.layout.slice(&self.params, "head.bias")?;
        let z = F::dot(head_w, &features) + head_b[0];
        Ok((z, features))
    }

    /// Probability that the input contains an animal.
    pub fn forward(&self, x: &Volume<F>) -> Result<F> {
        let mut cache = TrunkCache::default();
        let (z, _) = self.logit(x, &mut cache)?;
        Ok(sigmoid(z))
    }

    /// Accumulate one sample's BCE gradient into `grad`; returns the loss.
    pub fn grad_sample(&self, x: &Volume<F>, label: F, grad: &mut [F]) -> Result<F> {
        if grad.len() != self.layout.total {
            return Err(CoreError::Contract("gradient buffer length mismatch".into()));
        }
        let mut cache = TrunkCache::default();
        let (z, features) = self.logit(x, &mut cache)?;
        let prob = sigmoid(z);
        let loss = bce_from_logit(z, label);
        if !loss.to_f64().is_finite() {
            return Err(CoreError::Numeric("non-finite training loss".into()));
        }
        let dz = prob - label;

        // Head gradients and feature gradient.
        let head_w_spec = self.layout.find("head.weight")?.clone();
        let head_b_spec = self.layout.find("head.bias")?.clone();
        let head_w: Vec<F> = self.params[head_w_spec.offset..head_w_spec.offset + head_w_spec.len].to_vec();
        for (i, &f) in features.iter().enumerate() {
            grad[head_w_spec.offset + i] += dz * f;
        }
        grad[head_b_spec.offset] += dz;
        let d_features: Vec<F> = head_w.iter().map(|&w| dz * w).collect();

        let (w1s, b1s, w2s, b2s) = (
            self.layout.find("conv1.weight")?.clone(),
            self.layout.find("conv1.bias")?.clone(),
            self.layout.find("conv2.weight")?.clone(),
            self.layout.find("conv2.bias")?.clone(),
        );
        // Split the flat gradient buffer into per-tensor views. Tensors are
        // laid out in push order, so consecutive split_at_mut calls work.
        let (g1, rest) = grad.split_at_mut(b1s.offset);
        let (g2, rest2) = rest.split_at_mut(b1s.len);
        let (g3, rest3) = rest2.split_at_mut(w2s.len);
        let (g4, _) = rest3.split_at_mut(b2s.len);
        let mut trunk_grads = TrunkGrads {
            w1: &mut g1[w1s.offset..w1s.offset + w1s.len],
            b1: g2,
            w2: g3,
            b2: g4,
        };
        trunk_backward(&self.trunk_view(), x, &cache, &d_features, &mut trunk_grads);
        Ok(loss)
    }
}

/// Initialize a wider-input model from a trained 3-channel source: every
/// image/flow channel triplet of conv1 copies the source's 3-channel kernel
/// slice, foreground-mask channels draw from N(0, 0.01^2), and all other
/// layers copy across.
pub fn warm_start_input_layer<F: Scalar>(
    source: &CnnModel<F>,
    roles: &[ChannelRole],
    rng: &mut ChaCha8Rng,
) -> Result<CnnModel<F>> {
    if source.in_channels != 3 {
        return Err(CoreError::Contract(format!(
            "warm start needs a 3-channel source, got {}",
            source.in_channels
        )));
    }
    let k = roles.len();
    if k <= 3 {
        return Err(CoreError::Contract(format!(
            "warm start targets have more than 3 channels, got {k}"
        )));
    }
    let layout = cnn_layout(k);
    let mut params = vec![F::zero(); layout.total];

    // conv1: per-channel kernel slices.
    let src_w1 = source.layout.slice(&source.params, "conv1.weight")?;
    let dst_w1_spec = layout.find("conv1.weight")?.clone();
    let kk = KSIZE * KSIZE;
    let mut c = 0;
    while c < k {
        match roles[c] {
            ChannelRole::RgbImage(_) | ChannelRole::FlowImage(_) => {
                if c + 2 >= k || roles[c + 1] != roles[c] || roles[c + 2] != roles[c] {
                    return Err(CoreError::Contract(format!(
                        "channel {c}: image/flow roles must form triplets"
                    )));
                }
                for o in 0..C1 {
                    for j in 0..3 {
                        let src = &src_w1[(o * 3 + j) * kk..(o * 3 + j + 1) * kk];
                        let off = dst_w1_spec.offset + (o * k + c + j) * kk;
                        params[off..off + kk].copy_from_slice(src);
                    }
                }
                c += 3;
            }
            ChannelRole::Mog2Mask => {
                for o in 0..C1 {
                    let off = dst_w1_spec.offset + (o * k + c) * kk;
                    for v in &mut params[off..off + kk] {
                        *v = F::from_f64(0.01 * standard_normal(rng));
                    }
                }
                c += 1;
            }
            ChannelRole::Raw => {
                return Err(CoreError::Contract(format!("channel {c} has no role tag")));
            }
        }
    }

    // Everything else copies from the source.
    for name in ["conv1.bias", "conv2.weight", "conv2.bias", "head.weight", "head.bias"] {
        let src = source.layout.slice(&source.params, name)?;
        let spec = layout.find(name)?.clone();
        params[spec.offset..spec.offset + spec.len].copy_from_slice(src);
    }

    CnnModel::from_params(k, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stage};
    use crate::tensor::FlowPair;
    use rand::Rng;

    fn random_volume(ch: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Volume<f64> {
        Volume {
            channels: ch,
            height: h,
            width: w,
            data: (0..ch * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_weights_give_probability_half() {
        let layout = cnn_layout(3);
        let model = CnnModel::<f64>::from_params(3, vec![0.0; layout.total]).unwrap();
        let x = random_volume(3, 8, 8, &mut rng_for(0, Stage::ModelInit, 0));
        assert_eq!(model.forward(&x).unwrap(), 0.5);
    }

    #[test]
    fn doubling_head_weights_doubles_logit() {
        let mut rng = rng_for(1, Stage::ModelInit, 1);
        let model = CnnModel::<f64>::new(3, &mut rng);
        let x = random_volume(3, 8, 8, &mut rng);
        let p = model.forward(&x).unwrap();
        let z = (p / (1.0 - p)).ln();

        let mut doubled = model.clone();
        {
            let layout = doubled.layout().clone();
            let spec_w = layout.find("head.weight").unwrap().clone();
            let spec_b = layout.find("head.bias").unwrap().clone();
            for v in &mut doubled.params_mut()[spec_w.offset..spec_w.offset + spec_w.len] {
                *v *= 2.0;
            }
            for v in &mut doubled.params_mut()[spec_b.offset..spec_b.offset + spec_b.len] {
                *v *= 2.0;
            }
        }
        let p2 = doubled.forward(&x).unwrap();
        let z2 = (p2 / (1.0 - p2)).ln();
        assert!((z2 - 2.0 * z).abs() < 1e-9, "{z2} vs {}", 2.0 * z);
    }

    /// Straight-line reference forward: nested loops, no shared kernels.
    fn reference_forward(model: &CnnModel<f64>, x: &Volume<f64>) -> f64 {
        let k = model.in_channels();
        let (h, w) = (x.height, x.width);
        let layout = model.layout();
        let p = model.params();
        let w1 = layout.slice(p, "conv1.weight").unwrap();
        let b1 = layout.slice(p, "conv1.bias").unwrap();
        let w2 = layout.slice(p, "conv2.weight").unwrap();
        let b2 = layout.slice(p, "conv2.bias").unwrap();
        let hw = layout.slice(p, "head.weight").unwrap();
        let hb = layout.slice(p, "head.bias").unwrap();

        let conv = |input: &[f64], in_ch: usize, h: usize, w: usize, wt: &[f64], bias: &[f64], out_ch: usize| {
            let mut out = vec![0.0f64; out_ch * h * w];
            for o in 0..out_ch {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = bias[o];
                        for ic in 0..in_ch {
                            for ky in -1..=1isize {
                                for kx in -1..=1isize {
                                    let (sy, sx) = (y + ky, xx + kx);
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        let wv = wt[((o * in_ch + ic) * 3 + (ky + 1) as usize) * 3
                                            + (kx + 1) as usize];
                                        acc += wv * input[ic * h * w + sy as usize * w + sx as usize];
                                    }
                                }
                            }
                        }
                        out[o * h * w + y as usize * w + xx as usize] = acc.max(0.0);
                    }
                }
            }
            out
        };
        let pool = |input: &[f64], ch: usize, h: usize, w: usize| {
            let (ph, pw) = (h / 2, w / 2);
            let mut out = vec![0.0f64; ch * ph * pw];
            for c in 0..ch {
                for y in 0..ph {
                    for xx in 0..pw {
                        let i = c * h * w + 2 * y * w + 2 * xx;
                        out[c * ph * pw + y * pw + xx] =
                            input[i].max(input[i + 1]).max(input[i + w]).max(input[i + w + 1]);
                    }
                }
            }
            out
        };
        let a1 = conv(&x.data, k, h, w, w1, b1, 16);
        let p1 = pool(&a1, 16, h, w);
        let (h1, w1d) = (h / 2, w / 2);
        let a2 = conv(&p1, 16, h1, w1d, w2, b2, 32);
        let p2 = pool(&a2, 32, h1, w1d);
        let (h2, w2d) = (h1 / 2, w1d / 2);
        let mut z = hb[0];
        for c in 0..32 {
            let mut mean = 0.0;
            for v in &p2[c * h2 * w2d..(c + 1) * h2 * w2d] {
                mean += v;
            }
            mean /= (h2 * w2d) as f64;
            z += hw[c] * mean;
        }
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let mut rng = rng_for(7, Stage::ModelInit, 2);
        for k in [3usize, 4, 7] {
            let model = CnnModel::<f64>::new(k, &mut rng);
            let x = random_volume(k, 10, 8, &mut rng);
            let fast = model.forward(&x).unwrap();
            let slow = reference_forward(&model, &x);
            assert!((fast - slow).abs() < 1e-12, "k={k}: {fast} vs {slow}");
        }
    }

    #[test]
    fn dense_bias_gradient_equals_mean_residual() {
        let mut rng = rng_for(3, Stage::ModelInit, 3);
        let model = CnnModel::<f64>::new(4, &mut rng);
        let layout = model.layout().clone();
        let spec = layout.find("head.bias").unwrap().clone();
        let mut grad_sum = vec![0.0f64; layout.total];
        let mut residual_sum = 0.0;
        let batch = 6;
        for i in 0..batch {
            let x = random_volume(4, 8, 8, &mut rng);
            let y = (i % 2) as f64;
            model.grad_sample(&x, y, &mut grad_sum).unwrap();
            residual_sum += model.forward(&x).unwrap() - y;
        }
        let bias_grad = grad_sum[spec.offset] / batch as f64;
        assert!((bias_grad - residual_sum / batch as f64).abs() < 1e-12);
    }

    #[test]
    fn dead_relu_map_gets_zero_kernel_gradient() {
        let mut rng = rng_for(9, Stage::ModelInit, 4);
        let mut model = CnnModel::<f64>::new(3, &mut rng);
        // Force conv1 output map 0 entirely negative: large negative bias.
        let layout = model.layout().clone();
        let b1 = layout.find("conv1.bias").unwrap().clone();
        model.params_mut()[b1.offset] = -100.0;
        let x = random_volume(3, 8, 8, &mut rng);
        let mut grad = vec![0.0f64; layout.total];
        model.grad_sample(&x, 1.0, &mut grad).unwrap();
        let w1 = layout.find("conv1.weight").unwrap().clone();
        // Kernels feeding map 0: offsets [0, 3*9) within conv1.weight.
        for i in 0..27 {
            assert_eq!(grad[w1.offset + i], 0.0);
        }
        assert_eq!(grad[b1.offset], 0.0);
    }

    fn finite_difference_check(k: usize, seed: u64) -> f64 {
        let mut rng = rng_for(seed, Stage::ModelInit, 5);
        let model = CnnModel::<f64>::new(k, &mut rng);
        let x = random_volume(k, 8, 8, &mut rng);
        let y = 1.0;
        let layout = model.layout().clone();
        let mut grad = vec![0.0f64; layout.total];
        model.grad_sample(&x, y, &mut grad).unwrap();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in (0..layout.total).step_by(7) {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let loss = |m: &CnnModel<f64>| {
                let p = m.forward(&x).unwrap();
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            };
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k, seed) in [(3usize, 0u64), (7, 1), (13, 2)] {
            let worst = finite_difference_check(k, seed);
            assert!(worst <= 1e-4, "k={k}: worst relative error {worst}");
        }
    }

    #[test]
    fn warm_start_copies_triplets_and_randomizes_mask_slices() {
        let mut rng = rng_for(4, Stage::ModelInit, 6);
        let source = CnnModel::<f64>::new(3, &mut rng);
        // Mog2_4 layout: one image triplet plus the mask channel.
        let roles = [
            ChannelRole::RgbImage(1),
            ChannelRole::RgbImage(1),
            ChannelRole::RgbImage(1),
            ChannelRole::Mog2Mask,
        ];
        let mut ws_rng = rng_for(4, Stage::WarmStart, 0);
        let target = warm_start_input_layer(&source, &roles, &mut ws_rng).unwrap();
        assert_eq!(target.in_channels(), 4);
        let src_w1 = source.layout().slice(source.params(), "conv1.weight").unwrap();
        let dst_w1 = target.layout().slice(target.params(), "conv1.weight").unwrap();
        for o in 0..16 {
            for j in 0..3 {
                for t in 0..9 {
                    assert_eq!(dst_w1[(o * 4 + j) * 9 + t], src_w1[(o * 3 + j) * 9 + t]);
                }
            }
            // Mask slice differs from zero (random) and from the source.
            let slice = &dst_w1[(o * 4 + 3) * 9..(o * 4 + 4) * 9];
            assert!(slice.iter().any(|&v| v != 0.0));
            assert!(slice.iter().all(|&v| v.abs() < 0.1));
        }
        for name in ["conv1.bias", "conv2.weight", "conv2.bias", "head.weight", "head.bias"] {
            assert_eq!(
                source.layout().slice(source.params(), name).unwrap(),
                target.layout().slice(target.params(), name).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn warm_start_hybrid_layout_copies_four_triplets() {
        let mut rng = rng_for(8, Stage::ModelInit, 7);
        let source = CnnModel::<f64>::new(3, &mut rng);
        let mut roles = Vec::new();
        for i in 1..=3u8 {
            roles.extend([ChannelRole::RgbImage(i); 3]);
        }
        roles.extend([ChannelRole::FlowImage(FlowPair::Averaged); 3]);
        roles.push(ChannelRole::Mog2Mask);
        let mut ws_rng = rng_for(8, Stage::WarmStart, 1);
        let target = warm_start_input_layer(&source, &roles, &mut ws_rng).unwrap();
        assert_eq!(target.in_channels(), 13);
        let src_w1 = source.layout().slice(source.params(), "conv1.weight").unwrap();
        let dst_w1 = target.layout().slice(target.params(), "conv1.weight").unwrap();
        for o in 0..16 {
            for triplet in 0..4 {
                for j in 0..3 {
                    for t in 0..9 {
                        assert_eq!(
                            dst_w1[(o * 13 + triplet * 3 + j) * 9 + t],
                            src_w1[(o * 3 + j) * 9 + t]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn warm_start_mask_slices_have_expected_statistics() {
        let mut rng = rng_for(12, Stage::ModelInit, 8);
        let source = CnnModel::<f64>::new(3, &mut rng);
        let roles = [
            ChannelRole::RgbImage(1),
            ChannelRole::RgbImage(1),
            ChannelRole::RgbImage(1),
            ChannelRole::Mog2Mask,
        ];
        // Collect 10^4 sampled weights over repeated warm starts.
        let mut samples: Vec<f64> = Vec::new();
        let mut i = 0;
        while samples.len() < 10_000 {
            let mut ws_rng = rng_for(12, Stage::WarmStart, i);
            let target = warm_start_input_layer(&source, &roles, &mut ws_rng).unwrap();
            let dst_w1 = target.layout().slice(target.params(), "conv1.weight").unwrap();
            for o in 0..16 {
                samples.extend_from_slice(&dst_w1[(o * 4 + 3) * 9..(o * 4 + 4) * 9]);
            }
            i += 1;
        }
        samples.truncate(10_000);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        // Within 3 standard errors of (0, 0.01).
        assert!(mean.abs() <= 3.0 * 0.01 / n.sqrt(), "mean {mean}");
        assert!((std - 0.01).abs() <= 3.0 * 0.01 / (2.0 * n).sqrt(), "std {std}");
    }
}
