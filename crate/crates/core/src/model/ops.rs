//! Convolution, pooling and pooling-trunk primitives shared by both model
//! families. Convolutions are 3x3, stride 1, zero-padded (same size);
//! pooling is 2x2 max with floor semantics (a trailing odd row/column is
//! dropped).

use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Volume};

pub(crate) const KSIZE: usize = 3;
pub(crate) const C1: usize = 16;
pub(crate) const C2: usize = 32;
pub(crate) const FEATURES: usize = C2;

/// out[o] = bias[o] + sum_ic w[o][ic] * in[ic] (same padding).
pub(crate) fn conv_same<F: Scalar>(
    input: &[F],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[F],
    bias: &[F],
    out_ch: usize,
    out: &mut [F],
) {
    let plane = h * w;
    debug_assert_eq!(input.len(), in_ch * plane);
    debug_assert_eq!(weight.len(), out_ch * in_ch * KSIZE * KSIZE);
    debug_assert_eq!(out.len(), out_ch * plane);
    for o in 0..out_ch {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        for v in out_plane.iter_mut() {
            *v = bias[o];
        }
        for ic in 0..in_ch {
            let in_plane = &input[ic * plane..(ic + 1) * plane];
            let wbase = (o * in_ch + ic) * KSIZE * KSIZE;
            for ky in 0..KSIZE {
                let dy = ky as isize - 1;
                for kx in 0..KSIZE {
                    let dx = kx as isize - 1;
                    let wv = weight[wbase + ky * KSIZE + kx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[s0 as usize..s0 as usize + (x1 - x0)];
                        F::axpy(dst, src, wv);
                    }
                }
            }
        }
    }
}

/// dW[o][ic][ky][kx] = sum_yx d_out[o] . shifted(in[ic]); db[o] = sum d_out[o].
pub(crate) fn conv_same_param_grad<F: Scalar>(
    input: &[F],
    in_ch: usize,
    h: usize,
    w: usize,
    d_out: &[F],
    out_ch: usize,
    d_weight: &mut [F],
    d_bias: &mut [F],
) {
    let plane = h * w;
    for o in 0..out_ch {
        let dout_plane = &d_out[o * plane..(o + 1) * plane];
        let mut db = F::zero();
        for &v in dout_plane {
            db += v;
        }
        d_bias[o] += db;
        for ic in 0..in_ch {
            let in_plane = &input[ic * plane..(ic + 1) * plane];
            let wbase = (o * in_ch + ic) * KSIZE * KSIZE;
            for ky in 0..KSIZE {
                let dy = ky as isize - 1;
                for kx in 0..KSIZE {
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)) as usize;
                    let mut acc = F::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        acc += F::dot(
                            &dout_plane[y * w + x0..y * w + x1],
                            &in_plane[s0 as usize..s0 as usize + (x1 - x0)],
                        );
                    }
                    d_weight[wbase + ky * KSIZE + kx] += acc;
                }
            }
        }
    }
}

/// d_in[ic] += sum_o w[o][ic] (*) d_out[o] (transposed convolution).
pub(crate) fn conv_same_input_grad<F: Scalar>(
    d_out: &[F],
    out_ch: usize,
    h: usize,
    w: usize,
    weight: &[F],
    in_ch: usize,
    d_in: &mut [F],
) {
    let plane = h * w;
    for o in 0..out_ch {
        let dout_plane = &d_out[o * plane..(o + 1) * plane];
        for ic in 0..in_ch {
            let din_plane = &mut d_in[ic * plane..(ic + 1) * plane];
            let wbase = (o * in_ch + ic) * KSIZE * KSIZE;
            for ky in 0..KSIZE {
                let dy = ky as isize - 1;
                for kx in 0..KSIZE {
                    let dx = kx as isize - 1;
                    let wv = weight[wbase + ky * KSIZE + kx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let dst = &mut din_plane[s0 as usize..s0 as usize + (x1 - x0)];
                        let src = &dout_plane[y * w + x0..y * w + x1];
                        F::axpy(dst, src, wv);
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_inplace<F: Scalar>(data: &mut [F]) {
    for v in data.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// 2x2 max pool with floor semantics. Returns pooled dims.
pub(crate) fn maxpool2<F: Scalar>(
    input: &[F],
    ch: usize,
    h: usize,
    w: usize,
    out: &mut Vec<F>,
) -> (usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    out.clear();
    out.resize(ch * ph * pw, F::zero());
    for c in 0..ch {
        let in_plane = &input[c * h * w..(c + 1) * h * w];
        let out_plane = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for y in 0..ph {
            for x in 0..pw {
                let i = 2 * y * w + 2 * x;
                let m = in_plane[i]
                    .max(in_plane[i + 1])
                    .max(in_plane[i + w])
                    .max(in_plane[i + w + 1]);
                out_plane[y * pw + x] = m;
            }
        }
    }
    (ph, pw)
}

/// Route pooled gradients back to the first element attaining each block
/// max (matching forward's max over the same values).
pub(crate) fn maxpool2_backward<F: Scalar>(
    input: &[F],
    ch: usize,
    h: usize,
    w: usize,
    pooled: &[F],
    d_pooled: &[F],
    d_input: &mut [F],
) {
    let (ph, pw) = (h / 2, w / 2);
    for c in 0..ch {
        let in_plane = &input[c * h * w..(c + 1) * h * w];
        let pooled_plane = &pooled[c * ph * pw..(c + 1) * ph * pw];
        let dp_plane = &d_pooled[c * ph * pw..(c + 1) * ph * pw];
        let di_plane = &mut d_input[c * h * w..(c + 1) * h * w];
        for y in 0..ph {
            for x in 0..pw {
                let m = pooled_plane[y * pw + x];
                let g = dp_plane[y * pw + x];
                let i = 2 * y * w + 2 * x;
                let candidates = [i, i + 1, i + w, i + w + 1];
                for &ci in &candidates {
                    if in_plane[ci] == m {
                        di_plane[ci] += g;
                        break;
                    }
                }
            }
        }
    }
}

/// Activations cached by a trunk forward pass for its backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct TrunkCache<F> {
    pub a1: Vec<F>, // post-relu conv1, [C1, h, w]
    pub p1: Vec<F>, // pooled, [C1, h1, w1]
    pub a2: Vec<F>, // post-relu conv2, [C2, h1, w1]
    pub p2: Vec<F>, // pooled, [C2, h2, w2]
    pub dims: (usize, usize, usize, usize, usize, usize), // h, w, h1, w1, h2, w2
}

/// Parameter views of the convolutional trunk.
pub(crate) struct TrunkView<'a, F> {
    pub w1: &'a [F],
    pub b1: &'a [F],
    pub w2: &'a [F],
    pub b2: &'a [F],
    pub in_channels: usize,
}

pub(crate) struct TrunkGrads<'a, F> {
    pub w1: &'a mut [F],
    pub b1: &'a mut [F],
    pub w2: &'a mut [F],
    pub b2: &'a mut [F],
}

/// conv1 -> relu -> pool -> conv2 -> relu -> pool -> global average pool.
/// Returns the 32-feature vector.
pub(crate) fn trunk_forward<F: Scalar>(
    view: &TrunkView<'_, F>,
    x: &Volume<F>,
    cache: &mut TrunkCache<F>,
) -> Vec<F> {
    let (h, w) = (x.height, x.width);
    cache.a1.clear();
    cache.a1.resize(C1 * h * w, F::zero());
    conv_same(&x.data, view.in_channels, h, w, view.w1, view.b1, C1, &mut cache.a1);
    relu_inplace(&mut cache.a1);
    let (h1, w1) = maxpool2(&cache.a1, C1, h, w, &mut cache.p1);
    cache.a2.clear();
    cache.a2.resize(C2 * h1 * w1, F::zero());
    conv_same(&cache.p1, C1, h1, w1, view.w2, view.b2, C2, &mut cache.a2);
    relu_inplace(&mut cache.a2);
    let (h2, w2) = maxpool2(&cache.a2, C2, h1, w1, &mut cache.p2);
    cache.dims = (h, w, h1, w1, h2, w2);

    let plane2 = h2 * w2;
    let denom = F::from_f64(plane2 as f64);
    let mut features = vec![F::zero(); FEATURES];
    for (c, f) in features.iter_mut().enumerate() {
        let mut acc = F::zero();
        for &v in &cache.p2[c * plane2..(c + 1) * plane2] {
            acc += v;
        }
        *f = acc / denom;
    }
    features
}

/// Backpropagate d(loss)/d(features) through the trunk, accumulating
/// parameter gradients. The input gradient is not needed and not computed.
pub(crate) fn trunk_backward<F: Scalar>(
    view: &TrunkView<'_, F>,
    x: &Volume<F>,
    cache: &TrunkCache<F>,
    d_features: &[F],
    grads: &mut TrunkGrads<'_, F>,
) {
    let (h, w, h1, w1, h2, w2) = cache.dims;
    let plane2 = h2 * w2;
    let denom = F::from_f64(plane2 as f64);

    // GAP backward into d_p2.
    let mut d_p2 = vec![F::zero(); C2 * plane2];
    for c in 0..C2 {
        let g = d_features[c] / denom;
        for v in &mut d_p2[c * plane2..(c + 1) * plane2] {
            *v = g;
        }
    }

    // pool2 + relu2 backward into d_pre2.
    let mut d_pre2 = vec![F::zero(); C2 * h1 * w1];
    maxpool2_backward(&cache.a2, C2, h1, w1, &cache.p2, &d_p2, &mut d_pre2);
    for (d, &a) in d_pre2.iter_mut().zip(cache.a2.iter()) {
        if a <= F::zero() {
            *d = F::zero();
        }
    }

    // conv2 parameter and input gradients.
    conv_same_param_grad(&cache.p1, C1, h1, w1, &d_pre2, C2, grads.w2, grads.b2);
    let mut d_p1 = vec![F::zero(); C1 * h1 * w1];
    conv_same_input_grad(&d_pre2, C2, h1, w1, view.w2, C1, &mut d_p1);

    // pool1 + relu1 backward into d_pre1.
    let mut d_pre1 = vec![F::zero(); C1 * h * w];
    maxpool2_backward(&cache.a1, C1, h, w, &cache.p1, &d_p1, &mut d_pre1);
    for (d, &a) in d_pre1.iter_mut().zip(cache.a1.iter()) {
        if a <= F::zero() {
            *d = F::zero();
        }
    }

    // conv1 parameter gradients (no input gradient needed).
    conv_same_param_grad(&x.data, view.in_channels, h, w, &d_pre1, C1, grads.w1, grads.b1);
}

pub(crate) fn check_input_dims<F: Scalar>(x: &Volume<F>, in_channels: usize) -> crate::Result<()> {
    use crate::error::CoreError;
    if x.channels != in_channels {
        return Err(CoreError::Contract(alloc::format!(
            "input has {} channels, model expects {in_channels}",
            x.channels
        )));
    }
    if x.height < 4 || x.width < 4 {
        return Err(CoreError::Contract(alloc::format!(
            "input {}x{} too small; two pooling stages need at least 4x4",
            x.height,
            x.width
        )));
    }
    if x.data.len() != x.channels * x.height * x.width {
        return Err(CoreError::Dimension("input volume length mismatch".into()));
    }
    Ok(())
}
