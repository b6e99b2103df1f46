//! Recurrent classifier: a shared convolutional trunk extracts a 32-feature
//! vector per frame; an LSTM cell consumes the three feature vectors as time
//! steps; a sigmoid head reads the final hidden state. Backpropagation runs
//! through time and through the shared trunk (whose gradient is the sum of
//! its per-step gradients).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::cnn::CnnModel;
use super::ops::{
    check_input_dims, trunk_backward, trunk_forward, TrunkCache, TrunkGrads, TrunkView, C1, C2,
    FEATURES, KSIZE,
};
use super::{bce_from_logit, he_uniform, sigmoid, xavier_uniform, ParamLayout, Scalar, Volume};
use crate::error::{CoreError, Result};

const HIDDEN: usize = 32;
const GATES: usize = 4; // input, forget, cell, output

#[derive(Debug, Clone)]
pub struct LstmModel<F> {
    params: Vec<F>,
    layout: ParamLayout,
}

fn lstm_layout() -> ParamLayout {
    let mut layout = ParamLayout::default();
    layout.push("trunk.conv1.weight", &[C1, 3, KSIZE, KSIZE]);
    layout.push("trunk.conv1.bias", &[C1]);
    layout.push("trunk.conv2.weight", &[C2, C1, KSIZE, KSIZE]);
    layout.push("trunk.conv2.bias", &[C2]);
    layout.push("lstm.weight_input", &[GATES * HIDDEN, FEATURES]);
    layout.push("lstm.weight_hidden", &[GATES * HIDDEN, HIDDEN]);
    layout.push("lstm.bias", &[GATES * HIDDEN]);
    layout.push("head.weight", &[1, HIDDEN]);
    layout.push("head.bias", &[1]);
    layout
}

struct StepCache<F> {
    features: Vec<F>,
    gate_i: Vec<F>,
    gate_f: Vec<F>,
    gate_g: Vec<F>,
    gate_o: Vec<F>,
    cell: Vec<F>,
    cell_tanh: Vec<F>,
    hidden: Vec<F>,
    trunk: TrunkCache<F>,
}

impl<F: Scalar> LstmModel<F> {
    /// Cold start: He-uniform trunk, Xavier-uniform recurrent and head
    /// weights, zero biases.
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let layout = lstm_layout();
        let mut params = vec![F::zero(); layout.total];
        for (name, fan_in) in
            [("trunk.conv1.weight", 3 * KSIZE * KSIZE), ("trunk.conv2.weight", C1 * KSIZE * KSIZE)]
        {
            let spec = layout.find(name).unwrap().clone();
            he_uniform(rng, fan_in, &mut params[spec.offset..spec.offset + spec.len]);
        }
        for (name, fan_in, fan_out) in [
            ("lstm.weight_input", FEATURES, HIDDEN),
            ("lstm.weight_hidden", HIDDEN, HIDDEN),
            ("head.weight", HIDDEN, 1),
        ] {
            let spec = layout.find(name).unwrap().clone();
            xavier_uniform(rng, fan_in, fan_out, &mut params[spec.offset..spec.offset + spec.len]);
        }
        LstmModel { params, layout }
    }

    pub fn from_params(params: Vec<F>) -> Result<Self> {
        let layout = lstm_layout();
        if params.len() != layout.total {
            return Err(CoreError::Contract(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(LstmModel { params, layout })
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

    pub fn cast<G: Scalar>(&self) -> LstmModel<G> {
        LstmModel {
            params: self.params.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Copy a trained 3-channel classifier's convolution layers into the
    /// trunk; recurrent and head weights keep their fresh initialization.
    pub fn copy_trunk_from(&mut self, source: &CnnModel<F>) -> Result<()> {
        if source.in_channels() != 3 {
            return Err(CoreError::Contract(format!(
                "trunk copy needs a 3-channel source, got {}",
                source.in_channels()
            )));
        }
        for (src_name, dst_name) in [
            ("conv1.weight", "trunk.conv1.weight"),
            ("conv1.bias", "trunk.conv1.bias"),
            ("conv2.weight", "trunk.conv2.weight"),
            ("conv2.bias", "trunk.conv2.bias"),
        ] {
            let src = source.layout().slice(source.params(), src_name)?.to_vec();
            let dst = self.layout.slice_mut(&mut self.params, dst_name)?;
            dst.copy_from_slice(&src);
        }
        Ok(())
    }

    fn trunk_view(&self) -> TrunkView<'_, F> {
        TrunkView {
            w1: self.layout.slice(&self.params, "trunk.conv1.weight").unwrap(),
            b1: self.layout.slice(&self.params, "trunk.conv1.bias").unwrap(),
            w2: self.layout.slice(&self.params, "trunk.conv2.weight").unwrap(),
            b2: self.layout.slice(&self.params, "trunk.conv2.bias").unwrap(),
            in_channels: 3,
        }
    }

    fn run(&self, frames: &[Volume<F>; 3], caches: Option<&mut Vec<StepCache<F>>>) -> Result<F> {
        for f in frames.iter() {
            check_input_dims(f, 3)?;
        }
        let w_in = self.layout.slice(&self.params, "lstm.weight_input")?;
        let w_h = self.layout.slice(&self.params, "lstm.weight_hidden")?;
        let bias = self.layout.slice(&self.params, "lstm.bias")?;
        let head_w = self.layout.slice(&self.params, "head.weight")?;
        let head_b = self.layout.slice(&self.params, "head.bias")?;

        let mut hidden = vec![F::zero(); HIDDEN];
        let mut cell = vec![F::zero(); HIDDEN];
        let mut out_caches = caches;
        for frame in frames.iter() {
            let mut trunk_cache = TrunkCache::default();
            let features = trunk_forward(&self.trunk_view(), frame, &mut trunk_cache);

            // Gate pre-activations: z = W_in x + W_h h + b, gate-major.
            let mut z = vec![F::zero(); GATES * HIDDEN];
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = bias[r]
                    + F::dot(&w_in[r * FEATURES..(r + 1) * FEATURES], &features)
                    + F::dot(&w_h[r * HIDDEN..(r + 1) * HIDDEN], &hidden);
            }
            let gate_i: Vec<F> = z[..HIDDEN].iter().map(|&v| sigmoid(v)).collect();
            let gate_f: Vec<F> = z[HIDDEN..2 * HIDDEN].iter().map(|&v| sigmoid(v)).collect();
            let gate_g: Vec<F> = z[2 * HIDDEN..3 * HIDDEN].iter().map(|&v| v.tanh()).collect();
            let gate_o: Vec<F> = z[3 * HIDDEN..].iter().map(|&v| sigmoid(v)).collect();

            let mut new_cell = vec![F::zero(); HIDDEN];
            let mut cell_tanh = vec![F::zero(); HIDDEN];
            let mut new_hidden = vec![F::zero(); HIDDEN];
            for j in 0..HIDDEN {
                new_cell[j] = gate_f[j] * cell[j] + gate_i[j] * gate_g[j];
                cell_tanh[j] = new_cell[j].tanh();
                new_hidden[j] = gate_o[j] * cell_tanh[j];
            }
            if let Some(caches) = out_caches.as_deref_mut() {
                caches.push(StepCache {
                    features,
                    gate_i,
                    gate_f,
                    gate_g,
                    gate_o,
                    cell: new_cell.clone(),
                    cell_tanh,
                    hidden: new_hidden.clone(),
                    trunk: trunk_cache,
                });
            }
            cell = new_cell;
            hidden = new_hidden;
        }
        Ok(F::dot(head_w, &hidden) + head_b[0])
    }

    pub fn forward(&self, frames: &[Volume<F>; 3]) -> Result<F> {
        Ok(sigmoid(self.run(frames, None)?))
    }

    /// Accumulate one sample's BCE gradient into `grad`; returns the loss.
    pub fn grad_sample(&self, frames: &[Volume<F>; 3], label: F, grad: &mut [F]) -> Result<F> {
        if grad.len() != self.layout.total {
            return Err(CoreError::Contract("gradient buffer length mismatch".into()));
        }
        let mut caches: Vec<StepCache<F>> = Vec::with_capacity(3);
        let z_out = self.run(frames, Some(&mut caches))?;
        let prob = sigmoid(z_out);
        let loss = bce_from_logit(z_out, label);
        if !loss.to_f64().is_finite() {
            return Err(CoreError::Numeric("non-finite training loss".into()));
        }
        let dz_out = prob - label;

        let w_in = self.layout.slice(&self.params, "lstm.weight_input")?.to_vec();
        let w_h = self.layout.slice(&self.params, "lstm.weight_hidden")?.to_vec();
        let head_w = self.layout.slice(&self.params, "head.weight")?.to_vec();

        let specs = |name: &str| self.layout.find(name).map(|s| s.clone());
        let s_w_in = specs("lstm.weight_input")?;
        let s_w_h = specs("lstm.weight_hidden")?;
        let s_bias = specs("lstm.bias")?;
        let s_head_w = specs("head.weight")?;
        let s_head_b = specs("head.bias")?;

        // Head gradients.
        let h3 = &caches[2].hidden;
        for j in 0..HIDDEN {
            grad[s_head_w.offset + j] += dz_out * h3[j];
        }
        grad[s_head_b.offset] += dz_out;

        // BPTT over the three steps.
        let mut d_hidden: Vec<F> = head_w.iter().map(|&w| dz_out * w).collect();
        let mut d_cell_next = vec![F::zero(); HIDDEN];
        let mut d_features_per_step: [Vec<F>; 3] =
            [vec![F::zero(); FEATURES], vec![F::zero(); FEATURES], vec![F::zero(); FEATURES]];
        for t in (0..3).rev() {
            let cache = &caches[t];
            let cell_prev: Vec<F> = if t == 0 {
                vec![F::zero(); HIDDEN]
            } else {
                caches[t - 1].cell.clone()
            };
            let hidden_prev: Vec<F> = if t == 0 {
                vec![F::zero(); HIDDEN]
            } else {
                caches[t - 1].hidden.clone()
            };

            let one = F::one();
            let mut d_z = vec![F::zero(); GATES * HIDDEN];
            let mut d_cell = vec![F::zero(); HIDDEN];
            for j in 0..HIDDEN {
                let (i, f, g, o) =
                    (cache.gate_i[j], cache.gate_f[j], cache.gate_g[j], cache.gate_o[j]);
                let tanh_c = cache.cell_tanh[j];
                let d_o = d_hidden[j] * tanh_c;
                let dc = d_cell_next[j] + d_hidden[j] * o * (one - tanh_c * tanh_c);
                let d_i = dc * g;
                let d_f = dc * cell_prev[j];
                let d_g = dc * i;
                d_z[j] = d_i * i * (one - i);
                d_z[HIDDEN + j] = d_f * f * (one - f);
                d_z[2 * HIDDEN + j] = d_g * (one - g * g);
                d_z[3 * HIDDEN + j] = d_o * o * (one - o);
                d_cell[j] = dc * f;
            }

            // Parameter gradients: dW_in += dz (x) features, dW_h += dz (x) h_prev.
            for r in 0..GATES * HIDDEN {
                let dzr = d_z[r];
                if dzr != F::zero() {
                    F::axpy(
                        &mut grad[s_w_in.offset + r * FEATURES..s_w_in.offset + (r + 1) * FEATURES],
                        &cache.features,
                        dzr,
                    );
                    F::axpy(
                        &mut grad[s_w_h.offset + r * HIDDEN..s_w_h.offset + (r + 1) * HIDDEN],
                        &hidden_prev,
                        dzr,
                    );
                }
                grad[s_bias.offset + r] += dzr;
            }

            // Upstream gradients: d_features = W_in^T dz, d_hidden_prev = W_h^T dz.
            let d_feat = &mut d_features_per_step[t];
            for r in 0..GATES * HIDDEN {
                let dzr = d_z[r];
                if dzr != F::zero() {
                    F::axpy(d_feat, &w_in[r * FEATURES..(r + 1) * FEATURES], dzr);
                }
            }
            let mut d_hidden_prev = vec![F::zero(); HIDDEN];
            for r in 0..GATES * HIDDEN {
                let dzr = d_z[r];
                if dzr != F::zero() {
                    F::axpy(&mut d_hidden_prev, &w_h[r * HIDDEN..(r + 1) * HIDDEN], dzr);
                }
            }
            d_hidden = d_hidden_prev;
            d_cell_next = d_cell;
        }

        // Shared trunk: accumulate per-step gradients.
        let s_w1 = specs("trunk.conv1.weight")?;
        let s_b1 = specs("trunk.conv1.bias")?;
        let s_w2 = specs("trunk.conv2.weight")?;
        let s_b2 = specs("trunk.conv2.bias")?;
        for t in 0..3 {
            // Tensors are contiguous in push order.
            let (g1, rest) = grad.split_at_mut(s_b1.offset);
            let (g2, rest2) = rest.split_at_mut(s_b1.len);
            let (g3, rest3) = rest2.split_at_mut(s_w2.len);
            let (g4, _) = rest3.split_at_mut(s_b2.len);
            let mut trunk_grads = TrunkGrads {
                w1: &mut g1[s_w1.offset..s_w1.offset + s_w1.len],
                b1: g2,
                w2: g3,
                b2: g4,
            };
            trunk_backward(
                &self.trunk_view(),
                &frames[t],
                &caches[t].trunk,
                &d_features_per_step[t],
                &mut trunk_grads,
            );
        }
        Ok(loss)
    }

    /// Per-step trunk gradients (test hook for the weight-sharing identity).
    #[cfg(test)]
    fn trunk_step_gradients(&self, frames: &[Volume<F>; 3], label: F) -> Result<[Vec<F>; 3]> {
        let mut caches: Vec<StepCache<F>> = Vec::with_capacity(3);
        let z_out = self.run(frames, Some(&mut caches))?;
        let prob = sigmoid(z_out);
        let dz_out = prob - label;
        let w_in = self.layout.slice(&self.params, "lstm.weight_input")?.to_vec();
        let w_h = self.layout.slice(&self.params, "lstm.weight_hidden")?.to_vec();
        let head_w = self.layout.slice(&self.params, "head.weight")?.to_vec();

        let mut d_hidden: Vec<F> = head_w.iter().map(|&w| dz_out * w).collect();
        let mut d_cell_next = vec![F::zero(); HIDDEN];
        let mut d_features_per_step: [Vec<F>; 3] =
            [vec![F::zero(); FEATURES], vec![F::zero(); FEATURES], vec![F::zero(); FEATURES]];
        for t in (0..3).rev() {
            let cache = &caches[t];
            let cell_prev: Vec<F> =
                if t == 0 { vec![F::zero(); HIDDEN] } else { caches[t - 1].cell.clone() };
            let one = F::one();
            let mut d_z = vec![F::zero(); GATES * HIDDEN];
            let mut d_cell = vec![F::zero(); HIDDEN];
            for j in 0..HIDDEN {
                let (i, f, g, o) =
                    (cache.gate_i[j], cache.gate_f[j], cache.gate_g[j], cache.gate_o[j]);
                let tanh_c = cache.cell_tanh[j];
                let d_o = d_hidden[j] * tanh_c;
                let dc = d_cell_next[j] + d_hidden[j] * o * (one - tanh_c * tanh_c);
                d_z[j] = dc * g * i * (one - i);
                d_z[HIDDEN + j] = dc * cell_prev[j] * f * (one - f);
                d_z[2 * HIDDEN + j] = dc * i * (one - g * g);
                d_z[3 * HIDDEN + j] = d_o * o * (one - o);
                d_cell[j] = dc * f;
            }
            let d_feat = &mut d_features_per_step[t];
            for r in 0..GATES * HIDDEN {
                if d_z[r] != F::zero() {
                    F::axpy(d_feat, &w_in[r * FEATURES..(r + 1) * FEATURES], d_z[r]);
                }
            }
            let mut d_hidden_prev = vec![F::zero(); HIDDEN];
            for r in 0..GATES * HIDDEN {
                if d_z[r] != F::zero() {
                    F::axpy(&mut d_hidden_prev, &w_h[r * HIDDEN..(r + 1) * HIDDEN], d_z[r]);
                }
            }
            d_hidden = d_hidden_prev;
            d_cell_next = d_cell;
        }

        let trunk_len = self.layout.find("trunk.conv1.weight")?.len
            + self.layout.find("trunk.conv1.bias")?.len
            + self.layout.find("trunk.conv2.weight")?.len
            + self.layout.find("trunk.conv2.bias")?.len;
        let mut per_step: [Vec<F>; 3] =
            [vec![F::zero(); trunk_len], vec![F::zero(); trunk_len], vec![F::zero(); trunk_len]];
        let s_w1 = self.layout.find("trunk.conv1.weight")?.clone();
        let s_b1 = self.layout.find("trunk.conv1.bias")?.clone();
        let s_w2 = self.layout.find("trunk.conv2.weight")?.clone();
        let s_b2 = self.layout.find("trunk.conv2.bias")?.clone();
        for t in 0..3 {
            let buf = &mut per_step[t];
            let (g1, rest) = buf.split_at_mut(s_b1.offset);
            let (g2, rest2) = rest.split_at_mut(s_b1.len);
            let (g3, g4) = rest2.split_at_mut(s_w2.len);
            let mut trunk_grads = TrunkGrads {
                w1: &mut g1[s_w1.offset..s_w1.offset + s_w1.len],
                b1: g2,
                w2: g3,
                b2: &mut g4[..s_b2.len],
            };
            trunk_backward(
                &self.trunk_view(),
                &frames[t],
                &caches[t].trunk,
                &d_features_per_step[t],
                &mut trunk_grads,
            );
        }
        Ok(per_step)
    }
}
