//! Trainable classifiers over channel stacks: a small CNN (conv-pool twice,
//! global average pool, sigmoid head) and an LSTM over per-frame CNN
//! features. Gradients are exact and hand-derived; a 64-bit mode exists for
//! finite-difference verification while training runs in f32.

mod cnn;
mod lstm;
mod ops;
mod train;

pub use cnn::{warm_start_input_layer, CnnModel};
pub use lstm::LstmModel;
pub use train::{
    checkpoint_batch_indices, predict, prepare_input, train, BatchExecutor, BatchItem,
    CheckpointRecord, EarlyStopper, EvalSample, SerialExecutor, TrainInput, TrainOutcome,
    TrainSample,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assemble::ModelVariant;
use crate::error::{CoreError, Result};
use crate::tensor::ChannelStack;

/// Floating-point element of the model path; f32 for training, f64 for
/// gradient checking.
pub trait Scalar:
    num_traits::Float
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// dst += w * src over contiguous rows (SIMD-dispatched for f32).
    fn axpy(dst: &mut [Self], src: &[Self], w: Self);
    fn dot(a: &[Self], b: &[Self]) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn axpy(dst: &mut [Self], src: &[Self], w: Self) {
        crate::simd::axpy(dst, src, w);
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        crate::simd::dot(a, b)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn axpy(dst: &mut [Self], src: &[Self], w: Self) {
        crate::simd::axpy_f64(dst, src, w);
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }
}

/// Planar image tensor consumed by the models.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Volume<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Volume { channels, height, width, data: alloc::vec![F::zero(); channels * height * width] }
    }

    pub fn plane(&self, c: usize) -> &[F] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn cast<G: Scalar>(&self) -> Volume<G> {
        Volume {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
        }
    }
}

impl Volume<f32> {
    pub fn from_stack(stack: &ChannelStack) -> Self {
        Volume {
            channels: stack.channels(),
            height: stack.height(),
            width: stack.width(),
            data: stack.data().to_vec(),
        }
    }
}

/// A model input: one stack, or a sequence of three per-frame stacks.
#[derive(Debug, Clone)]
pub enum ModelInput<F> {
    Stack(Volume<F>),
    Sequence(alloc::boxed::Box<[Volume<F>; 3]>),
}

impl<F: Scalar> ModelInput<F> {
    pub fn cast<G: Scalar>(&self) -> ModelInput<G> {
        match self {
            ModelInput::Stack(v) => ModelInput::Stack(v.cast()),
            ModelInput::Sequence(s) => ModelInput::Sequence(alloc::boxed::Box::new([
                s[0].cast(),
                s[1].cast(),
                s[2].cast(),
            ])),
        }
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Layout of a model's flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: &str, shape: &[usize]) -> usize {
        let len: usize = shape.iter().product();
        let offset = self.total;
        self.specs.push(ParamSpec {
            name: String::from(name),
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.total += len;
        offset
    }

    pub fn find(&self, name: &str) -> Result<&ParamSpec> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CoreError::Contract(format!("no parameter tensor named `{name}`")))
    }

    pub fn slice<'a, F>(&self, params: &'a [F], name: &str) -> Result<&'a [F]> {
        let spec = self.find(name)?;
        Ok(&params[spec.offset..spec.offset + spec.len])
    }

    pub fn slice_mut<'a, F>(&self, params: &'a mut [F], name: &str) -> Result<&'a mut [F]> {
        let spec = self.find(name)?;
        Ok(&mut params[spec.offset..spec.offset + spec.len])
    }
}

/// He-uniform draw: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
pub(crate) fn he_uniform<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, out: &mut [F]) {
    let limit = (6.0 / fan_in as f64).sqrt();
    for v in out.iter_mut() {
        *v = F::from_f64(rng.gen_range(-limit..limit));
    }
}

/// Xavier-uniform draw: U(-sqrt(6/(fan_in+fan_out)), ...).
pub(crate) fn xavier_uniform<F: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    out: &mut [F],
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out.iter_mut() {
        *v = F::from_f64(rng.gen_range(-limit..limit));
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

pub(crate) fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Stable binary cross entropy of a logit: max(z,0) - y*z + ln(1+e^-|z|).
pub(crate) fn bce_from_logit<F: Scalar>(z: F, y: F) -> F {
    z.max(F::zero()) - y * z + (F::one() + (-z.abs()).exp()).ln()
}

/// Adam optimizer over a flat parameter vector, with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    epsilon: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64, n_params: usize) -> Self {
        Adam {
            lr: F::from_f64(lr),
            beta1: F::from_f64(beta1),
            beta2: F::from_f64(beta2),
            epsilon: F::from_f64(epsilon),
            m: alloc::vec![F::zero(); n_params],
            v: alloc::vec![F::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Optimizer settings and training protocol parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Consecutive non-improving quarter-epoch checkpoints before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: 32,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(CoreError::Config("patience must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Either model family behind one dispatch point.
#[derive(Debug, Clone)]
pub enum AnyModel<F> {
    Cnn(CnnModel<F>),
    Lstm(LstmModel<F>),
}

impl<F: Scalar> AnyModel<F> {
    /// Fresh cold-start model for a variant.
    pub fn new_for_variant(variant: ModelVariant, rng: &mut ChaCha8Rng) -> Self {
        match variant {
            ModelVariant::Lstm => AnyModel::Lstm(LstmModel::new(rng)),
            v => AnyModel::Cnn(CnnModel::new(v.channels(), rng)),
        }
    }

    pub fn params(&self) -> &[F] {
        match self {
            AnyModel::Cnn(m) => m.params(),
            AnyModel::Lstm(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        match self {
            AnyModel::Cnn(m) => m.params_mut(),
            AnyModel::Lstm(m) => m.params_mut(),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        match self {
            AnyModel::Cnn(m) => m.layout(),
            AnyModel::Lstm(m) => m.layout(),
        }
    }

    pub fn forward(&self, input: &ModelInput<F>) -> Result<F> {
        match (self, input) {
            (AnyModel::Cnn(m), ModelInput::Stack(v)) => m.forward(v),
            (AnyModel::Lstm(m), ModelInput::Sequence(s)) => m.forward(s),
            (AnyModel::Cnn(_), ModelInput::Sequence(_)) => {
                Err(CoreError::Contract("CNN model got a frame sequence input".into()))
            }
            (AnyModel::Lstm(_), ModelInput::Stack(_)) => {
                Err(CoreError::Contract("LSTM model got a single-stack input".into()))
            }
        }
    }

    /// Accumulate one sample's BCE gradient into `grad`; returns the loss.
    pub fn grad_sample(&self, input: &ModelInput<F>, label: F, grad: &mut [F]) -> Result<F> {
        match (self, input) {
            (AnyModel::Cnn(m), ModelInput::Stack(v)) => m.grad_sample(v, label, grad),
            (AnyModel::Lstm(m), ModelInput::Sequence(s)) => m.grad_sample(s, label, grad),
            _ => Err(CoreError::Contract("model/input family mismatch".into())),
        }
    }

    pub fn cast<G: Scalar>(&self) -> AnyModel<G> {
        match self {
            AnyModel::Cnn(m) => AnyModel::Cnn(m.cast()),
            AnyModel::Lstm(m) => AnyModel::Lstm(m.cast()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stage};

    // One Adam step from zero moments: m_hat = g, v_hat = g^2, so the update
    // is -lr * g / (|g| + eps) regardless of |g|.
    #[test]
    fn adam_first_step_matches_scalar_oracle() {
        for &g in &[0.3f64, -2.0, 1e-3, -4e-5] {
            let mut adam = Adam::<f64>::new(1e-4, 0.9, 0.999, 1e-8, 1);
            let mut p = [1.0f64];
            adam.step(&mut p, &[g]);

            // Independent scalar reference of the same algebra.
            let (b1, b2, lr, eps) = (0.9, 0.999, 1e-4, 1e-8);
            let m = (1.0 - b1) * g;
            let v = (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1);
            let v_hat = v / (1.0 - b2);
            let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + eps);
            assert_eq!(p[0], expected);
            // And the step is close to -lr * sign(g).
            assert!(((1.0 - p[0]) - lr * g.signum()).abs() < lr * 1e-3);
        }
    }

    #[test]
    fn adam_two_steps_match_scalar_oracle() {
        let mut adam = Adam::<f64>::new(0.01, 0.9, 0.999, 1e-8, 1);
        let mut p = [0.5f64];
        let gs = [0.7, -0.2];
        adam.step(&mut p, &[gs[0]]);
        adam.step(&mut p, &[gs[1]]);

        let (b1, b2, lr, eps) = (0.9, 0.999, 0.01, 1e-8);
        let mut (q, m, v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, &g) in gs.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            q -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert_eq!(p[0], q);
    }

    #[test]
    fn param_layout_slices_by_name() {
        let mut layout = ParamLayout::default();
        layout.push("a", &[2, 3]);
        layout.push("b", &[4]);
        assert_eq!(layout.total, 10);
        let params: Vec<f32> = (0..10).map(|i| i as f32).collect();
        assert_eq!(layout.slice(&params, "b").unwrap(), &[6.0, 7.0, 8.0, 9.0]);
        assert!(layout.slice(&params, "c").is_err());
    }

    #[test]
    fn he_uniform_is_deterministic_and_bounded() {
        let mut a = [0.0f32; 64];
        let mut b = [0.0f32; 64];
        he_uniform(&mut rng_for(1, Stage::ModelInit, 0), 27, &mut a);
        he_uniform(&mut rng_for(1, Stage::ModelInit, 0), 27, &mut b);
        assert_eq!(a, b);
        let limit = (6.0f32 / 27.0).sqrt();
        assert!(a.iter().all(|v| v.abs() < limit));
    }
}
