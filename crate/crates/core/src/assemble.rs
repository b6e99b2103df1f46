//! Model-specific input assembly: maps a burst (frames plus extracted
//! temporal features) onto the fixed channel layout of each model variant.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::flow::flow_image_roles;
use crate::mog2::ForegroundMask;
use crate::tensor::{ChannelRole, ChannelStack, Frame, StackBuilder};

/// The eight input layouts plus the recurrent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Baseline,
    Lstm,
    Mog2_4,
    Mog2_10,
    OptFlow6,
    OptFlow15,
    Hybrid13,
    OptFlowOnly6,
    OptFlowMog2Only7,
}

pub const ALL_VARIANTS: [ModelVariant; 9] = [
    ModelVariant::Baseline,
    ModelVariant::Lstm,
    ModelVariant::Mog2_4,
    ModelVariant::Mog2_10,
    ModelVariant::OptFlow6,
    ModelVariant::OptFlow15,
    ModelVariant::Hybrid13,
    ModelVariant::OptFlowOnly6,
    ModelVariant::OptFlowMog2Only7,
];

impl ModelVariant {
    /// Canonical spelling, as accepted on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Baseline => "Baseline",
            ModelVariant::Lstm => "LSTM",
            ModelVariant::Mog2_4 => "Mog2_4",
            ModelVariant::Mog2_10 => "Mog2_10",
            ModelVariant::OptFlow6 => "OptFlow_6",
            ModelVariant::OptFlow15 => "OptFlow_15",
            ModelVariant::Hybrid13 => "Hybrid_13",
            ModelVariant::OptFlowOnly6 => "OptFlowOnly_6",
            ModelVariant::OptFlowMog2Only7 => "OptFlowMog2Only_7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant `{s}`")))
    }

    /// Input channel count (per time step for the recurrent model).
    pub fn channels(self) -> usize {
        match self {
            ModelVariant::Baseline | ModelVariant::Lstm => 3,
            ModelVariant::Mog2_4 => 4,
            ModelVariant::Mog2_10 => 10,
            ModelVariant::OptFlow6 | ModelVariant::OptFlowOnly6 => 6,
            ModelVariant::OptFlow15 => 15,
            ModelVariant::Hybrid13 => 13,
            ModelVariant::OptFlowMog2Only7 => 7,
        }
    }

    /// True for the channel-concatenation layouts that take extracted
    /// temporal features (everything but Baseline and LSTM).
    pub fn needs_features(self) -> bool {
        !matches!(self, ModelVariant::Baseline | ModelVariant::Lstm)
    }

    /// Warm-startable variants: wider-than-RGB input layers initialized from
    /// a trained baseline.
    pub fn warm_starts_from_baseline(self) -> bool {
        self.needs_features()
    }
}

/// Extracted temporal features of one burst.
#[derive(Debug, Clone)]
pub struct BurstFeatures {
    pub flow12: Frame,
    pub flow23: Frame,
    pub flow_avg: Frame,
    pub mog2: ForegroundMask,
}

/// Whether build_stack assembles training inputs or inference inputs; they
/// differ only for Baseline (train on all frames, infer on frame 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    Train,
    Eval,
}

/// Assembled input(s) for one burst.
#[derive(Debug, Clone)]
pub enum AssembledBurst {
    /// One stack, one sample.
    Single(ChannelStack),
    /// Independent samples (Baseline training: each frame stands alone).
    IndependentFrames(Vec<ChannelStack>),
    /// One sample of three time steps (recurrent model).
    Sequence(Box<[ChannelStack; 3]>),
}

fn require_features<'a>(
    features: Option<&'a BurstFeatures>,
    variant: ModelVariant,
) -> Result<&'a BurstFeatures> {
    features.ok_or_else(|| {
        CoreError::Contract(format!(
            "variant {} requires precomputed features (flow images, foreground mask)",
            variant.name()
        ))
    })
}

/// Build the input stack(s) for `variant` from a burst's three frames and
/// its extracted features.
pub fn build_stack(
    frames: &[Frame; 3],
    features: Option<&BurstFeatures>,
    variant: ModelVariant,
    mode: AssemblyMode,
) -> Result<AssembledBurst> {
    let (h, w) = (frames[0].height(), frames[0].width());
    for (i, f) in frames.iter().enumerate() {
        if f.height() != h || f.width() != w {
            return Err(CoreError::Dimension(format!("frame {} size mismatch", i + 1)));
        }
        if f.channels() != 3 {
            return Err(CoreError::Channel(format!(
                "burst frames must be RGB, frame {} has {} channels",
                i + 1,
                f.channels()
            )));
        }
    }
    let frame_stack = |idx: usize| -> Result<ChannelStack> {
        let mut b = StackBuilder::new(h, w);
        b.push_frame(&frames[idx], ChannelRole::RgbImage(idx as u8 + 1))?;
        b.finish()
    };
    let [role12, role23, role_avg] = flow_image_roles();

    match variant {
        ModelVariant::Baseline => match mode {
            AssemblyMode::Train => Ok(AssembledBurst::IndependentFrames(
                (0..3).map(frame_stack).collect::<Result<Vec<_>>>()?,
            )),
            AssemblyMode::Eval => Ok(AssembledBurst::Single(frame_stack(0)?)),
        },
        ModelVariant::Lstm => {
            let stacks = [frame_stack(0)?, frame_stack(1)?, frame_stack(2)?];
            Ok(AssembledBurst::Sequence(Box::new(stacks)))
        }
        ModelVariant::Mog2_4 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            b.push_frame(&frames[0], ChannelRole::RgbImage(1))?;
            b.push_frame(&f.mog2.to_frame(), ChannelRole::Mog2Mask)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::Mog2_10 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            for (i, frame) in frames.iter().enumerate() {
                b.push_frame(frame, ChannelRole::RgbImage(i as u8 + 1))?;
            }
            b.push_frame(&f.mog2.to_frame(), ChannelRole::Mog2Mask)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::OptFlow6 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            b.push_frame(&frames[0], ChannelRole::RgbImage(1))?;
            b.push_frame(&f.flow_avg, role_avg)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::OptFlow15 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            for (i, frame) in frames.iter().enumerate() {
                b.push_frame(frame, ChannelRole::RgbImage(i as u8 + 1))?;
            }
            b.push_frame(&f.flow12, role12)?;
            b.push_frame(&f.flow23, role23)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::Hybrid13 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            for (i, frame) in frames.iter().enumerate() {
                b.push_frame(frame, ChannelRole::RgbImage(i as u8 + 1))?;
            }
            b.push_frame(&f.flow_avg, role_avg)?;
            b.push_frame(&f.mog2.to_frame(), ChannelRole::Mog2Mask)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::OptFlowOnly6 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            b.push_frame(&f.flow12, role12)?;
            b.push_frame(&f.flow23, role23)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
        ModelVariant::OptFlowMog2Only7 => {
            let f = require_features(features, variant)?;
            let mut b = StackBuilder::new(h, w);
            b.push_frame(&f.flow12, role12)?;
            b.push_frame(&f.flow23, role23)?;
            b.push_frame(&f.mog2.to_frame(), ChannelRole::Mog2Mask)?;
            Ok(AssembledBurst::Single(b.finish()?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FlowPair;
    use alloc::vec;
    use alloc::vec::Vec;

    fn frames() -> [Frame; 3] {
        [
            Frame::constant(4, 4, 3, 0.1).unwrap(),
            Frame::constant(4, 4, 3, 0.2).unwrap(),
            Frame::constant(4, 4, 3, 0.3).unwrap(),
        ]
    }

    fn features() -> BurstFeatures {
        BurstFeatures {
            flow12: Frame::constant(4, 4, 3, 0.4).unwrap(),
            flow23: Frame::constant(4, 4, 3, 0.5).unwrap(),
            flow_avg: Frame::constant(4, 4, 3, 0.45).unwrap(),
            mog2: ForegroundMask::new(4, 4, vec![1.0; 16]).unwrap(),
        }
    }

    fn single(b: AssembledBurst) -> ChannelStack {
        match b {
            AssembledBurst::Single(s) => s,
            other => panic!("expected single stack, got {other:?}"),
        }
    }

    #[test]
    fn channel_counts_match_variant_table() {
        let fr = frames();
        let fe = features();
        let expected = [
            (ModelVariant::Mog2_4, 4),
            (ModelVariant::Mog2_10, 10),
            (ModelVariant::OptFlow6, 6),
            (ModelVariant::OptFlow15, 15),
            (ModelVariant::Hybrid13, 13),
            (ModelVariant::OptFlowOnly6, 6),
            (ModelVariant::OptFlowMog2Only7, 7),
        ];
        for (variant, k) in expected {
            let stack = single(build_stack(&fr, Some(&fe), variant, AssemblyMode::Eval).unwrap());
            assert_eq!(stack.channels(), k, "{}", variant.name());
            assert_eq!(variant.channels(), k);
        }
    }

    #[test]
    fn hybrid_roles_in_fixed_order() {
        let stack = single(
            build_stack(&frames(), Some(&features()), ModelVariant::Hybrid13, AssemblyMode::Eval)
                .unwrap(),
        );
        let mut expected = Vec::new();
        for i in 1..=3u8 {
            expected.extend([ChannelRole::RgbImage(i); 3]);
        }
        expected.extend([ChannelRole::FlowImage(FlowPair::Averaged); 3]);
        expected.push(ChannelRole::Mog2Mask);
        assert_eq!(stack.roles(), expected.as_slice());
    }

    #[test]
    fn flow_mog2_only_has_no_image_roles() {
        let stack = single(
            build_stack(
                &frames(),
                Some(&features()),
                ModelVariant::OptFlowMog2Only7,
                AssemblyMode::Eval,
            )
            .unwrap(),
        );
        assert_eq!(stack.channels(), 7);
        assert!(stack.roles().iter().all(|r| !r.is_rgb_image()));
    }

    #[test]
    fn baseline_train_yields_three_independent_frames() {
        match build_stack(&frames(), None, ModelVariant::Baseline, AssemblyMode::Train).unwrap() {
            AssembledBurst::IndependentFrames(v) => {
                assert_eq!(v.len(), 3);
                for (i, s) in v.iter().enumerate() {
                    assert_eq!(s.channels(), 3);
                    assert_eq!(s.roles()[0], ChannelRole::RgbImage(i as u8 + 1));
                }
            }
            other => panic!("unexpected assembly {other:?}"),
        }
    }

    #[test]
    fn baseline_eval_uses_frame_one_only() {
        let stack =
            single(build_stack(&frames(), None, ModelVariant::Baseline, AssemblyMode::Eval).unwrap());
        assert_eq!(stack.roles()[0], ChannelRole::RgbImage(1));
        assert!(stack.data().iter().all(|&v| (v - 0.1).abs() < 1e-6));
    }

    #[test]
    fn lstm_yields_ordered_sequence() {
        match build_stack(&frames(), None, ModelVariant::Lstm, AssemblyMode::Train).unwrap() {
            AssembledBurst::Sequence(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    assert_eq!(s.channels(), 3);
                    assert!(s.data().iter().all(|&v| (v - 0.1 * (i as f32 + 1.0)).abs() < 1e-6));
                }
            }
            other => panic!("unexpected assembly {other:?}"),
        }
    }

    #[test]
    fn missing_features_name_the_variant() {
        match build_stack(&frames(), None, ModelVariant::Hybrid13, AssemblyMode::Eval) {
            Err(CoreError::Contract(m)) => assert!(m.contains("Hybrid_13"), "{m}"),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ALL_VARIANTS {
            assert_eq!(ModelVariant::parse(v.name()).unwrap(), v);
        }
        assert!(ModelVariant::parse("resnet").is_err());
    }
}
