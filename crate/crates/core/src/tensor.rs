//! Dense image tensors and channel-role bookkeeping.
//!
//! Pixels are floating point in [0,1]; 8-bit sources are divided by 255 at
//! load time. Data is stored channel-planar (`[c][y][x]`, row-major within a
//! plane), which keeps convolution and per-plane filters on contiguous rows.

use alloc::format;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};

/// Which flow image of a burst a channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowPair {
    /// Flow between frames 1 and 2.
    Frames12,
    /// Flow between frames 2 and 3.
    Frames23,
    /// Pixelwise average of the two flow images.
    Averaged,
}

/// Role tag carried by every channel of a [`ChannelStack`].
///
/// Roles gate augmentation (color jitter is applied only to `RgbImage`
/// channels) and are persisted in the tensor file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelRole {
    /// One channel of burst frame 1, 2 or 3.
    RgbImage(u8),
    /// One channel of a rendered flow image.
    FlowImage(FlowPair),
    /// The Gaussian-mixture foreground mask channel.
    Mog2Mask,
    /// Untagged data (raw flow fields, parameter tensors).
    Raw,
}

impl ChannelRole {
    /// On-disk role code (see the tensor file format in the `trapburst` crate).
    pub fn code(self) -> u8 {
        match self {
            ChannelRole::Raw => 0,
            ChannelRole::RgbImage(i) => i,
            ChannelRole::FlowImage(FlowPair::Frames12) => 4,
            ChannelRole::FlowImage(FlowPair::Frames23) => 5,
            ChannelRole::FlowImage(FlowPair::Averaged) => 6,
            ChannelRole::Mog2Mask => 7,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => ChannelRole::Raw,
            1..=3 => ChannelRole::RgbImage(code),
            4 => ChannelRole::FlowImage(FlowPair::Frames12),
            5 => ChannelRole::FlowImage(FlowPair::Frames23),
            6 => ChannelRole::FlowImage(FlowPair::Averaged),
            7 => ChannelRole::Mog2Mask,
            _ => return Err(CoreError::Contract(format!("unknown channel role code {code}"))),
        })
    }

    /// Color jitter applies only to image channels.
    pub fn is_rgb_image(self) -> bool {
        matches!(self, ChannelRole::RgbImage(_))
    }
}

/// A single image: 1 (grayscale) or 3 (RGB) planes of `[0,1]` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

fn validate_pixels(data: &[f32]) -> Result<()> {
    for &v in data {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(CoreError::Numeric(format!(
                "pixel value {v} outside [0,1]"
            )));
        }
    }
    Ok(())
}

impl Frame {
    /// Build a frame from planar data (`[c][y][x]` row-major).
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::Dimension(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(CoreError::Channel(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(CoreError::Dimension(format!(
                "frame data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        validate_pixels(&data)?;
        Ok(Frame { height, width, channels, data })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Frame::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel plane, row-major.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear resize with half-pixel-center alignment.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Frame> {
        if out_h == 0 || out_w == 0 {
            return Err(CoreError::Dimension(format!(
                "resize target must be positive, got {out_h}x{out_w}"
            )));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let mut out = vec![0.0f32; out_h * out_w * self.channels];
        for c in 0..self.channels {
            resize_plane(
                self.plane(c),
                self.height,
                self.width,
                out_h,
                out_w,
                &mut out[c * out_h * out_w..(c + 1) * out_h * out_w],
            );
        }
        Frame::new(out_h, out_w, self.channels, out)
    }

    /// ITU-R 601 luminance: 0.299 R + 0.587 G + 0.114 B.
    pub fn rgb_to_gray(&self) -> Result<Frame> {
        if self.channels != 3 {
            return Err(CoreError::Channel(format!(
                "rgb_to_gray requires 3 channels, got {}",
                self.channels
            )));
        }
        let n = self.height * self.width;
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let mut gray = Vec::with_capacity(n);
        for i in 0..n {
            gray.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
        }
        Frame::new(self.height, self.width, 1, gray)
    }
}

/// Bilinear resample of one plane; half-pixel centers, edge clamp.
pub(crate) fn resize_plane(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    out_h: usize,
    out_w: usize,
    dst: &mut [f32],
) {
    debug_assert_eq!(src.len(), src_h * src_w);
    debug_assert_eq!(dst.len(), out_h * out_w);
    let sy = src_h as f32 / out_h as f32;
    let sx = src_w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = (oy as f32 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let y0i = (y0 as isize).clamp(0, src_h as isize - 1) as usize;
        let y1i = (y0 as isize + 1).clamp(0, src_h as isize - 1) as usize;
        let row0 = &src[y0i * src_w..y0i * src_w + src_w];
        let row1 = &src[y1i * src_w..y1i * src_w + src_w];
        for ox in 0..out_w {
            let fx = (ox as f32 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let x0i = (x0 as isize).clamp(0, src_w as isize - 1) as usize;
            let x1i = (x0 as isize + 1).clamp(0, src_w as isize - 1) as usize;
            let top = row0[x0i] + tx * (row0[x1i] - row0[x0i]);
            let bot = row1[x0i] + tx * (row1[x1i] - row1[x0i]);
            dst[oy * out_w + ox] = top + ty * (bot - top);
        }
    }
}

/// A stack of channels with one role tag per channel, stored planar.
///
/// The model-input layouts produced by the assembler use channel counts from
/// the fixed variant table; intermediate stacks (e.g. the concatenation used
/// to augment a frame sequence consistently) may carry other counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    height: usize,
    width: usize,
    data: Vec<f32>,
    roles: Vec<ChannelRole>,
}

impl ChannelStack {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f32>,
        roles: Vec<ChannelRole>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::Dimension(format!(
                "stack dimensions must be positive, got {height}x{width}"
            )));
        }
        if roles.is_empty() {
            return Err(CoreError::Contract("stack must have at least one channel".into()));
        }
        if data.len() != height * width * roles.len() {
            return Err(CoreError::Dimension(format!(
                "stack data length {} != {height}x{width}x{}",
                data.len(),
                roles.len()
            )));
        }
        validate_pixels(&data)?;
        Ok(ChannelStack { height, width, data, roles })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn into_parts(self) -> (usize, usize, Vec<f32>, Vec<ChannelRole>) {
        (self.height, self.width, self.data, self.roles)
    }
}

/// Concatenates frames and masks into a role-tagged stack.
pub struct StackBuilder {
    height: usize,
    width: usize,
    data: Vec<f32>,
    roles: Vec<ChannelRole>,
}

impl StackBuilder {
    pub fn new(height: usize, width: usize) -> Self {
        StackBuilder { height, width, data: Vec::new(), roles: Vec::new() }
    }

    /// Append every channel of `frame` under the given role.
    pub fn push_frame(&mut self, frame: &Frame, role: ChannelRole) -> Result<&mut Self> {
        if frame.height() != self.height || frame.width() != self.width {
            return Err(CoreError::Dimension(format!(
                "frame is {}x{}, stack is {}x{}",
                frame.height(),
                frame.width(),
                self.height,
                self.width
            )));
        }
        self.data.extend_from_slice(frame.data());
        for _ in 0..frame.channels() {
            self.roles.push(role);
        }
        Ok(self)
    }

    pub fn finish(self) -> Result<ChannelStack> {
        ChannelStack::new(self.height, self.width, self.data, self.roles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant_image_stays_constant() {
        let f = Frame::constant(4, 4, 1, 0.5).unwrap();
        let r = f.resize_bilinear(2, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let data: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let f = Frame::new(2, 2, 3, data).unwrap();
        let r = f.resize_bilinear(2, 2).unwrap();
        assert_eq!(f, r);
    }

    // Expected row frozen from the half-pixel-center bilinear formula:
    // src_x(ox) = (ox + 0.5) * 2/4 - 0.5 -> [-0.25, 0.25, 0.75, 1.25], giving
    // clamped interpolations [0, 0.25, 0.75, 1] between columns [0, 1].
    #[test]
    fn resize_upscale_interpolates_monotonically() {
        let f = Frame::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = f.resize_bilinear(2, 4).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for row in 0..2 {
            for (ox, &e) in expected.iter().enumerate() {
                let got = r.data()[row * 4 + ox];
                assert!((got - e).abs() < 1e-6, "row {row} col {ox}: {got} vs {e}");
                if ox > 0 {
                    assert!(r.data()[row * 4 + ox] >= r.data()[row * 4 + ox - 1]);
                }
            }
        }
    }

    #[test]
    fn resize_rejects_zero_dimension() {
        let f = Frame::constant(2, 2, 1, 0.0).unwrap();
        assert!(matches!(f.resize_bilinear(0, 2), Err(CoreError::Dimension(_))));
    }

    #[test]
    fn gray_of_white_is_one_and_red_is_coefficient() {
        let white = Frame::constant(1, 1, 3, 1.0).unwrap();
        assert!((white.rgb_to_gray().unwrap().data()[0] - 1.0).abs() < 1e-6);
        let red = Frame::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.rgb_to_gray().unwrap().data()[0] - 0.299).abs() < 1e-6);
    }

    // 0.299*0.2 + 0.587*0.4 + 0.114*0.6 = 0.3628
    #[test]
    fn gray_weighted_sum_example() {
        let f = Frame::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        assert!((f.rgb_to_gray().unwrap().data()[0] - 0.3628).abs() < 1e-6);
    }

    #[test]
    fn gray_rejects_single_channel() {
        let f = Frame::constant(2, 2, 1, 0.5).unwrap();
        assert!(matches!(f.rgb_to_gray(), Err(CoreError::Channel(_))));
    }

    #[test]
    fn frame_rejects_out_of_range_values() {
        assert!(Frame::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn stack_builder_tracks_roles_per_channel() {
        let img = Frame::constant(2, 2, 3, 0.3).unwrap();
        let mask = Frame::constant(2, 2, 1, 1.0).unwrap();
        let mut b = StackBuilder::new(2, 2);
        b.push_frame(&img, ChannelRole::RgbImage(1)).unwrap();
        b.push_frame(&mask, ChannelRole::Mog2Mask).unwrap();
        let stack = b.finish().unwrap();
        assert_eq!(stack.channels(), 4);
        assert_eq!(stack.roles()[..3], [ChannelRole::RgbImage(1); 3]);
        assert_eq!(stack.roles()[3], ChannelRole::Mog2Mask);
    }

    #[test]
    fn role_codes_round_trip() {
        for role in [
            ChannelRole::Raw,
            ChannelRole::RgbImage(1),
            ChannelRole::RgbImage(2),
            ChannelRole::RgbImage(3),
            ChannelRole::FlowImage(FlowPair::Frames12),
            ChannelRole::FlowImage(FlowPair::Frames23),
            ChannelRole::FlowImage(FlowPair::Averaged),
            ChannelRole::Mog2Mask,
        ] {
            assert_eq!(ChannelRole::from_code(role.code()).unwrap(), role);
        }
        assert!(ChannelRole::from_code(9).is_err());
    }

    #[test]
    fn gray_output_stays_in_unit_range() {
        let data: Vec<f32> = (0..27).map(|i| (i as f32) / 26.0).collect();
        let f = Frame::new(3, 3, 3, data).unwrap();
        let g = f.rgb_to_gray().unwrap();
        assert!(g.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
