//! Colour and flip augmentation.
//!
//! The stages run in a fixed order: brightness, hue, contrast, saturation,
//! flip. Each colour stage draws one activation value `u` in `[0, 1)` and,
//! when `u < prob`, one more draw for its parameter. The flip stage always
//! draws two axis decisions. The drawn values are recorded in an
//! [`AugmentTrace`] so a run can be audited or replayed.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::BBox;

/// RGB image with intensities normalized to `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Image filled with one colour.
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, (width * height) as usize)
            .flatten()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image from interleaved RGB values, clamping into `[0, 1]`.
    ///
    /// Returns `None` when `data.len() != width * height * 3`.
    pub fn from_raw(width: u32, height: u32, mut data: Vec<f32>) -> Option<Self> {
        if data.len() != (width as usize) * (height as usize) * 3 {
            return None;
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Converts back to 8 bits, rounding half away from zero.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer length matches dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn map_channels(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    fn map_pixels(&self, f: impl Fn([f32; 3]) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(3) {
            let out = f([px[0], px[1], px[2]]);
            data.extend(out.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Mirrors the pixel grid; `flip_h` reverses columns, `flip_v` rows.
    pub fn flipped(&self, flip_h: bool, flip_v: bool) -> Self {
        if !flip_h && !flip_v {
            return self.clone();
        }
        let (w, h) = (self.width as usize, self.height as usize);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..h {
            let sy = if flip_v { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if flip_h { w - 1 - x } else { x };
                let dst = (y * w + x) * 3;
                let src = (sy * w + sx) * 3;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// RGB in `[0, 1]` to HSV with hue in `[0, 1)`. Achromatic pixels get hue 0.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [wrap_unit(sector / 6.0), s, v]
}

/// Inverse of [`rgb_to_hsv`].
pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    if s <= 0.0 {
        return [v, v, v];
    }
    let h6 = wrap_unit(h) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Reduces `h` into `[0, 1)`.
fn wrap_unit(h: f32) -> f32 {
    let w = h.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Adds `delta` to every channel.
pub fn adjust_brightness(img: &ImageBuffer, delta: f32) -> ImageBuffer {
    if delta == 0.0 {
        return img.clone();
    }
    img.map_channels(|v| v + delta)
}

/// Rotates hue by `delta` (in turns), wrapping modulo 1.
pub fn adjust_hue(img: &ImageBuffer, delta: f32) -> ImageBuffer {
    if delta == 0.0 {
        return img.clone();
    }
    img.map_pixels(|px| {
        let [h, s, v] = rgb_to_hsv(px);
        if s <= 0.0 {
            return px;
        }
        hsv_to_rgb([wrap_unit(h + delta), s, v])
    })
}

/// Scales distance from mid-gray: `(v - 0.5) * (1 + factor) + 0.5`.
pub fn adjust_contrast(img: &ImageBuffer, factor: f32) -> ImageBuffer {
    if factor == 0.0 {
        return img.clone();
    }
    let gain = 1.0 + factor;
    img.map_channels(|v| (v - 0.5) * gain + 0.5)
}

/// Multiplies HSV saturation by `1 + factor`.
pub fn adjust_saturation(img: &ImageBuffer, factor: f32) -> ImageBuffer {
    if factor == 0.0 {
        return img.clone();
    }
    let gain = 1.0 + factor;
    img.map_pixels(|px| {
        let [h, s, v] = rgb_to_hsv(px);
        if s <= 0.0 {
            return px;
        }
        hsv_to_rgb([h, (s * gain).clamp(0.0, 1.0), v])
    })
}

/// Activation probability and parameter range of one colour stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorStage {
    pub prob: f64,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipStage {
    pub per_axis_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub brightness: ColorStage,
    pub hue: ColorStage,
    pub contrast: ColorStage,
    pub saturation: ColorStage,
    pub flip: FlipStage,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            brightness: ColorStage {
                prob: 0.2,
                range: [-0.2, 0.2],
            },
            hue: ColorStage {
                prob: 0.2,
                range: [-0.1, 0.1],
            },
            contrast: ColorStage {
                prob: 0.2,
                range: [-0.2, 0.2],
            },
            saturation: ColorStage {
                prob: 0.2,
                range: [-0.2, 0.2],
            },
            flip: FlipStage { per_axis_prob: 0.5 },
        }
    }
}

impl AugmentationPolicy {
    /// Policy that never changes anything.
    pub fn disabled() -> Self {
        let off = ColorStage {
            prob: 0.0,
            range: [0.0, 0.0],
        };
        Self {
            brightness: off,
            hue: off,
            contrast: off,
            saturation: off,
            flip: FlipStage { per_axis_prob: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        let stages = [
            ("brightness", &self.brightness, [-1.0, 1.0]),
            ("hue", &self.hue, [-0.5, 0.5]),
            // factor must stay inside (-1, 1)
            ("contrast", &self.contrast, [-0.999_999, 0.999_999]),
            ("saturation", &self.saturation, [-0.999_999, 0.999_999]),
        ];
        for (name, stage, [min, max]) in stages {
            if !prob_ok(stage.prob) {
                return Err(ConfigError::invalid(
                    format!("augmentation.{name}.prob"),
                    format!("{} is outside [0, 1]", stage.prob),
                ));
            }
            let [lo, hi] = stage.range;
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(ConfigError::invalid(
                    format!("augmentation.{name}.range"),
                    format!("[{lo}, {hi}] is not ordered"),
                ));
            }
            if lo < min || hi > max {
                return Err(ConfigError::invalid(
                    format!("augmentation.{name}.range"),
                    format!("[{lo}, {hi}] exceeds the admissible [{min}, {max}]"),
                ));
            }
        }
        if !prob_ok(self.flip.per_axis_prob) {
            return Err(ConfigError::invalid(
                "augmentation.flip.per_axis_prob",
                format!("{} is outside [0, 1]", self.flip.per_axis_prob),
            ));
        }
        Ok(())
    }
}

/// The draws of one `augment` call. `None` means the stage stayed inactive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentTrace {
    pub brightness: Option<f64>,
    pub hue: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentTrace {
    /// True when applying this trace changes neither pixels nor boxes.
    pub fn is_identity(&self) -> bool {
        self.brightness.is_none()
            && self.hue.is_none()
            && self.contrast.is_none()
            && self.saturation.is_none()
            && !self.flip_h
            && !self.flip_v
    }
}

fn draw_stage<R: Rng + ?Sized>(stage: &ColorStage, rng: &mut R) -> Option<f64> {
    let u: f64 = rng.random();
    if u < stage.prob {
        let [lo, hi] = stage.range;
        Some(lo + (hi - lo) * rng.random::<f64>())
    } else {
        None
    }
}

fn draw_flips<R: Rng + ?Sized>(per_axis_prob: f64, rng: &mut R) -> (bool, bool) {
    let h = rng.random::<f64>() < per_axis_prob;
    let v = rng.random::<f64>() < per_axis_prob;
    (h, v)
}

/// Draws every stage decision without touching any image.
pub fn draw_trace<R: Rng + ?Sized>(policy: &AugmentationPolicy, rng: &mut R) -> AugmentTrace {
    let brightness = draw_stage(&policy.brightness, rng);
    let hue = draw_stage(&policy.hue, rng);
    let contrast = draw_stage(&policy.contrast, rng);
    let saturation = draw_stage(&policy.saturation, rng);
    let (flip_h, flip_v) = draw_flips(policy.flip.per_axis_prob, rng);
    AugmentTrace {
        brightness,
        hue,
        contrast,
        saturation,
        flip_h,
        flip_v,
    }
}

/// Flips box geometry inside a `frame_w x frame_h` frame.
pub fn flip_boxes(
    boxes: &[BBox],
    frame_w: f64,
    frame_h: f64,
    flip_h: bool,
    flip_v: bool,
) -> Result<Vec<BBox>, crate::error::GeometryError> {
    boxes
        .iter()
        .map(|b| b.flip(frame_w, frame_h, flip_h, flip_v))
        .collect()
}

/// Replays a trace on an image and its boxes.
pub fn apply_trace(
    img: &ImageBuffer,
    boxes: &[BBox],
    trace: &AugmentTrace,
) -> Result<(ImageBuffer, Vec<BBox>), crate::error::GeometryError> {
    let mut out = img.clone();
    if let Some(d) = trace.brightness {
        out = adjust_brightness(&out, d as f32);
    }
    if let Some(d) = trace.hue {
        out = adjust_hue(&out, d as f32);
    }
    if let Some(f) = trace.contrast {
        out = adjust_contrast(&out, f as f32);
    }
    if let Some(f) = trace.saturation {
        out = adjust_saturation(&out, f as f32);
    }
    let boxes = flip_boxes(
        boxes,
        img.width as f64,
        img.height as f64,
        trace.flip_h,
        trace.flip_v,
    )?;
    Ok((out.flipped(trace.flip_h, trace.flip_v), boxes))
}

/// Two fair axis draws, then mirrors the image and boxes.
pub fn random_flip<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BBox],
    rng: &mut R,
) -> Result<(ImageBuffer, Vec<BBox>), crate::error::GeometryError> {
    let (h, v) = draw_flips(0.5, rng);
    let out = flip_boxes(boxes, img.width as f64, img.height as f64, h, v)?;
    Ok((img.flipped(h, v), out))
}

/// Full augmentation pass. Boxes change only when a flip fires.
pub fn augment<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BBox],
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<(ImageBuffer, Vec<BBox>, AugmentTrace), crate::error::GeometryError> {
    let trace = draw_trace(policy, rng);
    let (out, boxes) = apply_trace(img, boxes, &trace)?;
    Ok((out, boxes, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn single(rgb: [f32; 3]) -> ImageBuffer {
        ImageBuffer::filled(1, 1, rgb)
    }

    fn hue_of(img: &ImageBuffer) -> f32 {
        rgb_to_hsv(img.pixel(0, 0))[0]
    }

    #[test]
    fn brightness_examples() {
        let img = single([0.5, 0.95, 0.0]);
        assert_eq!(adjust_brightness(&img, 0.0), img);
        let out = adjust_brightness(&img, 0.2).pixel(0, 0);
        assert_abs_diff_eq!(out[0], 0.7, epsilon = 1e-6);
        assert_eq!(out[1], 1.0);
        assert_abs_diff_eq!(out[2], 0.2, epsilon = 1e-6);
        assert_eq!(adjust_brightness(&img, -0.2).pixel(0, 0)[2], 0.0);
    }

    #[test]
    fn hue_examples() {
        let red = single([1.0, 0.0, 0.0]);
        let green = adjust_hue(&red, 1.0 / 3.0).pixel(0, 0);
        for (a, b) in green.iter().zip([0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        let gray = single([0.3, 0.3, 0.3]);
        assert_eq!(adjust_hue(&gray, 0.27), gray);

        let src = single(hsv_to_rgb([0.95, 0.8, 0.7]));
        assert_abs_diff_eq!(hue_of(&adjust_hue(&src, 0.1)), 0.05, epsilon = 1e-5);
        let back = adjust_hue(&src, -0.95);
        assert_abs_diff_eq!(hue_of(&back), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn contrast_examples() {
        let img = single([0.5, 0.7, 0.1]);
        assert_eq!(adjust_contrast(&img, 0.0), img);
        let out = adjust_contrast(&img, 0.2).pixel(0, 0);
        assert_eq!(out[0], 0.5);
        assert_abs_diff_eq!(out[1], 0.74, epsilon = 1e-6);
        assert_abs_diff_eq!(out[2], 0.02, epsilon = 1e-6);
        assert_eq!(
            adjust_contrast(&single([0.5; 3]), -0.2).pixel(0, 0),
            [0.5; 3]
        );
    }

    #[test]
    fn saturation_examples() {
        let px = hsv_to_rgb([0.6, 0.5, 0.8]);
        let img = single(px);
        assert_eq!(adjust_saturation(&img, 0.0), img);
        let [h, s, v] = rgb_to_hsv(adjust_saturation(&img, 0.2).pixel(0, 0));
        assert_abs_diff_eq!(s, 0.6, epsilon = 1e-5);
        assert_abs_diff_eq!(h, 0.6, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 0.8, epsilon = 1e-6);
        let gray = single([0.4; 3]);
        assert_eq!(adjust_saturation(&gray, 0.15), gray);
    }

    #[test]
    fn flip_moves_pixels_and_boxes() {
        let mut img = ImageBuffer::filled(1024, 1024, [0.0; 3]);
        img.data[0] = 1.0;
        let b = BBox::new(0.0, 0.0, 50.0, 50.0).unwrap();
        let trace = AugmentTrace {
            flip_h: true,
            ..Default::default()
        };
        let (out, boxes) = apply_trace(&img, &[b], &trace).unwrap();
        assert_eq!(out.pixel(1023, 0), [1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(boxes[0], BBox::new(974.0, 0.0, 50.0, 50.0).unwrap());

        let (same, same_boxes) = apply_trace(&img, &[b], &AugmentTrace::default()).unwrap();
        assert_eq!(same, img);
        assert_eq!(same_boxes, vec![b]);
    }

    #[test]
    fn vertical_flip_of_pixels() {
        let img = ImageBuffer::from_raw(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let f = img.flipped(false, true);
        assert_eq!(f.pixel(0, 0), [0.4, 0.5, 0.6]);
        assert_eq!(f.flipped(false, true), img);
    }

    #[test]
    fn draw_counts_per_stage() {
        // Activation consumes one draw, parameter one more, flips two.
        let policy = AugmentationPolicy {
            brightness: ColorStage {
                prob: 1.0,
                range: [0.1, 0.1],
            },
            ..AugmentationPolicy::disabled()
        };
        let mut a = rng::stream(5);
        let _ = draw_trace(&policy, &mut a);
        let mut b = rng::stream(5);
        for _ in 0..(2 + 1 + 1 + 1 + 2) {
            let _: f64 = b.random();
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn augment_is_deterministic_and_keeps_box_count() {
        let img = ImageBuffer::from_raw(8, 8, (0..192).map(|i| (i % 17) as f32 / 16.0).collect())
            .unwrap();
        let boxes = vec![BBox::new(1.0, 2.0, 3.0, 4.0).unwrap(); 3];
        let policy = AugmentationPolicy::default();
        for seed in 0..50 {
            let (a, ab, at) = augment(&img, &boxes, &policy, &mut rng::stream(seed)).unwrap();
            let (b, bb, bt) = augment(&img, &boxes, &policy, &mut rng::stream(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!(ab, bb);
            assert_eq!(at, bt);
            assert_eq!(ab.len(), 3);
            if !at.flip_h && !at.flip_v {
                assert_eq!(ab, boxes);
            }
            if at.is_identity() {
                assert_eq!(a, img);
            }
        }
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::default().validate().is_ok());
        let mut p = AugmentationPolicy::default();
        p.hue.prob = 1.5;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.contrast.range = [0.2, -0.2];
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.saturation.range = [-1.0, 0.0];
        assert!(p.validate().is_err());
    }

    #[test]
    fn rgb8_conversion_rounds_to_nearest() {
        let img = RgbImage::from_raw(1, 1, vec![0, 128, 255]).unwrap();
        let buf = ImageBuffer::from_rgb8(&img);
        assert_eq!(buf.to_rgb8(), img);
        let half = ImageBuffer::from_raw(1, 1, vec![0.5 / 255.0, 1.0, 0.0]).unwrap();
        assert_eq!(half.to_rgb8().as_raw(), &vec![1, 255, 0]);
    }

    fn arb_rgb() -> impl Strategy<Value = [f32; 3]> {
        (0.0..=1.0f32, 0.0..=1.0f32, 0.0..=1.0f32).prop_map(|(r, g, b)| [r, g, b])
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_range(
            px in arb_rgb(), d in -1.0..=1.0f32, h in -0.5..=0.5f32, f in -0.99..0.99f32,
        ) {
            let img = single(px);
            for out in [
                adjust_brightness(&img, d),
                adjust_hue(&img, h),
                adjust_contrast(&img, f),
                adjust_saturation(&img, f),
            ] {
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn hue_shifts_compose(px in arb_rgb(), a in -0.5..0.5f32, b in -0.5..0.5f32) {
            let img = single(px);
            let two = adjust_hue(&adjust_hue(&img, a), b).pixel(0, 0);
            let one = adjust_hue(&img, a + b).pixel(0, 0);
            for (x, y) in two.iter().zip(one.iter()) {
                prop_assert!((x - y).abs() <= 2.0 / 255.0);
            }
        }

        #[test]
        fn hue_stays_in_turn(h in -3.0..3.0f32) {
            let w = wrap_unit(h);
            prop_assert!((0.0..1.0).contains(&w));
        }
    }
}
