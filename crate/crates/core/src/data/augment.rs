use rand::Rng;

use super::dataset::ImageSample;
use crate::tensor::Tensor;

/// One draw of the flip/rotate augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentOps {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl AugmentOps {
    /// Independent fair flips and a uniform multiple of 90°. Non-square
    /// images only rotate by 0° or 180° so the shape is preserved.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        let flip_horizontal = rng.random_bool(0.5);
        let flip_vertical = rng.random_bool(0.5);
        let quarter_turns = if square {
            rng.random_range(0..4u8)
        } else {
            2 * rng.random_range(0..2u8)
        };
        Self {
            flip_horizontal,
            flip_vertical,
            quarter_turns,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip_horizontal && !self.flip_vertical && self.quarter_turns % 4 == 0
    }
}

/// Apply `ops` to an `[H,W,C]` image. Output pixel `(y,x)` copies one input
/// pixel, so the multiset of values is preserved.
pub fn apply_ops(pixels: &Tensor<f32>, ops: AugmentOps) -> Tensor<f32> {
    let s = pixels.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    if ops.is_identity() {
        return pixels.clone();
    }
    let turns = ops.quarter_turns % 4;
    let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
    let src = pixels.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..oh {
        for x in 0..ow {
            // Undo the rotation, then the flips, to find the source pixel.
            let (mut sy, mut sx) = match turns {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            if ops.flip_vertical {
                sy = h - 1 - sy;
            }
            if ops.flip_horizontal {
                sx = w - 1 - sx;
            }
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Tensor::new([oh, ow, c], out).expect("permutation preserves element count")
}

/// Randomly flipped and rotated copy of `sample`; label and id unchanged.
pub fn augment<R: Rng + ?Sized>(sample: &ImageSample, rng: &mut R) -> ImageSample {
    let s = sample.pixels.shape();
    let ops = AugmentOps::sample(rng, s[0] == s[1]);
    ImageSample {
        id: sample.id.clone(),
        species: sample.species.clone(),
        pixels: apply_ops(&sample.pixels, ops),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn([h, w, 3], |i| i as f32)
    }

    fn sorted(t: &Tensor<f32>) -> Vec<f32> {
        let mut v = t.data().to_vec();
        v.sort_by(f32::total_cmp);
        v
    }

    #[test]
    fn identity_ops_leave_image_unchanged() {
        let img = ramp(4, 4);
        assert_eq!(apply_ops(&img, AugmentOps::default()), img);
    }

    #[test]
    fn horizontal_flip_is_involution() {
        let img = ramp(3, 5);
        let ops = AugmentOps {
            flip_horizontal: true,
            ..Default::default()
        };
        let once = apply_ops(&img, ops);
        assert_ne!(once, img);
        assert_eq!(apply_ops(&once, ops), img);
    }

    #[test]
    fn quarter_turn_rotates_counter_clockwise() {
        // [[0,1],[2,3]] rotated 90° ccw is [[1,3],[0,2]].
        let img = Tensor::new([2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let ops = AugmentOps {
            quarter_turns: 1,
            ..Default::default()
        };
        assert_eq!(apply_ops(&img, ops).data(), &[1.0, 3.0, 0.0, 2.0]);
        let full = (0..4).fold(img.clone(), |acc, _| apply_ops(&acc, ops));
        assert_eq!(full, img);
    }

    proptest! {
        #[test]
        fn augmentation_permutes_pixels(seed_value in any::<u64>(), h in 1usize..7, w in 1usize..7) {
            let sample = ImageSample {
                id: "x".into(),
                species: "s".into(),
                pixels: ramp(h, w),
            };
            let mut rng = seed::rng_for(seed_value, "aug-test");
            let out = augment(&sample, &mut rng);
            prop_assert_eq!(out.pixels.shape(), sample.pixels.shape());
            prop_assert_eq!(sorted(&out.pixels), sorted(&sample.pixels));
            prop_assert_eq!(out.species, sample.species);
        }
    }
}
