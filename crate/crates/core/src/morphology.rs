//! Binary morphology and the blending-gap masks built from it.
//!
//! Both dilation and erosion treat everything outside the image as
//! background. For erosion that means a foreground pixel whose structuring
//! element hangs off the edge is always eroded, which keeps gap masks from
//! silently extending past image bounds.

use serde::{Deserialize, Serialize};

use crate::imaging::BinaryMask;

/// Structuring element footprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeShape {
    /// Chebyshev ball: all offsets with `max(|dx|, |dy|) <= radius`.
    Square,
    /// Euclidean ball: all offsets with `dx^2 + dy^2 <= radius^2`.
    Disc,
}

/// Structuring element. Radius is in pixels and must be at least 1, so the
/// smallest element is 3x3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructElem {
    pub shape: SeShape,
    pub radius: u32,
}

impl StructElem {
    pub fn new(shape: SeShape, radius: u32) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructElem { shape, radius }
    }

    pub fn square(radius: u32) -> Self {
        StructElem::new(SeShape::Square, radius)
    }

    pub fn disc(radius: u32) -> Self {
        StructElem::new(SeShape::Disc, radius)
    }

    /// Member offsets, including the origin.
    pub fn offsets(&self) -> Vec<(i32, i32)> {
        let r = self.radius as i32;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.contains(dx, dy) {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    #[inline]
    fn contains(&self, dx: i32, dy: i32) -> bool {
        let r = self.radius as i64;
        match self.shape {
            SeShape::Square => dx.abs() as i64 <= r && dy.abs() as i64 <= r,
            SeShape::Disc => (dx as i64).pow(2) + (dy as i64).pow(2) <= r * r,
        }
    }
}

impl Default for StructElem {
    fn default() -> Self {
        StructElem::square(3)
    }
}

/// Which blending-gap construction to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Band straddling the paste contour: `dilate(m) \ erode(m)`.
    Instance,
    /// Band strictly outside the object: `dilate(m) \ m`. Object pixels are
    /// left untouched so their labels stay valid.
    Foreground,
}

/// Morphological dilation. Pixels outside the image count as background.
pub fn dilate(mask: &BinaryMask, se: StructElem) -> BinaryMask {
    match se.shape {
        SeShape::Square => square_pass(mask, se.radius, false),
        SeShape::Disc => disc_pass(mask, se, false),
    }
}

/// Morphological erosion. Pixels outside the image count as background, so
/// foreground touching the border within `radius` is always removed.
pub fn erode(mask: &BinaryMask, se: StructElem) -> BinaryMask {
    match se.shape {
        SeShape::Square => square_pass(mask, se.radius, true),
        SeShape::Disc => disc_pass(mask, se, true),
    }
}

/// Computes the blending-gap band for a pasted object mask.
pub fn gap_mask(mask: &BinaryMask, mode: GapMode, se_out: StructElem, se_in: StructElem) -> BinaryMask {
    let mut gap = dilate(mask, se_out);
    match mode {
        GapMode::Instance => gap.subtract(&erode(mask, se_in)),
        GapMode::Foreground => gap.subtract(mask),
    }
    gap
}

/// Separable square filter: horizontal then vertical sliding window, OR for
/// dilation and AND for erosion. Out-of-image samples are background, which
/// for erosion makes any window that leaves the image fail.
fn square_pass(mask: &BinaryMask, radius: u32, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as i64;
    let mut mid = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = erode;
            for dx in -r..=r {
                let s = mask.get_clipped(x as i64 + dx, y as i64);
                if erode {
                    acc &= s;
                    if !acc {
                        break;
                    }
                } else {
                    acc |= s;
                    if acc {
                        break;
                    }
                }
            }
            mid.set(x, y, acc);
        }
    }
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = erode;
            for dy in -r..=r {
                let s = mid.get_clipped(x as i64, y as i64 + dy);
                if erode {
                    acc &= s;
                    if !acc {
                        break;
                    }
                } else {
                    acc |= s;
                    if acc {
                        break;
                    }
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn disc_pass(mask: &BinaryMask, se: StructElem, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let offsets = se.offsets();
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = erode;
            for &(dx, dy) in &offsets {
                let s = mask.get_clipped(x as i64 + dx as i64, y as i64 + dy as i64);
                if erode {
                    acc &= s;
                    if !acc {
                        break;
                    }
                } else {
                    acc |= s;
                    if acc {
                        break;
                    }
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Definition-level oracle used to cross-check the fast paths.
    fn reference_op(mask: &BinaryMask, se: StructElem, erode: bool) -> BinaryMask {
        let offsets = se.offsets();
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            if erode {
                offsets
                    .iter()
                    .all(|&(dx, dy)| mask.get_clipped(x as i64 + dx as i64, y as i64 + dy as i64))
            } else {
                offsets
                    .iter()
                    .any(|&(dx, dy)| mask.get_clipped(x as i64 + dx as i64, y as i64 + dy as i64))
            }
        })
    }

    fn random_mask(rng: &mut impl Rng, w: u32, h: u32) -> BinaryMask {
        let density = rng.gen_range(0.05..0.95);
        BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
    }

    #[test]
    fn radius_zero_is_rejected() {
        let err = std::panic::catch_unwind(|| StructElem::square(0));
        assert!(err.is_err());
    }

    #[test]
    fn square_offsets_count() {
        assert_eq!(StructElem::square(1).offsets().len(), 9);
        assert_eq!(StructElem::square(3).offsets().len(), 49);
    }

    #[test]
    fn disc_excludes_far_corners() {
        let offs = StructElem::disc(2).offsets();
        assert!(offs.contains(&(1, 1)));
        assert!(offs.contains(&(2, 0)));
        assert!(!offs.contains(&(2, 1)));
        assert!(!offs.contains(&(2, 2)));
        assert_eq!(offs.len(), 13);
    }

    #[test]
    fn dilate_matches_reference_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let mask = random_mask(&mut rng, 24, 17);
            for se in [StructElem::square(1), StructElem::square(3), StructElem::disc(2)] {
                assert_eq!(dilate(&mask, se), reference_op(&mask, se, false));
            }
        }
    }

    #[test]
    fn erode_matches_reference_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let mask = random_mask(&mut rng, 19, 23);
            for se in [StructElem::square(1), StructElem::square(2), StructElem::disc(3)] {
                assert_eq!(erode(&mask, se), reference_op(&mask, se, true));
            }
        }
    }

    #[test]
    fn erosion_shrinks_and_dilation_grows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mask = random_mask(&mut rng, 32, 32);
        for se in [StructElem::square(2), StructElem::disc(2)] {
            let er = erode(&mask, se);
            let di = dilate(&mask, se);
            for y in 0..32 {
                for x in 0..32 {
                    assert!(!er.get(x, y) || mask.get(x, y));
                    assert!(!mask.get(x, y) || di.get(x, y));
                }
            }
        }
    }

    #[test]
    fn border_foreground_is_always_eroded() {
        let full = BinaryMask::from_fn(9, 9, |_, _| true);
        let er = erode(&full, StructElem::square(2));
        // Only pixels at least radius away from every edge survive.
        for y in 0..9 {
            for x in 0..9 {
                let interior = (2..7).contains(&x) && (2..7).contains(&y);
                assert_eq!(er.get(x, y), interior, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn single_pixel_gap_is_a_filled_ball() {
        // One pixel in the center: erosion removes it, dilation paints the
        // whole element, so both gap modes equal the ball minus (for
        // foreground mode) the pixel itself.
        let mut mask = BinaryMask::new(11, 11);
        mask.set(5, 5, true);
        let se = StructElem::square(2);
        let inst = gap_mask(&mask, GapMode::Instance, se, se);
        assert_eq!(inst, dilate(&mask, se));
        assert_eq!(inst.count(), 25);

        let mut fg = gap_mask(&mask, GapMode::Foreground, se, se);
        assert!(!fg.get(5, 5));
        fg.union_with(&mask);
        assert_eq!(fg, dilate(&mask, se));
    }

    #[test]
    fn full_mask_gap_is_the_border_band() {
        // A mask covering the whole image: dilation is saturated, erosion
        // keeps only the deep interior, so the instance gap is exactly the
        // band within `radius` of the border. Foreground mode has no gap at
        // all because dilation cannot escape the mask.
        let full = BinaryMask::from_fn(12, 10, |_, _| true);
        let se = StructElem::square(3);
        let inst = gap_mask(&full, GapMode::Instance, se, se);
        for y in 0..10 {
            for x in 0..12 {
                let band = x < 3 || x >= 9 || y < 3 || y >= 7;
                assert_eq!(inst.get(x, y), band, "at ({x},{y})");
            }
        }
        let fg = gap_mask(&full, GapMode::Foreground, se, se);
        assert!(fg.is_empty());
    }

    #[test]
    fn border_blob_gap_stays_clipped() {
        // A 3x3 blob flush against the left edge. Outside the image counts
        // as background, so the edge gives the blob no shelter: erosion
        // keeps only the true center pixel.
        let blob = BinaryMask::from_fn(10, 10, |x, y| x < 3 && (3..6).contains(&y));
        let se = StructElem::square(1);
        let inst = gap_mask(&blob, GapMode::Instance, se, se);
        let er = erode(&blob, se);
        assert_eq!(er.count(), 1);
        assert!(er.get(1, 4));
        for y in 0..10 {
            for x in 0..10 {
                let expect = dilate(&blob, se).get(x, y) && !er.get(x, y);
                assert_eq!(inst.get(x, y), expect);
            }
        }

        let fg = gap_mask(&blob, GapMode::Foreground, se, se);
        for y in 0..10 {
            for x in 0..10 {
                assert!(!(fg.get(x, y) && blob.get(x, y)), "foreground gap must avoid the object");
            }
        }
        assert_eq!(fg.count(), dilate(&blob, se).count() - blob.count());
    }

    #[test]
    fn gap_modes_differ_only_inside_the_object() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let mask = random_mask(&mut rng, 20, 20);
        let se = StructElem::disc(2);
        let inst = gap_mask(&mask, GapMode::Instance, se, se);
        let fg = gap_mask(&mask, GapMode::Foreground, se, se);
        for y in 0..20 {
            for x in 0..20 {
                if !mask.get(x, y) {
                    assert_eq!(inst.get(x, y), fg.get(x, y), "outside the object at ({x},{y})");
                } else {
                    assert!(!fg.get(x, y));
                }
            }
        }
    }
}
