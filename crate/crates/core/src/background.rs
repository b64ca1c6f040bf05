//! Background estimation from an image sequence.
//!
//! A clean background plate is recovered as the per-pixel temporal median,
//! which shakes off transient foreground as long as each pixel is unoccluded
//! in more than half of the frames.

use crate::imaging::Image;

#[derive(Debug, thiserror::Error)]
pub enum BackgroundError {
    #[error("cannot take the median of zero frames")]
    EmptyInput,
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

/// Per-pixel, per-channel temporal median of a frame stack. An even frame
/// count takes the lower of the two central values, so every output sample
/// is a value that actually occurred at that pixel.
pub fn median_background(frames: &[Image]) -> Result<Image, BackgroundError> {
    let first = frames.first().ok_or(BackgroundError::EmptyInput)?;
    let (w, h) = (first.width(), first.height());
    for (index, f) in frames.iter().enumerate() {
        if f.width() != w || f.height() != h {
            return Err(BackgroundError::DimensionMismatch {
                index,
                got_w: f.width(),
                got_h: f.height(),
                want_w: w,
                want_h: h,
            });
        }
    }

    let n = frames.len();
    let mid = (n - 1) / 2;
    let mut out = vec![0u8; w as usize * h as usize * 3];
    let mut samples = vec![0u8; n];
    let planes: Vec<&[u8]> = frames.iter().map(|f| f.as_bytes()).collect();
    for (i, slot) in out.iter_mut().enumerate() {
        for (k, plane) in planes.iter().enumerate() {
            samples[k] = plane[i];
        }
        samples.sort_unstable();
        *slot = samples[mid];
    }
    Ok(Image::from_raw(w, h, out).expect("dimensions come from a valid frame"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> Image {
        let data = (0..w as usize * h as usize * 3).map(|_| rng.gen()).collect();
        Image::from_raw(w, h, data).unwrap()
    }

    #[test]
    fn no_frames_is_an_error() {
        assert!(matches!(median_background(&[]), Err(BackgroundError::EmptyInput)));
    }

    #[test]
    fn mismatched_frames_are_rejected_with_the_offender() {
        let frames = vec![Image::new(8, 8), Image::new(8, 8), Image::new(8, 9)];
        match median_background(&frames) {
            Err(BackgroundError::DimensionMismatch { index: 2, .. }) => {}
            other => panic!("expected mismatch at index 2, got {other:?}"),
        }
    }

    #[test]
    fn single_frame_is_returned_verbatim() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let img = random_image(&mut rng, 12, 9);
        assert_eq!(median_background(&[img.clone()]).unwrap(), img);
    }

    #[test]
    fn even_count_takes_the_lower_central_value() {
        let mut frames = Vec::new();
        for v in [40u8, 10, 30, 20] {
            let mut img = Image::new(1, 1);
            img.set(0, 0, [v, v, v]);
            frames.push(img);
        }
        // Sorted samples are 10 20 30 40; the lower median is 20.
        assert_eq!(median_background(&frames).unwrap().get(0, 0), [20, 20, 20]);
    }

    #[test]
    fn channels_take_medians_independently() {
        let mut frames = Vec::new();
        for (r, g, b) in [(0u8, 90, 200), (10, 80, 210), (20, 70, 220)] {
            let mut img = Image::new(1, 1);
            img.set(0, 0, [r, g, b]);
            frames.push(img);
        }
        assert_eq!(median_background(&frames).unwrap().get(0, 0), [10, 80, 210]);
    }

    #[test]
    fn sparse_occlusion_recovers_the_clean_plate() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let clean = random_image(&mut rng, 24, 18);
        let mut frames = Vec::new();
        for k in 0..9u32 {
            let mut f = clean.clone();
            // Occlude a different 6-pixel-wide stripe in each frame; every
            // pixel is covered in at most a third of the frames.
            let x0 = (k * 2) % 24;
            for y in 0..18 {
                for x in x0..(x0 + 6).min(24) {
                    f.set(x, y, [rng.gen(), rng.gen(), rng.gen()]);
                }
            }
            frames.push(f);
        }
        assert_eq!(median_background(&frames).unwrap(), clean);
    }
}
