//! Raster primitives shared by every stage of the pipeline.
//!
//! Images are 8-bit RGB with row-major interleaved storage. Masks are binary
//! and carry their own dimensions so mismatches are caught at the boundary of
//! each operation instead of deep inside a kernel. Run-length encoding follows
//! the column-of-rows scan (row-major), first run counting background pixels.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

/// Errors produced by raster IO and mask codecs.
#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("failed to encode image: {0}")]
    Encode(String),
    #[error("invalid dimensions {width}x{height}: {reason}")]
    BadDimensions {
        width: u32,
        height: u32,
        reason: String,
    },
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
}

/// Dense 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    /// Creates a black image. Dimensions must be nonzero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let len = width as usize * height as usize * 3;
        Image {
            width,
            height,
            data: vec![0; len],
        }
    }

    /// Wraps an interleaved RGB buffer. The buffer length must be
    /// `width * height * 3`.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::BadDimensions {
                width,
                height,
                reason: "dimensions must be nonzero".into(),
            });
        }
        let expect = width as usize * height as usize * 3;
        if data.len() != expect {
            return Err(ImageError::BadDimensions {
                width,
                height,
                reason: format!("buffer holds {} bytes, expected {}", data.len(), expect),
            });
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&px);
    }

    /// Interleaved RGB bytes, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Converts to a linear buffer of `f32` samples in `[0, 1]`.
    pub fn to_float(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// Quantizes a float buffer (samples in `[0, 1]`, clamped) back to 8 bits
    /// with round-half-up. Inverse of [`Image::to_float`] on exact 8-bit data.
    pub fn from_float(width: u32, height: u32, samples: &[f32]) -> Result<Self, ImageError> {
        let data = samples
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect();
        Image::from_raw(width, height, data)
    }
}

/// Binary mask with one bit of payload per pixel, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BinaryMask {
    /// Creates an all-background mask. Dimensions must be nonzero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be nonzero");
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Like [`BinaryMask::get`] but treats out-of-bounds coordinates as
    /// background, which is the clipping convention used throughout.
    #[inline]
    pub fn get_clipped(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.bits[y as usize * self.width as usize + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// In-place union. Panics on dimension mismatch.
    pub fn union_with(&mut self, other: &BinaryMask) {
        assert!(self.same_dims(other), "mask dimension mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// In-place set difference `self \ other`. Panics on dimension mismatch.
    pub fn subtract(&mut self, other: &BinaryMask) {
        assert!(self.same_dims(other), "mask dimension mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !*b;
        }
    }

    /// Tight bounding box of the foreground as `(x, y, w, h)`, or `None` for
    /// an empty mask.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let (mut x0, mut y0) = (u32::MAX, u32::MAX);
        let (mut x1, mut y1) = (0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// Run-length encoded mask. Runs alternate background/foreground along the
/// row-major scan and start with background, so a leading foreground pixel is
/// expressed by a zero-length first run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

/// Encodes a mask. The encoding is canonical: no interior zero runs, and a
/// trailing run is never zero.
pub fn mask_to_rle(mask: &BinaryMask) -> RleMask {
    let total = mask.width as usize * mask.height as usize;
    let mut counts = Vec::new();
    let mut current = false;
    let mut run: u32 = 0;
    for i in 0..total {
        let bit = mask.bits[i];
        if bit == current {
            run += 1;
        } else {
            counts.push(run);
            current = bit;
            run = 1;
        }
    }
    counts.push(run);
    RleMask {
        width: mask.width,
        height: mask.height,
        counts,
    }
}

/// Decodes a run-length mask, validating that the run total matches the
/// declared dimensions.
pub fn rle_to_mask(rle: &RleMask) -> Result<BinaryMask, ImageError> {
    if rle.width == 0 || rle.height == 0 {
        return Err(ImageError::BadDimensions {
            width: rle.width,
            height: rle.height,
            reason: "dimensions must be nonzero".into(),
        });
    }
    let total = rle.width as usize * rle.height as usize;
    let sum: usize = rle.counts.iter().map(|&c| c as usize).sum();
    if sum != total {
        return Err(ImageError::InvalidRle(format!(
            "runs sum to {sum} but {}x{} has {total} pixels",
            rle.width, rle.height
        )));
    }
    let mut mask = BinaryMask::new(rle.width, rle.height);
    let mut pos = 0usize;
    let mut fg = false;
    for &run in &rle.counts {
        if fg {
            for bit in &mut mask.bits[pos..pos + run as usize] {
                *bit = true;
            }
        }
        pos += run as usize;
        fg = !fg;
    }
    Ok(mask)
}

fn open_raster(path: &Path) -> Result<DynamicImage, ImageError> {
    let reader = ImageReader::open(path)
        .map_err(|source| ImageError::Io {
            path: path.to_owned(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageError::Io {
            path: path.to_owned(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => {
            return Err(ImageError::Decode {
                path: path.to_owned(),
                reason: format!("unsupported format {other:?}, expected PNG or JPEG"),
            })
        }
        None => {
            return Err(ImageError::Decode {
                path: path.to_owned(),
                reason: "unrecognized image format".into(),
            })
        }
    }
    reader.decode().map_err(|e| ImageError::Decode {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

/// Loads a PNG or JPEG file as 8-bit RGB. Grayscale sources are replicated
/// across channels; alpha, if present, is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let decoded = open_raster(path)?.into_rgb8();
    let (width, height) = decoded.dimensions();
    Image::from_raw(width, height, decoded.into_raw())
}

/// Writes an image as PNG regardless of the path's extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Encodes an image to in-memory PNG bytes.
pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageError> {
    let buf = image::RgbImage::from_raw(img.width, img.height, img.data.clone())
        .expect("image buffer length is validated on construction");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Decodes PNG bytes produced by a peer (for example the inpainting service)
/// into an 8-bit RGB image.
pub fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(format!("png decode failed: {e}")))?
        .into_rgb8();
    let (width, height) = decoded.dimensions();
    Image::from_raw(width, height, decoded.into_raw())
}

/// Loads a mask image. Any pixel with a nonzero sample in any channel is
/// foreground, so both 0/1 and 0/255 conventions decode identically.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, ImageError> {
    let path = path.as_ref();
    let decoded = open_raster(path)?.into_rgb8();
    let (width, height) = decoded.dimensions();
    let mut mask = BinaryMask::new(width, height);
    for (i, px) in decoded.pixels().enumerate() {
        mask.bits[i] = px.0 != [0, 0, 0];
    }
    Ok(mask)
}

/// Writes a mask as a single-channel PNG with foreground 255, background 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_mask_png(mask)?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Encodes a mask to in-memory single-channel PNG bytes (foreground 255).
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>, ImageError> {
    let data: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width, mask.height, data)
        .expect("mask buffer length matches dimensions by construction");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Decodes single-channel PNG bytes into a mask (any nonzero sample is
/// foreground).
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask, ImageError> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageError::Encode(format!("png decode failed: {e}")))?
        .into_rgb8();
    let (width, height) = decoded.dimensions();
    let mut mask = BinaryMask::new(width, height);
    for (i, px) in decoded.pixels().enumerate() {
        mask.bits[i] = px.0 != [0, 0, 0];
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut impl Rng, width: u32, height: u32) -> Image {
        let data = (0..width as usize * height as usize * 3)
            .map(|_| rng.gen())
            .collect();
        Image::from_raw(width, height, data).unwrap()
    }

    fn random_mask(rng: &mut impl Rng, width: u32, height: u32, density: f64) -> BinaryMask {
        BinaryMask::from_fn(width, height, |_, _| rng.gen_bool(density))
    }

    #[test]
    fn from_raw_rejects_bad_lengths() {
        assert!(matches!(
            Image::from_raw(4, 4, vec![0; 47]),
            Err(ImageError::BadDimensions { .. })
        ));
        assert!(matches!(
            Image::from_raw(0, 4, vec![]),
            Err(ImageError::BadDimensions { .. })
        ));
    }

    #[test]
    fn get_set_roundtrip() {
        let mut img = Image::new(3, 2);
        img.set(2, 1, [10, 20, 30]);
        assert_eq!(img.get(2, 1), [10, 20, 30]);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn float_view_roundtrips_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 17, 9);
        let floats = img.to_float();
        let back = Image::from_float(17, 9, &floats).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn from_float_clamps_and_rounds_half_up() {
        let samples = [-0.2, 0.0, 0.5 / 255.0, 1.5 / 255.0, 1.0, 2.0, 0.0, 0.0, 0.0];
        let img = Image::from_float(3, 1, &samples).unwrap();
        assert_eq!(img.as_bytes()[..6], [0, 0, 1, 2, 255, 255]);
    }

    #[test]
    fn middle_row_rle_runs() {
        let mask = BinaryMask::from_fn(3, 3, |_, y| y == 1);
        assert_eq!(mask_to_rle(&mask).counts, vec![3, 3, 3]);
    }

    #[test]
    fn leading_foreground_gets_zero_first_run() {
        let mask = BinaryMask::from_fn(2, 1, |x, _| x == 0);
        assert_eq!(mask_to_rle(&mask).counts, vec![0, 1, 1]);
    }

    #[test]
    fn all_background_is_single_run() {
        let mask = BinaryMask::new(4, 4);
        assert_eq!(mask_to_rle(&mask).counts, vec![16]);
    }

    #[test]
    fn rle_rejects_wrong_total() {
        let rle = RleMask {
            width: 3,
            height: 3,
            counts: vec![4, 4],
        };
        assert!(matches!(rle_to_mask(&rle), Err(ImageError::InvalidRle(_))));
    }

    #[test]
    fn bounding_box_is_tight() {
        let mask = BinaryMask::from_fn(8, 6, |x, y| (2..=5).contains(&x) && (1..=3).contains(&y));
        assert_eq!(mask.bounding_box(), Some((2, 1, 4, 3)));
        assert_eq!(BinaryMask::new(4, 4).bounding_box(), None);
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dir = tempfile::tempdir().unwrap();
        for (w, h) in [(1, 1), (13, 7), (64, 64)] {
            let img = random_image(&mut rng, w, h);
            let path = dir.path().join(format!("img_{w}x{h}.png"));
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
    }

    #[test]
    fn mask_png_roundtrip_is_lossless() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let dir = tempfile::tempdir().unwrap();
        let mask = random_mask(&mut rng, 33, 21, 0.4);
        let path = dir.path().join("mask.png");
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn grayscale_png_loads_as_replicated_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_fn(4, 3, |x, y| image::Luma([(x * 10 + y) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let v = (x * 10 + y) as u8;
                assert_eq!(img.get(x, y), [v, v, v]);
            }
        }
    }

    #[test]
    fn truncated_png_is_a_decode_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.png");
        let bytes = encode_png(&random_image(&mut rng, 32, 32)).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_image(&path),
            Err(ImageError::Decode { .. })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_image("/nonexistent/nope.png"),
            Err(ImageError::Io { .. })
        ));
    }

    #[test]
    fn unwritable_destination_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        // Use a regular file as the parent path component; create() then
        // fails with ENOTDIR even when running as root.
        let blocker = dir.path().join("blocker");
        std::fs::write(&blocker, b"x").unwrap();
        let img = Image::new(2, 2);
        assert!(matches!(
            save_image(&img, blocker.join("out.png")),
            Err(ImageError::Io { .. })
        ));
    }

    #[test]
    fn unsupported_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bmp");
        // "BM" magic is enough for format sniffing to say bitmap.
        let mut bytes = b"BM".to_vec();
        bytes.resize(64, 0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_image(&path), Err(ImageError::Decode { .. })));
    }

    #[test]
    fn rle_serde_shape_is_stable() {
        let rle = RleMask {
            width: 3,
            height: 3,
            counts: vec![3, 3, 3],
        };
        let json = serde_json::to_string(&rle).unwrap();
        assert_eq!(json, r#"{"width":3,"height":3,"counts":[3,3,3]}"#);
        assert_eq!(serde_json::from_str::<RleMask>(&json).unwrap(), rle);
    }

    proptest! {
        #[test]
        fn rle_roundtrips(seed in 0u64..500, w in 1u32..40, h in 1u32..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let density = rng.gen_range(0.0..=1.0);
            let mask = random_mask(&mut rng, w, h, density);
            let rle = mask_to_rle(&mask);
            prop_assert_eq!(rle_to_mask(&rle).unwrap(), mask);
        }

        #[test]
        fn rle_is_canonical(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mask = random_mask(&mut rng, 16, 16, 0.5);
            let rle = mask_to_rle(&mask);
            let total: usize = rle.counts.iter().map(|&c| c as usize).sum();
            prop_assert_eq!(total, 256);
            // Only the first run may be zero, and the last run never is.
            for (i, &c) in rle.counts.iter().enumerate() {
                if i > 0 {
                    prop_assert!(c > 0);
                }
            }
            prop_assert!(*rle.counts.last().unwrap() > 0);
        }
    }
}
