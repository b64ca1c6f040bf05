//! Pasting machinery: geometric augmentation of cutouts, placement sampling,
//! alpha compositing, and whole-scene assembly with blending-gap bookkeeping.
//!
//! Scenes are pasted object by object in input order, so later objects occlude
//! earlier ones. Everything downstream (gap masks, visible masks, annotations)
//! respects that ordering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{mask_to_rle, BinaryMask, Image, RleMask};
use crate::morphology::{gap_mask, GapMode, StructElem};
use crate::poisson::{blend_poisson, PoissonError, PoissonParams};

/// Coordinates within `1e-6` of an integer are snapped onto it before
/// sampling or sizing, so axis-aligned transforms (identity, quarter turns,
/// integer scales) land exactly on the pixel lattice instead of drifting by
/// floating-point noise.
const SNAP_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("cutout mask {mask_w}x{mask_h} does not match its image {img_w}x{img_h}")]
    DimensionMismatch {
        img_w: u32,
        img_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("cutout mask has no foreground pixels")]
    EmptyCutout,
    #[error("cutout category must not be empty")]
    EmptyCategory,
    #[error("transform produced an empty cutout (scale {scale}, rotation {rotation_deg})")]
    DegenerateResult { scale: f32, rotation_deg: f32 },
    #[error(
        "no placement of a {cut_w}x{cut_h} cutout on a {bg_w}x{bg_h} background \
         keeps at least {min_visible:.2} of it visible"
    )]
    NoValidPlacement {
        bg_w: u32,
        bg_h: u32,
        cut_w: u32,
        cut_h: u32,
        min_visible: f64,
    },
    #[error("a scene needs at least one object unless composing pure-background foreground frames")]
    EmptyScene,
    #[error(transparent)]
    Poisson(#[from] PoissonError),
}

/// An object crop ready for pasting: an RGB patch plus the binary mask that
/// selects the object inside it.
#[derive(Clone, Debug)]
pub struct ObjectCutout {
    pub image: Image,
    pub mask: BinaryMask,
    pub category: String,
    /// Top-left corner of this crop in its source frame, when known. Only
    /// meaningful while the cutout geometry is untouched, so transforms that
    /// change geometry clear it.
    pub origin: Option<(i32, i32)>,
}

impl ObjectCutout {
    pub fn new(
        image: Image,
        mask: BinaryMask,
        category: impl Into<String>,
        origin: Option<(i32, i32)>,
    ) -> Result<Self, ComposeError> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(ComposeError::DimensionMismatch {
                img_w: image.width(),
                img_h: image.height(),
                mask_w: mask.width(),
                mask_h: mask.height(),
            });
        }
        if mask.is_empty() {
            return Err(ComposeError::EmptyCutout);
        }
        let category = category.into();
        if category.is_empty() {
            return Err(ComposeError::EmptyCategory);
        }
        Ok(ObjectCutout {
            image,
            mask,
            category,
            origin,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Geometric and photometric augmentation applied to a cutout before pasting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub scale: f32,
    pub rotation_deg: f32,
    pub flip_h: bool,
    /// Brightness multiplier applied to the resampled colors.
    pub gain: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            scale: 1.0,
            rotation_deg: 0.0,
            flip_h: false,
            gain: 1.0,
        }
    }
}

impl AugmentSpec {
    /// True when the spec moves no pixels (gain may still change colors).
    pub fn is_identity_geometry(&self) -> bool {
        self.scale == 1.0 && self.rotation_deg.rem_euclid(360.0) == 0.0 && !self.flip_h
    }
}

/// Top-left corner of the pasted cutout in background coordinates. Negative
/// values and values past the far edge truncate the object at the border.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub x: i32,
    pub y: i32,
}

/// How a pasted object's seam is treated.
#[derive(Clone, Debug, PartialEq)]
pub enum BlendMethod {
    /// Hard paste along the mask contour.
    NoBlend,
    /// Feathered paste through a Gaussian-smoothed alpha.
    Gaussian { sigma: f32 },
    /// Gradient-domain paste.
    Poisson(PoissonParams),
    /// Hard paste now; the recorded gap band is filled by an inpainting
    /// backend as a separate pass.
    Inpaint,
}

impl BlendMethod {
    /// Stable tag used in file names and annotation records.
    pub fn tag(&self) -> &'static str {
        match self {
            BlendMethod::NoBlend => "noblend",
            BlendMethod::Gaussian { .. } => "gaussian",
            BlendMethod::Poisson(_) => "poisson",
            BlendMethod::Inpaint => "inpaint",
        }
    }
}

/// Gap construction applied to every object of a composed scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapConfig {
    pub mode: GapMode,
    pub se_out: StructElem,
    pub se_in: StructElem,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            mode: GapMode::Instance,
            se_out: StructElem::square(3),
            se_in: StructElem::square(3),
        }
    }
}

/// One object of a composed scene, in the coordinate frame of the full image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    /// Identifier of the rendered image; filled in by the dataset writer.
    pub image_id: String,
    pub category: String,
    /// Tight bounding box of the visible pixels as `[x, y, w, h]`.
    pub bbox: [u32; 4],
    /// Visible (unoccluded) object pixels.
    pub segmentation: RleMask,
    /// Pixels a consumer should skip when learning from this image. Carries
    /// the blending gap in foreground mode and is empty otherwise.
    pub ignore: RleMask,
    /// Tag of the blend method the image was rendered with; filled in by the
    /// dataset writer.
    pub blend_method: String,
}

/// A fully pasted scene plus the bookkeeping downstream passes need.
#[derive(Clone, Debug)]
pub struct CompositeResult {
    pub image: Image,
    /// Union of per-object gap bands, minus pixels later objects pasted over.
    pub gap: BinaryMask,
    pub annotations: Vec<AnnotationRecord>,
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPSILON {
        r
    } else {
        v
    }
}

#[inline]
fn round_u8(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

fn apply_gain(img: &mut Image, gain: f64) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.get(x, y);
            img.set(x, y, px.map(|v| round_u8(v as f64 * gain)));
        }
    }
}

/// Bilinear sample of the mask as a 0/1 field, zero outside the canvas.
fn sample_mask(mask: &BinaryMask, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut acc = 0.0;
    for (dx, dy, w) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if w > 0.0 && mask.get_clipped(x0 + dx, y0 + dy) {
            acc += w;
        }
    }
    acc
}

/// Bilinear sample of one channel with clamp-to-edge semantics, so object
/// colors extend past the crop instead of fading to black.
fn sample_channel(img: &Image, ch: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let v00 = img.get(x0, y0)[ch] as f64;
    let v10 = img.get(x1, y0)[ch] as f64;
    let v01 = img.get(x0, y1)[ch] as f64;
    let v11 = img.get(x1, y1)[ch] as f64;
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Applies flip, scale, rotation, and gain to a cutout, resampling both the
/// patch and its mask onto a canvas sized to the transformed bounding box.
///
/// Sampling goes through a single inverse affine map with bilinear
/// interpolation, and coordinates are snapped within [`SNAP_EPSILON`], so the
/// identity transform and exact quarter turns of square cutouts reproduce
/// their input bit for bit. Rotation is in degrees, positive turning x toward
/// y (clockwise on screen with y pointing down).
pub fn transform_cutout(cutout: &ObjectCutout, spec: &AugmentSpec) -> Result<ObjectCutout, ComposeError> {
    assert!(
        spec.scale > 0.0 && spec.gain > 0.0,
        "scale and gain must be positive"
    );
    if spec.is_identity_geometry() {
        let mut out = cutout.clone();
        if spec.gain != 1.0 {
            apply_gain(&mut out.image, spec.gain as f64);
        }
        return Ok(out);
    }

    let (w, h) = (cutout.width() as f64, cutout.height() as f64);
    let theta = (spec.rotation_deg as f64).to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let s = spec.scale as f64;
    let flip = if spec.flip_h { -1.0 } else { 1.0 };
    let center = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);

    // Forward-map the crop rectangle's corners (pixel edges, not centers) to
    // size the output canvas.
    let corners = [
        (-0.5, -0.5),
        (w - 0.5, -0.5),
        (w - 0.5, h - 0.5),
        (-0.5, h - 0.5),
    ];
    let (mut bx0, mut by0) = (f64::INFINITY, f64::INFINITY);
    let (mut bx1, mut by1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(cx, cy) in &corners {
        let qx = (cx - center.0) * flip * s;
        let qy = (cy - center.1) * s;
        let tx = cos_t * qx - sin_t * qy;
        let ty = sin_t * qx + cos_t * qy;
        bx0 = bx0.min(tx);
        by0 = by0.min(ty);
        bx1 = bx1.max(tx);
        by1 = by1.max(ty);
    }
    let out_w = (snap(bx1 - bx0).ceil() as u32).max(1);
    let out_h = (snap(by1 - by0).ceil() as u32).max(1);

    let mut out_img = Image::new(out_w, out_h);
    let mut out_mask = BinaryMask::new(out_w, out_h);
    let gain = spec.gain as f64;
    for oy in 0..out_h {
        for ox in 0..out_w {
            // Center of the output pixel in transformed space, then back
            // through the inverse map into source coordinates.
            let px = bx0 + ox as f64 + 0.5;
            let py = by0 + oy as f64 + 0.5;
            let rx = cos_t * px + sin_t * py;
            let ry = -sin_t * px + cos_t * py;
            let qx = snap(rx / s * flip + center.0);
            let qy = snap(ry / s + center.1);
            if sample_mask(&cutout.mask, qx, qy) >= 0.5 {
                out_mask.set(ox, oy, true);
            }
            if qx > -1.0 && qy > -1.0 && qx < w && qy < h {
                let px = [0, 1, 2].map(|ch| round_u8(sample_channel(&cutout.image, ch, qx, qy) * gain));
                out_img.set(ox, oy, px);
            }
        }
    }
    if out_mask.is_empty() {
        return Err(ComposeError::DegenerateResult {
            scale: spec.scale,
            rotation_deg: spec.rotation_deg,
        });
    }
    Ok(ObjectCutout {
        image: out_img,
        mask: out_mask,
        category: cutout.category.clone(),
        origin: None,
    })
}

fn rect_visible_fraction(x: i64, y: i64, bg_w: u32, bg_h: u32, cut_w: u32, cut_h: u32) -> f64 {
    let vis_w = (x + cut_w as i64).min(bg_w as i64) - x.max(0);
    let vis_h = (y + cut_h as i64).min(bg_h as i64) - y.max(0);
    if vis_w <= 0 || vis_h <= 0 {
        return 0.0;
    }
    (vis_w * vis_h) as f64 / (cut_w as i64 * cut_h as i64) as f64
}

/// Draws a uniform placement whose paste rectangle keeps at least
/// `1 - max_truncation` of its area inside the background.
///
/// Sampling is by rejection over all positions with any overlap, falling back
/// to exhaustive enumeration of the valid set, so the result stays uniform
/// and the function terminates even for tight constraints.
pub fn sample_placement(
    rng: &mut impl Rng,
    bg_w: u32,
    bg_h: u32,
    cut_w: u32,
    cut_h: u32,
    max_truncation: f32,
) -> Result<Placement, ComposeError> {
    assert!(
        (0.0..1.0).contains(&max_truncation),
        "max_truncation must be in [0, 1)"
    );
    let min_visible = 1.0 - max_truncation as f64;
    let best = (cut_w.min(bg_w) as f64 * cut_h.min(bg_h) as f64)
        / (cut_w as f64 * cut_h as f64);
    // Rational area fractions with these denominators cannot sit within
    // 1e-12 of the threshold without crossing it, so the slack only absorbs
    // float noise from computing `1 - max_truncation`.
    if best + 1e-12 < min_visible {
        return Err(ComposeError::NoValidPlacement {
            bg_w,
            bg_h,
            cut_w,
            cut_h,
            min_visible,
        });
    }
    let x_range = -(cut_w as i64) + 1..=bg_w as i64 - 1;
    let y_range = -(cut_h as i64) + 1..=bg_h as i64 - 1;
    for _ in 0..1000 {
        let x = rng.gen_range(x_range.clone());
        let y = rng.gen_range(y_range.clone());
        if rect_visible_fraction(x, y, bg_w, bg_h, cut_w, cut_h) + 1e-12 >= min_visible {
            return Ok(Placement {
                x: x as i32,
                y: y as i32,
            });
        }
    }
    // The feasibility check above guarantees this set is nonempty.
    let mut valid = Vec::new();
    for y in y_range {
        for x in x_range.clone() {
            if rect_visible_fraction(x, y, bg_w, bg_h, cut_w, cut_h) + 1e-12 >= min_visible {
                valid.push((x as i32, y as i32));
            }
        }
    }
    let (x, y) = valid[rng.gen_range(0..valid.len())];
    Ok(Placement { x, y })
}

/// Per-pixel opacity for a paste, same dimensions as the cutout it covers.
#[derive(Clone, Debug)]
pub struct AlphaMask {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl AlphaMask {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let data = (0..mask.height())
            .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
            .map(|(x, y)| if mask.get(x, y) { 1.0 } else { 0.0 })
            .collect();
        AlphaMask {
            width: mask.width(),
            height: mask.height(),
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

/// Composites `cutout` over `bg` at `at` through a per-pixel alpha.
///
/// Pixels with alpha 0 and pixels outside the background are untouched byte
/// for byte; alpha 1 copies the source exactly. Fractional alpha mixes in
/// float and rounds half up once.
pub fn alpha_paste(bg: &Image, cutout: &ObjectCutout, at: Placement, alpha: &AlphaMask) -> Image {
    assert!(
        alpha.width() == cutout.width() && alpha.height() == cutout.height(),
        "alpha mask must match the cutout dimensions"
    );
    let mut out = bg.clone();
    for cy in 0..cutout.height() {
        let oy = at.y as i64 + cy as i64;
        if oy < 0 || oy >= bg.height() as i64 {
            continue;
        }
        for cx in 0..cutout.width() {
            let ox = at.x as i64 + cx as i64;
            if ox < 0 || ox >= bg.width() as i64 {
                continue;
            }
            let a = alpha.get(cx, cy) as f64;
            if a <= 0.0 {
                continue;
            }
            let (ox, oy) = (ox as u32, oy as u32);
            let src = cutout.image.get(cx, cy);
            if a >= 1.0 {
                out.set(ox, oy, src);
            } else {
                let dst = out.get(ox, oy);
                let mixed =
                    [0, 1, 2].map(|c| round_u8(a * src[c] as f64 + (1.0 - a) * dst[c] as f64));
                out.set(ox, oy, mixed);
            }
        }
    }
    out
}

/// Gaussian-feathered alpha for a mask. The kernel takes integer taps with
/// `|d| <= 3 sigma` and is normalized to unit sum, so a sigma below 1/3
/// degenerates to the binary mask and the blend becomes a hard paste.
pub(crate) fn feathered_alpha(mask: &BinaryMask, sigma: f32) -> AlphaMask {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma as f64).floor() as i64;
    if radius == 0 {
        return AlphaMask::from_mask(mask);
    }
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    for d in -radius..=radius {
        kernel.push((-(d * d) as f64 / s2).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (w, h) = (mask.width(), mask.height());
    let mut horiz = vec![0.0f64; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = x as i64 + i as i64 - radius;
                if mask.get_clipped(sx, y as i64) {
                    acc += k;
                }
            }
            horiz[(y * w + x) as usize] = acc;
        }
    }
    let mut data = vec![0.0f32; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sy = y as i64 + i as i64 - radius;
                if sy >= 0 && sy < h as i64 {
                    acc += k * horiz[(sy as u32 * w + x) as usize];
                }
            }
            data[(y * w + x) as usize] = acc as f32;
        }
    }
    AlphaMask {
        width: w,
        height: h,
        data,
    }
}

/// Pastes with a feathered seam: the binary mask is smoothed by a Gaussian
/// and used as the compositing alpha.
pub fn blend_gaussian(bg: &Image, cutout: &ObjectCutout, at: Placement, sigma: f32) -> Image {
    let alpha = feathered_alpha(&cutout.mask, sigma);
    alpha_paste(bg, cutout, at, &alpha)
}

/// Shifts a cutout mask into the background frame, clipping at the borders.
fn rasterize_mask(mask: &BinaryMask, at: Placement, bg_w: u32, bg_h: u32) -> BinaryMask {
    BinaryMask::from_fn(bg_w, bg_h, |x, y| {
        let cx = x as i64 - at.x as i64;
        let cy = y as i64 - at.y as i64;
        mask.get_clipped(cx, cy)
    })
}

/// Pastes every object in order and derives the scene's gap band, visible
/// masks, and annotation records.
///
/// The gap of each object excludes pixels that later pastes covered, and the
/// final gap is the union of those bands. In foreground mode the visible
/// masks additionally exclude the final gap, keeping segmentation labels and
/// ignore regions disjoint. Objects whose visible mask ends up empty are
/// dropped from the annotations.
///
/// An empty scene is only legal in foreground mode, where pure-background
/// frames are useful; it yields the background unchanged.
pub fn compose_scene(
    bg: &Image,
    placed: &[(ObjectCutout, Placement, BlendMethod)],
    gap_cfg: &GapConfig,
) -> Result<CompositeResult, ComposeError> {
    let (w, h) = (bg.width(), bg.height());
    if placed.is_empty() {
        if gap_cfg.mode == GapMode::Foreground {
            return Ok(CompositeResult {
                image: bg.clone(),
                gap: BinaryMask::new(w, h),
                annotations: Vec::new(),
            });
        }
        return Err(ComposeError::EmptyScene);
    }

    let mut canvas = bg.clone();
    let mut full_masks = Vec::with_capacity(placed.len());
    for (cutout, at, method) in placed {
        canvas = match method {
            BlendMethod::NoBlend | BlendMethod::Inpaint => {
                alpha_paste(&canvas, cutout, *at, &AlphaMask::from_mask(&cutout.mask))
            }
            BlendMethod::Gaussian { sigma } => blend_gaussian(&canvas, cutout, *at, *sigma),
            BlendMethod::Poisson(params) => blend_poisson(&canvas, cutout, *at, params)?,
        };
        full_masks.push(rasterize_mask(&cutout.mask, *at, w, h));
    }

    // occluders[i] is the union of all masks pasted after object i.
    let n = placed.len();
    let mut occluders = Vec::with_capacity(n);
    let mut suffix = BinaryMask::new(w, h);
    for i in (0..n).rev() {
        occluders.push(suffix.clone());
        suffix.union_with(&full_masks[i]);
    }
    occluders.reverse();

    let mut final_gap = BinaryMask::new(w, h);
    for i in 0..n {
        let mut g = gap_mask(&full_masks[i], gap_cfg.mode, gap_cfg.se_out, gap_cfg.se_in);
        g.subtract(&occluders[i]);
        final_gap.union_with(&g);
    }

    let empty_rle = mask_to_rle(&BinaryMask::new(w, h));
    let mut annotations = Vec::new();
    for i in 0..n {
        let mut visible = full_masks[i].clone();
        visible.subtract(&occluders[i]);
        if gap_cfg.mode == GapMode::Foreground {
            visible.subtract(&final_gap);
        }
        let Some((bx, by, bw, bh)) = visible.bounding_box() else {
            continue;
        };
        let ignore = match gap_cfg.mode {
            GapMode::Foreground => mask_to_rle(&final_gap),
            GapMode::Instance => empty_rle.clone(),
        };
        annotations.push(AnnotationRecord {
            image_id: String::new(),
            category: placed[i].0.category.clone(),
            bbox: [bx, by, bw, bh],
            segmentation: mask_to_rle(&visible),
            ignore,
            blend_method: String::new(),
        });
    }

    Ok(CompositeResult {
        image: canvas,
        gap: final_gap,
        annotations,
    })
}
