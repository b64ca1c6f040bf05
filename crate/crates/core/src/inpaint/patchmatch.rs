//! PatchMatch hole filling.
//!
//! The hole is filled by texture borrowed from the known part of the same
//! image. A nearest-neighbor field maps every patch that overlaps the hole to
//! a fully-known target patch; the field is refined by alternating-scan
//! propagation and exponentially decaying random search, then hole pixels are
//! reconstructed by uniform voting over every patch that covers them.
//!
//! Patch distances count only known source pixels and are computed in exact
//! integer arithmetic, so the field never depends on whatever bytes happen to
//! sit inside the hole, candidates are accepted only on strict improvement,
//! and total energy is non-increasing by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::imaging::{BinaryMask, Image};
use crate::inpaint::InpaintError;

/// Tuning knobs for [`inpaint_patchmatch`] and [`compute_nnf`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PatchMatchParams {
    /// Patch side length; odd and at least 3.
    pub patch_size: u32,
    /// Propagation plus search sweeps per pyramid level.
    pub iters_per_level: u32,
    /// Pyramid depth. Unset means halve until the short side would drop
    /// below 32.
    pub levels: Option<u32>,
    /// Random-search radius decay per step, in (0, 1).
    pub search_decay: f64,
    pub seed: u64,
}

impl Default for PatchMatchParams {
    fn default() -> Self {
        PatchMatchParams {
            patch_size: 7,
            iters_per_level: 5,
            levels: None,
            search_decay: 0.5,
            seed: 0,
        }
    }
}

impl PatchMatchParams {
    fn validate(&self) {
        assert!(
            self.patch_size >= 3 && self.patch_size % 2 == 1,
            "patch_size must be odd and >= 3"
        );
        assert!(
            self.search_decay > 0.0 && self.search_decay < 1.0,
            "search_decay must be in (0, 1)"
        );
    }

    fn radius(&self) -> i64 {
        (self.patch_size / 2) as i64
    }
}

/// One correspondence of the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NnfEntry {
    /// Patch center whose window overlaps the hole.
    pub center: (u32, u32),
    /// Displacement to the matched target center.
    pub offset: (i32, i32),
    /// Sum of squared channel differences over the known source pixels.
    pub distance: u64,
}

/// Nearest-neighbor field over all hole-overlapping patch centers, in
/// row-major center order.
pub struct NNField {
    width: u32,
    height: u32,
    patch_size: u32,
    entries: Vec<NnfEntry>,
    /// Pixel index -> entry index, -1 for centers outside the field.
    index: Vec<i32>,
    /// Total energy after initialization and after each sweep.
    pub energy_history: Vec<u64>,
}

impl NNField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn entries(&self) -> &[NnfEntry] {
        &self.entries
    }

    pub fn entry_at(&self, x: u32, y: u32) -> Option<&NnfEntry> {
        let i = self.index[(y as usize) * self.width as usize + x as usize];
        (i >= 0).then(|| &self.entries[i as usize])
    }

    /// Sum of all entry distances.
    pub fn energy(&self) -> u64 {
        self.entries.iter().map(|e| e.distance).sum()
    }
}

/// Where target patches may live: centers whose full window is inside the
/// image and free of hole pixels. Backed by a summed-area table of the hole.
struct TargetMap {
    width: u32,
    height: u32,
    valid: Vec<bool>,
    list: Vec<(u32, u32)>,
}

impl TargetMap {
    fn build(hole: &BinaryMask, radius: i64) -> Self {
        let (w, h) = (hole.width() as usize, hole.height() as usize);
        // integral[y][x] = number of hole pixels in [0,x) x [0,y).
        let mut integral = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                let here = hole.get(x as u32, y as u32) as u32;
                integral[(y + 1) * (w + 1) + (x + 1)] = here
                    + integral[y * (w + 1) + (x + 1)]
                    + integral[(y + 1) * (w + 1) + x]
                    - integral[y * (w + 1) + x];
            }
        }
        let holes_in = |x0: usize, y0: usize, x1: usize, y1: usize| {
            integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
        };
        let r = radius as usize;
        let mut valid = vec![false; w * h];
        let mut list = Vec::new();
        if w > 2 * r && h > 2 * r {
            for y in r..h - r {
                for x in r..w - r {
                    if holes_in(x - r, y - r, x + r + 1, y + r + 1) == 0 {
                        valid[y * w + x] = true;
                        list.push((x as u32, y as u32));
                    }
                }
            }
        }
        TargetMap {
            width: w as u32,
            height: h as u32,
            valid,
            list,
        }
    }

    #[inline]
    fn is_valid(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.valid[y as usize * self.width as usize + x as usize]
    }
}

/// Exact integer patch distance: squared channel differences summed over the
/// known, in-image pixels of the source window. Stops early once `bound` is
/// reached, returning a value `>= bound` that the caller will reject.
fn patch_distance(
    img: &Image,
    hole: &BinaryMask,
    center: (u32, u32),
    target: (u32, u32),
    radius: i64,
    bound: u64,
) -> u64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    let (tx, ty) = (target.0 as i64, target.1 as i64);
    let mut acc = 0u64;
    for dy in -radius..=radius {
        let sy = cy + dy;
        if sy < 0 || sy >= h {
            continue;
        }
        for dx in -radius..=radius {
            let sx = cx + dx;
            if sx < 0 || sx >= w {
                continue;
            }
            if hole.get(sx as u32, sy as u32) {
                continue;
            }
            let a = img.get(sx as u32, sy as u32);
            let b = img.get((tx + dx) as u32, (ty + dy) as u32);
            for c in 0..3 {
                let d = a[c] as i64 - b[c] as i64;
                acc += (d * d) as u64;
            }
        }
        if acc >= bound {
            return acc;
        }
    }
    acc
}

fn try_improve(
    img: &Image,
    hole: &BinaryMask,
    entry: &mut NnfEntry,
    target: (i64, i64),
    targets: &TargetMap,
    radius: i64,
) {
    if !targets.is_valid(target.0, target.1) {
        return;
    }
    let t = (target.0 as u32, target.1 as u32);
    if t == (
        (entry.center.0 as i64 + entry.offset.0 as i64) as u32,
        (entry.center.1 as i64 + entry.offset.1 as i64) as u32,
    ) {
        return;
    }
    let d = patch_distance(img, hole, entry.center, t, radius, entry.distance);
    if d < entry.distance {
        entry.distance = d;
        entry.offset = (
            (t.0 as i64 - entry.center.0 as i64) as i32,
            (t.1 as i64 - entry.center.1 as i64) as i32,
        );
    }
}

/// Runs the fixed point of propagation and random search on one level.
/// `init` carries coarser-level offsets (already scaled) to seed from.
fn refine_nnf(
    img: &Image,
    hole: &BinaryMask,
    params: &PatchMatchParams,
    rng: &mut ChaCha8Rng,
    init: Option<&NNField>,
) -> Result<NNField, InpaintError> {
    let radius = params.radius();
    let (w, h) = (img.width(), img.height());
    let targets = TargetMap::build(hole, radius);

    // Field domain: every center whose (clipped) window touches the hole.
    let mut index = vec![-1i32; w as usize * h as usize];
    let mut entries = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut touches = false;
            'scan: for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if hole.get_clipped(x as i64 + dx, y as i64 + dy) {
                        touches = true;
                        break 'scan;
                    }
                }
            }
            if touches {
                index[(y * w + x) as usize] = entries.len() as i32;
                entries.push(NnfEntry {
                    center: (x, y),
                    offset: (0, 0),
                    distance: u64::MAX,
                });
            }
        }
    }
    if entries.is_empty() {
        return Ok(NNField {
            width: w,
            height: h,
            patch_size: params.patch_size,
            entries,
            index,
            energy_history: vec![0],
        });
    }
    if targets.list.is_empty() {
        return Err(InpaintError::NoValidTarget {
            patch: params.patch_size,
        });
    }

    // Initialize: coarse guess where available and still valid, otherwise a
    // uniform random valid target.
    for e in &mut entries {
        let mut seeded = false;
        if let Some(coarse) = init {
            let cx = e.center.0 / 2;
            let cy = e.center.1 / 2;
            if let Some(ce) = coarse.entry_at(cx.min(coarse.width - 1), cy.min(coarse.height - 1)) {
                let off = (ce.offset.0 as i64 * 2, ce.offset.1 as i64 * 2);
                let t = (e.center.0 as i64 + off.0, e.center.1 as i64 + off.1);
                if targets.is_valid(t.0, t.1) {
                    e.offset = (off.0 as i32, off.1 as i32);
                    seeded = true;
                }
            }
        }
        if !seeded {
            let t = targets.list[rng.gen_range(0..targets.list.len())];
            e.offset = (
                t.0 as i32 - e.center.0 as i32,
                t.1 as i32 - e.center.1 as i32,
            );
        }
        let t = (
            (e.center.0 as i32 + e.offset.0) as u32,
            (e.center.1 as i32 + e.offset.1) as u32,
        );
        e.distance = patch_distance(img, hole, e.center, t, radius, u64::MAX);
    }

    let mut field = NNField {
        width: w,
        height: h,
        patch_size: params.patch_size,
        entries,
        index,
        energy_history: Vec::new(),
    };
    field.energy_history.push(field.energy());

    let max_radius = w.max(h) as f64;
    for sweep in 0..params.iters_per_level {
        let forward = sweep % 2 == 0;
        let order: Vec<usize> = if forward {
            (0..field.entries.len()).collect()
        } else {
            (0..field.entries.len()).rev().collect()
        };
        for i in order {
            let mut entry = field.entries[i];
            let (cx, cy) = (entry.center.0 as i64, entry.center.1 as i64);

            // Propagation: adopt the offset of the already-visited scan
            // neighbors.
            let steps: [(i64, i64); 2] = if forward {
                [(-1, 0), (0, -1)]
            } else {
                [(1, 0), (0, 1)]
            };
            for (dx, dy) in steps {
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let ni = field.index[(ny * w as i64 + nx) as usize];
                if ni < 0 {
                    continue;
                }
                let noff = field.entries[ni as usize].offset;
                try_improve(
                    img,
                    hole,
                    &mut entry,
                    (cx + noff.0 as i64, cy + noff.1 as i64),
                    &targets,
                    radius,
                );
            }

            // Random search around the current target, radius halving (by
            // `search_decay`) down to one pixel.
            let mut search = max_radius;
            while search >= 1.0 {
                let r = search as i64;
                let (tx, ty) = (cx + entry.offset.0 as i64, cy + entry.offset.1 as i64);
                let jx = rng.gen_range(-r..=r);
                let jy = rng.gen_range(-r..=r);
                try_improve(img, hole, &mut entry, (tx + jx, ty + jy), &targets, radius);
                search *= params.search_decay;
            }

            field.entries[i] = entry;
        }
        field.energy_history.push(field.energy());
    }
    Ok(field)
}

/// Computes a nearest-neighbor field for all patches overlapping the hole,
/// from random initialization. Distances ignore hole pixels, so the result
/// does not depend on the image content inside the hole.
pub fn compute_nnf(
    img: &Image,
    hole: &BinaryMask,
    params: &PatchMatchParams,
    rng: &mut ChaCha8Rng,
) -> Result<NNField, InpaintError> {
    params.validate();
    check_dims(img, hole)?;
    refine_nnf(img, hole, params, rng, None)
}

fn check_dims(img: &Image, hole: &BinaryMask) -> Result<(), InpaintError> {
    if img.width() != hole.width() || img.height() != hole.height() {
        return Err(InpaintError::DimensionMismatch {
            img_w: img.width(),
            img_h: img.height(),
            mask_w: hole.width(),
            mask_h: hole.height(),
        });
    }
    Ok(())
}

/// Box-filter 2x downsample with round-half-up; trailing odd rows/columns
/// average whatever pixels exist.
fn downsample_image(img: &Image) -> Image {
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0u32; 3];
            let mut count = 0u32;
            for dy in 0..2 {
                for dx in 0..2 {
                    let sx = x * 2 + dx;
                    let sy = y * 2 + dy;
                    if sx < img.width() && sy < img.height() {
                        let px = img.get(sx, sy);
                        for c in 0..3 {
                            sum[c] += px[c] as u32;
                        }
                        count += 1;
                    }
                }
            }
            out.set(x, y, [0, 1, 2].map(|c| ((2 * sum[c] + count) / (2 * count)) as u8));
        }
    }
    out
}

/// Hole-conservative 2x downsample: a coarse pixel is a hole if any of its
/// fine constituents is, so coarse levels never treat contaminated data as
/// known.
fn downsample_hole(hole: &BinaryMask) -> BinaryMask {
    let w = hole.width().div_ceil(2);
    let h = hole.height().div_ceil(2);
    BinaryMask::from_fn(w, h, |x, y| {
        (0..2).any(|dy| {
            (0..2).any(|dx| hole.get_clipped(x as i64 * 2 + dx, y as i64 * 2 + dy))
        })
    })
}

fn auto_levels(w: u32, h: u32) -> u32 {
    let mut levels = 1;
    let mut side = w.min(h);
    while side / 2 >= 32 {
        side /= 2;
        levels += 1;
    }
    levels
}

/// Uniform voting: each hole pixel averages the target-patch pixels proposed
/// by every field entry whose window covers it, with integer round-half-up.
fn vote(img: &Image, hole: &BinaryMask, field: &NNField) -> Image {
    let radius = (field.patch_size / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if !hole.get(x as u32, y as u32) {
                continue;
            }
            let mut sum = [0u64; 3];
            let mut count = 0u64;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (cx, cy) = (x + dx, y + dy);
                    if cx < 0 || cy < 0 || cx >= w || cy >= h {
                        continue;
                    }
                    // Every pixel this close to a hole pixel is a field
                    // center by construction.
                    let Some(entry) = field.entry_at(cx as u32, cy as u32) else {
                        continue;
                    };
                    let px = img.get(
                        (cx + entry.offset.0 as i64 + (x - cx)) as u32,
                        (cy + entry.offset.1 as i64 + (y - cy)) as u32,
                    );
                    for c in 0..3 {
                        sum[c] += px[c] as u64;
                    }
                    count += 1;
                }
            }
            debug_assert!(count > 0, "hole pixel with no covering patch");
            out.set(
                x as u32,
                y as u32,
                [0, 1, 2].map(|c| ((2 * sum[c] + count) / (2 * count)) as u8),
            );
        }
    }
    out
}

/// Fills the hole by coarse-to-fine PatchMatch and voting.
///
/// Coarser levels exist only to warm-start the field: their offsets are
/// doubled and used as initialization one level down. Voting happens once at
/// full resolution and touches hole pixels only. A coarse level that is too
/// clogged to offer any valid target is skipped; only the full-resolution
/// level can fail that way.
pub fn inpaint_patchmatch(
    img: &Image,
    hole: &BinaryMask,
    params: &PatchMatchParams,
) -> Result<Image, InpaintError> {
    params.validate();
    check_dims(img, hole)?;
    if hole.is_empty() {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let levels = params.levels.unwrap_or_else(|| auto_levels(img.width(), img.height())).max(1);
    let mut pyramid = vec![(img.clone(), hole.clone())];
    for _ in 1..levels {
        let (pi, ph) = pyramid.last().unwrap();
        pyramid.push((downsample_image(pi), downsample_hole(ph)));
    }

    let mut field: Option<NNField> = None;
    for level in (0..pyramid.len()).rev() {
        let (li, lh) = &pyramid[level];
        match refine_nnf(li, lh, params, &mut rng, field.as_ref()) {
            Ok(f) => field = Some(f),
            Err(InpaintError::NoValidTarget { .. }) if level > 0 => {
                // This coarse level has no clean material; drop the warm
                // start and let the finer level initialize randomly.
                field = None;
            }
            Err(e) => return Err(e),
        }
    }
    let field = field.expect("finest level always produces a field");
    Ok(vote(img, hole, &field))
}
