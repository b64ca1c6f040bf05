//! Scene planning and dataset generation.
//!
//! Generation is split into a pure planning step and a rendering step. A
//! plan fixes everything random about a scene (background, cutouts,
//! augmentations, placements, blend choice) and depends only on the config,
//! the sorted asset library, and the image index; rendering a plan is
//! deterministic. Each scene draws from its own counter-based RNG stream,
//! so results are independent of worker count and generation order.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::compositor::{
    compose_scene, sample_placement, transform_cutout, AnnotationRecord, AugmentSpec,
    BlendMethod, ComposeError, ObjectCutout, Placement,
};
use crate::imaging::{mask_to_rle, save_image, BinaryMask, Image, ImageError};
use crate::inpaint::{fill_gap, InpaintError};
use crate::morphology::GapMode;

mod assets;
mod config;
mod manifest;

pub use assets::{load_assets, AssetLibrary, BackgroundAsset, CutoutAsset};
pub use config::{
    AugmentRanges, BlendMethodConfig, GapElems, InpaintBackendConfig, SynthConfig,
};
pub use manifest::{
    DatasetManifest, GroupEntry, ImageEntry, SceneFailure, MANIFEST_VERSION,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no {kind} found in {}", dir.display())]
    EmptyAssetDir { kind: &'static str, dir: PathBuf },
    #[error("asset {}: {reason}", path.display())]
    BadAsset { path: PathBuf, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error("{failed} of {total} scenes failed, aborting; first error: {first}")]
    TooManyFailures {
        failed: usize,
        total: u32,
        first: String,
    },
}

/// One object slot in a scene plan.
#[derive(Clone, Debug)]
pub struct PlannedObject {
    pub cutout_index: usize,
    pub augment: AugmentSpec,
    pub placement: Placement,
}

/// Everything random about one scene, fixed.
#[derive(Clone, Debug)]
pub struct ScenePlan {
    pub image_index: u32,
    pub group_id: String,
    pub background_index: usize,
    pub objects: Vec<PlannedObject>,
    pub blends: Vec<BlendMethodConfig>,
}

/// One rendered output image together with its per-image metadata.
pub struct RenderedImage {
    pub blend_tag: String,
    pub image: Image,
    pub annotations: Vec<AnnotationRecord>,
    pub gap: BinaryMask,
}

/// How many augment+placement attempts an object gets before being dropped
/// from the scene.
const PLACEMENT_ATTEMPTS: u32 = 20;

fn scene_rng(seed: u64, image_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is left unused so scene streams never collide with any
    // future global draws made from the bare seed.
    rng.set_stream(u64::from(image_index) + 1);
    rng
}

fn group_id_for(image_index: u32) -> String {
    format!("{image_index:06}")
}

/// First k of a partial Fisher-Yates shuffle of 0..pool.
fn sample_without_replacement(rng: &mut ChaCha8Rng, pool: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= pool);
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..k {
        let j = rng.gen_range(i..pool);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Rasterizes a cutout mask into background coordinates, clipping anything
/// that falls outside.
fn mask_in_background(mask: &BinaryMask, placement: Placement, bg_w: u32, bg_h: u32) -> BinaryMask {
    BinaryMask::from_fn(bg_w, bg_h, |x, y| {
        mask.get_clipped(
            i64::from(x) - i64::from(placement.x),
            i64::from(y) - i64::from(placement.y),
        )
    })
}

/// True when placing `new_mask` would cover more than `max_occlusion` of
/// any already-placed object.
fn occludes_too_much(new_mask: &BinaryMask, accepted: &[BinaryMask], max_occlusion: f32) -> bool {
    accepted.iter().any(|prev| {
        let prev_area = prev.count();
        if prev_area == 0 {
            return false;
        }
        let mut inter = 0usize;
        for y in 0..prev.height() {
            for x in 0..prev.width() {
                if prev.get(x, y) && new_mask.get(x, y) {
                    inter += 1;
                }
            }
        }
        inter as f64 / prev_area as f64 > f64::from(max_occlusion)
    })
}

fn place_with_retries(
    cfg: &SynthConfig,
    bg: &Image,
    asset: &ObjectCutout,
    cutout_index: usize,
    accepted: &mut Vec<BinaryMask>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<PlannedObject>, SynthError> {
    let a = &cfg.augment;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let augment = AugmentSpec {
            scale: rng.gen_range(a.scale[0]..=a.scale[1]),
            rotation_deg: rng.gen_range(a.rotation_deg[0]..=a.rotation_deg[1]),
            flip_h: rng.gen_bool(f64::from(a.flip_prob)),
            gain: rng.gen_range(a.gain[0]..=a.gain[1]),
        };
        let transformed = match transform_cutout(asset, &augment) {
            Ok(t) => t,
            Err(ComposeError::DegenerateResult { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let placement = match sample_placement(
            rng,
            bg.width(),
            bg.height(),
            transformed.image.width(),
            transformed.image.height(),
            cfg.max_truncation,
        ) {
            Ok(p) => p,
            Err(ComposeError::NoValidPlacement { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let in_bg = mask_in_background(&transformed.mask, placement, bg.width(), bg.height());
        if occludes_too_much(&in_bg, accepted, cfg.max_occlusion) {
            continue;
        }
        accepted.push(in_bg);
        return Ok(Some(PlannedObject {
            cutout_index,
            augment,
            placement,
        }));
    }
    Ok(None)
}

/// Plans scene `image_index`. Pure given config and assets.
pub fn plan_scene(
    cfg: &SynthConfig,
    assets: &AssetLibrary,
    image_index: u32,
) -> Result<ScenePlan, SynthError> {
    let mut rng = scene_rng(cfg.seed, image_index);
    let background_index = rng.gen_range(0..assets.backgrounds.len());
    let bg = &assets.backgrounds[background_index].image;
    let [lo, hi] = cfg.objects_per_image;
    let requested = rng.gen_range(lo..=hi) as usize;
    let pool = assets.cutouts.len();

    let chosen: Vec<usize> = match cfg.mode {
        // Foreground scenes replay real objects at their recorded spots, so
        // repeats make no sense; clamp to the pool instead.
        GapMode::Foreground => {
            let k = requested.min(pool);
            sample_without_replacement(&mut rng, pool, k)
        }
        GapMode::Instance => {
            if requested <= pool {
                sample_without_replacement(&mut rng, pool, requested)
            } else {
                (0..requested).map(|_| rng.gen_range(0..pool)).collect()
            }
        }
    };

    let mut objects = Vec::new();
    let mut accepted = Vec::new();
    for cutout_index in chosen {
        let asset = &assets.cutouts[cutout_index].cutout;
        match cfg.mode {
            GapMode::Foreground => {
                let (x, y) = asset.origin.ok_or_else(|| SynthError::BadAsset {
                    path: assets.cutouts[cutout_index].path.clone(),
                    reason: "foreground mode needs an origin in the sidecar".into(),
                })?;
                objects.push(PlannedObject {
                    cutout_index,
                    augment: AugmentSpec::default(),
                    placement: Placement { x, y },
                });
            }
            GapMode::Instance => {
                if let Some(obj) =
                    place_with_retries(cfg, bg, asset, cutout_index, &mut accepted, &mut rng)?
                {
                    objects.push(obj);
                }
            }
        }
    }
    if cfg.mode == GapMode::Instance && objects.is_empty() {
        return Err(ComposeError::EmptyScene.into());
    }

    // Blend choice is drawn last so that toggling all_blend_same_image
    // never perturbs the layout draws above.
    let blends = if cfg.all_blend_same_image {
        cfg.blend_methods.clone()
    } else {
        let i = rng.gen_range(0..cfg.blend_methods.len());
        vec![cfg.blend_methods[i].clone()]
    };

    Ok(ScenePlan {
        image_index,
        group_id: group_id_for(image_index),
        background_index,
        objects,
        blends,
    })
}

/// Renders every blend variant of a plan. Objects are transformed once and
/// shared across variants, which is what makes a group directly comparable.
pub fn render_scene(
    cfg: &SynthConfig,
    assets: &AssetLibrary,
    plan: &ScenePlan,
) -> Result<Vec<RenderedImage>, SynthError> {
    let bg = &assets.backgrounds[plan.background_index].image;
    let gap_cfg = cfg.gap.to_gap_config(cfg.mode);

    let mut transformed = Vec::with_capacity(plan.objects.len());
    for obj in &plan.objects {
        let asset = &assets.cutouts[obj.cutout_index].cutout;
        transformed.push((transform_cutout(asset, &obj.augment)?, obj.placement));
    }

    let mut outputs = Vec::with_capacity(plan.blends.len());
    for blend in &plan.blends {
        let tag = blend.tag();
        let method = blend.to_method();
        let placed: Vec<(ObjectCutout, Placement, BlendMethod)> = transformed
            .iter()
            .map(|(c, p)| (c.clone(), *p, method.clone()))
            .collect();
        let result = compose_scene(bg, &placed, &gap_cfg)?;
        let image = if matches!(method, BlendMethod::Inpaint) {
            fill_gap(&result, &cfg.inpaint.to_backend(plan.image_index))?
        } else {
            result.image.clone()
        };
        let image_id = format!("{}_{}", plan.group_id, tag);
        let mut annotations = result.annotations;
        for ann in &mut annotations {
            ann.image_id = image_id.clone();
            ann.blend_method = tag.to_string();
        }
        outputs.push(RenderedImage {
            blend_tag: tag.to_string(),
            image,
            annotations,
            gap: result.gap,
        });
    }
    debug_assert!(
        outputs.windows(2).all(|w| w[0].gap == w[1].gap),
        "gap band must not depend on blend method"
    );
    Ok(outputs)
}

struct SceneRecord {
    group: GroupEntry,
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationRecord>,
}

fn run_scene(
    cfg: &SynthConfig,
    assets: &AssetLibrary,
    image_index: u32,
) -> Result<SceneRecord, SynthError> {
    let plan = plan_scene(cfg, assets, image_index)?;
    let rendered = render_scene(cfg, assets, &plan)?;
    let background = assets.backgrounds[plan.background_index]
        .path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let gap = mask_to_rle(&rendered[0].gap);

    let mut images = Vec::with_capacity(rendered.len());
    let mut annotations = Vec::new();
    for r in rendered {
        let file = format!("{}_{}.png", plan.group_id, r.blend_tag);
        let path = cfg.output_dir.join(&file);
        save_image(&r.image, &path)?;
        images.push(ImageEntry {
            image_id: format!("{}_{}", plan.group_id, r.blend_tag),
            file,
            width: r.image.width(),
            height: r.image.height(),
            group_id: plan.group_id.clone(),
            blend_method: r.blend_tag,
            background: background.clone(),
        });
        annotations.extend(r.annotations);
    }
    Ok(SceneRecord {
        group: GroupEntry {
            group_id: plan.group_id,
            gap,
        },
        images,
        annotations,
    })
}

/// Generates the full dataset and writes images plus `manifest.json` into
/// the config's output directory.
///
/// `workers` bounds the rayon pool; `None` uses the global default. Output
/// is identical either way. Individual scene failures are recorded in the
/// manifest and tolerated up to 10% of the run.
pub fn generate_dataset(
    cfg: &SynthConfig,
    workers: Option<usize>,
) -> Result<DatasetManifest, SynthError> {
    cfg.validate()?;
    let assets = load_assets(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| SynthError::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;

    let indices: Vec<u32> = (0..cfg.num_images).collect();
    let run = |&image_index: &u32| {
        run_scene(cfg, &assets, image_index).map_err(|e| SceneFailure {
            image_index,
            group_id: group_id_for(image_index),
            error: e.to_string(),
        })
    };
    let results: Vec<Result<SceneRecord, SceneFailure>> = match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SynthError::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| indices.par_iter().map(run).collect())
        }
        None => indices.par_iter().map(run).collect(),
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() * 10 > cfg.num_images as usize {
        return Err(SynthError::TooManyFailures {
            failed: failures.len(),
            total: cfg.num_images,
            first: failures[0].error.clone(),
        });
    }

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut groups = Vec::new();
    for rec in records {
        groups.push(rec.group);
        images.extend(rec.images);
        annotations.extend(rec.annotations);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        images,
        annotations,
        groups,
        failures,
    };
    manifest.save(cfg.output_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// What a dry run learned without rendering anything.
#[derive(Debug)]
pub struct DryRunReport {
    pub backgrounds: usize,
    pub cutouts: usize,
    pub scenes_planned: u32,
    pub planned_objects: u64,
    pub failures: Vec<SceneFailure>,
}

/// Validates config and assets and plans every scene, writing nothing.
pub fn dry_run(cfg: &SynthConfig) -> Result<DryRunReport, SynthError> {
    cfg.validate()?;
    let assets = load_assets(cfg)?;
    let mut failures = Vec::new();
    let mut planned_objects = 0u64;
    for image_index in 0..cfg.num_images {
        match plan_scene(cfg, &assets, image_index) {
            Ok(plan) => planned_objects += plan.objects.len() as u64,
            Err(e) => failures.push(SceneFailure {
                image_index,
                group_id: group_id_for(image_index),
                error: e.to_string(),
            }),
        }
    }
    if failures.len() * 10 > cfg.num_images as usize {
        return Err(SynthError::TooManyFailures {
            failed: failures.len(),
            total: cfg.num_images,
            first: failures[0].error.clone(),
        });
    }
    Ok(DryRunReport {
        backgrounds: assets.backgrounds.len(),
        cutouts: assets.cutouts.len(),
        scenes_planned: cfg.num_images,
        planned_objects,
        failures,
    })
}
