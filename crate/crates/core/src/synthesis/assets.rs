//! Background and cutout libraries loaded from disk.
//!
//! Directory listings are sorted by file name before use, so asset indices
//! (and therefore everything sampled from them) are stable across platforms
//! and runs.
//!
//! A cutout named `car_03.png` is described by up to two sibling files:
//! `car_03.mask.png` (required, nonzero pixels mark the object) and
//! `car_03.json` (optional metadata). The sidecar may carry a `category`
//! string and an `origin` pixel position recording where the object sat in
//! its source frame; without a sidecar the category falls back to the file
//! stem and the origin is unknown.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::compositor::ObjectCutout;
use crate::imaging::{load_image, load_mask};
use crate::synthesis::{SynthConfig, SynthError};

#[derive(Debug)]
pub struct BackgroundAsset {
    pub path: PathBuf,
    pub image: crate::imaging::Image,
}

#[derive(Debug)]
pub struct CutoutAsset {
    pub path: PathBuf,
    pub cutout: ObjectCutout,
}

#[derive(Debug)]
pub struct AssetLibrary {
    pub backgrounds: Vec<BackgroundAsset>,
    pub cutouts: Vec<CutoutAsset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    category: Option<String>,
    origin: Option<[i32; 2]>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn is_mask_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".mask.png"))
}

/// Image files under `dir`, sorted by name. Subdirectories are not entered.
fn list_images(dir: &Path, kind: &'static str) -> Result<Vec<PathBuf>, SynthError> {
    let entries = std::fs::read_dir(dir).map_err(|_| SynthError::EmptyAssetDir {
        kind,
        dir: dir.to_path_buf(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_image_file(p) && !is_mask_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SynthError::EmptyAssetDir {
            kind,
            dir: dir.to_path_buf(),
        });
    }
    Ok(files)
}

fn load_cutout(path: &Path) -> Result<ObjectCutout, SynthError> {
    let bad = |reason: String| SynthError::BadAsset {
        path: path.to_path_buf(),
        reason,
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| bad("file name is not valid UTF-8".into()))?
        .to_string();
    let mask_path = path.with_file_name(format!("{stem}.mask.png"));
    if !mask_path.is_file() {
        return Err(bad(format!("missing mask file {}", mask_path.display())));
    }
    let image = load_image(path)?;
    let mask = load_mask(&mask_path)?;

    let mut category = stem;
    let mut origin = None;
    let sidecar_path = path.with_extension("json");
    if sidecar_path.is_file() {
        let text = std::fs::read_to_string(&sidecar_path)
            .map_err(|e| bad(format!("cannot read sidecar: {e}")))?;
        let sidecar: Sidecar = serde_json::from_str(&text)
            .map_err(|e| bad(format!("sidecar {}: {e}", sidecar_path.display())))?;
        if let Some(c) = sidecar.category {
            category = c;
        }
        origin = sidecar.origin.map(|[x, y]| (x, y));
    }

    ObjectCutout::new(image, mask, category, origin).map_err(|e| bad(e.to_string()))
}

/// Loads every background and cutout referenced by the config.
pub fn load_assets(cfg: &SynthConfig) -> Result<AssetLibrary, SynthError> {
    let backgrounds = list_images(&cfg.background_dir, "backgrounds")?
        .into_iter()
        .map(|path| {
            let image = load_image(&path)?;
            Ok(BackgroundAsset { path, image })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let cutouts = list_images(&cfg.cutout_dir, "cutouts")?
        .into_iter()
        .map(|path| {
            let cutout = load_cutout(&path)?;
            Ok(CutoutAsset { path, cutout })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    Ok(AssetLibrary {
        backgrounds,
        cutouts,
    })
}
