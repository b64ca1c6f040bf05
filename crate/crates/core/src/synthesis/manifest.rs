//! Dataset manifest: one JSON document describing every generated image,
//! annotation, and comparison group, plus an echo of the config that
//! produced them. The manifest is the only index a consumer needs; image
//! files carry no metadata of their own.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compositor::AnnotationRecord;
use crate::imaging::RleMask;
use crate::synthesis::{SynthConfig, SynthError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: SynthConfig,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationRecord>,
    /// One entry per planned scene. Images in a group share background,
    /// placements, and the recorded gap band; they differ only in blend.
    pub groups: Vec<GroupEntry>,
    pub failures: Vec<SceneFailure>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub image_id: String,
    /// File name relative to the manifest's directory.
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub group_id: String,
    pub blend_method: String,
    /// File name of the source background.
    pub background: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub group_id: String,
    /// Blending-gap band for the scene, shared by every image in the group.
    pub gap: RleMask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFailure {
    pub image_index: u32,
    pub group_id: String,
    pub error: String,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut writer = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)
            .map_err(|e| SynthError::BadManifest(e.to_string()))?;
        use std::io::Write;
        writer.write_all(b"\n").map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        writer.flush().map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| SynthError::BadManifest(format!("{}: {e}", path.display())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SynthError::BadManifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    /// Cross-checks internal references and, given the dataset directory,
    /// that every listed image file exists.
    pub fn check_consistency(&self, base_dir: Option<&Path>) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadManifest(msg));
        let mut ids = std::collections::BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.image_id.as_str()) {
                return bad(format!("duplicate image_id {}", img.image_id));
            }
        }
        let groups: std::collections::BTreeSet<&str> =
            self.groups.iter().map(|g| g.group_id.as_str()).collect();
        for img in &self.images {
            if !groups.contains(img.group_id.as_str()) {
                return bad(format!(
                    "image {} references unknown group {}",
                    img.image_id, img.group_id
                ));
            }
        }
        for ann in &self.annotations {
            if !ids.contains(ann.image_id.as_str()) {
                return bad(format!(
                    "annotation references unknown image {}",
                    ann.image_id
                ));
            }
        }
        if let Some(dir) = base_dir {
            for img in &self.images {
                let path = dir.join(&img.file);
                if !path.is_file() {
                    return bad(format!("listed file {} does not exist", path.display()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{mask_to_rle, BinaryMask};

    fn tiny_manifest() -> DatasetManifest {
        let config: SynthConfig = serde_json::from_value(serde_json::json!({
            "mode": "instance",
            "seed": 1,
            "num_images": 1,
            "objects_per_image": [1, 1],
            "background_dir": "bg",
            "cutout_dir": "cut",
            "output_dir": "out",
            "blend_methods": [{"method": "noblend"}]
        }))
        .unwrap();
        let gap = mask_to_rle(&BinaryMask::from_fn(4, 4, |x, _| x == 2));
        DatasetManifest {
            version: MANIFEST_VERSION,
            config,
            images: vec![ImageEntry {
                image_id: "000000_noblend".into(),
                file: "000000_noblend.png".into(),
                width: 4,
                height: 4,
                group_id: "000000".into(),
                blend_method: "noblend".into(),
                background: "bg.png".into(),
            }],
            annotations: vec![],
            groups: vec![GroupEntry {
                group_id: "000000".into(),
                gap,
            }],
            failures: vec![],
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.json");
        let manifest = tiny_manifest();
        manifest.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.images, manifest.images);
        assert_eq!(loaded.groups, manifest.groups);
        assert_eq!(loaded.version, MANIFEST_VERSION);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.json");
        let mut manifest = tiny_manifest();
        manifest.version = 99;
        manifest.save(&path).unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn dangling_group_reference_fails_consistency() {
        let mut manifest = tiny_manifest();
        manifest.groups.clear();
        let err = manifest.check_consistency(None).unwrap_err();
        assert!(err.to_string().contains("unknown group"), "{err}");
    }

    #[test]
    fn missing_file_fails_consistency_with_base_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest();
        manifest.check_consistency(None).unwrap();
        let err = manifest.check_consistency(Some(tmp.path())).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }
}
