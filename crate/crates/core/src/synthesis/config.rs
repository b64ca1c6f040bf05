//! Dataset synthesis configuration.
//!
//! Configs are JSON documents with strict top-level field checking, so a
//! typoed key fails loudly instead of silently running with a default. All
//! two-element arrays are inclusive `[low, high]` ranges.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compositor::{BlendMethod, GapConfig};
use crate::inpaint::{InpaintBackend, PatchMatchParams, ServiceEndpoint};
use crate::morphology::{GapMode, SeShape, StructElem};
use crate::poisson::{GuidanceMode, PoissonParams};
use crate::synthesis::SynthError;

/// Top-level synthesis configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Pipeline flavor: `instance` pastes with augmentation at random
    /// placements, `foreground` pastes at recorded source positions and
    /// marks the gap as ignore regions.
    pub mode: GapMode,
    pub seed: u64,
    pub num_images: u32,
    pub objects_per_image: [u32; 2],
    pub background_dir: PathBuf,
    pub cutout_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub augment: AugmentRanges,
    pub blend_methods: Vec<BlendMethodConfig>,
    /// Render every blend method for each planned scene instead of sampling
    /// one per image, producing directly comparable image groups.
    #[serde(default)]
    pub all_blend_same_image: bool,
    #[serde(default)]
    pub gap: GapElems,
    /// Backend used by the `inpaint` blend method.
    #[serde(default)]
    pub inpaint: InpaintBackendConfig,
    /// Largest fraction of a pasted object's area allowed off-image.
    #[serde(default = "default_max_truncation")]
    pub max_truncation: f32,
    /// Largest fraction of an earlier object a later paste may cover.
    #[serde(default = "default_max_occlusion")]
    pub max_occlusion: f32,
}

fn default_max_truncation() -> f32 {
    0.25
}

fn default_max_occlusion() -> f32 {
    0.5
}

/// Uniform sampling ranges for cutout augmentation. Defaults are all
/// identity, and foreground mode ignores the block entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    pub scale: [f32; 2],
    pub rotation_deg: [f32; 2],
    pub flip_prob: f32,
    pub gain: [f32; 2],
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            scale: [1.0, 1.0],
            rotation_deg: [0.0, 0.0],
            flip_prob: 0.0,
            gain: [1.0, 1.0],
        }
    }
}

/// Structuring elements for the gap band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapElems {
    pub shape: SeShape,
    pub r_out: u32,
    pub r_in: u32,
}

impl Default for GapElems {
    fn default() -> Self {
        GapElems {
            shape: SeShape::Square,
            r_out: 3,
            r_in: 3,
        }
    }
}

impl GapElems {
    pub fn to_gap_config(self, mode: GapMode) -> GapConfig {
        GapConfig {
            mode,
            se_out: StructElem::new(self.shape, self.r_out),
            se_in: StructElem::new(self.shape, self.r_in),
        }
    }
}

/// One entry of `blend_methods`, tagged by `method`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BlendMethodConfig {
    Noblend,
    Gaussian {
        #[serde(default = "default_sigma")]
        sigma: f32,
    },
    Poisson {
        #[serde(default = "default_guidance")]
        guidance: GuidanceMode,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default)]
        max_iter: Option<usize>,
    },
    Inpaint,
}

fn default_sigma() -> f32 {
    2.0
}

fn default_guidance() -> GuidanceMode {
    GuidanceMode::SourceGradient
}

fn default_tol() -> f64 {
    1e-6
}

impl BlendMethodConfig {
    pub fn to_method(&self) -> BlendMethod {
        match *self {
            BlendMethodConfig::Noblend => BlendMethod::NoBlend,
            BlendMethodConfig::Gaussian { sigma } => BlendMethod::Gaussian { sigma },
            BlendMethodConfig::Poisson {
                guidance,
                tol,
                max_iter,
            } => BlendMethod::Poisson(PoissonParams {
                guidance,
                tol,
                max_iter,
            }),
            BlendMethodConfig::Inpaint => BlendMethod::Inpaint,
        }
    }

    /// Stable name used in file names and manifests.
    pub fn tag(&self) -> &'static str {
        self.to_method().tag()
    }
}

/// Backend for the `inpaint` blend method, tagged by `backend`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum InpaintBackendConfig {
    Patchmatch(PatchMatchParams),
    Service(ServiceEndpoint),
}

impl Default for InpaintBackendConfig {
    fn default() -> Self {
        InpaintBackendConfig::Patchmatch(PatchMatchParams::default())
    }
}

impl InpaintBackendConfig {
    /// Materializes the backend, mixing the image index into the PatchMatch
    /// seed so every image gets its own deterministic stream.
    pub fn to_backend(&self, image_index: u32) -> InpaintBackend {
        match self {
            InpaintBackendConfig::Patchmatch(params) => {
                let mut params = params.clone();
                params.seed = params.seed.wrapping_add(image_index as u64);
                InpaintBackend::PatchMatch(params)
            }
            InpaintBackendConfig::Service(ep) => InpaintBackend::Service(ep.clone()),
        }
    }
}

impl SynthConfig {
    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            SynthError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| {
            SynthError::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every semantic constraint the type system cannot.
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.num_images == 0 {
            return fail("num_images must be at least 1".into());
        }
        let [obj_lo, obj_hi] = self.objects_per_image;
        if obj_lo > obj_hi {
            return fail(format!("objects_per_image range [{obj_lo}, {obj_hi}] is inverted"));
        }
        let a = &self.augment;
        if !(a.scale[0] > 0.0 && a.scale[0] <= a.scale[1]) {
            return fail(format!("augment.scale range {:?} invalid", a.scale));
        }
        if a.rotation_deg[0] > a.rotation_deg[1] {
            return fail(format!("augment.rotation_deg range {:?} inverted", a.rotation_deg));
        }
        if !(0.0..=1.0).contains(&a.flip_prob) {
            return fail(format!("augment.flip_prob {} outside [0, 1]", a.flip_prob));
        }
        if !(a.gain[0] > 0.0 && a.gain[0] <= a.gain[1]) {
            return fail(format!("augment.gain range {:?} invalid", a.gain));
        }
        if self.blend_methods.is_empty() {
            return fail("blend_methods must not be empty".into());
        }
        for m in &self.blend_methods {
            match m {
                BlendMethodConfig::Gaussian { sigma } if *sigma <= 0.0 => {
                    return fail(format!("gaussian sigma {sigma} must be positive"));
                }
                BlendMethodConfig::Poisson { tol, .. } if *tol <= 0.0 => {
                    return fail(format!("poisson tol {tol} must be positive"));
                }
                _ => {}
            }
        }
        if self.all_blend_same_image {
            let mut tags: Vec<&str> = self.blend_methods.iter().map(|m| m.tag()).collect();
            tags.sort_unstable();
            tags.dedup();
            if tags.len() != self.blend_methods.len() {
                return fail(
                    "all_blend_same_image needs distinct blend methods, since the \
                     method tag names each file in a group"
                        .into(),
                );
            }
        }
        if self.gap.r_out < 1 || self.gap.r_in < 1 {
            return fail("gap structuring element radii must be at least 1".into());
        }
        if let InpaintBackendConfig::Patchmatch(p) = &self.inpaint {
            if p.patch_size < 3 || p.patch_size % 2 == 0 {
                return fail(format!("patch_size {} must be odd and >= 3", p.patch_size));
            }
            if !(p.search_decay > 0.0 && p.search_decay < 1.0) {
                return fail(format!("search_decay {} must be in (0, 1)", p.search_decay));
            }
        }
        if !(0.0..1.0).contains(&self.max_truncation) {
            return fail(format!("max_truncation {} outside [0, 1)", self.max_truncation));
        }
        if !(0.0..=1.0).contains(&self.max_occlusion) {
            return fail(format!("max_occlusion {} outside [0, 1]", self.max_occlusion));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "mode": "instance",
            "seed": 7,
            "num_images": 4,
            "objects_per_image": [1, 3],
            "background_dir": "bg",
            "cutout_dir": "cut",
            "output_dir": "out",
            "blend_methods": [{"method": "noblend"}]
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.augment, AugmentRanges::default());
        assert_eq!(cfg.gap, GapElems::default());
        assert!(!cfg.all_blend_same_image);
        assert_eq!(cfg.max_truncation, 0.25);
        assert_eq!(cfg.max_occlusion, 0.5);
        assert!(matches!(cfg.inpaint, InpaintBackendConfig::Patchmatch(_)));
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let mut v = minimal_json();
        v["num_imgaes"] = serde_json::json!(10);
        let err = serde_json::from_value::<SynthConfig>(v).unwrap_err();
        assert!(err.to_string().contains("num_imgaes"), "{err}");
    }

    #[test]
    fn blend_method_tags_roundtrip() {
        let json = serde_json::json!([
            {"method": "noblend"},
            {"method": "gaussian", "sigma": 1.5},
            {"method": "poisson", "guidance": "mixed_gradient", "tol": 1e-7},
            {"method": "inpaint"}
        ]);
        let methods: Vec<BlendMethodConfig> = serde_json::from_value(json).unwrap();
        let tags: Vec<&str> = methods.iter().map(|m| m.tag()).collect();
        assert_eq!(tags, ["noblend", "gaussian", "poisson", "inpaint"]);
        let back = serde_json::to_value(&methods).unwrap();
        let again: Vec<BlendMethodConfig> = serde_json::from_value(back).unwrap();
        assert_eq!(methods, again);
    }

    #[test]
    fn gaussian_sigma_defaults_to_two() {
        let m: BlendMethodConfig = serde_json::from_value(serde_json::json!({"method": "gaussian"})).unwrap();
        assert_eq!(m, BlendMethodConfig::Gaussian { sigma: 2.0 });
    }

    #[test]
    fn service_backend_parses() {
        let mut v = minimal_json();
        v["inpaint"] = serde_json::json!({
            "backend": "service",
            "url": "http://inpaint.internal:9000",
            "timeout_ms": 5000,
            "retries": 1
        });
        let cfg: SynthConfig = serde_json::from_value(v).unwrap();
        match &cfg.inpaint {
            InpaintBackendConfig::Service(ep) => {
                assert_eq!(ep.url, "http://inpaint.internal:9000");
                assert_eq!(ep.timeout_ms, 5000);
                assert_eq!(ep.retries, 1);
                assert_eq!(ep.backoff_ms, 500);
            }
            other => panic!("expected service backend, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut bad_scale: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        bad_scale.augment.scale = [0.0, 1.0];
        assert!(bad_scale.validate().is_err());

        let mut inverted: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        inverted.objects_per_image = [3, 1];
        assert!(inverted.validate().is_err());

        let mut trunc: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        trunc.max_truncation = 1.0;
        assert!(trunc.validate().is_err());

        let mut no_methods: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        no_methods.blend_methods.clear();
        assert!(no_methods.validate().is_err());
    }

    #[test]
    fn all_blend_requires_distinct_tags() {
        let mut cfg: SynthConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.blend_methods = vec![
            BlendMethodConfig::Gaussian { sigma: 1.0 },
            BlendMethodConfig::Gaussian { sigma: 3.0 },
        ];
        cfg.validate().unwrap();
        cfg.all_blend_same_image = true;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn patchmatch_seed_mixing_is_per_image() {
        let backend = InpaintBackendConfig::default();
        let a = backend.to_backend(3);
        let b = backend.to_backend(4);
        match (a, b) {
            (InpaintBackend::PatchMatch(pa), InpaintBackend::PatchMatch(pb)) => {
                assert_eq!(pa.seed, 3);
                assert_eq!(pb.seed, 4);
            }
            _ => panic!("expected patchmatch backends"),
        }
    }
}
