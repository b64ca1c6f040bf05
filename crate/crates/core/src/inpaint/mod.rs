//! Hole filling for blending gaps: a local PatchMatch synthesizer, a client
//! for remote inpainting services, and the free-form mask generator used to
//! exercise them.

mod freeform;
mod patchmatch;
mod service;
mod stub;

pub use freeform::{generate_freeform_mask, FreeformParams};
pub use patchmatch::{compute_nnf, inpaint_patchmatch, NNField, NnfEntry, PatchMatchParams};
pub use service::{inpaint_via_service, ServiceEndpoint};
pub use stub::{StubFill, StubOptions, StubServer};

use crate::compositor::CompositeResult;
use crate::imaging::Image;

#[derive(Debug, thiserror::Error)]
pub enum InpaintError {
    #[error(
        "no drawn mask hit coverage [{lo:.3}, {hi:.3}] in {attempts} attempts \
         (last draw covered {last:.3})"
    )]
    CoverageUnsatisfiable {
        attempts: u32,
        last: f64,
        lo: f64,
        hi: f64,
    },
    #[error("hole mask {mask_w}x{mask_h} does not match image {img_w}x{img_h}")]
    DimensionMismatch {
        img_w: u32,
        img_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error(
        "no fully-known {patch}x{patch} window exists; the image is too small \
         or the hole leaves no clean source material"
    )]
    NoValidTarget { patch: u32 },
    #[error("inpainting service failed after {attempts} attempts: {message}")]
    RemoteFailure { attempts: u32, message: String },
    #[error("inpainting service did not answer within {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("inpainting service returned an unusable response: {0}")]
    BadResponse(String),
}

/// Which engine fills gap pixels.
#[derive(Clone, Debug)]
pub enum InpaintBackend {
    PatchMatch(PatchMatchParams),
    Service(ServiceEndpoint),
}

/// Fills a composed scene's gap band in place of the pasted seams. A scene
/// with an empty gap passes through unchanged.
pub fn fill_gap(result: &CompositeResult, backend: &InpaintBackend) -> Result<Image, InpaintError> {
    if result.gap.is_empty() {
        return Ok(result.image.clone());
    }
    match backend {
        InpaintBackend::PatchMatch(params) => {
            inpaint_patchmatch(&result.image, &result.gap, params)
        }
        InpaintBackend::Service(endpoint) => {
            inpaint_via_service(endpoint, &result.image, &result.gap)
        }
    }
}
