//! Cut-and-paste scene synthesis with seam repair.
//!
//! The crate builds detection and segmentation training data by pasting
//! object cutouts onto background images. Pasting leaves a telltale seam
//! along every object boundary, so the pipeline derives a "blending gap"
//! band around each paste and repairs it, either by smoothing across it,
//! solving a gradient-domain system over it, or filling it with an
//! inpainting backend that never sees what the band used to contain.
//!
//! Module map:
//!
//! * [`imaging`]: RGB image and binary mask containers, PNG/JPEG IO, RLE.
//! * [`morphology`]: binary dilation and erosion, gap band construction.
//! * [`compositor`]: cutout augmentation, placement, pasting, scene assembly.
//! * [`poisson`]: gradient-domain blending via conjugate gradients.
//! * [`inpaint`]: PatchMatch hole filling, free-form hole masks, and an HTTP
//!   client (plus a test stub server) for external inpainting services.
//! * [`background`]: temporal median background estimation.
//! * [`evaluation`]: detection AP and foreground F-measure scoring.
//! * [`synthesis`]: config-driven dataset planning, rendering, manifests.
//!
//! The commonly shared types are re-exported at the crate root.

pub mod background;
pub mod compositor;
pub mod evaluation;
pub mod imaging;
pub mod inpaint;
pub mod morphology;
pub mod poisson;
pub mod synthesis;

pub use compositor::{
    compose_scene, transform_cutout, AnnotationRecord, AugmentSpec, BlendMethod,
    ComposeError, CompositeResult, GapConfig, ObjectCutout, Placement,
};
pub use imaging::{BinaryMask, Image, ImageError, RleMask};
pub use inpaint::{fill_gap, InpaintBackend, InpaintError, PatchMatchParams, ServiceEndpoint};
pub use morphology::{GapMode, SeShape, StructElem};
pub use poisson::{GuidanceMode, PoissonError, PoissonParams};
pub use synthesis::{DatasetManifest, SynthConfig, SynthError};
