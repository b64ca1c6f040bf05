//! Client for a remote inpainting service.
//!
//! The wire contract: `POST {url}/inpaint` with multipart/form-data parts
//! `image` (PNG, 3-channel) and `mask` (PNG, single channel, 255 marking hole
//! pixels); the service answers 200 with an `image/png` body of identical
//! dimensions. The client composites the answer so that only hole pixels are
//! taken from the service.

use std::time::Duration;

use crate::imaging::{decode_png, encode_mask_png, encode_png, BinaryMask, Image};
use crate::inpaint::InpaintError;

/// Connection settings for a remote inpainting service.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ServiceEndpoint {
    /// Base URL; the client appends `/inpaint`.
    pub url: String,
    /// Per-request deadline. A timeout is terminal, not retried, so callers
    /// get an answer within roughly this budget.
    pub timeout_ms: u64,
    /// Additional attempts after a failed one (bad status or transport
    /// error).
    pub retries: u32,
    /// Backoff before the first retry; doubles per further retry.
    pub backoff_ms: u64,
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        ServiceEndpoint {
            url: "http://127.0.0.1:8080".into(),
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 500,
        }
    }
}

/// Sends one image/mask pair to the service and composites the returned fill
/// into the hole pixels.
///
/// Non-200 statuses and transport errors are retried with exponential
/// backoff until the attempt budget (`retries + 1`) is spent, then reported
/// as [`InpaintError::RemoteFailure`]. A request hitting the deadline fails
/// immediately as [`InpaintError::Timeout`]. A response that is not decodable
/// PNG of matching dimensions is [`InpaintError::BadResponse`], also without
/// retry, since the service answered deliberately.
pub fn inpaint_via_service(
    endpoint: &ServiceEndpoint,
    img: &Image,
    hole: &BinaryMask,
) -> Result<Image, InpaintError> {
    if img.width() != hole.width() || img.height() != hole.height() {
        return Err(InpaintError::DimensionMismatch {
            img_w: img.width(),
            img_h: img.height(),
            mask_w: hole.width(),
            mask_h: hole.height(),
        });
    }
    let image_png =
        encode_png(img).map_err(|e| InpaintError::BadResponse(format!("encoding request: {e}")))?;
    let mask_png = encode_mask_png(hole)
        .map_err(|e| InpaintError::BadResponse(format!("encoding request: {e}")))?;

    let client = reqwest::blocking::Client::builder()
        .build()
        .map_err(|e| InpaintError::RemoteFailure {
            attempts: 0,
            message: format!("building http client: {e}"),
        })?;
    let url = format!("{}/inpaint", endpoint.url.trim_end_matches('/'));
    let attempts = endpoint.retries + 1;
    let mut last_error = String::new();

    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = endpoint.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let form = reqwest::blocking::multipart::Form::new()
            .part(
                "image",
                reqwest::blocking::multipart::Part::bytes(image_png.clone())
                    .file_name("image.png")
                    .mime_str("image/png")
                    .expect("static mime type"),
            )
            .part(
                "mask",
                reqwest::blocking::multipart::Part::bytes(mask_png.clone())
                    .file_name("mask.png")
                    .mime_str("image/png")
                    .expect("static mime type"),
            );
        let response = client
            .post(&url)
            .multipart(form)
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(InpaintError::Timeout {
                    timeout_ms: endpoint.timeout_ms,
                })
            }
            Err(e) => {
                last_error = format!("transport error: {e}");
                continue;
            }
        };
        let status = response.status();
        if !status.is_success() {
            last_error = format!("service answered {status}");
            continue;
        }
        let body = match response.bytes() {
            Ok(b) => b,
            Err(e) if e.is_timeout() => {
                return Err(InpaintError::Timeout {
                    timeout_ms: endpoint.timeout_ms,
                })
            }
            Err(e) => {
                last_error = format!("reading response body: {e}");
                continue;
            }
        };
        let fill = decode_png(&body)
            .map_err(|e| InpaintError::BadResponse(format!("undecodable body: {e}")))?;
        if fill.width() != img.width() || fill.height() != img.height() {
            return Err(InpaintError::BadResponse(format!(
                "service returned {}x{} for a {}x{} request",
                fill.width(),
                fill.height(),
                img.width(),
                img.height()
            )));
        }
        let mut out = img.clone();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if hole.get(x, y) {
                    out.set(x, y, fill.get(x, y));
                }
            }
        }
        return Ok(out);
    }
    Err(InpaintError::RemoteFailure {
        attempts,
        message: last_error,
    })
}
