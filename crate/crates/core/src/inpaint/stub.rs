//! In-process stand-in for an inpainting service.
//!
//! Speaks the same wire protocol as a real deployment so the client, the CLI,
//! and operators can be exercised without a model. Fills are deliberately
//! crude (constant gray, echo, box blur) and failure injection lets tests
//! script bad days: the first N requests can answer 500, and every request
//! can be delayed.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::imaging::{decode_mask_png, decode_png, encode_png, BinaryMask, Image};

/// How the stub fills hole pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StubFill {
    /// Constant mid-gray, handy for bit-exact assertions.
    Gray,
    /// Returns the input unchanged.
    Echo,
    /// Box blur of the whole image, radius 4.
    Blur,
}

#[derive(Clone, Debug)]
pub struct StubOptions {
    pub fill: StubFill,
    /// Answer 500 to this many requests before behaving.
    pub fail_first: u32,
    /// Sleep this long before answering each request.
    pub delay_ms: u64,
}

impl Default for StubOptions {
    fn default() -> Self {
        StubOptions {
            fill: StubFill::Gray,
            fail_first: 0,
            delay_ms: 0,
        }
    }
}

/// A running stub service; shuts down on drop.
pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<AtomicU32>,
    stop: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    /// Binds 127.0.0.1 on an ephemeral port.
    pub fn spawn(opts: StubOptions) -> std::io::Result<Self> {
        Self::spawn_on(0, opts)
    }

    /// Binds 127.0.0.1 on the given port (0 for ephemeral).
    pub fn spawn_on(port: u16, opts: StubOptions) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(("127.0.0.1", port))
            .map_err(|e| std::io::Error::other(format!("binding stub server: {e}")))?;
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => a,
            #[allow(unreachable_patterns)]
            _ => unreachable!("stub binds a tcp socket"),
        };
        let requests = Arc::new(AtomicU32::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = requests.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle_request(req, &opts, &requests, &stop),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(StubServer {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for a [`super::ServiceEndpoint`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, including injected failures.
    pub fn request_count(&self) -> u32 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Sleeps in short slices so a dropped server doesn't hang on an in-flight
/// delayed request.
fn interruptible_sleep(total_ms: u64, stop: &AtomicBool) {
    let mut remaining = total_ms;
    while remaining > 0 && !stop.load(Ordering::SeqCst) {
        let slice = remaining.min(10);
        std::thread::sleep(Duration::from_millis(slice));
        remaining -= slice;
    }
}

fn respond_text(req: tiny_http::Request, code: u16, message: &str) {
    let response = tiny_http::Response::from_string(message).with_status_code(code);
    let _ = req.respond(response);
}

fn handle_request(
    mut req: tiny_http::Request,
    opts: &StubOptions,
    requests: &AtomicU32,
    stop: &AtomicBool,
) {
    let count = requests.fetch_add(1, Ordering::SeqCst) + 1;
    if opts.delay_ms > 0 {
        interruptible_sleep(opts.delay_ms, stop);
    }
    if req.url() != "/inpaint" || req.method() != &tiny_http::Method::Post {
        respond_text(req, 404, "only POST /inpaint is served");
        return;
    }
    if count <= opts.fail_first {
        respond_text(req, 500, "injected failure");
        return;
    }

    let boundary = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Content-Type"))
        .map(|h| h.value.as_str().to_string())
        .and_then(|ct| multipart_boundary(&ct));
    let Some(boundary) = boundary else {
        respond_text(req, 400, "expected multipart/form-data with a boundary");
        return;
    };
    let mut body = Vec::new();
    if std::io::Read::read_to_end(req.as_reader(), &mut body).is_err() {
        respond_text(req, 400, "unreadable request body");
        return;
    }
    let (image_bytes, mask_bytes) = match parse_parts(&body, &boundary) {
        Ok(parts) => parts,
        Err(msg) => {
            respond_text(req, 400, &msg);
            return;
        }
    };
    let img = match decode_png(&image_bytes) {
        Ok(i) => i,
        Err(e) => {
            respond_text(req, 400, &format!("image part: {e}"));
            return;
        }
    };
    let mask = match decode_mask_png(&mask_bytes) {
        Ok(m) => m,
        Err(e) => {
            respond_text(req, 400, &format!("mask part: {e}"));
            return;
        }
    };
    if img.width() != mask.width() || img.height() != mask.height() {
        respond_text(req, 400, "image and mask dimensions disagree");
        return;
    }

    let filled = apply_fill(&img, &mask, opts.fill);
    match encode_png(&filled) {
        Ok(bytes) => {
            let response = tiny_http::Response::from_data(bytes).with_header(
                tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"image/png"[..])
                    .expect("static header"),
            );
            let _ = req.respond(response);
        }
        Err(e) => respond_text(req, 500, &format!("encoding response: {e}")),
    }
}

fn apply_fill(img: &Image, hole: &BinaryMask, fill: StubFill) -> Image {
    match fill {
        StubFill::Echo => img.clone(),
        StubFill::Gray => {
            let mut out = img.clone();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if hole.get(x, y) {
                        out.set(x, y, [128, 128, 128]);
                    }
                }
            }
            out
        }
        StubFill::Blur => box_blur(img, 4),
    }
}

fn box_blur(img: &Image, radius: i64) -> Image {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = Image::new(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0u64; 3];
            let mut count = 0u64;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    let px = img.get(sx as u32, sy as u32);
                    for c in 0..3 {
                        sum[c] += px[c] as u64;
                    }
                    count += 1;
                }
            }
            out.set(
                x as u32,
                y as u32,
                [0, 1, 2].map(|c| ((2 * sum[c] + count) / (2 * count)) as u8),
            );
        }
    }
    out
}

fn multipart_boundary(content_type: &str) -> Option<String> {
    let lower = content_type.to_ascii_lowercase();
    if !lower.starts_with("multipart/form-data") {
        return None;
    }
    content_type.split(';').find_map(|piece| {
        let piece = piece.trim();
        piece
            .strip_prefix("boundary=")
            .map(|b| b.trim_matches('"').to_string())
    })
}

/// Minimal multipart/form-data parser: enough for the two named file parts
/// the protocol uses.
fn parse_parts(body: &[u8], boundary: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let marker = format!("--{boundary}");
    let marker = marker.as_bytes();
    let mut image = None;
    let mut mask = None;
    let mut pos = 0usize;
    let positions: Vec<usize> = find_all(body, marker);
    if positions.len() < 2 {
        return Err("malformed multipart body".into());
    }
    for win in positions.windows(2) {
        pos = win[0] + marker.len();
        // Skip the CRLF after the boundary line; a trailing "--" means the
        // terminator, handled by the windows() bound.
        if body[pos..].starts_with(b"\r\n") {
            pos += 2;
        }
        let chunk = &body[pos..win[1]];
        let Some(header_end) = find(chunk, b"\r\n\r\n") else {
            continue;
        };
        let headers = String::from_utf8_lossy(&chunk[..header_end]);
        let payload_end = chunk.len().saturating_sub(2); // trailing CRLF
        let payload = chunk[header_end + 4..payload_end].to_vec();
        let name = headers
            .lines()
            .find(|l| l.to_ascii_lowercase().starts_with("content-disposition"))
            .and_then(|l| {
                l.split(';')
                    .map(str::trim)
                    .find_map(|p| p.strip_prefix("name="))
                    .map(|n| n.trim_matches('"').to_string())
            });
        match name.as_deref() {
            Some("image") => image = Some(payload),
            Some("mask") => mask = Some(payload),
            _ => {}
        }
    }
    let _ = pos;
    match (image, mask) {
        (Some(i), Some(m)) => Ok((i, m)),
        (None, _) => Err("missing part 'image'".into()),
        (_, None) => Err("missing part 'mask'".into()),
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

fn find_all(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(p) = find(&haystack[start..], needle) {
        out.push(start + p);
        start += p + needle.len();
    }
    out
}
