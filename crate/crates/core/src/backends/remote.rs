//! HTTP client for out-of-process segmentation and inpainting services.
//!
//! Wire contract:
//! - `POST {endpoint}/segment`, body `image/png`; 200 answers with a grayscale PNG mask of
//!   identical dimensions (255 = artifact).
//! - `POST {endpoint}/inpaint`, multipart fields `image` (PNG), `mask` (PNG), `prompt`
//!   (UTF-8); 200 answers with a PNG image of identical dimensions.
//! - `GET {endpoint}/health` answers 200 with `{"status":"ok"}`.
//! - Any non-200 response carries `{"error": "..."}`.

use std::sync::Mutex;
use std::time::Duration;

use reqwest::blocking::{multipart, Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use url::Url;

use super::{ensure_matching, Detector, Inpainter};
use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};
use crate::raster::{decode_image, decode_mask, encode_image, encode_mask, RgbImage, DEFAULT_MASK_THRESHOLD};
use crate::refine::composite_patch;

/// Environment variable holding an optional bearer token for remote backends.
pub const TOKEN_ENV: &str = "PAL_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: Url,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    /// `Some(1)` makes the client serialise its calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<usize>,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: Url) -> Self {
        Self {
            endpoint,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            initial_backoff_ms: default_backoff_ms(),
            max_concurrency: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.endpoint.scheme(), "http" | "https") || self.endpoint.host().is_none() {
            return Err(Error::invalid(format!(
                "remote endpoint must be an http(s) URL with a host, got {}",
                self.endpoint
            )));
        }
        if self.timeout_ms == 0 {
            return Err(Error::invalid("remote timeout must be positive"));
        }
        if self.max_concurrency == Some(0) {
            return Err(Error::invalid("max_concurrency must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Deserialize)]
struct HealthBody {
    status: String,
}

/// Blocking client with timeout, bounded retries and exponential backoff.
/// Retries cover transport failures, 429 and 5xx; other statuses fail immediately.
#[derive(Debug)]
pub struct RemoteClient {
    config: RemoteConfig,
    http: Client,
    token: Option<String>,
    gate: Option<Mutex<()>>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig, token: Option<String>) -> Result<Self> {
        config.validate()?;
        let http = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Backend {
                status: None,
                message: format!("cannot build HTTP client: {e}"),
            })?;
        let gate = (config.max_concurrency == Some(1)).then(|| Mutex::new(()));
        Ok(Self {
            config,
            http,
            token,
            gate,
        })
    }

    /// Reads the bearer token from [`TOKEN_ENV`] when set.
    pub fn from_env(config: RemoteConfig) -> Result<Self> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(config, token)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.config.endpoint.as_str().trim_end_matches('/'))
    }

    fn authorize(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    /// Sends the request built by `build` until it succeeds or retries run out.
    fn send(&self, route: &str, build: impl Fn(&Client, String) -> Result<RequestBuilder>) -> Result<Vec<u8>> {
        let _serial = self.gate.as_ref().map(|g| g.lock().unwrap_or_else(|p| p.into_inner()));
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            let req = self.authorize(build(&self.http, self.url(route))?);
            let (retryable, err) = match req.send() {
                Ok(resp) if resp.status() == StatusCode::OK => {
                    return resp.bytes().map(|b| b.to_vec()).map_err(|e| Error::Backend {
                        status: Some(200),
                        message: format!("{route}: reading body: {e}"),
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.text().unwrap_or_default();
                    let message = serde_json::from_str::<ErrorBody>(&body)
                        .map(|b| b.error)
                        .unwrap_or(body);
                    let retryable = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
                    (
                        retryable,
                        Error::Backend {
                            status: Some(status.as_u16()),
                            message: format!("{route}: {message}"),
                        },
                    )
                }
                Err(e) => (
                    true,
                    Error::Backend {
                        status: None,
                        message: format!("{route}: {e}"),
                    },
                ),
            };
            if !retryable || attempt >= self.config.retries {
                return Err(err);
            }
            log::warn!("{err}; retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
            attempt += 1;
        }
    }

    pub fn health(&self) -> Result<()> {
        let body = self.send("health", |c, url| Ok(c.get(url)))?;
        let health: HealthBody = serde_json::from_slice(&body)
            .map_err(|e| Error::Protocol(format!("health: malformed body: {e}")))?;
        if health.status != "ok" {
            return Err(Error::Protocol(format!("health: status {:?}", health.status)));
        }
        Ok(())
    }

    pub fn segment(&self, image: &RgbImage) -> Result<BinaryMask> {
        let png = encode_image(image)?;
        let body = self.send("segment", |c, url| {
            Ok(c.post(url)
                .header(reqwest::header::CONTENT_TYPE, "image/png")
                .body(png.clone()))
        })?;
        let mask = decode_mask(&body, DEFAULT_MASK_THRESHOLD, "segment response")
            .map_err(|e| Error::Protocol(e.to_string()))?;
        if mask.dims() != image.dims() {
            return Err(Error::Protocol(format!(
                "segment returned {}x{} mask for {}x{} image",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(mask)
    }

    /// Raw `/inpaint` call without any resizing.
    pub fn inpaint_raw(&self, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage> {
        let image_png = encode_image(image)?;
        let mask_png = encode_mask(mask)?;
        let body = self.send("inpaint", |c, url| {
            let part = |bytes: &Vec<u8>, name: &str| {
                multipart::Part::bytes(bytes.clone())
                    .file_name(name.to_string())
                    .mime_str("image/png")
                    .map_err(|e| Error::Encode(e.to_string()))
            };
            let form = multipart::Form::new()
                .part("image", part(&image_png, "image.png")?)
                .part("mask", part(&mask_png, "mask.png")?)
                .text("prompt", prompt.to_string());
            Ok(c.post(url).multipart(form))
        })?;
        let out = decode_image(&body, "inpaint response").map_err(|e| Error::Protocol(e.to_string()))?;
        if out.dims() != image.dims() {
            return Err(Error::Protocol(format!(
                "inpaint returned {}x{} image for {}x{} request",
                out.width(),
                out.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(out)
    }
}

/// Detector backed by `POST /segment`.
#[derive(Debug)]
pub struct RemoteDetector {
    pub client: RemoteClient,
}

impl Detector for RemoteDetector {
    fn detect(&self, _image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
        self.client.segment(image)
    }

    fn max_concurrency(&self) -> Option<usize> {
        self.client.config.max_concurrency
    }
}

pub const DEFAULT_MAX_SIDE: usize = 512;

/// Inpainter backed by `POST /inpaint`. Requests whose longest side exceeds `max_side` are
/// downscaled (bilinear) before sending and the answer is upscaled back; changes are always
/// restricted to the caller's mask.
#[derive(Debug)]
pub struct RemoteInpainter {
    pub client: RemoteClient,
    pub max_side: usize,
}

impl RemoteInpainter {
    pub fn new(client: RemoteClient, max_side: usize) -> Result<Self> {
        if max_side < 64 {
            return Err(Error::invalid(format!("max_side must be at least 64, got {max_side}")));
        }
        Ok(Self { client, max_side })
    }
}

/// Target size when the longest side is scaled to `max_side`; `None` if already small enough.
pub fn fit_within(width: usize, height: usize, max_side: usize) -> Option<(usize, usize)> {
    let longest = width.max(height);
    if longest <= max_side {
        return None;
    }
    let scale = max_side as f64 / longest as f64;
    let fit = |d: usize| ((d as f64 * scale).round() as usize).clamp(1, max_side);
    Some((fit(width), fit(height)))
}

/// Conservative downsampling: a target pixel is set if any source pixel under it is set.
pub fn downsample_any(mask: &BinaryMask, width: usize, height: usize) -> Result<BinaryMask> {
    let (sw, sh) = mask.dims();
    let span = |i: usize, src: usize, dst: usize| {
        let lo = i * src / dst;
        let hi = ((i + 1) * src).div_ceil(dst).min(src);
        lo..hi.max(lo + 1)
    };
    BinaryMask::from_fn(width, height, |x, y| {
        span(y, sh, height).any(|sy| span(x, sw, width).any(|sx| mask.get(sx, sy)))
    })
}

impl Inpainter for RemoteInpainter {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage> {
        ensure_matching(image, mask)?;
        if mask.is_empty() {
            return Ok(image.clone());
        }
        let (w, h) = image.dims();
        let answer = match fit_within(w, h, self.max_side) {
            None => self.client.inpaint_raw(image, mask, prompt)?,
            Some((sw, sh)) => {
                let small = image.resize_bilinear(sw, sh)?;
                let small_mask = downsample_any(mask, sw, sh)?;
                self.client
                    .inpaint_raw(&small, &small_mask, prompt)?
                    .resize_bilinear(w, h)?
            }
        };
        composite_patch(image, &answer, &BBox::full(w, h), mask, 0)
    }

    fn max_concurrency(&self) -> Option<usize> {
        self.client.config.max_concurrency
    }
}
