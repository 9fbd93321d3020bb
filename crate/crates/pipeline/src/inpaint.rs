//! Inpainting service client, offline mock backends, background replacement
//! and the dataset inpainting stage.

use crate::config::InpaintConfig;
use crate::error::{PipelineError, Result};
use crate::generate::INPAINTED_DIR;
use crate::io::{decode_rgb_png, encode_mask_png, encode_rgb_png, read_mask_png, read_rgb_png, write_atomic, write_rgb_png};
use crate::manifest::{DatasetManifest, ManifestHeader, INPAINTED_MANIFEST, MANIFEST};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use leafgen_core::annotate::{Annotation, Provenance};
use leafgen_core::rng::hash_words;
use leafgen_core::{BinaryMask, RasterImage, Rgb, Species};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

pub fn prompt_for(species: Species) -> String {
    render_prompt("{species} leaf on millimeter paper", species)
}

/// Prompt for a species given by name; unknown names are rejected.
pub fn prompt_for_tag(tag: &str) -> Result<String> {
    let s: Species = tag.parse().map_err(|e| PipelineError::Usage(format!("{e}")))?;
    Ok(prompt_for(s))
}

pub fn render_prompt(template: &str, species: Species) -> String {
    template.replace("{species}", species.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub image: RasterImage,
    pub region_mask: BinaryMask,
    pub edge_condition: BinaryMask,
    pub prompt: String,
    pub request_seed: u64,
    pub timeout: Duration,
}

impl InpaintRequest {
    pub fn validate(&self) -> std::result::Result<(), InpaintError> {
        let d = self.image.dims();
        if self.region_mask.dims() != d || self.edge_condition.dims() != d {
            return Err(InpaintError::Input("image, mask and edge map resolutions differ".into()));
        }
        if self.prompt.trim().is_empty() {
            return Err(InpaintError::Input("prompt is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResponse {
    pub image: RasterImage,
    pub backend_id: String,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InpaintError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("service returned status {status}: {message}")]
    Service { status: u16, message: String },
    #[error("invalid request: {0}")]
    Input(String),
}

impl InpaintError {
    /// Worth retrying: connection trouble, timeouts, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            InpaintError::Transport(_) => true,
            InpaintError::Service { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            InpaintError::Transport(_) => "transport",
            InpaintError::Protocol(_) => "protocol",
            InpaintError::Service { .. } => "service",
            InpaintError::Input(_) => "input",
        }
    }
}

/// Sampler settings passed through to the service untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub steps: u32,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
    pub width: usize,
    pub height: usize,
    /// Base64 PNGs.
    pub image: String,
    pub mask: String,
    pub control_image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image: String,
    #[serde(default)]
    pub backend: Option<String>,
}

impl WireRequest {
    pub fn build(req: &InpaintRequest, s: SamplerSettings) -> Result<Self> {
        let (width, height) = req.image.dims();
        Ok(Self {
            prompt: req.prompt.clone(),
            seed: req.request_seed,
            steps: s.steps,
            guidance: s.guidance,
            width,
            height,
            image: B64.encode(encode_rgb_png(&req.image)?),
            mask: B64.encode(encode_mask_png(&req.region_mask)?),
            control_image: B64.encode(encode_mask_png(&req.edge_condition)?),
        })
    }
}

/// Decodes the response image and checks its resolution.
pub fn decode_response(body: &str, expect: (usize, usize)) -> std::result::Result<(RasterImage, Option<String>), InpaintError> {
    let r: WireResponse = serde_json::from_str(body).map_err(|e| InpaintError::Protocol(format!("response json: {e}")))?;
    let bytes = B64.decode(r.image.trim()).map_err(|e| InpaintError::Protocol(format!("response base64: {e}")))?;
    let img = decode_rgb_png(&bytes).map_err(|e| InpaintError::Protocol(format!("response png: {e}")))?;
    if img.dims() != expect {
        return Err(InpaintError::Protocol(format!(
            "response is {}x{}, expected {}x{}",
            img.width(),
            img.height(),
            expect.0,
            expect.1
        )));
    }
    Ok((img, r.backend))
}

/// One attempt at a request; retries are handled by [`InpaintClient`].
pub trait Transport: Send + Sync {
    fn backend_id(&self) -> String;
    fn send(&self, req: &InpaintRequest, settings: SamplerSettings) -> std::result::Result<RasterImage, InpaintError>;
}

pub struct HttpTransport {
    endpoint: String,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into() }
    }
}

impl Transport for HttpTransport {
    fn backend_id(&self) -> String {
        self.endpoint.clone()
    }

    fn send(&self, req: &InpaintRequest, settings: SamplerSettings) -> std::result::Result<RasterImage, InpaintError> {
        let body = WireRequest::build(req, settings).map_err(|e| InpaintError::Input(e.to_string()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(req.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent.post(&self.endpoint).send_json(&body).map_err(|e| match e {
            ureq::Error::Json(e) => InpaintError::Protocol(e.to_string()),
            other => InpaintError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| InpaintError::Transport(format!("reading response: {e}")))?;
        if !(200..300).contains(&status) {
            let message: String = text.chars().take(200).collect();
            return Err(InpaintError::Service { status, message });
        }
        decode_response(&text, req.image.dims()).map(|(img, _)| img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockBehavior {
    /// Returns the request image unchanged.
    Identity,
    /// Recolors the masked region; everything else is untouched.
    Perturb,
    /// Fails with a transient error on the first `n` calls, then acts as identity.
    Flaky(usize),
    /// Every call fails as if the service were unreachable.
    Down,
}

/// Offline backend. Also records call counts and the peak number of
/// simultaneous requests.
pub struct MockTransport {
    pub behavior: MockBehavior,
    pub delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl MockTransport {
    pub fn new(behavior: MockBehavior) -> Self {
        Self { behavior, delay: Duration::ZERO, calls: AtomicUsize::new(0), in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn parse(endpoint: &str) -> Option<MockBehavior> {
        let rest = endpoint.strip_prefix("mock:")?;
        match rest {
            "identity" | "" => Some(MockBehavior::Identity),
            "perturb" => Some(MockBehavior::Perturb),
            "down" => Some(MockBehavior::Down),
            _ => rest.strip_prefix("flaky:").and_then(|n| n.parse().ok()).map(MockBehavior::Flaky),
        }
    }
}

/// Deterministic recoloring of the masked region.
pub fn perturb_region(image: &RasterImage, mask: &BinaryMask, seed: u64) -> RasterImage {
    let mut out = image.clone();
    let shift = [(seed % 41) as i32 + 20, ((seed >> 8) % 31) as i32 - 40, ((seed >> 16) % 37) as i32 + 10];
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                let c = image.get(x, y).0;
                out.set(x, y, Rgb([0, 1, 2].map(|k| (c[k] as i32 + shift[k]).clamp(0, 255) as u8)));
            }
        }
    }
    out
}

impl Transport for MockTransport {
    fn backend_id(&self) -> String {
        match self.behavior {
            MockBehavior::Identity => "mock:identity".into(),
            MockBehavior::Perturb => "mock:perturb".into(),
            MockBehavior::Flaky(n) => format!("mock:flaky:{n}"),
            MockBehavior::Down => "mock:down".into(),
        }
    }

    fn send(&self, req: &InpaintRequest, _settings: SamplerSettings) -> std::result::Result<RasterImage, InpaintError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let result = match self.behavior {
            MockBehavior::Identity => Ok(req.image.clone()),
            MockBehavior::Perturb => Ok(perturb_region(&req.image, &req.region_mask, req.request_seed)),
            MockBehavior::Flaky(n) if call < n => Err(InpaintError::Service { status: 503, message: "injected failure".into() }),
            MockBehavior::Flaky(_) => Ok(req.image.clone()),
            MockBehavior::Down => Err(InpaintError::Transport("connection refused (mock)".into())),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Counting semaphore bounding simultaneous requests.
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("limit lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("limit lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("limit lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_backoff: Duration,
}

impl RetryPolicy {
    /// Delay before retry `k` (0-based): `base * 2^k`.
    pub fn backoff(&self, k: u32) -> Duration {
        self.base_backoff.saturating_mul(1u32 << k.min(16))
    }
}

pub struct InpaintClient {
    transport: Arc<dyn Transport>,
    pub policy: RetryPolicy,
    pub settings: SamplerSettings,
    limit: InFlightLimit,
}

impl InpaintClient {
    pub fn new(transport: Arc<dyn Transport>, policy: RetryPolicy, settings: SamplerSettings, max_in_flight: usize) -> Self {
        Self { transport, policy, settings, limit: InFlightLimit::new(max_in_flight) }
    }

    /// Client for `http(s)://...` or a `mock:` endpoint.
    pub fn from_config(cfg: &InpaintConfig) -> Result<Self> {
        let transport: Arc<dyn Transport> = if let Some(b) = MockTransport::parse(&cfg.endpoint) {
            Arc::new(MockTransport::new(b))
        } else if cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://") {
            Arc::new(HttpTransport::new(cfg.endpoint.clone()))
        } else {
            return Err(PipelineError::Config(format!(
                "endpoint `{}` is neither http(s):// nor mock:identity|perturb|flaky:N|down",
                cfg.endpoint
            )));
        };
        Ok(Self::new(
            transport,
            RetryPolicy { retries: cfg.retries, base_backoff: Duration::from_millis(cfg.backoff_ms) },
            SamplerSettings { steps: cfg.steps, guidance: cfg.guidance },
            cfg.max_in_flight,
        ))
    }

    pub fn backend_id(&self) -> String {
        self.transport.backend_id()
    }

    /// Sends the request, retrying transient failures with exponential backoff.
    /// The in-flight cap is held only while a request is on the wire.
    pub fn inpaint(&self, req: &InpaintRequest) -> std::result::Result<InpaintResponse, (InpaintError, u32)> {
        req.validate().map_err(|e| (e, 0))?;
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _permit = self.limit.acquire();
                self.transport.send(req, self.settings)
            };
            match result {
                Ok(image) => {
                    return Ok(InpaintResponse { image, backend_id: self.backend_id(), latency: start.elapsed(), attempts });
                }
                Err(e) if e.is_transient() && attempts <= self.policy.retries => {
                    let wait = self.policy.backoff(attempts - 1);
                    log::debug!("inpaint attempt {attempts} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) => return Err((e, attempts)),
            }
        }
    }
}

/// Foreground from the inpainted image, background from the original
/// composite, and a 50/50 blend on the mask's inner boundary ring.
pub fn replace_background(inpainted: &RasterImage, mask: &BinaryMask, composite: &RasterImage) -> Result<RasterImage> {
    if inpainted.dims() != mask.dims() || composite.dims() != mask.dims() {
        return Err(PipelineError::Validation("inpainted image, mask and composite resolutions differ".into()));
    }
    let core = mask.erode(1);
    let mut out = composite.clone();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let c = if core.get(x, y) {
                inpainted.get(x, y)
            } else {
                let (a, b) = (inpainted.get(x, y).0, composite.get(x, y).0);
                Rgb([0, 1, 2].map(|k| (a[k] as u16 + b[k] as u16).div_ceil(2) as u8))
            };
            out.set(x, y, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintFailure {
    pub id: String,
    pub category: String,
    pub message: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintReport {
    pub backend: String,
    pub entries: usize,
    pub inpainted: usize,
    pub failed: usize,
    pub max_in_flight: usize,
    pub failures: Vec<InpaintFailure>,
}

fn inpaint_entry(out: &Path, a: &Annotation, client: &InpaintClient, cfg: &InpaintConfig) -> std::result::Result<Annotation, InpaintFailure> {
    let fail = |category: &str, message: String, attempts| InpaintFailure { id: a.id.clone(), category: category.into(), message, attempts };
    let load = || -> Result<_> {
        Ok((read_rgb_png(&out.join(&a.image_path))?, read_mask_png(&out.join(&a.mask_path))?, read_mask_png(&out.join(&a.edge_path))?))
    };
    let (image, mask, edges) = load().map_err(|e| fail(e.category(), e.to_string(), 0))?;
    let req = InpaintRequest {
        image,
        region_mask: mask,
        edge_condition: edges,
        prompt: render_prompt(&cfg.prompt_template, a.species),
        request_seed: hash_words(&[a.seed, a.pass_index as u64]),
        timeout: Duration::from_secs_f64(cfg.timeout_secs),
    };
    let resp = client.inpaint(&req).map_err(|(e, n)| fail(e.category(), e.to_string(), n))?;
    let merged = replace_background(&resp.image, &req.region_mask, &req.image).map_err(|e| fail(e.category(), e.to_string(), resp.attempts))?;
    let rel = format!("{INPAINTED_DIR}/{}.png", a.id);
    write_rgb_png(&out.join(&rel), &merged).map_err(|e| fail(e.category(), e.to_string(), resp.attempts))?;
    let mut b = a.clone();
    b.provenance = Provenance::Inpainted;
    b.inpainted_path = Some(rel);
    Ok(b)
}

/// Inpaints every datapoint of `out/manifest.jsonl` and writes
/// `manifest.inpainted.jsonl`. The source manifest is left untouched; failed
/// entries keep provenance `rendered`.
pub fn run_inpaint_stage(out: &Path, cfg: &InpaintConfig, client: &InpaintClient) -> Result<(DatasetManifest, InpaintReport)> {
    let source = DatasetManifest::read(&out.join(MANIFEST))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .map_err(|e| PipelineError::Internal(format!("thread pool: {e}")))?;
    let results: Vec<std::result::Result<Annotation, InpaintFailure>> =
        pool.install(|| source.entries.par_iter().map(|a| inpaint_entry(out, a, client, cfg)).collect());
    let mut entries = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (a, r) in source.entries.iter().zip(results) {
        match r {
            Ok(b) => entries.push(b),
            Err(f) => {
                log::warn!("{}: inpainting failed after {} attempt(s): {}", f.id, f.attempts, f.message);
                failures.push(f);
                entries.push(a.clone());
            }
        }
    }
    let manifest = DatasetManifest::new(ManifestHeader::new(source.header.config_hash.clone()), entries);
    manifest.write(&out.join(INPAINTED_MANIFEST))?;
    let report = InpaintReport {
        backend: client.backend_id(),
        entries: manifest.entries.len(),
        inpainted: manifest.entries.len() - failures.len(),
        failed: failures.len(),
        max_in_flight: cfg.max_in_flight,
        failures,
    };
    let report_path = out.join(crate::generate::REPORT_DIR).join("inpaint_report.json");
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok((manifest, report))
}
