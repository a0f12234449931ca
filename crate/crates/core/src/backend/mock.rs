//! In-process HTTP server that speaks the wire protocol on top of any
//! [`GenerationBackend`], with optional fault injection for client tests.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use image::Rgb;
use log::debug;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{self, CaptionRequest, CaptionResponse, ErrorBody, GenerateRequest, Health, ImageResponse, OutpaintRequest};
use super::{BackendError, GenerationBackend};

const WORKERS: usize = 4;

/// Misbehaviour to inject. Counters apply to the whole server, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct MockFaults {
    /// Answer this many requests with 503 before serving normally.
    pub unavailable_first: usize,
    /// Then answer this many with 429.
    pub rate_limited_first: usize,
    /// Add this to every known (mask == 0) channel value of outpaint output.
    pub perturb_known: u8,
    /// Return images one column narrower than requested.
    pub wrong_size: bool,
    pub empty_caption: bool,
    pub max_image_px: Option<u32>,
}

struct Shared {
    backend: Arc<dyn GenerationBackend>,
    model_id: String,
    faults: MockFaults,
    served: AtomicUsize,
    log: Mutex<Vec<String>>,
}

pub struct MockServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl MockServer {
    pub fn start(backend: Arc<dyn GenerationBackend>) -> std::io::Result<Self> {
        Self::with_faults(backend, MockFaults::default())
    }

    pub fn with_faults(backend: Arc<dyn GenerationBackend>, faults: MockFaults) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            model_id: format!("mock/{}", backend.identity()),
            backend,
            faults,
            served: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let shared = shared.clone();
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        shared.handle(req);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            shared,
            workers,
            addr,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn model_id(&self) -> &str {
        &self.shared.model_id
    }

    /// `"METHOD /path"` for every request received so far.
    pub fn request_log(&self) -> Vec<String> {
        self.shared.log.lock().expect("log lock poisoned").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

type Reply = (u16, String);

fn json<T: Serialize>(value: &T) -> Reply {
    (200, serde_json::to_string(value).expect("wire types serialize"))
}

fn error(status: u16, code: &str, message: impl Into<String>) -> Reply {
    let body = ErrorBody {
        code: code.into(),
        message: message.into(),
    };
    (status, serde_json::to_string(&body).expect("wire types serialize"))
}

fn backend_error(e: BackendError) -> Reply {
    match e {
        BackendError::InvalidRequest(m) => error(400, "invalid_request", m),
        BackendError::Unsupported(c) => error(404, "unsupported", format!("{c:?}")),
        other => error(500, "internal", other.to_string()),
    }
}

impl Shared {
    fn handle(&self, mut req: Request) {
        let path = req.url().split('?').next().unwrap_or("").to_string();
        let method = req.method().clone();
        self.log.lock().expect("log lock poisoned").push(format!("{method} {path}"));
        let mut body = String::new();
        let (status, text) = if let Err(e) = req.as_reader().read_to_string(&mut body) {
            error(400, "bad_request", e.to_string())
        } else {
            self.route(&method, &path, &body)
        };
        debug!("mock {method} {path} -> {status}");
        let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
        let _ = req.respond(Response::from_string(text).with_status_code(status).with_header(header));
    }

    fn route(&self, method: &Method, path: &str, body: &str) -> Reply {
        let n = self.served.fetch_add(1, Ordering::SeqCst);
        let f = &self.faults;
        if n < f.unavailable_first {
            return error(503, "unavailable", "warming up");
        }
        if n < f.unavailable_first + f.rate_limited_first {
            return error(429, "rate_limited", "slow down");
        }
        match (method, path) {
            (Method::Get, "/healthz") => json(&Health {
                capabilities: self.backend.capabilities(),
                model_id: self.model_id.clone(),
                max_image_px: f.max_image_px,
            }),
            (Method::Post, "/generate") => self.generate(body),
            (Method::Post, "/outpaint") => self.outpaint(body),
            (Method::Post, "/caption") => self.caption(body),
            _ => error(404, "not_found", format!("no route for {method} {path}")),
        }
    }

    fn too_big(&self, w: u32, h: u32) -> Option<Reply> {
        let max = self.faults.max_image_px?;
        (w > max || h > max).then(|| error(413, "too_large", format!("{w}x{h} exceeds {max}")))
    }

    fn image_reply(&self, mut img: image::RgbImage) -> Reply {
        if self.faults.wrong_size && img.width() > 1 {
            img = image::imageops::crop_imm(&img, 0, 0, img.width() - 1, img.height()).to_image();
        }
        json(&ImageResponse {
            image: wire::encode_rgb(&img),
            model_id: self.model_id.clone(),
            latency_ms: 0,
        })
    }

    fn generate(&self, body: &str) -> Reply {
        let req: GenerateRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return error(400, "bad_request", e.to_string()),
        };
        if let Some(r) = self.too_big(req.width, req.height) {
            return r;
        }
        match self.backend.generate(&req.prompt, req.seed, req.width, req.height) {
            Ok(img) => self.image_reply(img),
            Err(e) => backend_error(e),
        }
    }

    fn outpaint(&self, body: &str) -> Reply {
        let req: OutpaintRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return error(400, "bad_request", e.to_string()),
        };
        let (image, mask) = match (wire::decode_rgb(&req.image), wire::decode_gray(&req.mask)) {
            (Ok(i), Ok(m)) => (i, m),
            (Err(e), _) | (_, Err(e)) => return error(400, "bad_request", e.to_string()),
        };
        if let Some(r) = self.too_big(image.width(), image.height()) {
            return r;
        }
        match self.backend.outpaint(&image, &mask, &req.prompt, req.seed) {
            Ok(mut img) => {
                if self.faults.perturb_known > 0 {
                    let d = self.faults.perturb_known;
                    for (px, m) in img.pixels_mut().zip(mask.pixels()) {
                        if m.0[0] == 0 {
                            *px = Rgb(px.0.map(|v| v.saturating_add(d)));
                        }
                    }
                }
                self.image_reply(img)
            }
            Err(e) => backend_error(e),
        }
    }

    fn caption(&self, body: &str) -> Reply {
        let req: CaptionRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return error(400, "bad_request", e.to_string()),
        };
        let image = match wire::decode_rgb(&req.image) {
            Ok(i) => i,
            Err(e) => return error(400, "bad_request", e.to_string()),
        };
        if let Some(r) = self.too_big(image.width(), image.height()) {
            return r;
        }
        match self.backend.caption(&image) {
            Ok(text) => json(&CaptionResponse {
                text: if self.faults.empty_caption { "  ".into() } else { text },
                model_id: self.model_id.clone(),
                latency_ms: 0,
            }),
            Err(e) => backend_error(e),
        }
    }
}
