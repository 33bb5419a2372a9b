//! In-process HTTP provider server backed by a `ProviderSet`, plus fixtures.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Response, Server};
use vidbridge::enhancer::parse_bundle;
use vidbridge::model::{ImageBuffer, MaskSet};
use vidbridge::providers::wire::{self, *};
use vidbridge::providers::{ProviderError, ProviderSet};

/// Scripted failures: the first `count` requests to `route` answer with
/// `status`.
#[derive(Clone, Debug)]
pub struct Fault {
    pub route: &'static str,
    pub count: usize,
    pub status: u16,
}

#[derive(Default, Clone)]
pub struct ServerOptions {
    pub faults: Vec<Fault>,
    pub token: Option<String>,
}

pub struct ProviderServer {
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    pub base_url: String,
    hits: Arc<Mutex<HashMap<String, usize>>>,
}

impl ProviderServer {
    pub fn start(set: ProviderSet) -> Self {
        Self::start_with(set, ServerOptions::default())
    }

    pub fn start_with(set: ProviderSet, options: ServerOptions) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let remaining: Arc<Mutex<Vec<(Fault, AtomicUsize)>>> = Arc::new(Mutex::new(
            options.faults.iter().map(|f| (f.clone(), AtomicUsize::new(f.count))).collect(),
        ));
        let s = server.clone();
        let h = hits.clone();
        let handle = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let route = req.url().to_string();
                *h.lock().unwrap().entry(route.clone()).or_default() += 1;

                if let Some(token) = &options.token {
                    let expected = format!("Bearer {token}");
                    let ok = req
                        .headers()
                        .iter()
                        .any(|hd| hd.field.equiv("Authorization") && hd.value.as_str() == expected);
                    if !ok {
                        let _ = req.respond(json_response(401, &error("unauthorized", "bad token")));
                        continue;
                    }
                }

                let fault = remaining.lock().unwrap().iter().find_map(|(f, left)| {
                    (f.route == route
                        && left
                            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                            .is_ok())
                    .then_some(f.status)
                });
                if let Some(status) = fault {
                    let _ = req.respond(json_response(status, &error("injected", "scripted failure")));
                    continue;
                }

                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, text) = dispatch(&set, &route, &body);
                let _ = req.respond(text_response(status, text));
            }
        });
        Self {
            server,
            handle: Some(handle),
            base_url: format!("http://127.0.0.1:{port}"),
            hits,
        }
    }

    pub fn hits(&self, route: &str) -> usize {
        self.hits.lock().unwrap().get(route).copied().unwrap_or(0)
    }

    pub fn total_hits(&self) -> usize {
        self.hits.lock().unwrap().values().sum()
    }
}

impl Drop for ProviderServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn error(code: &str, message: &str) -> String {
    serde_json::to_string(&ErrorReply {
        code: code.into(),
        message: message.into(),
    })
    .unwrap()
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").unwrap()
}

fn json_response(status: u16, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    text_response(status, body.to_string())
}

fn text_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header())
}

fn provider_status(e: &ProviderError) -> (u16, String) {
    let status = match e {
        ProviderError::Precondition { .. } => 400,
        _ => 500,
    };
    (status, error("provider_error", &e.to_string()))
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, (u16, String)> {
    serde_json::from_str(body).map_err(|e| (400, error("bad_request", &e.to_string())))
}

fn ok<T: Serialize>(v: &T) -> (u16, String) {
    (200, serde_json::to_string(v).unwrap())
}

fn img(b64: &str) -> Result<ImageBuffer, (u16, String)> {
    wire::decode_image(b64).map_err(|e| (400, error("bad_image", &e.to_string())))
}

fn dispatch(set: &ProviderSet, route: &str, body: &str) -> (u16, String) {
    let result: Result<(u16, String), (u16, String)> = (|| {
        let pe = |e: ProviderError| provider_status(&e);
        match route {
            wire::HEALTH => Ok((200, "{\"status\":\"ok\"}".into())),
            wire::ENHANCE => {
                let b: EnhanceBody = parse(body)?;
                let raw = set
                    .enhancer
                    .enhance(&vidbridge::providers::EnhanceRequest {
                        text: b.text,
                        hint: b.hint,
                        instruction: b.instruction,
                    })
                    .map_err(pe)?;
                match parse_bundle(&raw) {
                    Ok(bundle) => Ok(ok(&EnhanceReply {
                        keywords: bundle.keywords().to_vec(),
                        frame_state: bundle.frame_state().into(),
                        optimization_prompt: bundle.optimization_prompt().into(),
                    })),
                    Err(_) => Ok((200, raw)),
                }
            }
            wire::DETECT => {
                let b: DetectBody = parse(body)?;
                let masks = set.detector.detect(&img(&b.image_png_b64)?, &b.labels).map_err(pe)?;
                Ok(ok(&DetectReply {
                    entries: wire::encode_masks(&masks).unwrap(),
                }))
            }
            wire::KEYFRAME => {
                let b: KeyframeBody = parse(body)?;
                let image = img(&b.image_png_b64)?;
                let masks: MaskSet = wire::decode_masks(image.width(), image.height(), &b.masks)
                    .map_err(|e| (400, error("bad_masks", &e.to_string())))?;
                let out = set
                    .keyframe
                    .generate_keyframe(&image, &masks, &b.prompt, b.seed)
                    .map_err(pe)?;
                Ok(ok(&ImageReply {
                    image_png_b64: wire::encode_image(&out).unwrap(),
                }))
            }
            wire::INTERPOLATE => {
                let b: InterpolateBody = parse(body)?;
                let seq = set
                    .interpolator
                    .interpolate(
                        &img(&b.start_png_b64)?,
                        &img(&b.end_png_b64)?,
                        &b.prompt,
                        b.frame_count,
                        b.seed,
                    )
                    .map_err(pe)?;
                Ok(ok(&InterpolateReply {
                    frames: seq.frames().iter().map(|f| wire::encode_image(f).unwrap()).collect(),
                }))
            }
            wire::EMBED_IMAGE => {
                let b: EmbedImageBody = parse(body)?;
                let e = set.embedder.embed_image(&img(&b.image_png_b64)?).map_err(pe)?;
                Ok(ok(&EmbedReply {
                    values: e.values().to_vec(),
                }))
            }
            wire::EMBED_TEXT => {
                let b: EmbedTextBody = parse(body)?;
                let e = set.embedder.embed_text(&b.text).map_err(pe)?;
                Ok(ok(&EmbedReply {
                    values: e.values().to_vec(),
                }))
            }
            wire::SCORE => {
                let b: ScoreBody = parse(body)?;
                let scorer = set
                    .scorer
                    .as_ref()
                    .ok_or_else(|| (404, error("no_scorer", "scorer not configured")))?;
                let s = scorer.score_quality(&img(&b.image_png_b64)?).map_err(pe)?;
                Ok(ok(&ScoreReply { score: s }))
            }
            _ => Err((404, error("not_found", route))),
        }
    })();
    result.unwrap_or_else(|e| e)
}

/// A 32×32 scene: sand-colored ground with a sky band and a dog-colored
/// block, so the mock detector finds both keywords of "a dog runs on the
/// beach".
pub fn beach_scene(size: u32) -> ImageBuffer {
    use vidbridge::providers::mock::label_color;
    let dog = label_color("dog");
    let beach = label_color("beach");
    ImageBuffer::from_fn(size, size, |x, y| {
        if x >= size / 4 && x < size / 2 && y >= size / 2 && y < 3 * size / 4 {
            dog
        } else if y >= size / 3 {
            beach
        } else {
            [120, 170, 230]
        }
    })
    .unwrap()
}
