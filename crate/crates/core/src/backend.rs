//! Model backend contract.
//!
//! Every model call is a JSON request to one of eight endpoints
//! (`/v1/tag`, `/v1/detect`, `/v1/segment`, `/v1/heatmap`, `/v1/vqa`,
//! `/v1/chat`, `/v1/embed`, `/v1/edit`). A [`Transport`] carries the call:
//! over HTTP to a model server, from a recorded fixture file, or to an
//! in-process simulator. [`Session`] wraps a transport with typed requests,
//! response validation and a per-run transcript.
//!
//! # Request identity
//!
//! Requests are keyed by a SHA-256 hash so recorded responses can be
//! replayed. Image payloads are not hashed as encoded bytes: the body used
//! for hashing carries `"image_sha256"`, the digest of the image's width,
//! height and raw RGB bytes, in place of `"image_b64"`. The hash is
//! `sha256(endpoint + "\n" + body)` where `body` is the compact JSON
//! serialization with keys in lexicographic order.
//!
//! # Fixture files
//!
//! JSON lines, one per distinct request:
//! `{"endpoint": "detect", "request_hash": "<hex>", "response": {...}}`.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::rgb_digest;
use crate::geometry::{BinaryMask, Heatmap};
use crate::metrics::{EmbeddingProvider, EmbeddingVector, MetricsError};

pub(crate) const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Tag,
    Detect,
    Segment,
    Heatmap,
    Vqa,
    Chat,
    Embed,
    Edit,
}

impl Endpoint {
    pub const ALL: [Endpoint; 8] = [
        Endpoint::Tag,
        Endpoint::Detect,
        Endpoint::Segment,
        Endpoint::Heatmap,
        Endpoint::Vqa,
        Endpoint::Chat,
        Endpoint::Embed,
        Endpoint::Edit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Endpoint::Tag => "tag",
            Endpoint::Detect => "detect",
            Endpoint::Segment => "segment",
            Endpoint::Heatmap => "heatmap",
            Endpoint::Vqa => "vqa",
            Endpoint::Chat => "chat",
            Endpoint::Embed => "embed",
            Endpoint::Edit => "edit",
        }
    }

    /// URL path on a model server.
    pub fn path(self) -> String {
        format!("/v1/{}", self.name())
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("{endpoint} backend unavailable: {reason}")]
    Unavailable { endpoint: Endpoint, reason: String },
    #[error("no recorded response for {endpoint} request {hash}")]
    UnmatchedRequest { endpoint: Endpoint, hash: String },
    #[error("invalid {endpoint} response: {reason}")]
    InvalidResponse { endpoint: Endpoint, reason: String },
    #[error("fixture file: {0}")]
    Fixture(String),
}

pub type Result<T, E = BackendError> = std::result::Result<T, E>;

/// One model call. `body` is the hashing form (images as digests); `image`
/// carries the pixels for transports that need them.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub endpoint: Endpoint,
    pub body: Value,
    pub image: Option<&'a image::RgbImage>,
}

impl<'a> Request<'a> {
    pub fn new<T: Serialize>(endpoint: Endpoint, payload: &T, image: Option<&'a image::RgbImage>) -> Self {
        let mut body = serde_json::to_value(payload).expect("request payloads serialize");
        if let (Some(img), Value::Object(map)) = (image, &mut body) {
            map.insert("image_sha256".into(), Value::String(rgb_digest(img)));
        }
        Self { endpoint, body, image }
    }

    pub fn hash(&self) -> String {
        request_hash(self.endpoint, &self.body)
    }

    /// Body as sent over the wire: the image digest is replaced by the
    /// base64-encoded PNG.
    pub fn wire_body(&self) -> Value {
        let mut body = self.body.clone();
        if let (Some(img), Value::Object(map)) = (self.image, &mut body) {
            map.remove("image_sha256");
            map.insert("image_b64".into(), Value::String(B64.encode(encode_png(img))));
        }
        body
    }
}

pub fn request_hash(endpoint: Endpoint, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(endpoint.name().as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(body).expect("JSON values serialize").as_bytes());
    hex::encode(h.finalize())
}

pub(crate) fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

/// Carries requests to a model backend and returns raw JSON responses.
pub trait Transport: Send + Sync {
    fn call(&self, request: &Request<'_>) -> Result<Value>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn call(&self, request: &Request<'_>) -> Result<Value> {
        (**self).call(request)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn call(&self, request: &Request<'_>) -> Result<Value> {
        (**self).call(request)
    }
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub endpoint: Endpoint,
    pub request_hash: String,
    pub response: Value,
}

/// Replays recorded responses keyed by request hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureTransport {
    lines: HashMap<String, FixtureLine>,
}

impl FixtureTransport {
    pub fn from_lines(lines: impl IntoIterator<Item = FixtureLine>) -> Self {
        Self {
            lines: lines.into_iter().map(|l| (l.request_hash.clone(), l)).collect(),
        }
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Fixture(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(&line)
                .map_err(|e| BackendError::Fixture(format!("line {}: {e}", n + 1)))?;
            lines.push(parsed);
        }
        Ok(Self::from_lines(lines))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

impl Transport for FixtureTransport {
    fn call(&self, request: &Request<'_>) -> Result<Value> {
        let hash = request.hash();
        match self.lines.get(&hash) {
            Some(line) if line.endpoint == request.endpoint => Ok(line.response.clone()),
            _ => Err(BackendError::UnmatchedRequest {
                endpoint: request.endpoint,
                hash,
            }),
        }
    }
}

/// Forwards calls and keeps one fixture line per distinct request.
pub struct RecordingTransport<T> {
    inner: T,
    recorded: Mutex<BTreeMap<String, FixtureLine>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.recorded.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recorded lines ordered by request hash.
    pub fn lines(&self) -> Vec<FixtureLine> {
        self.recorded.lock().unwrap().values().cloned().collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.lines()
            .iter()
            .map(|l| serde_json::to_string(l).expect("fixture lines serialize") + "\n")
            .collect()
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn call(&self, request: &Request<'_>) -> Result<Value> {
        let response = self.inner.call(request)?;
        let hash = request.hash();
        self.recorded
            .lock()
            .unwrap()
            .entry(hash.clone())
            .or_insert_with(|| FixtureLine {
                endpoint: request.endpoint,
                request_hash: hash,
                response: response.clone(),
            });
        Ok(response)
    }
}

// Wire types. Field names are the JSON schema shared with model servers.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRequest {
    pub threshold_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResponse {
    pub tags: Vec<ScoredTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub query: String,
    pub box_threshold: f64,
}

/// Axis-aligned box in pixel coordinates, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub phrase: String,
    pub score: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    /// Base64 PNG, single channel, 0/255.
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResponse {
    /// Base64 of row-major little-endian `f32` values.
    pub heatmap: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image_b64: String,
}

/// A backend call as recorded in a placement transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    pub endpoint: Endpoint,
    pub request_hash: String,
    pub request: Value,
    pub response: Value,
}

/// Typed access to the backend contract for one pipeline run. Records every
/// call, in order, under the current stage label.
pub struct Session<'t> {
    transport: &'t dyn Transport,
    stage: String,
    transcript: Vec<TranscriptEntry>,
}

fn invalid(endpoint: Endpoint, reason: impl Into<String>) -> BackendError {
    BackendError::InvalidResponse {
        endpoint,
        reason: reason.into(),
    }
}

fn parse<T: serde::de::DeserializeOwned>(endpoint: Endpoint, value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| invalid(endpoint, e.to_string()))
}

fn decode_b64(endpoint: Endpoint, s: &str) -> Result<Vec<u8>> {
    B64.decode(s).map_err(|e| invalid(endpoint, format!("bad base64: {e}")))
}

impl<'t> Session<'t> {
    pub fn new(transport: &'t dyn Transport) -> Self {
        Self {
            transport,
            stage: String::new(),
            transcript: Vec::new(),
        }
    }

    pub fn set_stage(&mut self, stage: &str) {
        self.stage = stage.to_string();
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }

    fn call(&mut self, request: Request<'_>) -> Result<Value> {
        let response = self.transport.call(&request)?;
        if response.is_null() {
            return Err(invalid(request.endpoint, "null response"));
        }
        self.transcript.push(TranscriptEntry {
            stage: self.stage.clone(),
            endpoint: request.endpoint,
            request_hash: request.hash(),
            request: request.body,
            response: response.clone(),
        });
        Ok(response)
    }

    pub fn tag(&mut self, image: &image::RgbImage, threshold_multiplier: f64, variant: Option<&str>) -> Result<Vec<ScoredTag>> {
        let req = TagRequest {
            threshold_multiplier,
            variant: variant.map(str::to_string),
        };
        let resp: TagResponse = parse(Endpoint::Tag, self.call(Request::new(Endpoint::Tag, &req, Some(image)))?)?;
        if let Some(t) = resp.tags.iter().find(|t| !t.score.is_finite()) {
            return Err(invalid(Endpoint::Tag, format!("non-finite score for {:?}", t.tag)));
        }
        Ok(resp.tags)
    }

    pub fn detect(&mut self, image: &image::RgbImage, query: &str, box_threshold: f64) -> Result<Vec<BBox>> {
        let req = DetectRequest {
            query: query.to_string(),
            box_threshold,
        };
        let resp: DetectResponse =
            parse(Endpoint::Detect, self.call(Request::new(Endpoint::Detect, &req, Some(image)))?)?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        for b in &resp.boxes {
            let ok = [b.x0, b.y0, b.x1, b.y1, b.score].iter().all(|v| v.is_finite())
                && 0.0 <= b.x0
                && b.x0 <= b.x1
                && b.x1 <= w
                && 0.0 <= b.y0
                && b.y0 <= b.y1
                && b.y1 <= h;
            if !ok {
                return Err(invalid(Endpoint::Detect, format!("box {b:?} outside {w}x{h} image")));
            }
        }
        Ok(resp.boxes)
    }

    pub fn segment(&mut self, image: &image::RgbImage, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
        let req = SegmentRequest { boxes: boxes.to_vec() };
        let resp: SegmentResponse =
            parse(Endpoint::Segment, self.call(Request::new(Endpoint::Segment, &req, Some(image)))?)?;
        resp.masks
            .iter()
            .map(|m| {
                let mask = BinaryMask::from_png_bytes(&decode_b64(Endpoint::Segment, m)?)
                    .map_err(|e| invalid(Endpoint::Segment, e.to_string()))?;
                if mask.dimensions() != image.dimensions() {
                    return Err(invalid(
                        Endpoint::Segment,
                        format!("mask is {:?}, image is {:?}", mask.dimensions(), image.dimensions()),
                    ));
                }
                Ok(mask)
            })
            .collect()
    }

    pub fn heatmap(&mut self, image: &image::RgbImage, text: &str) -> Result<Heatmap> {
        let req = HeatmapRequest { text: text.to_string() };
        let resp: HeatmapResponse =
            parse(Endpoint::Heatmap, self.call(Request::new(Endpoint::Heatmap, &req, Some(image)))?)?;
        if (resp.width, resp.height) != image.dimensions() {
            return Err(invalid(
                Endpoint::Heatmap,
                format!("heatmap is {}x{}, image is {:?}", resp.width, resp.height, image.dimensions()),
            ));
        }
        let bytes = decode_b64(Endpoint::Heatmap, &resp.heatmap)?;
        Heatmap::from_le_bytes(resp.width, resp.height, &bytes).map_err(|e| invalid(Endpoint::Heatmap, e.to_string()))
    }

    pub fn vqa(&mut self, image: &image::RgbImage, question: &str) -> Result<String> {
        let req = VqaRequest {
            question: question.to_string(),
        };
        let resp: VqaResponse = parse(Endpoint::Vqa, self.call(Request::new(Endpoint::Vqa, &req, Some(image)))?)?;
        Ok(resp.answer)
    }

    pub fn chat(&mut self, messages: &[ChatMessage], temperature: f64, image: Option<&image::RgbImage>) -> Result<String> {
        let req = ChatRequest {
            messages: messages.to_vec(),
            temperature,
        };
        let resp: ChatResponse = parse(Endpoint::Chat, self.call(Request::new(Endpoint::Chat, &req, image))?)?;
        Ok(resp.response)
    }

    pub fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let req = EmbedRequest { texts: texts.to_vec() };
        let resp: EmbedResponse = parse(Endpoint::Embed, self.call(Request::new(Endpoint::Embed, &req, None))?)?;
        check_embeddings(&resp, texts.len())?;
        Ok(resp.vectors)
    }

    pub fn edit(&mut self, image: &image::RgbImage, instruction: &str) -> Result<image::RgbImage> {
        let req = EditRequest {
            instruction: instruction.to_string(),
        };
        let resp: EditResponse = parse(Endpoint::Edit, self.call(Request::new(Endpoint::Edit, &req, Some(image)))?)?;
        let bytes = decode_b64(Endpoint::Edit, &resp.image_b64)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| invalid(Endpoint::Edit, e.to_string()))?;
        Ok(img.into_rgb8())
    }
}

fn check_embeddings(resp: &EmbedResponse, expected: usize) -> Result<()> {
    if resp.vectors.len() != expected {
        return Err(invalid(
            Endpoint::Embed,
            format!("{} vectors for {expected} texts", resp.vectors.len()),
        ));
    }
    if resp.vectors.iter().any(|v| v.len() != resp.dim || v.iter().any(|x| !x.is_finite())) {
        return Err(invalid(Endpoint::Embed, "vector length differs from dim or has non-finite entries"));
    }
    Ok(())
}

/// Sentence embeddings served by the `/v1/embed` endpoint.
pub struct TransportEmbedder<T> {
    transport: T,
}

impl<T: Transport> TransportEmbedder<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

impl<T: Transport> EmbeddingProvider for TransportEmbedder<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MetricsError> {
        let req = EmbedRequest {
            texts: vec![text.to_string()],
        };
        let value = self
            .transport
            .call(&Request::new(Endpoint::Embed, &req, None))
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        let resp: EmbedResponse = parse(Endpoint::Embed, value).map_err(|e| MetricsError::Provider(e.to_string()))?;
        check_embeddings(&resp, 1).map_err(|e| MetricsError::Provider(e.to_string()))?;
        EmbeddingVector::new(text, resp.vectors.into_iter().next().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Canned(Value);

    impl Transport for Canned {
        fn call(&self, _: &Request<'_>) -> Result<Value> {
            Ok(self.0.clone())
        }
    }

    fn image(w: u32, h: u32) -> image::RgbImage {
        image::RgbImage::from_fn(w, h, |x, y| image::Rgb([x as u8, y as u8, 7]))
    }

    #[test]
    fn hash_uses_image_digest_not_encoding() {
        let img = image(4, 3);
        let copy = img.clone();
        let a = Request::new(Endpoint::Vqa, &VqaRequest { question: "q".into() }, Some(&img));
        let b = Request::new(Endpoint::Vqa, &VqaRequest { question: "q".into() }, Some(&copy));
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.body["image_sha256"], json!(rgb_digest(&img)));
        let wire = a.wire_body();
        assert!(wire.get("image_sha256").is_none());
        let png = B64.decode(wire["image_b64"].as_str().unwrap()).unwrap();
        assert_eq!(image::load_from_memory(&png).unwrap().into_rgb8(), img);

        let c = Request::new(Endpoint::Vqa, &VqaRequest { question: "q2".into() }, Some(&img));
        assert_ne!(a.hash(), c.hash());
        let d = Request::new(Endpoint::Chat, &VqaRequest { question: "q".into() }, Some(&img));
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn hash_is_key_order_independent() {
        let a = json!({"b": 1, "a": [1, 2]});
        let b: Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(request_hash(Endpoint::Tag, &a), request_hash(Endpoint::Tag, &b));
    }

    #[test]
    fn record_then_replay() {
        let inner = Canned(json!({"answer": "yes"}));
        let rec = RecordingTransport::new(inner);
        let img = image(2, 2);
        {
            let mut s = Session::new(&rec);
            assert_eq!(s.vqa(&img, "Is there a cat in the image?").unwrap(), "yes");
            assert_eq!(s.vqa(&img, "Is there a cat in the image?").unwrap(), "yes");
            assert_eq!(s.transcript().len(), 2);
        }
        assert_eq!(rec.len(), 1);
        let jsonl = rec.to_jsonl();
        let replay = FixtureTransport::from_jsonl(jsonl.as_bytes()).unwrap();
        let mut s = Session::new(&replay);
        assert_eq!(s.vqa(&img, "Is there a cat in the image?").unwrap(), "yes");
        let err = s.vqa(&img, "Is there a dog in the image?").unwrap_err();
        assert!(matches!(err, BackendError::UnmatchedRequest { endpoint: Endpoint::Vqa, .. }));
    }

    #[test]
    fn empty_session_records_nothing() {
        let rec = RecordingTransport::new(Canned(json!({})));
        assert!(rec.is_empty());
        assert_eq!(rec.to_jsonl(), "");
    }

    #[test]
    fn detect_rejects_out_of_frame_boxes() {
        let t = Canned(json!({"boxes": [{"x0": 0, "y0": 0, "x1": 5, "y1": 2, "phrase": "table", "score": 0.5}]}));
        let mut s = Session::new(&t);
        assert!(matches!(
            s.detect(&image(4, 4), "table", 0.3),
            Err(BackendError::InvalidResponse { .. })
        ));
        assert_eq!(s.detect(&image(8, 4), "table", 0.3).unwrap().len(), 1);
    }

    #[test]
    fn segment_checks_mask_dimensions() {
        let mask = BinaryMask::filled(3, 3).unwrap();
        let t = Canned(json!({"masks": [B64.encode(mask.to_png_bytes())]}));
        let mut s = Session::new(&t);
        assert_eq!(s.segment(&image(3, 3), &[]).unwrap(), vec![mask]);
        assert!(s.segment(&image(4, 3), &[]).is_err());
    }

    #[test]
    fn heatmap_decoding() {
        let values = [0.0f32, 0.5, 1.0, 0.25];
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let t = Canned(json!({"heatmap": B64.encode(bytes), "width": 2, "height": 2}));
        let mut s = Session::new(&t);
        let h = s.heatmap(&image(2, 2), "table").unwrap();
        assert_eq!(h.values(), &values);
        assert!(s.heatmap(&image(3, 2), "table").is_err());
    }

    #[test]
    fn null_and_malformed_responses() {
        let mut s_null = Session::new(&Canned(Value::Null));
        assert!(s_null.vqa(&image(1, 1), "q").is_err());
        let t = Canned(json!({"dim": 2, "vectors": [[1.0]]}));
        let mut s = Session::new(&t);
        assert!(s.embed(&["a".to_string()]).is_err());
    }

    #[test]
    fn transport_embedder() {
        let t = Canned(json!({"dim": 2, "vectors": [[0.6, 0.8]]}));
        let e = TransportEmbedder::new(t);
        assert_eq!(e.embed("couch").unwrap().values, vec![0.6, 0.8]);
    }

    #[test]
    fn fixture_line_shape() {
        let line = FixtureLine {
            endpoint: Endpoint::Embed,
            request_hash: "abc".into(),
            response: json!({"dim": 1, "vectors": [[1.0]]}),
        };
        assert_eq!(
            serde_json::to_string(&line).unwrap(),
            r#"{"endpoint":"embed","request_hash":"abc","response":{"dim":1,"vectors":[[1.0]]}}"#
        );
        assert!(FixtureTransport::from_jsonl("not json\n".as_bytes()).is_err());
    }
}
