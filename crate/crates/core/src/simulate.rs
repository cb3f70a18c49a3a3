//! A deterministic stand-in for the model server.
//!
//! [`SimulatedBackend`] answers every endpoint of the backend contract from
//! the ground-truth label masks of a [`DatasetIndex`]. Its answers are
//! imperfect on purpose: the tagger hallucinates a few nouns, detector
//! scores vary per label, phrases sometimes carry adjectives, and the
//! selector occasionally needs a retry. All of it is a pure function of the
//! request, so recording a session against it yields stable fixture files
//! for tests and demos without any model weights.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backend::{
    encode_png, BBox, BackendError, ChatRequest, DetectRequest, EditRequest, EmbedRequest, Endpoint, HeatmapRequest,
    Request, Role, SegmentRequest, TagRequest, Transport, VqaRequest, B64,
};
use crate::dataset::{apply_remap, rgb_digest, DatasetIndex};
use crate::geometry::{innermost_point, interior_distance_field, BinaryMask, Point2D};
use crate::synthetic::preferred_surfaces;
use crate::text::normalize_label;

const TAG_DISTRACTORS: [&str; 6] = ["room", "lamp", "picture", "ceiling", "unicorn", "light"];
const SCP_DISTRACTORS: [&str; 5] = ["room", "corner", "light", "unicorn", "view"];
const EMBED_DIM: usize = 16;

fn unit(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let out = h.finalize();
    (u64::from_le_bytes(out[..8].try_into().unwrap()) >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct SimScene {
    digest: String,
    width: u32,
    height: u32,
    labels: Vec<u16>,
    /// label id -> (raw name, canonical name)
    names: BTreeMap<u16, (String, String)>,
}

impl SimScene {
    fn matching_ids(&self, query: &str) -> Vec<u16> {
        self.names
            .iter()
            .filter(|(_, (raw, canon))| raw == query || canon == query)
            .map(|(&id, _)| id)
            .collect()
    }

    fn mask_of(&self, ids: &[u16]) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.labels.iter().map(|l| ids.contains(l)).collect())
            .expect("scene dimensions are valid")
    }

    fn present_canonical(&self) -> Vec<&str> {
        self.names.values().map(|(_, c)| c.as_str()).collect()
    }

    fn preferred_surface(&self, object: &str) -> String {
        let present = self.present_canonical();
        preferred_surfaces(object)
            .iter()
            .find(|s| present.contains(s))
            .map(|s| s.to_string())
            .unwrap_or_else(|| "floor".into())
    }

    fn bbox(&self, ids: &[u16]) -> Option<(u32, u32, u32, u32)> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for (i, l) in self.labels.iter().enumerate() {
            if ids.contains(l) {
                let (x, y) = (i as u32 % self.width, i as u32 / self.width);
                b = Some(match b {
                    None => (x, y, x + 1, y + 1),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                });
            }
        }
        b
    }
}

struct EditedImage {
    base: Arc<SimScene>,
    object: String,
    blob: BinaryMask,
}

/// In-process backend driven by dataset ground truth.
pub struct SimulatedBackend {
    scenes: HashMap<String, Arc<SimScene>>,
    edits: Mutex<HashMap<String, Arc<EditedImage>>>,
    canonical: HashMap<String, String>,
}

fn invalid(endpoint: Endpoint, reason: impl Into<String>) -> BackendError {
    BackendError::InvalidResponse {
        endpoint,
        reason: reason.into(),
    }
}

fn body<T: DeserializeOwned>(request: &Request<'_>) -> crate::backend::Result<T> {
    serde_json::from_value(request.body.clone()).map_err(|e| BackendError::Unavailable {
        endpoint: request.endpoint,
        reason: format!("malformed request: {e}"),
    })
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

impl SimulatedBackend {
    pub fn new(index: &DatasetIndex) -> Self {
        let mut scenes = HashMap::new();
        for scene in index.scenes.values() {
            let names = scene
                .mask
                .present_labels()
                .into_iter()
                .filter(|&id| id != 0)
                .filter_map(|id| {
                    let raw = index.label_map.get(id)?.to_string();
                    let canon = apply_remap(&raw, &index.remap).to_string();
                    Some((id, (raw, canon)))
                })
                .collect();
            let digest = scene.image.content_digest();
            scenes.insert(
                digest.clone(),
                Arc::new(SimScene {
                    digest,
                    width: scene.image.width(),
                    height: scene.image.height(),
                    labels: scene.mask.labels().to_vec(),
                    names,
                }),
            );
        }
        let canonical = index.remap.rules().clone().into_iter().collect();
        Self {
            scenes,
            edits: Mutex::new(HashMap::new()),
            canonical,
        }
    }

    fn lookup(&self, request: &Request<'_>) -> crate::backend::Result<(Arc<SimScene>, Option<Arc<EditedImage>>)> {
        let unknown = |reason: &str| BackendError::Unavailable {
            endpoint: request.endpoint,
            reason: reason.to_string(),
        };
        let digest = request.body["image_sha256"].as_str().ok_or_else(|| unknown("request carries no image"))?;
        if let Some(scene) = self.scenes.get(digest) {
            return Ok((scene.clone(), None));
        }
        let edits = self.edits.lock().unwrap();
        let edit = edits.get(digest).ok_or_else(|| unknown("image is not part of the simulated dataset"))?;
        Ok((edit.base.clone(), Some(edit.clone())))
    }

    fn tag(&self, req: TagRequest, scene: &SimScene) -> Value {
        let mut tags = Vec::new();
        let d = scene.digest.as_str();
        if req.variant.as_deref() == Some("scp") {
            for (raw, _) in scene.names.values() {
                if unit(&[d, "scp", raw]) < 0.9 {
                    tags.push(json!({"tag": raw, "score": 1.0 - 0.3 * unit(&[d, "scp-score", raw])}));
                }
            }
            for noun in SCP_DISTRACTORS {
                if unit(&[d, "scp", noun]) < 0.5 {
                    tags.push(json!({"tag": noun, "score": 0.7 - 0.3 * unit(&[d, "scp-score", noun])}));
                }
            }
        } else {
            let threshold = 0.65 * req.threshold_multiplier;
            let mut push = |tag: &str, score: f64| {
                if score >= threshold {
                    tags.push(json!({"tag": tag, "score": score}));
                }
            };
            for (raw, _) in scene.names.values() {
                push(raw, 0.55 + 0.45 * unit(&[d, "tag", raw]));
            }
            for noun in TAG_DISTRACTORS {
                push(noun, 0.25 + 0.5 * unit(&[d, "tag", noun]));
            }
        }
        json!({ "tags": tags })
    }

    fn detect(&self, req: DetectRequest, scene: &SimScene, edit: Option<&EditedImage>) -> Value {
        let (w, h) = (scene.width, scene.height);
        let d = scene.digest.as_str();
        let mut boxes = Vec::new();
        for q in req.query.split(',').map(normalize_label).filter(|q| !q.is_empty()) {
            let mut add = |b: (u32, u32, u32, u32), phrase: String, score: f64| {
                if score >= req.box_threshold {
                    boxes.push(BBox {
                        x0: b.0 as f64,
                        y0: b.1 as f64,
                        x1: b.2 as f64,
                        y1: b.3 as f64,
                        phrase,
                        score,
                    });
                }
            };
            if let Some(e) = edit.filter(|e| e.object == q) {
                let ids: Vec<Point2D> = e.blob.set_points().collect();
                let x0 = ids.iter().map(|p| p.x).min().unwrap_or(0) as u32;
                let y0 = ids.iter().map(|p| p.y).min().unwrap_or(0) as u32;
                let x1 = ids.iter().map(|p| p.x).max().unwrap_or(0) as u32 + 1;
                let y1 = ids.iter().map(|p| p.y).max().unwrap_or(0) as u32 + 1;
                add((x0, y0, x1, y1), q.clone(), 0.8);
                continue;
            }
            if q == "room" {
                add((0, 0, w, h), q.clone(), 0.6);
                continue;
            }
            let ids = scene.matching_ids(&q);
            if ids.is_empty() {
                let u = unit(&[d, "ghost", &q]);
                let (bw, bh) = ((w / 5).max(1), (h / 5).max(1));
                let x0 = (u * (w - bw) as f64) as u32;
                let y0 = (unit(&[d, "ghost-y", &q]) * (h - bh) as f64) as u32;
                add((x0, y0, x0 + bw, y0 + bh), q.clone(), 0.1 + 0.3 * unit(&[d, "detect", &q]));
                continue;
            }
            for id in ids {
                let raw = &scene.names[&id].0;
                let b = scene.bbox(&[id]).expect("present label has pixels");
                let phrase = if unit(&[d, "adjective", raw]) < 0.3 {
                    format!("wooden {q}")
                } else {
                    q.clone()
                };
                add(b, phrase, 0.3 + 0.6 * unit(&[d, "detect", raw]));
            }
        }
        json!({ "boxes": boxes })
    }

    fn segment(&self, req: SegmentRequest, scene: &SimScene, edit: Option<&EditedImage>) -> Value {
        let masks: Vec<String> = req
            .boxes
            .iter()
            .map(|b| {
                let phrase = normalize_label(b.phrase.strip_prefix("wooden ").unwrap_or(&b.phrase));
                let inside = |x: u32, y: u32| {
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    fx >= b.x0 && fx < b.x1 && fy >= b.y0 && fy < b.y1
                };
                let base = match edit {
                    Some(e) if e.object == phrase => e.blob.clone(),
                    _ => {
                        let ids = scene.matching_ids(&phrase);
                        if ids.is_empty() {
                            BinaryMask::filled(scene.width, scene.height).unwrap()
                        } else {
                            scene.mask_of(&ids)
                        }
                    }
                };
                let mask = BinaryMask::from_fn(scene.width, scene.height, |x, y| base.get(x, y) && inside(x, y))
                    .expect("scene dimensions are valid");
                B64.encode(mask.to_png_bytes())
            })
            .collect();
        json!({ "masks": masks })
    }

    fn heatmap(&self, req: HeatmapRequest, scene: &SimScene) -> Value {
        let text = normalize_label(&req.text);
        let ids = scene.matching_ids(&text);
        let seed = u64::from_str_radix(&scene.digest[..16], 16).unwrap_or(0) ^ splitmix(text.len() as u64);
        let noise = |i: usize| (splitmix(seed ^ i as u64) >> 40) as f32 / (1u64 << 24) as f32;
        let values: Vec<f32> = if ids.is_empty() {
            let amp = 0.2 + 0.3 * unit(&[&scene.digest, "heat", &text]) as f32;
            (0..scene.labels.len()).map(|i| amp * noise(i)).collect()
        } else {
            let field = interior_distance_field(&scene.mask_of(&ids));
            let max = field.squared_values().iter().copied().max().unwrap_or(1).max(1) as f32;
            field
                .squared_values()
                .iter()
                .enumerate()
                .map(|(i, &sq)| {
                    if sq > 0 {
                        0.5 + 0.5 * (sq as f32 / max).sqrt()
                    } else {
                        0.15 * noise(i)
                    }
                })
                .collect()
        };
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        json!({"heatmap": B64.encode(bytes), "width": scene.width, "height": scene.height})
    }

    fn vqa(&self, req: VqaRequest, scene: &SimScene) -> Value {
        let noun = between(&req.question, "Is there a ", " in the image?").map(normalize_label);
        let answer = match noun {
            Some(n) if n == "room" => "Yes.",
            Some(n) if !scene.matching_ids(&n).is_empty() => "yes",
            Some(n) if unit(&[&scene.digest, "vqa", &n]) < 0.15 => "yes",
            _ => "no",
        };
        json!({ "answer": answer })
    }

    fn chat(&self, req: ChatRequest, scene: Option<&SimScene>) -> Value {
        let system = req
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let users: Vec<&str> = req
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect();
        let first_user = users.first().copied().unwrap_or("");

        let response = if let (true, Some(scene)) = (system.contains("pixel coordinates"), scene) {
            let object = between(first_user, "place a ", " in this image").map(normalize_label).unwrap_or_default();
            let surface = scene.preferred_surface(&object);
            let p = innermost_point(&scene.mask_of(&scene.matching_ids(&surface))).unwrap_or(Point2D::new(0, 0));
            format!("The {object} should be placed on the {surface}. ({}, {})", p.x, p.y)
        } else if let (true, Some(scene)) = (first_user.contains("list of nouns"), scene) {
            let mut nouns: Vec<&str> = scene.names.values().map(|(raw, _)| raw.as_str()).collect();
            nouns.push("lamp");
            nouns.join(", ")
        } else if let Some(question) = users.iter().rev().find(|u| u.contains("Possible Answers: ")) {
            let object = between(question, "location for a ", " to be placed").map(normalize_label).unwrap_or_default();
            let answers: Vec<String> = question
                .rsplit_once("Possible Answers: ")
                .map(|(_, list)| list.split(',').map(normalize_label).collect())
                .unwrap_or_default();
            let canon = |a: &str| self.canonical.get(a).cloned().unwrap_or_else(|| a.to_string());
            let pick = preferred_surfaces(&object)
                .iter()
                .find_map(|s| answers.iter().find(|a| canon(a) == *s))
                .or_else(|| answers.iter().find(|a| a.as_str() == "floor"))
                .or(answers.first())
                .cloned()
                .unwrap_or_default();
            let key = answers.join(",");
            let roll = unit(&[&object, &key]);
            if users.len() == 1 && roll < 0.08 {
                "windowsill".to_string()
            } else if roll < 0.3 {
                let mut c = pick.chars();
                c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str() + ".").unwrap_or_default()
            } else {
                pick
            }
        } else if let (true, Some(scene)) = (system.contains("naming the object in the scene"), scene) {
            let object = between(first_user, "place a ", " in this image").map(normalize_label).unwrap_or_default();
            let surface = scene.preferred_surface(&object);
            let mut c = surface.chars();
            c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
        } else {
            "I am not sure.".to_string()
        };
        json!({ "response": response })
    }

    fn embed(&self, req: EmbedRequest) -> Value {
        let hashed = |s: &str| -> Vec<f64> {
            let mut out = Vec::with_capacity(EMBED_DIM);
            let mut counter = 0u32;
            while out.len() < EMBED_DIM {
                let mut h = Sha256::new();
                h.update(s.as_bytes());
                h.update(counter.to_le_bytes());
                for chunk in h.finalize().chunks_exact(2) {
                    out.push(u16::from_le_bytes([chunk[0], chunk[1]]) as f64 / 32767.5 - 1.0);
                }
                counter += 1;
            }
            out.truncate(EMBED_DIM);
            out
        };
        let vectors: Vec<Vec<f64>> = req
            .texts
            .iter()
            .map(|t| {
                let norm = normalize_label(t);
                let canon = self.canonical.get(&norm).cloned().unwrap_or_else(|| norm.clone());
                let (a, b) = (hashed(&canon), hashed(&norm));
                let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.8 * x + 0.2 * y).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        json!({"dim": EMBED_DIM, "vectors": vectors})
    }

    fn edit(&self, req: EditRequest, scene: &Arc<SimScene>, image: &image::RgbImage) -> crate::backend::Result<Value> {
        let object = normalize_label(req.instruction.strip_prefix("add ").unwrap_or(&req.instruction));
        let surface = scene.preferred_surface(&object);
        let c = innermost_point(&scene.mask_of(&scene.matching_ids(&surface)))
            .map_err(|e| invalid(Endpoint::Edit, e.to_string()))?;
        let r = (scene.width.min(scene.height) / 25).max(2) as i64;
        let blob = BinaryMask::from_fn(scene.width, scene.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            (x - c.x).abs() <= r && y <= c.y && y >= c.y - 2 * r
        })
        .expect("scene dimensions are valid");
        let mut edited = image.clone();
        for p in blob.set_points() {
            edited.put_pixel(p.x as u32, p.y as u32, image::Rgb([250, 30, 200]));
        }
        self.edits.lock().unwrap().insert(
            rgb_digest(&edited),
            Arc::new(EditedImage {
                base: scene.clone(),
                object,
                blob,
            }),
        );
        Ok(json!({ "image_b64": B64.encode(encode_png(&edited)) }))
    }
}

impl Transport for SimulatedBackend {
    fn call(&self, request: &Request<'_>) -> crate::backend::Result<Value> {
        match request.endpoint {
            Endpoint::Embed => Ok(self.embed(body(request)?)),
            Endpoint::Chat => {
                let scene = match request.body.get("image_sha256") {
                    Some(_) => Some(self.lookup(request)?.0),
                    None => None,
                };
                Ok(self.chat(body(request)?, scene.as_deref()))
            }
            endpoint => {
                let (scene, edit) = self.lookup(request)?;
                match endpoint {
                    Endpoint::Tag => Ok(self.tag(body(request)?, &scene)),
                    Endpoint::Detect => Ok(self.detect(body(request)?, &scene, edit.as_deref())),
                    Endpoint::Segment => Ok(self.segment(body(request)?, &scene, edit.as_deref())),
                    Endpoint::Heatmap => Ok(self.heatmap(body(request)?, &scene)),
                    Endpoint::Vqa => Ok(self.vqa(body(request)?, &scene)),
                    Endpoint::Edit => {
                        let image = request.image.ok_or_else(|| invalid(Endpoint::Edit, "edit needs image pixels"))?;
                        self.edit(body(request)?, &scene, image)
                    }
                    Endpoint::Embed | Endpoint::Chat => unreachable!("handled above"),
                }
            }
        }
    }
}
