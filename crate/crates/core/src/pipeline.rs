//! The three-stage placement pipeline.
//!
//! 1. **Tagging** lists candidate surfaces visible in the image, optionally
//!    pruned by a filter (VQA yes/no, heatmap top-k or detector threshold).
//! 2. **Selection** asks a language model which candidate the object goes on.
//! 3. **Locating** turns the selection into a pixel, optionally lifted to a
//!    3D camera-space point with depth and pinhole intrinsics.
//!
//! Every model call goes through a [`Session`], so a [`PlacementRecord`]
//! carries the complete, ordered transcript of the run.

use serde::{Deserialize, Serialize};

use crate::backend::{BBox, BackendError, ChatMessage, Session, TranscriptEntry, Transport};
use crate::dataset::SceneImage;
use crate::geometry::{argmax_point, bottommost_point, innermost_point, mask_union, GeometryError, Point2D};
use crate::prompts::{render, PromptError, PromptSet};
use crate::text::{contains_tokens, normalize_answer, normalize_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tagging,
    Filtering,
    Selection,
    Locating,
    Backprojection,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Tagging => "tagging",
            Stage::Filtering => "filtering",
            Stage::Selection => "selection",
            Stage::Locating => "locating",
            Stage::Backprojection => "backprojection",
        })
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("no tags left")]
    EmptyTagList,
    #[error("response contains no tags")]
    EmptyAfterParse,
    #[error("selection {response:?} is not one of {tags:?}")]
    SelectionNotInTags { response: String, tags: Vec<String> },
    #[error("selector returned an empty answer")]
    EmptySelection,
    #[error("detector found no box for {query:?}")]
    NoBoxFound { query: String },
    #[error("segmentation produced an empty mask")]
    EmptyMask,
    #[error("editor changed image size from {expected:?} to {found:?}")]
    EditorDimensionChange { expected: (u32, u32), found: (u32, u32) },
    #[error("no (x, y) coordinate in response {response:?}")]
    NoCoordinateInResponse { response: String },
    #[error("depth at {point} is {depth} mm; back-projection needs positive depth")]
    NonPositiveDepth { point: Point2D, depth: u16 },
    #[error("intrinsics are configured but the image has no depth channel")]
    MissingDepth,
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    fn at(self, stage: Stage) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Stage a run failed in, if attributed.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The backend failure underneath this error, if any.
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            PipelineError::Backend(e) => Some(e),
            PipelineError::Stage { source, .. } => source.backend_error(),
            _ => None,
        }
    }

    /// True for errors caused by the configuration rather than the run.
    pub fn is_usage_error(&self) -> bool {
        match self {
            PipelineError::InvalidConfig(_) | PipelineError::Prompt(_) => true,
            PipelineError::Stage { source, .. } => source.is_usage_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaggerConfig {
    /// No tagging; only valid with the object-driven locators.
    None,
    /// Image-level tagger with a multiplier on its per-label thresholds.
    Ram { threshold_multiplier: f64 },
    /// Region captions reduced to nouns (the `scp` tag variant).
    Scp,
    /// Multimodal chat model asked for a comma-separated noun list.
    Mllm { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FilterConfig {
    None,
    Vqa,
    HeatmapTopk {
        k: usize,
    },
    Detector {
        box_threshold: f64,
        #[serde(default = "default_area_cap")]
        area_cap: f64,
    },
}

fn default_area_cap() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectorConfig {
    None,
    Llm { temperature: f64 },
    Mllm { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LocatorConfig {
    HeatmapMax,
    MaskCenter { box_threshold: f64 },
    EditBottom { box_threshold: f64 },
    DirectMllm { temperature: f64 },
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub tagger: TaggerConfig,
    pub filter: FilterConfig,
    pub selector: SelectorConfig,
    pub locator: LocatorConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptSet>,
}

pub const PRESETS: [&str; 2] = ["octo-plus", "octopus"];

impl PipelineConfig {
    /// Image tagger at 0.8x thresholds, detector filter at t = 0.25, LLM
    /// selector at temperature 0.2, segmentation-mask center locator.
    pub fn octo_plus() -> Self {
        Self {
            name: "octo-plus".into(),
            tagger: TaggerConfig::Ram { threshold_multiplier: 0.8 },
            filter: FilterConfig::Detector {
                box_threshold: 0.25,
                area_cap: 0.9,
            },
            selector: SelectorConfig::Llm { temperature: 0.2 },
            locator: LocatorConfig::MaskCenter { box_threshold: 0.25 },
            seed: 0,
            intrinsics: None,
            prompts: None,
        }
    }

    /// Region-caption tags, VQA filter, LLM selector, heatmap maximum.
    pub fn octopus() -> Self {
        Self {
            name: "octopus".into(),
            tagger: TaggerConfig::Scp,
            filter: FilterConfig::Vqa,
            selector: SelectorConfig::Llm { temperature: 0.2 },
            locator: LocatorConfig::HeatmapMax,
            seed: 0,
            intrinsics: None,
            prompts: None,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "octo-plus" => Some(Self::octo_plus()),
            "octopus" => Some(Self::octopus()),
            _ => None,
        }
    }

    pub fn prompt_set(&self) -> std::borrow::Cow<'_, PromptSet> {
        match &self.prompts {
            Some(p) => std::borrow::Cow::Borrowed(p),
            None => std::borrow::Cow::Owned(PromptSet::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        let temperature_ok = |t: f64| t.is_finite() && t >= 0.0;
        let threshold_ok = |t: f64| t > 0.0 && t < 1.0;

        if self.name.trim().is_empty() {
            return bad("name must be non-empty".into());
        }
        match self.tagger {
            TaggerConfig::Ram { threshold_multiplier: m } if !(m.is_finite() && m > 0.0) => {
                return bad(format!("tagger threshold_multiplier must be positive, got {m}"))
            }
            TaggerConfig::Mllm { temperature } if !temperature_ok(temperature) => {
                return bad(format!("tagger temperature must be >= 0, got {temperature}"))
            }
            _ => {}
        }
        match self.filter {
            FilterConfig::HeatmapTopk { k: 0 } => return bad("filter k must be >= 1".into()),
            FilterConfig::Detector { box_threshold, area_cap } => {
                if !threshold_ok(box_threshold) {
                    return bad(format!("filter box_threshold must be in (0, 1), got {box_threshold}"));
                }
                if !(area_cap > 0.0 && area_cap <= 1.0) {
                    return bad(format!("filter area_cap must be in (0, 1], got {area_cap}"));
                }
            }
            _ => {}
        }
        match self.selector {
            SelectorConfig::Llm { temperature } | SelectorConfig::Mllm { temperature } if !temperature_ok(temperature) => {
                return bad(format!("selector temperature must be >= 0, got {temperature}"))
            }
            _ => {}
        }
        match self.locator {
            LocatorConfig::MaskCenter { box_threshold } | LocatorConfig::EditBottom { box_threshold }
                if !threshold_ok(box_threshold) =>
            {
                return bad(format!("locator box_threshold must be in (0, 1), got {box_threshold}"))
            }
            LocatorConfig::DirectMllm { temperature } if !temperature_ok(temperature) => {
                return bad(format!("locator temperature must be >= 0, got {temperature}"))
            }
            _ => {}
        }
        let untagged = self.tagger == TaggerConfig::None;
        if untagged && self.filter != FilterConfig::None {
            return bad("a filter needs a tagger".into());
        }
        if untagged && matches!(self.selector, SelectorConfig::Llm { .. }) {
            return bad("the llm selector chooses among tags and needs a tagger".into());
        }
        let needs_selection = matches!(self.locator, LocatorConfig::HeatmapMax | LocatorConfig::MaskCenter { .. });
        if needs_selection && self.selector == SelectorConfig::None {
            return bad("heatmap-max and mask-center locators need a selector".into());
        }
        if let Some(k) = self.intrinsics {
            if !(k.fx > 0.0 && k.fy > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
                return bad("intrinsics need positive focal lengths".into());
            }
        }
        self.prompt_set().validate()?;
        Ok(())
    }
}

/// Result of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub image: String,
    pub object: String,
    pub config: String,
    pub tags_raw: Vec<String>,
    pub tags_filtered: Vec<String>,
    pub selected: Option<String>,
    pub point: Point2D,
    pub point3d: Option<Point3D>,
    /// The locator's raw answer fell outside the image and was clamped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
    pub transcript: Vec<TranscriptEntry>,
}

/// Tags from the configured tagger: normalized, deduplicated, ordered by
/// descending confidence (ties keep backend order).
pub fn run_stage1_tag(image: &SceneImage, cfg: &PipelineConfig, session: &mut Session<'_>) -> Result<Vec<String>> {
    let scored = match &cfg.tagger {
        TaggerConfig::None => return Ok(Vec::new()),
        TaggerConfig::Ram { threshold_multiplier } => session.tag(image.rgb(), *threshold_multiplier, None)?,
        TaggerConfig::Scp => session.tag(image.rgb(), 1.0, Some("scp"))?,
        TaggerConfig::Mllm { temperature } => {
            let prompts = cfg.prompt_set();
            let response = session.chat(&[ChatMessage::user(prompts.mllm_tag.clone())], *temperature, Some(image.rgb()))?;
            return parse_tag_list(&response);
        }
    };
    let mut best: Vec<(String, f64)> = Vec::new();
    for t in scored {
        let tag = normalize_label(&t.tag);
        if tag.is_empty() {
            continue;
        }
        match best.iter_mut().find(|(name, _)| *name == tag) {
            Some(entry) => entry.1 = entry.1.max(t.score),
            None => best.push((tag, t.score)),
        }
    }
    best.sort_by(|a, b| b.1.total_cmp(&a.1));
    if best.is_empty() {
        return Err(PipelineError::EmptyTagList);
    }
    Ok(best.into_iter().map(|(t, _)| t).collect())
}

/// Split a comma-separated noun list.
pub fn parse_tag_list(response: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for piece in response.split(',') {
        let tag = normalize_label(piece.trim_end_matches('.'));
        if !tag.is_empty() && !out.contains(&tag) {
            out.push(tag);
        }
    }
    if out.is_empty() {
        return Err(PipelineError::EmptyAfterParse);
    }
    Ok(out)
}

/// Keep tags the VQA model answers "yes" for.
pub fn filter_vqa(tags: &[String], image: &SceneImage, prompts: &PromptSet, session: &mut Session<'_>) -> Result<Vec<String>> {
    let mut kept = Vec::new();
    for tag in tags {
        let question = render(&prompts.vqa_question, &[("noun", tag)]);
        if normalize_answer(&session.vqa(image.rgb(), &question)?) == "yes" {
            kept.push(tag.clone());
        }
    }
    Ok(kept)
}

/// Rank tags by their heatmap's brightest pixel and keep the top `k`.
pub fn filter_heatmap_topk(tags: &[String], image: &SceneImage, k: usize, session: &mut Session<'_>) -> Result<Vec<String>> {
    let mut peaks = Vec::with_capacity(tags.len());
    for tag in tags {
        peaks.push((tag.clone(), session.heatmap(image.rgb(), tag)?.max_value()));
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(peaks.into_iter().take(k).map(|(t, _)| t).collect())
}

/// Tags the detector can ground in a box scoring at least `t` that covers
/// at most `area_cap` of the frame.
pub fn filter_detector(
    tags: &[String],
    image: &SceneImage,
    t: f64,
    area_cap: f64,
    session: &mut Session<'_>,
) -> Result<Vec<String>> {
    let boxes = session.detect(image.rgb(), &tags.join(", "), t)?;
    Ok(detector_kept_tags(tags, &boxes, image.dimensions(), t, area_cap))
}

/// Pure part of [`filter_detector`]: which tags survive a given box list.
pub fn detector_kept_tags(tags: &[String], boxes: &[BBox], (w, h): (u32, u32), t: f64, area_cap: f64) -> Vec<String> {
    let frame = w as f64 * h as f64;
    let surviving: Vec<&BBox> = boxes
        .iter()
        .filter(|b| b.score >= t && b.area() / frame <= area_cap)
        .collect();
    tags.iter()
        .filter(|tag| surviving.iter().any(|b| contains_tokens(&b.phrase, tag)))
        .cloned()
        .collect()
}

/// Selector conversation for `object` over `tags`.
pub fn build_selector_prompt(tags: &[String], object: &str, prompts: &PromptSet) -> Result<Vec<ChatMessage>> {
    prompts.validate()?;
    if tags.is_empty() {
        return Err(PipelineError::EmptyTagList);
    }
    Ok(prompts.selector_messages(tags, object))
}

fn match_tag(response: &str, tags: &[String]) -> Option<String> {
    let answer = normalize_label(&normalize_answer(response));
    tags.iter().find(|t| normalize_label(t) == answer).cloned()
}

/// Ask the chat model to choose one of `tags`. An answer outside the list
/// gets one corrective retry.
pub fn run_stage2_select(
    tags: &[String],
    object: &str,
    temperature: f64,
    prompts: &PromptSet,
    session: &mut Session<'_>,
) -> Result<String> {
    let mut messages = build_selector_prompt(tags, object, prompts)?;
    let first = session.chat(&messages, temperature, None)?;
    if let Some(tag) = match_tag(&first, tags) {
        return Ok(tag);
    }
    let correction = render(&prompts.retry, &[("answer", first.trim()), ("tags", &tags.join(", "))]);
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(correction));
    let second = session.chat(&messages, temperature, None)?;
    match_tag(&second, tags).ok_or(PipelineError::SelectionNotInTags {
        response: second,
        tags: tags.to_vec(),
    })
}

/// Ask a multimodal model to name the surface directly. The answer is
/// snapped to a tag when it matches one.
pub fn run_stage2_mllm(
    image: &SceneImage,
    object: &str,
    tags: &[String],
    temperature: f64,
    prompts: &PromptSet,
    session: &mut Session<'_>,
) -> Result<String> {
    let messages = [
        ChatMessage::system(prompts.mllm_select_system.clone()),
        ChatMessage::user(render(&prompts.mllm_select_user, &[("object", object)])),
    ];
    let response = session.chat(&messages, temperature, Some(image.rgb()))?;
    if let Some(tag) = match_tag(&response, tags) {
        return Ok(tag);
    }
    let answer = normalize_label(&normalize_answer(&response));
    if answer.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    Ok(answer)
}

pub fn locate_heatmap_max(image: &SceneImage, tag: &str, session: &mut Session<'_>) -> Result<Point2D> {
    Ok(argmax_point(&session.heatmap(image.rgb(), tag)?))
}

fn merged_mask(
    img: &image::RgbImage,
    query: &str,
    t: f64,
    session: &mut Session<'_>,
) -> Result<crate::geometry::BinaryMask> {
    let boxes = session.detect(img, query, t)?;
    if boxes.is_empty() {
        return Err(PipelineError::NoBoxFound { query: query.to_string() });
    }
    let masks = session.segment(img, &boxes)?;
    mask_union(&masks).map_err(|_| PipelineError::EmptyMask)
}

fn geometry_err(e: GeometryError) -> PipelineError {
    match e {
        GeometryError::EmptyMask | GeometryError::EmptyList => PipelineError::EmptyMask,
        other => PipelineError::InvalidConfig(other.to_string()),
    }
}

/// Innermost point of the merged segmentation of `tag`.
pub fn locate_mask_center(image: &SceneImage, tag: &str, t: f64, session: &mut Session<'_>) -> Result<Point2D> {
    let mask = merged_mask(image.rgb(), tag, t, session)?;
    innermost_point(&mask).map_err(geometry_err)
}

/// Paint the object in with an image editor, segment it, and take the
/// lowest pixel of its mask as the contact point.
pub fn locate_edit_bottom(
    image: &SceneImage,
    object: &str,
    t: f64,
    prompts: &PromptSet,
    session: &mut Session<'_>,
) -> Result<Point2D> {
    let edited = session.edit(image.rgb(), &render(&prompts.edit_instruction, &[("object", object)]))?;
    if edited.dimensions() != image.dimensions() {
        return Err(PipelineError::EditorDimensionChange {
            expected: image.dimensions(),
            found: edited.dimensions(),
        });
    }
    let mask = merged_mask(&edited, object, t, session)?;
    bottommost_point(&mask).map_err(geometry_err)
}

/// Last `(int, int)` group in `text`, whitespace allowed around numbers.
pub fn parse_last_coordinate(text: &str) -> Option<(i64, i64)> {
    fn int(s: &str) -> Option<i64> {
        let s = s.trim();
        let digits = s.strip_prefix('-').unwrap_or(s);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse().ok()
    }
    let mut found = None;
    let mut rest = text;
    while let Some(open) = rest.find('(') {
        rest = &rest[open + 1..];
        if let Some(close) = rest.find(')') {
            let inner = &rest[..close];
            if let Some((a, b)) = inner.split_once(',') {
                if let (Some(x), Some(y)) = (int(a), int(b)) {
                    found = Some((x, y));
                }
            }
        }
    }
    found
}

/// Ask a multimodal model for pixel coordinates directly. Returns the point
/// and whether it had to be clamped into the frame.
pub fn locate_direct_mllm(
    image: &SceneImage,
    object: &str,
    temperature: f64,
    prompts: &PromptSet,
    session: &mut Session<'_>,
) -> Result<(Point2D, bool)> {
    let (w, h) = image.dimensions();
    let messages = [
        ChatMessage::system(render(
            &prompts.direct_system,
            &[("width", &w.to_string()), ("height", &h.to_string())],
        )),
        ChatMessage::user(render(&prompts.direct_user, &[("object", object)])),
    ];
    let response = session.chat(&messages, temperature, Some(image.rgb()))?;
    let (x, y) = parse_last_coordinate(&response).ok_or(PipelineError::NoCoordinateInResponse { response })?;
    let p = Point2D::new(x.clamp(0, w as i64 - 1), y.clamp(0, h as i64 - 1));
    Ok((p, p != Point2D::new(x, y)))
}

/// Pinhole back-projection of pixel `p` at `depth_mm` to meters.
pub fn backproject(p: Point2D, depth_mm: u16, k: &Intrinsics) -> Result<Point3D> {
    if depth_mm == 0 {
        return Err(PipelineError::NonPositiveDepth { point: p, depth: depth_mm });
    }
    let z = depth_mm as f64 / 1000.0;
    Ok(Point3D {
        x: (p.x as f64 - k.cx) * z / k.fx,
        y: (p.y as f64 - k.cy) * z / k.fy,
        z,
    })
}

/// Run all configured stages for one image-object pair.
pub fn run_pipeline(image: &SceneImage, object: &str, cfg: &PipelineConfig, transport: &dyn Transport) -> Result<PlacementRecord> {
    cfg.validate()?;
    let object = normalize_label(object);
    if object.is_empty() {
        return Err(PipelineError::InvalidConfig("object name must be non-empty".into()));
    }
    let prompts = cfg.prompt_set();
    let mut session = Session::new(transport);

    session.set_stage("tagging");
    let tags_raw = run_stage1_tag(image, cfg, &mut session).map_err(|e| e.at(Stage::Tagging))?;

    session.set_stage("filtering");
    let tags_filtered = match &cfg.filter {
        FilterConfig::None => Ok(tags_raw.clone()),
        FilterConfig::Vqa => filter_vqa(&tags_raw, image, &prompts, &mut session),
        FilterConfig::HeatmapTopk { k } => filter_heatmap_topk(&tags_raw, image, *k, &mut session),
        FilterConfig::Detector { box_threshold, area_cap } => {
            filter_detector(&tags_raw, image, *box_threshold, *area_cap, &mut session)
        }
    }
    .map_err(|e| e.at(Stage::Filtering))?;
    if cfg.tagger != TaggerConfig::None && tags_filtered.is_empty() {
        return Err(PipelineError::EmptyTagList.at(Stage::Filtering));
    }

    session.set_stage("selection");
    let selected = match &cfg.selector {
        SelectorConfig::None => None,
        SelectorConfig::Llm { temperature } => Some(
            run_stage2_select(&tags_filtered, &object, *temperature, &prompts, &mut session)
                .map_err(|e| e.at(Stage::Selection))?,
        ),
        SelectorConfig::Mllm { temperature } => Some(
            run_stage2_mllm(image, &object, &tags_filtered, *temperature, &prompts, &mut session)
                .map_err(|e| e.at(Stage::Selection))?,
        ),
    };

    session.set_stage("locating");
    let surface = selected.as_deref().unwrap_or(&object);
    let (point, clamped) = match &cfg.locator {
        LocatorConfig::HeatmapMax => locate_heatmap_max(image, surface, &mut session).map(|p| (p, false)),
        LocatorConfig::MaskCenter { box_threshold } => {
            locate_mask_center(image, surface, *box_threshold, &mut session).map(|p| (p, false))
        }
        LocatorConfig::EditBottom { box_threshold } => {
            locate_edit_bottom(image, &object, *box_threshold, &prompts, &mut session).map(|p| (p, false))
        }
        LocatorConfig::DirectMllm { temperature } => {
            locate_direct_mllm(image, &object, *temperature, &prompts, &mut session)
        }
    }
    .map_err(|e| e.at(Stage::Locating))?;

    let point3d = match &cfg.intrinsics {
        None => None,
        Some(k) => {
            let depth = image
                .depth_at(point)
                .ok_or(PipelineError::MissingDepth.at(Stage::Backprojection))?;
            Some(backproject(point, depth, k).map_err(|e| e.at(Stage::Backprojection))?)
        }
    };

    Ok(PlacementRecord {
        image: image.id().to_string(),
        object,
        config: cfg.name.clone(),
        tags_raw,
        tags_filtered,
        selected,
        point,
        point3d,
        clamped,
        transcript: session.into_transcript(),
    })
}

/// Outcome of one pair in a batch.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub image: String,
    pub object: String,
    pub result: Result<PlacementRecord>,
}

/// Run many pairs on a pool of `jobs` threads. Output is sorted by
/// (image, object) whatever the scheduling.
pub fn run_batch(
    pairs: &[(&SceneImage, &str)],
    cfg: &PipelineConfig,
    transport: &dyn Transport,
    jobs: usize,
) -> Result<Vec<BatchItem>> {
    use rayon::prelude::*;

    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut items: Vec<BatchItem> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(image, object)| BatchItem {
                image: image.id().to_string(),
                object: normalize_label(object),
                result: run_pipeline(image, object, cfg, transport),
            })
            .collect()
    });
    items.sort_by(|a, b| (&a.image, &a.object).cmp(&(&b.image, &b.object)));
    Ok(items)
}

/// Batch outcomes as JSON lines: a [`PlacementRecord`] per success and
/// `{"image", "object", "stage", "error"}` per failure.
pub fn batch_to_jsonl(items: &[BatchItem]) -> String {
    let mut out = String::new();
    for item in items {
        let line = match &item.result {
            Ok(record) => serde_json::to_string(record),
            Err(e) => serde_json::to_string(&serde_json::json!({
                "image": item.image,
                "object": item.object,
                "stage": e.stage(),
                "error": e.to_string(),
            })),
        };
        out += &line.expect("batch items serialize");
        out.push('\n');
    }
    out
}
