//! Benchmark dataset ingestion: scene images, label masks, label names,
//! synonym remapping, expert annotations, and the evaluable image-object
//! pairs derived from them.
//!
//! On-disk layout under a dataset root:
//!
//! ```text
//! images/<id>.png      8-bit RGB
//! depth/<id>.png       optional, 16-bit single channel, millimetres
//! masks/<id>.png       16-bit single channel, pixel value = label id (0 = unlabeled)
//! labelmap.tsv         "id<TAB>name" per line
//! remap.json           {"rules": {"source": "target", ...}}   (optional)
//! annotations.json     see [`AnnotationSet`]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{BinaryMask, Point2D};
use crate::text::normalize_label;

/// Largest label id a segmentation mask may carry.
pub const MAX_LABEL_ID: u16 = 895;

/// The fifteen household objects of the reference benchmark.
pub const DEFAULT_OBJECTS: [&str; 15] = [
    "apple", "cake", "cup", "plate", "vase", "stool", "painting", "lamp", "book", "bag", "computer",
    "pencil", "shoes", "cushion", "cat",
];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{id}: mask is {mask:?} but image is {image:?}")]
    DimensionMismatch {
        id: String,
        image: (u32, u32),
        mask: (u32, u32),
    },
    #[error("{id}: mask label id {label} is not in the label map")]
    UnknownLabelId { id: String, label: u16 },
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("malformed label map: {0}")]
    MalformedLabelMap(String),
    #[error("invalid remap table: {0}")]
    InvalidRemap(String),
    #[error("invalid scene data: {0}")]
    InvalidScene(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// An RGB scene photograph with optional aligned depth in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    id: String,
    rgb: image::RgbImage,
    depth: Option<Vec<u16>>,
}

impl SceneImage {
    pub fn new(id: impl Into<String>, rgb: image::RgbImage) -> Result<Self> {
        let id = id.into();
        if rgb.width() == 0 || rgb.height() == 0 {
            return Err(DatasetError::InvalidScene(format!("{id}: empty image")));
        }
        Ok(Self {
            id,
            rgb,
            depth: None,
        })
    }

    pub fn with_depth(mut self, depth: Vec<u16>) -> Result<Self> {
        if depth.len() != self.pixel_count() {
            return Err(DatasetError::InvalidScene(format!(
                "{}: depth has {} values for a {}x{} image",
                self.id,
                depth.len(),
                self.width(),
                self.height()
            )));
        }
        self.depth = Some(depth);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.rgb.dimensions()
    }

    fn pixel_count(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn rgb(&self) -> &image::RgbImage {
        &self.rgb
    }

    pub fn depth(&self) -> Option<&[u16]> {
        self.depth.as_deref()
    }

    /// Depth in millimetres at `p`, if depth is present and `p` in bounds.
    pub fn depth_at(&self, p: Point2D) -> Option<u16> {
        let depth = self.depth.as_ref()?;
        if p.x < 0 || p.y < 0 || p.x >= self.width() as i64 || p.y >= self.height() as i64 {
            return None;
        }
        Some(depth[p.y as usize * self.width() as usize + p.x as usize])
    }

    /// SHA-256 over the dimensions and raw RGB bytes. Identifies the pixel
    /// content independently of how it was encoded on disk.
    pub fn content_digest(&self) -> String {
        rgb_digest(&self.rgb)
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.rgb
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        buf.into_inner()
    }
}

pub(crate) fn rgb_digest(rgb: &image::RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(rgb.width().to_le_bytes());
    h.update(rgb.height().to_le_bytes());
    h.update(rgb.as_raw());
    hex::encode(h.finalize())
}

/// Per-pixel segmentation label ids; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    labels: Vec<u16>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width as usize * height as usize {
            return Err(DatasetError::InvalidScene(format!(
                "label grid of {} values for {width}x{height}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_LABEL_ID) {
            return Err(DatasetError::InvalidScene(format!(
                "label id {bad} exceeds {MAX_LABEL_ID}"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Distinct non-zero label ids present, ascending.
    pub fn present_labels(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, self.labels.clone())
                .expect("buffer length matches dimensions");
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        buf.into_inner()
    }
}

/// Label id to canonical lowercase name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    entries: BTreeMap<u16, String>,
}

impl LabelMap {
    pub fn new(entries: impl IntoIterator<Item = (u16, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, name) in entries {
            if id == 0 || id > MAX_LABEL_ID {
                return Err(DatasetError::MalformedLabelMap(format!(
                    "label id {id} outside 1..={MAX_LABEL_ID}"
                )));
            }
            let name = normalize_label(&name);
            if name.is_empty() {
                return Err(DatasetError::MalformedLabelMap(format!("label id {id} has an empty name")));
            }
            if map.insert(id, name).is_some() {
                return Err(DatasetError::MalformedLabelMap(format!("duplicate label id {id}")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, name) = line.split_once('\t').ok_or_else(|| {
                DatasetError::MalformedLabelMap(format!("line {}: expected id<TAB>name", lineno + 1))
            })?;
            let id: u16 = id.trim().parse().map_err(|_| {
                DatasetError::MalformedLabelMap(format!("line {}: bad id {id:?}", lineno + 1))
            })?;
            entries.push((id, name.to_string()));
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|(id, name)| format!("{id}\t{name}\n")).collect()
    }

    pub fn get(&self, id: u16) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &str)> {
        self.entries.iter().map(|(&id, n)| (id, n.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Synonym and specialisation rewrites applied to mask label names before
/// they are compared against annotated valid locations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RemapFile", into = "RemapFile")]
pub struct RemapTable {
    rules: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RemapFile {
    rules: BTreeMap<String, String>,
}

impl TryFrom<RemapFile> for RemapTable {
    type Error = DatasetError;
    fn try_from(file: RemapFile) -> Result<Self> {
        RemapTable::new(file.rules)
    }
}

impl From<RemapTable> for RemapFile {
    fn from(t: RemapTable) -> Self {
        RemapFile { rules: t.rules }
    }
}

impl RemapTable {
    /// Rejects rule chains, which would make remapping non-idempotent.
    pub fn new(rules: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (src, dst) in rules {
            let (src, dst) = (normalize_label(&src), normalize_label(&dst));
            if src.is_empty() || dst.is_empty() {
                return Err(DatasetError::InvalidRemap("empty rule name".into()));
            }
            if src != dst {
                map.insert(src, dst);
            }
        }
        if let Some(dst) = map.values().find(|dst| map.contains_key(*dst)) {
            return Err(DatasetError::InvalidRemap(format!(
                "{dst:?} is both a target and a source"
            )));
        }
        Ok(Self { rules: map })
    }

    pub fn rules(&self) -> &BTreeMap<String, String> {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Rewrite `name` through the table; names without a rule pass through.
pub fn apply_remap<'a>(name: &'a str, table: &'a RemapTable) -> &'a str {
    table.rules.get(name).map(String::as_str).unwrap_or(name)
}

/// Expert annotation for one object in one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub natural: Option<Point2D>,
    pub unnatural: Option<Point2D>,
    pub valid_locations: Vec<String>,
    #[serde(default)]
    pub excluded: bool,
}

/// All annotations of a benchmark, keyed by image id then object name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub objects: Vec<String>,
    pub images: BTreeMap<String, BTreeMap<String, ObjectAnnotation>>,
}

impl AnnotationSet {
    /// Image-object pairs not excluded by annotators, in canonical order.
    pub fn active_pairs(&self) -> impl Iterator<Item = (&str, &str, &ObjectAnnotation)> {
        self.images.iter().flat_map(|(img, objs)| {
            objs.iter()
                .filter(|(_, a)| !a.excluded)
                .map(move |(o, a)| (img.as_str(), o.as_str(), a))
        })
    }

    pub fn get(&self, image: &str, object: &str) -> Option<&ObjectAnnotation> {
        self.images.get(image)?.get(object)
    }

    /// Structural checks that do not need the images.
    fn validate(&mut self, allowed: Option<&[String]>) -> Result<()> {
        let declared: BTreeSet<&str> = self.objects.iter().map(String::as_str).collect();
        if let Some(allowed) = allowed {
            if let Some(bad) = self.objects.iter().find(|o| !allowed.contains(o)) {
                return Err(DatasetError::MalformedAnnotation(format!(
                    "object {bad:?} is not in the configured object list"
                )));
            }
        }
        for (img, objs) in &mut self.images {
            for (obj, ann) in objs.iter_mut() {
                if !declared.contains(obj.as_str()) {
                    return Err(DatasetError::MalformedAnnotation(format!(
                        "{img}/{obj}: object is not declared in \"objects\""
                    )));
                }
                ann.valid_locations = ann
                    .valid_locations
                    .iter()
                    .map(|l| normalize_label(l))
                    .filter(|l| !l.is_empty())
                    .collect();
                if !ann.excluded && ann.valid_locations.is_empty() {
                    return Err(DatasetError::MalformedAnnotation(format!(
                        "{img}/{obj}: no valid locations"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_points(&self, image: &str, width: u32, height: u32) -> Result<()> {
        let Some(objs) = self.images.get(image) else {
            return Ok(());
        };
        for (obj, ann) in objs {
            for p in [ann.natural, ann.unnatural].into_iter().flatten() {
                if p.x < 0 || p.y < 0 || p.x >= width as i64 || p.y >= height as i64 {
                    return Err(DatasetError::MalformedAnnotation(format!(
                        "{image}/{obj}: point {p} outside {width}x{height}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Object names annotations may use. `None` accepts any name declared
    /// in the annotation file.
    pub objects: Option<Vec<String>>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            objects: Some(DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect()),
        }
    }
}

impl DatasetConfig {
    pub fn open_vocabulary() -> Self {
        Self { objects: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: SceneImage,
    pub mask: LabelMask,
}

/// Immutable, validated view of a benchmark dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub scenes: BTreeMap<String, Scene>,
    pub label_map: LabelMap,
    pub remap: RemapTable,
    pub annotations: AnnotationSet,
}

impl DatasetIndex {
    /// Assemble and validate an index from in-memory parts.
    pub fn new(
        scenes: Vec<Scene>,
        label_map: LabelMap,
        remap: RemapTable,
        mut annotations: AnnotationSet,
        config: &DatasetConfig,
    ) -> Result<Self> {
        annotations.validate(config.objects.as_deref())?;
        let mut by_id = BTreeMap::new();
        for scene in scenes {
            validate_scene(&scene, &label_map)?;
            annotations.check_points(scene.image.id(), scene.image.width(), scene.image.height())?;
            let id = scene.image.id().to_string();
            if by_id.insert(id.clone(), scene).is_some() {
                return Err(DatasetError::InvalidScene(format!("duplicate image id {id}")));
            }
        }
        if let Some(id) = annotations.images.keys().find(|id| !by_id.contains_key(*id)) {
            return Err(DatasetError::MissingFile(PathBuf::from(format!("images/{id}.png"))));
        }
        Ok(Self {
            scenes: by_id,
            label_map,
            remap,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.get(id)
    }

    /// SHA-256 over the decoded content of every component, in canonical
    /// order. Independent of PNG encoder settings.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, scene) in &self.scenes {
            h.update(id.as_bytes());
            h.update([0]);
            h.update(scene.image.content_digest().as_bytes());
            if let Some(depth) = scene.image.depth() {
                h.update(b"depth");
                for d in depth {
                    h.update(d.to_le_bytes());
                }
            }
            h.update(scene.mask.width.to_le_bytes());
            h.update(scene.mask.height.to_le_bytes());
            for l in &scene.mask.labels {
                h.update(l.to_le_bytes());
            }
        }
        h.update(self.label_map.to_tsv().as_bytes());
        h.update(serde_json::to_vec(&self.remap).expect("remap serializes").as_slice());
        h.update(serde_json::to_vec(&self.annotations).expect("annotations serialize").as_slice());
        hex::encode(h.finalize())
    }

    /// Write the dataset in the on-disk layout read by [`load_dataset`].
    pub fn write_to_dir(&self, root: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        for sub in ["images", "masks", "depth"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        for (id, scene) in &self.scenes {
            let path = root.join("images").join(format!("{id}.png"));
            std::fs::write(&path, scene.image.to_png_bytes()).map_err(io(&path))?;
            let path = root.join("masks").join(format!("{id}.png"));
            std::fs::write(&path, scene.mask.to_png_bytes()).map_err(io(&path))?;
            if let Some(depth) = scene.image.depth() {
                let path = root.join("depth").join(format!("{id}.png"));
                let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                    image::ImageBuffer::from_raw(scene.image.width(), scene.image.height(), depth.to_vec())
                        .expect("depth length checked at construction");
                img.save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|source| DatasetError::Image { path: path.clone(), source })?;
            }
        }
        let path = root.join("labelmap.tsv");
        std::fs::write(&path, self.label_map.to_tsv()).map_err(io(&path))?;
        let path = root.join("remap.json");
        let text = serde_json::to_string_pretty(&self.remap).expect("remap serializes");
        std::fs::write(&path, text + "\n").map_err(io(&path))?;
        let path = root.join("annotations.json");
        let text = serde_json::to_string_pretty(&self.annotations).expect("annotations serialize");
        std::fs::write(&path, text + "\n").map_err(io(&path))?;
        Ok(())
    }
}

fn validate_scene(scene: &Scene, label_map: &LabelMap) -> Result<()> {
    let id = scene.image.id();
    if scene.mask.dimensions() != scene.image.dimensions() {
        return Err(DatasetError::DimensionMismatch {
            id: id.to_string(),
            image: scene.image.dimensions(),
            mask: scene.mask.dimensions(),
        });
    }
    if let Some(label) = scene
        .mask
        .present_labels()
        .into_iter()
        .find(|&l| label_map.get(l).is_none())
    {
        return Err(DatasetError::UnknownLabelId {
            id: id.to_string(),
            label,
        });
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn decode_png(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_file(path)?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|source| {
        DatasetError::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

/// Raw single-channel values; 8-bit input is widened without rescaling.
fn single_channel_u16(path: &Path, img: image::DynamicImage) -> Result<(u32, u32, Vec<u16>)> {
    let (w, h) = (img.width(), img.height());
    let raw = match img {
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(DatasetError::InvalidScene(format!(
                "{}: expected a single-channel PNG, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((w, h, raw))
}

fn load_scene(root: &Path, id: &str) -> Result<Scene> {
    let image_path = root.join("images").join(format!("{id}.png"));
    let rgb = decode_png(&image_path)?.into_rgb8();
    let mut image = SceneImage::new(id, rgb)?;

    let depth_path = root.join("depth").join(format!("{id}.png"));
    if depth_path.exists() {
        let (w, h, depth) = single_channel_u16(&depth_path, decode_png(&depth_path)?)?;
        if (w, h) != image.dimensions() {
            return Err(DatasetError::InvalidScene(format!(
                "{id}: depth is {w}x{h} but image is {}x{}",
                image.width(),
                image.height()
            )));
        }
        image = image.with_depth(depth)?;
    }

    let mask_path = root.join("masks").join(format!("{id}.png"));
    let (w, h, labels) = single_channel_u16(&mask_path, decode_png(&mask_path)?)?;
    if (w, h) != image.dimensions() {
        return Err(DatasetError::DimensionMismatch {
            id: id.to_string(),
            image: image.dimensions(),
            mask: (w, h),
        });
    }
    let mask = LabelMask::new(w, h, labels).map_err(|e| match e {
        DatasetError::InvalidScene(msg) => DatasetError::InvalidScene(format!("{id}: {msg}")),
        e => e,
    })?;
    Ok(Scene { image, mask })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Load and validate a dataset directory. Scenes are decoded in parallel.
pub fn load_dataset(root: &Path, config: &DatasetConfig) -> Result<DatasetIndex> {
    let annotations: AnnotationSet = read_json(&root.join("annotations.json")).map_err(|e| match e {
        DatasetError::Json { source, .. } => DatasetError::MalformedAnnotation(source.to_string()),
        e => e,
    })?;
    let label_map_path = root.join("labelmap.tsv");
    let label_text = String::from_utf8(read_file(&label_map_path)?)
        .map_err(|_| DatasetError::MalformedLabelMap("not valid UTF-8".into()))?;
    let label_map = LabelMap::parse_tsv(&label_text)?;
    let remap_path = root.join("remap.json");
    let remap = if remap_path.exists() {
        read_json::<RemapTable>(&remap_path)?
    } else {
        RemapTable::default()
    };

    let ids: Vec<&String> = annotations.images.keys().collect();
    let scenes = ids
        .par_iter()
        .map(|id| load_scene(root, id))
        .collect::<Result<Vec<_>>>()?;
    DatasetIndex::new(scenes, label_map, remap, annotations, config)
}

/// Union of all pixels whose remapped label name is one of `valid`.
pub fn consolidate_mask(mask: &LabelMask, map: &LabelMap, table: &RemapTable, valid: &[String]) -> BinaryMask {
    let mut lookup = vec![false; MAX_LABEL_ID as usize + 1];
    for (id, name) in map.iter() {
        lookup[id as usize] = valid.iter().any(|v| v == apply_remap(name, table));
    }
    let bits = mask.labels.iter().map(|&l| lookup[l as usize]).collect();
    BinaryMask::from_bits(mask.width, mask.height, bits).expect("label mask dimensions are valid")
}

/// An image-object pair that can be scored in Stage 3.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluablePair {
    pub image_id: String,
    pub object: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AnnotatorExcluded,
    NoMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub image: String,
    pub object: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub total: usize,
    pub retained: usize,
    pub annotator_excluded: usize,
    pub no_mask: usize,
    pub dropped: Vec<DroppedPair>,
}

/// Consolidate every annotated pair's valid-location mask, dropping pairs
/// excluded by annotators or whose mask comes out empty.
pub fn filter_evaluable_pairs(index: &DatasetIndex) -> (Vec<EvaluablePair>, ExclusionReport) {
    let all: Vec<(&str, &str, &ObjectAnnotation)> = index
        .annotations
        .images
        .iter()
        .flat_map(|(img, objs)| objs.iter().map(move |(o, a)| (img.as_str(), o.as_str(), a)))
        .collect();

    let outcomes: Vec<std::result::Result<EvaluablePair, DroppedPair>> = all
        .par_iter()
        .map(|&(img, obj, ann)| {
            let dropped = |reason| DroppedPair {
                image: img.to_string(),
                object: obj.to_string(),
                reason,
            };
            if ann.excluded {
                return Err(dropped(DropReason::AnnotatorExcluded));
            }
            let scene = &index.scenes[img];
            let mask = consolidate_mask(&scene.mask, &index.label_map, &index.remap, &ann.valid_locations);
            if mask.is_empty() {
                return Err(dropped(DropReason::NoMask));
            }
            Ok(EvaluablePair {
                image_id: img.to_string(),
                object: obj.to_string(),
                mask,
            })
        })
        .collect();

    let mut report = ExclusionReport {
        total: outcomes.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(d) => {
                match d.reason {
                    DropReason::AnnotatorExcluded => report.annotator_excluded += 1,
                    DropReason::NoMask => report.no_mask += 1,
                }
                report.dropped.push(d);
            }
        }
    }
    report.retained = pairs.len();
    (pairs, report)
}

/// Per-pair seed so random placements are independent across pairs yet
/// reproducible on every platform.
pub fn derive_seed(seed: u64, image_id: &str, object: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0]);
    h.update(object.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Uniformly random pixel of a `width` x `height` grid.
pub fn random_placement(width: u32, height: u32, seed: u64) -> Point2D {
    assert!(width > 0 && height > 0, "random_placement needs a non-empty grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rng.random_range(0..width);
    let y = rng.random_range(0..height);
    Point2D::new(x as i64, y as i64)
}
