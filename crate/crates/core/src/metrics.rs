//! Placement-quality metrics for each pipeline stage.
//!
//! Every aggregate here averages per image first and then across images, so
//! an image with many objects weighs the same as an image with one. Sums run
//! in canonical `(image, object)` order, which makes every score independent
//! of input ordering and thread scheduling down to the last bit.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, EvaluablePair};
use crate::geometry::{nearest_of_class, BinaryMask, Point2D};
use crate::text::normalize_label;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("embedding of {0:?} has zero norm")]
    ZeroNorm(String),
    #[error("embedding length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("embedding of {0:?} has non-finite entries")]
    NonFinite(String),
    #[error("no embedding for {0:?}")]
    UnknownText(String),
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("images without a tag list: {0:?}")]
    MissingTags(Vec<String>),
    #[error("pairs without a selection: {0:?}")]
    MissingSelection(Vec<PairKey>),
    #[error("pairs without a placement: {0:?}")]
    MissingPlacement(Vec<PairKey>),
    #[error("empty candidate or target list")]
    EmptyList,
    #[error("malformed embedding fixture: {0}")]
    MalformedFixture(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// `(image id, object name)`.
pub type PairKey = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: String,
}

impl EmbeddingVector {
    pub fn new(source: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let source = source.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(source));
        }
        Ok(Self { values, source })
    }

    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(MetricsError::LengthMismatch(a.values.len(), b.values.len()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 {
        return Err(MetricsError::ZeroNorm(a.source.clone()));
    }
    if nb == 0.0 {
        return Err(MetricsError::ZeroNorm(b.source.clone()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Sentence-embedding model. Implementations see normalized text.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Hand-written or exported vectors: `{"dim": n, "vectors": {"word": [..]}}`.
#[derive(Debug, Clone)]
pub struct FixtureEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize, Serialize)]
struct FixtureFile {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl FixtureEmbeddings {
    pub fn new(dim: usize, vectors: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (word, v) in vectors {
            if v.len() != dim {
                return Err(MetricsError::MalformedFixture(format!(
                    "{word:?} has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(MetricsError::NonFinite(word));
            }
            map.insert(normalize_label(&word), v);
        }
        Ok(Self { dim, vectors: map })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FixtureFile =
            serde_json::from_str(text).map_err(|e| MetricsError::MalformedFixture(e.to_string()))?;
        Self::new(file.dim, file.vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl EmbeddingProvider for FixtureEmbeddings {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let key = normalize_label(text);
        let v = self
            .vectors
            .get(&key)
            .ok_or_else(|| MetricsError::UnknownText(key.clone()))?;
        EmbeddingVector::new(key, v.clone())
    }
}

/// Per-session memoization; also pins the embedding length of the session.
pub struct MemoEmbedder<P> {
    inner: P,
    cache: Mutex<HashMap<String, Arc<EmbeddingVector>>>,
}

impl<P: EmbeddingProvider> MemoEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, text: &str) -> Result<Arc<EmbeddingVector>> {
        let key = normalize_label(text);
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(self.inner.embed(&key)?);
        let mut cache = self.cache.lock().unwrap();
        if let Some(existing) = cache.values().next() {
            if existing.values.len() != v.values.len() {
                return Err(MetricsError::LengthMismatch(existing.values.len(), v.values.len()));
            }
        }
        Ok(cache.entry(key).or_insert(v).clone())
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoEmbedder<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.get(text).map(|v| (*v).clone())
    }
}

/// Best similarity over every (candidate, target) combination.
pub fn sbert_max<P: EmbeddingProvider>(
    candidates: &[String],
    targets: &[String],
    provider: &MemoEmbedder<P>,
) -> Result<f64> {
    if candidates.is_empty() || targets.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let mut best = f64::NEG_INFINITY;
    for c in candidates {
        let ec = provider.get(c)?;
        for t in targets {
            let et = provider.get(t)?;
            best = best.max(cosine_similarity(&ec, &et)?);
        }
    }
    Ok(best)
}

fn exact_overlap(tags: &[String], valid: &[String]) -> bool {
    tags.iter().any(|t| {
        let t = normalize_label(t);
        valid.iter().any(|v| normalize_label(v) == t)
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Image-level tagging quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub exact_match: f64,
    pub sbert: f64,
    pub avg_tags: f64,
    pub images: usize,
    pub pairs: usize,
}

/// Tag-list scoring against annotated valid locations.
///
/// For each image `i` with `M` active objects, `e` counts objects whose
/// valid locations intersect the tag list and `s` sums the best
/// tag/location similarity per object; `e/M` and `s/M` are then averaged
/// over images. Images whose objects are all excluded are skipped. An empty
/// tag list contributes zero similarity.
pub fn stage1_metrics<P: EmbeddingProvider>(
    tags: &BTreeMap<String, Vec<String>>,
    ann: &AnnotationSet,
    provider: &MemoEmbedder<P>,
) -> Result<Stage1Report> {
    let images: Vec<(&String, Vec<&crate::dataset::ObjectAnnotation>)> = ann
        .images
        .iter()
        .map(|(img, objs)| (img, objs.values().filter(|a| !a.excluded).collect::<Vec<_>>()))
        .filter(|(_, objs)| !objs.is_empty())
        .collect();
    let missing: Vec<String> = images
        .iter()
        .filter(|(img, _)| !tags.contains_key(*img))
        .map(|(img, _)| img.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingTags(missing));
    }

    let mut em_total = 0.0;
    let mut sbert_total = 0.0;
    let mut tag_counts = Vec::with_capacity(images.len());
    let mut pairs = 0;
    for (img, objs) in &images {
        let tag_list = &tags[*img];
        let m = objs.len() as f64;
        let mut e = 0.0;
        let mut s = 0.0;
        for a in objs {
            if exact_overlap(tag_list, &a.valid_locations) {
                e += 1.0;
            }
            if !tag_list.is_empty() {
                s += sbert_max(tag_list, &a.valid_locations, provider)?;
            }
        }
        em_total += e / m;
        sbert_total += s / m;
        tag_counts.push(tag_list.len() as f64);
        pairs += objs.len();
    }
    let n = images.len().max(1) as f64;
    Ok(Stage1Report {
        exact_match: em_total / n,
        sbert: sbert_total / n,
        avg_tags: if tag_counts.is_empty() { 0.0 } else { mean(&tag_counts) },
        images: images.len(),
        pairs,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean over objects within each image, then over images.
    #[default]
    PerImage,
    /// Mean over all pairs.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub exact_match: f64,
    pub sbert: f64,
    pub pairs: usize,
}

fn two_level_mean(rows: &[(&str, f64)], averaging: Averaging) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    match averaging {
        Averaging::Flat => rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64,
        Averaging::PerImage => {
            let mut per_image: Vec<f64> = Vec::new();
            let mut i = 0;
            while i < rows.len() {
                let img = rows[i].0;
                let mut j = i;
                let mut sum = 0.0;
                while j < rows.len() && rows[j].0 == img {
                    sum += rows[j].1;
                    j += 1;
                }
                per_image.push(sum / (j - i) as f64);
                i = j;
            }
            mean(&per_image)
        }
    }
}

/// Scores the selected surface of every active pair against its valid
/// locations.
pub fn stage2_metrics<P: EmbeddingProvider>(
    selections: &BTreeMap<PairKey, String>,
    ann: &AnnotationSet,
    provider: &MemoEmbedder<P>,
    averaging: Averaging,
) -> Result<Stage2Report> {
    let active: Vec<(&str, &str, &crate::dataset::ObjectAnnotation)> = ann.active_pairs().collect();
    let missing: Vec<PairKey> = active
        .iter()
        .filter(|(i, o, _)| !selections.contains_key(&(i.to_string(), o.to_string())))
        .map(|(i, o, _)| (i.to_string(), o.to_string()))
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingSelection(missing));
    }
    let mut em_rows = Vec::with_capacity(active.len());
    let mut sbert_rows = Vec::with_capacity(active.len());
    for (img, obj, a) in &active {
        let sel = &selections[&(img.to_string(), obj.to_string())];
        let sel = std::slice::from_ref(sel);
        em_rows.push((*img, if exact_overlap(sel, &a.valid_locations) { 1.0 } else { 0.0 }));
        sbert_rows.push((*img, sbert_max(sel, &a.valid_locations, provider)?));
    }
    Ok(Stage2Report {
        exact_match: two_level_mean(&em_rows, averaging),
        sbert: two_level_mean(&sbert_rows, averaging),
        pairs: active.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFlag {
    /// Placement fell outside the image.
    OutOfBounds,
    /// Mask had a single class; the frame-border fallback distance was used.
    UniformMask,
}

/// Per-pair Stage-3 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub image: String,
    pub object: String,
    pub point: Point2D,
    pub in_mask: bool,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<AuditFlag>,
}

/// Signed distance of one placement with the fallbacks used for scoring:
/// a uniform mask scores the distance to the nearest frame edge plus one,
/// and a placement outside the frame scores minus the distance to the
/// nearest set pixel.
pub fn score_placement(mask: &BinaryMask, p: Point2D) -> (f64, bool, Vec<AuditFlag>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    match mask.at(p) {
        None => {
            let score = match nearest_of_class(mask, p, true) {
                Some((_, sq)) => -(sq as f64).sqrt(),
                None => {
                    let clamped = Point2D::new(p.x.clamp(0, w - 1), p.y.clamp(0, h - 1));
                    -(p.distance(clamped) + 1.0)
                }
            };
            let mut flags = vec![AuditFlag::OutOfBounds];
            if mask.is_uniform() {
                flags.push(AuditFlag::UniformMask);
            }
            (score, false, flags)
        }
        Some(bit) if mask.is_uniform() => {
            let border = p.x.min(p.y).min(w - 1 - p.x).min(h - 1 - p.y) as f64 + 1.0;
            (if bit { border } else { -border }, bit, vec![AuditFlag::UniformMask])
        }
        Some(bit) => {
            let (_, sq) = nearest_of_class(mask, p, !bit).expect("mask is not uniform");
            let d = (sq as f64).sqrt();
            (if bit { d } else { -d }, bit, Vec::new())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Report {
    pub in_mask: f64,
    pub pearl_score: f64,
    pub rows: Vec<AuditRow>,
}

impl Stage3Report {
    /// Audit rows as JSON lines.
    pub fn audit_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("audit row serializes") + "\n")
            .collect()
    }
}

/// Scores every evaluable pair's placement. Pair scoring runs in parallel;
/// aggregation runs in canonical order.
pub fn stage3_metrics(placements: &BTreeMap<PairKey, Point2D>, pairs: &[EvaluablePair]) -> Result<Stage3Report> {
    let missing: Vec<PairKey> = pairs
        .iter()
        .map(|p| (p.image_id.clone(), p.object.clone()))
        .filter(|k| !placements.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPlacement(missing));
    }
    let mut rows: Vec<AuditRow> = pairs
        .par_iter()
        .map(|pair| {
            let point = placements[&(pair.image_id.clone(), pair.object.clone())];
            let (score, in_mask, flags) = score_placement(&pair.mask, point);
            AuditRow {
                image: pair.image_id.clone(),
                object: pair.object.clone(),
                point,
                in_mask,
                score,
                flags,
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.image, &a.object).cmp(&(&b.image, &b.object)));

    let in_mask_rows: Vec<(&str, f64)> = rows
        .iter()
        .map(|r| (r.image.as_str(), if r.in_mask { 1.0 } else { 0.0 }))
        .collect();
    let score_rows: Vec<(&str, f64)> = rows.iter().map(|r| (r.image.as_str(), r.score)).collect();
    Ok(Stage3Report {
        in_mask: two_level_mean(&in_mask_rows, Averaging::PerImage),
        pearl_score: two_level_mean(&score_rows, Averaging::PerImage),
        rows,
    })
}

/// Image-averaged fraction of placements inside their masks.
pub fn in_mask_score(placements: &BTreeMap<PairKey, Point2D>, pairs: &[EvaluablePair]) -> Result<f64> {
    stage3_metrics(placements, pairs).map(|r| r.in_mask)
}

/// Image-averaged mean signed distance of placements to their mask edges.
pub fn pearl_score(placements: &BTreeMap<PairKey, Point2D>, pairs: &[EvaluablePair]) -> Result<f64> {
    stage3_metrics(placements, pairs).map(|r| r.pearl_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ObjectAnnotation;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn provider() -> MemoEmbedder<FixtureEmbeddings> {
        let n = (0.9f64 * 0.9 + 0.1 * 0.1).sqrt();
        MemoEmbedder::new(
            FixtureEmbeddings::new(
                2,
                [
                    ("table".to_string(), vec![1.0, 0.0]),
                    ("floor".to_string(), vec![0.0, 1.0]),
                    ("desk".to_string(), vec![0.9 / n, 0.1 / n]),
                    ("lamp".to_string(), vec![0.6, 0.8]),
                    ("counter".to_string(), vec![0.8, 0.6]),
                    ("couch".to_string(), vec![0.3, 0.7]),
                    ("bed".to_string(), vec![0.5, 0.5]),
                ],
            )
            .unwrap(),
        )
    }

    fn ann(images: &[(&str, &[(&str, &[&str])])]) -> AnnotationSet {
        let mut set = AnnotationSet::default();
        for (img, objs) in images {
            let mut m = BTreeMap::new();
            for (obj, valid) in *objs {
                set.objects.push(obj.to_string());
                m.insert(
                    obj.to_string(),
                    ObjectAnnotation {
                        natural: None,
                        unnatural: None,
                        valid_locations: s(valid),
                        excluded: false,
                    },
                );
            }
            set.images.insert(img.to_string(), m);
        }
        set
    }

    fn m5() -> BinaryMask {
        BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y)).unwrap()
    }

    fn pair(img: &str, obj: &str, mask: BinaryMask) -> EvaluablePair {
        EvaluablePair {
            image_id: img.into(),
            object: obj.into(),
            mask,
        }
    }

    fn key(i: &str, o: &str) -> PairKey {
        (i.to_string(), o.to_string())
    }

    #[test]
    fn cosine_cases() {
        let a = EmbeddingVector::new("a", vec![0.6, 0.8]).unwrap();
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        let b = EmbeddingVector::new("b", vec![-0.8, 0.6]).unwrap();
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let z = EmbeddingVector::new("z", vec![0.0, 0.0]).unwrap();
        assert!(matches!(cosine_similarity(&a, &z), Err(MetricsError::ZeroNorm(_))));
        let c = EmbeddingVector::new("c", vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(cosine_similarity(&a, &c), Err(MetricsError::LengthMismatch(2, 3))));
        assert!(EmbeddingVector::new("n", vec![f64::NAN]).is_err());
    }

    #[test]
    fn sbert_max_cases() {
        let p = provider();
        let v = sbert_max(&s(&["desk"]), &s(&["table"]), &p).unwrap();
        // cos = 0.9 / sqrt(0.82)
        assert!((v - 0.993_883_734_673_619_6).abs() < 1e-12, "{v}");
        let v = sbert_max(&s(&["floor", "table", "lamp"]), &s(&["table"]), &p).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        let v = sbert_max(&s(&["lamp"]), &s(&["floor"]), &p).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert!(matches!(sbert_max(&[], &s(&["x"]), &p), Err(MetricsError::EmptyList)));
        assert!(matches!(
            sbert_max(&s(&["unicorn"]), &s(&["table"]), &p),
            Err(MetricsError::UnknownText(_))
        ));
    }

    #[test]
    fn memo_embedder_caches_normalized_text() {
        let p = provider();
        p.get("Table").unwrap();
        p.get(" table ").unwrap();
        assert_eq!(p.cached(), 1);
    }

    #[test]
    fn fixture_json() {
        let f = FixtureEmbeddings::from_json(r#"{"dim": 2, "vectors": {"Sofa": [1, 0]}}"#).unwrap();
        assert_eq!(f.embed("sofa").unwrap().values, vec![1.0, 0.0]);
        assert!(FixtureEmbeddings::from_json(r#"{"dim": 3, "vectors": {"a": [1, 0]}}"#).is_err());
    }

    #[test]
    fn stage1_single_image_all_match() {
        let a = ann(&[("img1", &[("apple", &["table", "counter"]), ("cat", &["couch", "floor"])])]);
        let tags = BTreeMap::from([("img1".to_string(), s(&["table", "floor", "lamp"]))]);
        let r = stage1_metrics(&tags, &a, &provider()).unwrap();
        assert_eq!(r.exact_match, 1.0);
        assert!((r.sbert - 1.0).abs() < 1e-6);
        assert_eq!(r.avg_tags, 3.0);
    }

    #[test]
    fn stage1_two_images_hand_computed() {
        let a = ann(&[
            ("img1", &[("apple", &["table", "counter"]), ("cat", &["couch", "floor"])]),
            ("img2", &[("apple", &["table"])]),
        ]);
        let tags = BTreeMap::from([
            ("img1".to_string(), s(&["table", "floor", "lamp"])),
            ("img2".to_string(), s(&["bed"])),
        ]);
        let r = stage1_metrics(&tags, &a, &provider()).unwrap();
        assert_eq!(r.exact_match, 0.5);
        assert_eq!(r.avg_tags, 2.0);
        assert_eq!((r.images, r.pairs), (2, 3));
        // img1 contributes 1.0; img2 contributes cos(bed, table) = 0.5/sqrt(0.5).
        let expected = (1.0 + 0.5 / 0.5f64.sqrt()) / 2.0;
        assert!((r.sbert - expected).abs() < 1e-12);
    }

    #[test]
    fn stage1_case_insensitive_match_and_missing_tags() {
        let a = ann(&[("img1", &[("apple", &["table"])])]);
        let tags = BTreeMap::from([("img1".to_string(), s(&["Table"]))]);
        assert_eq!(stage1_metrics(&tags, &a, &provider()).unwrap().exact_match, 1.0);
        let r = stage1_metrics(&BTreeMap::new(), &a, &provider());
        assert!(matches!(r, Err(MetricsError::MissingTags(v)) if v == vec!["img1".to_string()]));
    }

    #[test]
    fn stage2_cases() {
        let a = ann(&[
            ("img1", &[("apple", &["table", "counter"]), ("cat", &["couch"])]),
            ("img2", &[("cup", &["table"])]),
        ]);
        let p = provider();
        let sel = BTreeMap::from([
            (key("img1", "apple"), "table".to_string()),
            (key("img1", "cat"), "floor".to_string()),
            (key("img2", "cup"), "table".to_string()),
        ]);
        let r = stage2_metrics(&sel, &a, &p, Averaging::PerImage).unwrap();
        assert!((r.exact_match - 0.75).abs() < 1e-12);
        let flat = stage2_metrics(&sel, &a, &p, Averaging::Flat).unwrap();
        assert!((flat.exact_match - 2.0 / 3.0).abs() < 1e-12);

        let all_right = BTreeMap::from([
            (key("img1", "apple"), "table".to_string()),
            (key("img1", "cat"), "couch".to_string()),
            (key("img2", "cup"), "table".to_string()),
        ]);
        let r = stage2_metrics(&all_right, &a, &p, Averaging::PerImage).unwrap();
        assert_eq!(r.exact_match, 1.0);
        assert!((r.sbert - 1.0).abs() < 1e-6);

        let mut partial = all_right.clone();
        partial.remove(&key("img2", "cup"));
        assert!(matches!(
            stage2_metrics(&partial, &a, &p, Averaging::PerImage),
            Err(MetricsError::MissingSelection(v)) if v == vec![key("img2", "cup")]
        ));
    }

    #[test]
    fn pearl_score_single_pair() {
        let pairs = vec![pair("a", "cup", m5())];
        let placements = BTreeMap::from([(key("a", "cup"), Point2D::new(2, 2))]);
        assert_eq!(pearl_score(&placements, &pairs).unwrap(), 2.0);
        assert_eq!(in_mask_score(&placements, &pairs).unwrap(), 1.0);
    }

    #[test]
    fn pearl_score_two_image_nesting() {
        let pairs = vec![
            pair("a", "cup", m5()),
            pair("b", "cup", m5()),
            pair("b", "vase", m5()),
        ];
        let placements = BTreeMap::from([
            (key("a", "cup"), Point2D::new(2, 2)),
            (key("b", "cup"), Point2D::new(0, 0)),
            (key("b", "vase"), Point2D::new(1, 1)),
        ]);
        let r = stage3_metrics(&placements, &pairs).unwrap();
        let expected = (2.0 + (1.0 - std::f64::consts::SQRT_2) / 2.0) / 2.0;
        assert!((r.pearl_score - expected).abs() < 1e-12);
        assert!((r.pearl_score - 0.89645).abs() < 1e-5);
        assert!((r.in_mask - 0.75).abs() < 1e-12);
    }

    #[test]
    fn outside_and_out_of_frame_placements() {
        let pairs = vec![pair("a", "cup", m5())];
        let outside = BTreeMap::from([(key("a", "cup"), Point2D::new(0, 2))]);
        let r = stage3_metrics(&outside, &pairs).unwrap();
        assert_eq!(r.in_mask, 0.0);
        assert_eq!(r.pearl_score, -1.0);

        let off = BTreeMap::from([(key("a", "cup"), Point2D::new(-4, 2))]);
        let r = stage3_metrics(&off, &pairs).unwrap();
        assert_eq!(r.pearl_score, -5.0);
        assert_eq!(r.rows[0].flags, vec![AuditFlag::OutOfBounds]);
        assert!(!r.rows[0].in_mask);
    }

    #[test]
    fn uniform_mask_fallback_is_flagged() {
        let full = BinaryMask::filled(5, 5).unwrap();
        let (score, inside, flags) = score_placement(&full, Point2D::new(2, 1));
        assert_eq!((score, inside), (2.0, true));
        assert_eq!(flags, vec![AuditFlag::UniformMask]);
    }

    #[test]
    fn missing_placement_is_reported() {
        let pairs = vec![pair("a", "cup", m5())];
        assert!(matches!(
            stage3_metrics(&BTreeMap::new(), &pairs),
            Err(MetricsError::MissingPlacement(_))
        ));
    }

    #[test]
    fn audit_jsonl_shape() {
        let pairs = vec![pair("a", "cup", m5())];
        let placements = BTreeMap::from([(key("a", "cup"), Point2D::new(2, 2))]);
        let r = stage3_metrics(&placements, &pairs).unwrap();
        assert_eq!(
            r.audit_jsonl(),
            "{\"image\":\"a\",\"object\":\"cup\",\"point\":[2,2],\"in_mask\":true,\"score\":2.0}\n"
        );
    }
}
