//! Procedurally generated indoor benchmarks.
//!
//! Each scene is a wall with a floor band along the bottom and a few
//! non-overlapping furniture rectangles above it. Objects are assigned
//! plausible surfaces from a fixed preference table, so valid-location
//! masks cover roughly 10% to 40% of the frame. Natural points are the
//! innermost pixel of the valid mask; unnatural points are the background
//! pixel farthest from it.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    consolidate_mask, AnnotationSet, DatasetConfig, DatasetIndex, LabelMap, LabelMask, ObjectAnnotation, RemapTable,
    Scene, SceneImage, DEFAULT_OBJECTS,
};
use crate::geometry::{euclidean_distance_transform, innermost_point, BinaryMask, Point2D};

/// Label vocabulary of generated scenes, ids 1 to 15 in order.
pub const SYNTHETIC_LABELS: [&str; 15] = [
    "floor",
    "wall",
    "table",
    "couch",
    "sofa",
    "shelf",
    "bed",
    "counter",
    "chair",
    "desk",
    "coffee table",
    "window",
    "cabinet",
    "rug",
    "nightstand",
];

const FURNITURE: [&str; 12] = [
    "table",
    "couch",
    "sofa",
    "shelf",
    "bed",
    "counter",
    "chair",
    "desk",
    "coffee table",
    "cabinet",
    "rug",
    "nightstand",
];

/// Surfaces an object belongs on, most natural first. Names are canonical
/// (after remapping).
pub fn preferred_surfaces(object: &str) -> &'static [&'static str] {
    match object {
        "apple" | "cake" | "plate" => &["table", "counter"],
        "cup" | "computer" | "pencil" => &["table", "counter", "shelf"],
        "vase" => &["table", "shelf", "nightstand"],
        "stool" => &["floor", "rug"],
        "painting" => &["shelf", "cabinet", "nightstand"],
        "lamp" => &["nightstand", "table", "shelf"],
        "book" => &["shelf", "table", "nightstand"],
        "bag" => &["floor", "chair"],
        "shoes" => &["floor", "rug"],
        "cushion" => &["couch", "bed", "chair"],
        "cat" => &["couch", "bed", "floor"],
        _ => &["table", "floor"],
    }
}

pub fn synthetic_label_map() -> LabelMap {
    LabelMap::new(SYNTHETIC_LABELS.iter().enumerate().map(|(i, n)| (i as u16 + 1, n.to_string())))
        .expect("synthetic label map is valid")
}

pub fn synthetic_remap() -> RemapTable {
    RemapTable::new([
        ("sofa".to_string(), "couch".to_string()),
        ("coffee table".to_string(), "table".to_string()),
        ("desk".to_string(), "table".to_string()),
    ])
    .expect("synthetic remap table is valid")
}

fn label_id(name: &str) -> u16 {
    SYNTHETIC_LABELS.iter().position(|n| *n == name).expect("known label") as u16 + 1
}

fn canonical(name: &str) -> &str {
    match name {
        "sofa" => "couch",
        "coffee table" | "desk" => "table",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub scenes: usize,
    pub width: u32,
    pub height: u32,
    pub objects_per_scene: usize,
    pub seed: u64,
    /// Probability an annotated pair is flagged excluded.
    pub exclusion_rate: f64,
    /// Probability a pair's valid locations name a surface absent from the
    /// scene, so consolidation yields an empty mask.
    pub missing_rate: f64,
    pub with_depth: bool,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            scenes: 10,
            width: 561,
            height: 427,
            objects_per_scene: 8,
            seed: 0,
            exclusion_rate: 0.0,
            missing_rate: 0.0,
            with_depth: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

struct Layout {
    labels: Vec<u16>,
    /// Furniture names placed in the scene, in placement order.
    furniture: Vec<&'static str>,
}

fn layout(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Layout {
    let area = w as f64 * h as f64;
    let floor_rows = ((h as f64 * rng.random_range(0.12..0.19)).round() as u32).max(1);
    let floor_top = h - floor_rows;
    let mut labels = vec![label_id("wall"); (w * h) as usize];
    for y in floor_top..h {
        for x in 0..w {
            labels[(y * w + x) as usize] = label_id("floor");
        }
    }
    // A thin unlabeled strip along the top edge.
    for x in 0..w {
        labels[x as usize] = 0;
    }

    let mut pool: Vec<&'static str> = FURNITURE.to_vec();
    pool.shuffle(rng);
    let want = rng.random_range(2..=3usize);
    let mut placed: Vec<(Rect, &'static str)> = Vec::new();
    for name in pool {
        if placed.len() == want {
            break;
        }
        if placed.iter().any(|(_, n)| canonical(n) == canonical(name)) {
            continue;
        }
        for _ in 0..200 {
            let frac = rng.random_range(0.105..0.195);
            let aspect: f64 = rng.random_range(0.6..1.8);
            let rw = ((area * frac * aspect).sqrt().round() as u32).clamp(1, w);
            let rh = ((area * frac / rw as f64).round() as u32).max(1);
            if rh + 1 > floor_top {
                continue;
            }
            let covered = (rw * rh) as f64 / area;
            if !(0.105..=0.195).contains(&covered) {
                continue;
            }
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(1..=floor_top - rh);
            let r = Rect {
                x0,
                y0,
                x1: x0 + rw,
                y1: y0 + rh,
            };
            if placed.iter().all(|(o, _)| !o.overlaps(&r)) {
                placed.push((r, name));
                break;
            }
        }
    }
    for (r, name) in &placed {
        let id = label_id(name);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                labels[(y * w + x) as usize] = id;
            }
        }
    }
    // Small window pane on the wall where it fits, for label variety.
    let pane = Rect {
        x0: w / 20,
        y0: 1,
        x1: w / 20 + (w / 12).max(1),
        y1: 1 + (h / 12).max(1),
    };
    if pane.y1 < floor_top && placed.iter().all(|(o, _)| !o.overlaps(&pane)) {
        for y in pane.y0..pane.y1 {
            for x in pane.x0..pane.x1 {
                labels[(y * w + x) as usize] = label_id("window");
            }
        }
    }
    Layout {
        labels,
        furniture: placed.into_iter().map(|(_, n)| n).collect(),
    }
}

fn palette(label: u16) -> [u8; 3] {
    const COLORS: [[u8; 3]; 16] = [
        [20, 20, 20],
        [150, 120, 90],
        [220, 215, 200],
        [140, 90, 50],
        [90, 110, 150],
        [100, 120, 160],
        [170, 140, 100],
        [200, 180, 190],
        [180, 180, 170],
        [120, 80, 60],
        [130, 95, 65],
        [150, 100, 70],
        [170, 210, 240],
        [160, 130, 110],
        [150, 60, 60],
        [110, 85, 60],
    ];
    COLORS[label as usize % COLORS.len()]
}

fn render(labels: &[u16], w: u32, h: u32) -> image::RgbImage {
    image::RgbImage::from_fn(w, h, |x, y| {
        let c = palette(labels[(y * w + x) as usize]);
        let t = ((x * 7 + y * 13) % 9) as u8;
        image::Rgb([c[0].saturating_add(t), c[1].saturating_add(t), c[2].saturating_add(t)])
    })
}

fn depth_map(labels: &[u16], w: u32, h: u32) -> Vec<u16> {
    (0..w * h)
        .map(|i| {
            let y = i / w;
            let base = 1200 + (3000 * (h - 1 - y)) / h.max(1);
            let l = labels[i as usize];
            let furniture = l != 0 && l != label_id("wall") && l != label_id("floor") && l != label_id("window");
            (if furniture { base.saturating_sub(400) } else { base }) as u16
        })
        .collect()
}

/// Background pixel farthest from every set pixel; ties by smallest y, x.
pub fn farthest_outside_point(mask: &BinaryMask) -> Option<Point2D> {
    let field = euclidean_distance_transform(mask, false).ok()?;
    let w = mask.width() as usize;
    let mut best: Option<(usize, u64)> = None;
    for (i, &sq) in field.squared_values().iter().enumerate() {
        if !mask.bits()[i] && best.is_none_or(|(_, b)| sq > b) {
            best = Some((i, sq));
        }
    }
    best.map(|(i, _)| Point2D::new((i % w) as i64, (i / w) as i64))
}

/// Generate a validated benchmark. Deterministic in `params`.
pub fn generate_benchmark(params: &SyntheticParams) -> DatasetIndex {
    assert!(params.width >= 16 && params.height >= 16, "synthetic scenes need at least 16x16 pixels");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let map = synthetic_label_map();
    let remap = synthetic_remap();
    let (w, h) = (params.width, params.height);
    let objects: Vec<String> = DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect();

    let mut scenes = Vec::with_capacity(params.scenes);
    let mut images = BTreeMap::new();
    for s in 0..params.scenes {
        let id = format!("scene_{s:03}");
        let lay = layout(&mut rng, w, h);
        let mut image = SceneImage::new(id.clone(), render(&lay.labels, w, h)).expect("non-empty image");
        if params.with_depth {
            image = image.with_depth(depth_map(&lay.labels, w, h)).expect("depth matches image");
        }
        let mask = LabelMask::new(w, h, lay.labels).expect("labels match image");

        let mut present: Vec<&str> = lay.furniture.iter().map(|n| canonical(n)).collect();
        present.push("floor");
        let absent: Vec<&str> = FURNITURE
            .iter()
            .map(|n| canonical(n))
            .filter(|n| !present.contains(n))
            .collect();

        let chosen: Vec<&String> = objects
            .choose_multiple(&mut rng, params.objects_per_scene.min(objects.len()))
            .collect();
        let mut per_image = BTreeMap::new();
        for object in chosen {
            let mut valid: Vec<String> = preferred_surfaces(object)
                .iter()
                .filter(|s| present.contains(s))
                .take(rng.random_range(1..=2usize))
                .map(|s| s.to_string())
                .collect();
            if valid.is_empty() {
                let pick = present.choose(&mut rng).expect("floor is always present");
                valid.push(pick.to_string());
            }
            let missing = !absent.is_empty() && rng.random_bool(params.missing_rate);
            if missing {
                valid = vec![absent.choose(&mut rng).unwrap().to_string()];
            }
            let excluded = rng.random_bool(params.exclusion_rate);
            let consolidated = consolidate_mask(&mask, &map, &remap, &valid);
            let (natural, unnatural) = if consolidated.is_empty() {
                (None, None)
            } else {
                (innermost_point(&consolidated).ok(), farthest_outside_point(&consolidated))
            };
            per_image.insert(
                object.clone(),
                ObjectAnnotation {
                    natural,
                    unnatural,
                    valid_locations: valid,
                    excluded,
                },
            );
        }
        images.insert(id, per_image);
        scenes.push(Scene { image, mask });
    }
    let annotations = AnnotationSet { objects, images };
    DatasetIndex::new(scenes, map, remap, annotations, &DatasetConfig::default()).expect("generated dataset is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::filter_evaluable_pairs;

    fn small() -> SyntheticParams {
        SyntheticParams {
            scenes: 6,
            width: 120,
            height: 90,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_benchmark(&small()).digest(), generate_benchmark(&small()).digest());
        let other = SyntheticParams { seed: 4, ..small() };
        assert_ne!(generate_benchmark(&small()).digest(), generate_benchmark(&other).digest());
    }

    #[test]
    fn masks_cover_ten_to_forty_percent() {
        let index = generate_benchmark(&SyntheticParams {
            scenes: 20,
            ..small()
        });
        let (pairs, report) = filter_evaluable_pairs(&index);
        assert_eq!(report.retained, 20 * 8);
        for p in &pairs {
            let f = p.mask.area_fraction();
            assert!((0.10..=0.40).contains(&f), "{}/{} covers {f}", p.image_id, p.object);
            let ann = index.annotations.get(&p.image_id, &p.object).unwrap();
            assert_eq!(p.mask.at(ann.natural.unwrap()), Some(true));
            assert_eq!(p.mask.at(ann.unnatural.unwrap()), Some(false));
        }
    }

    #[test]
    fn exclusions_and_missing_masks() {
        let index = generate_benchmark(&SyntheticParams {
            scenes: 20,
            exclusion_rate: 0.2,
            missing_rate: 0.1,
            ..small()
        });
        let (_, report) = filter_evaluable_pairs(&index);
        assert!(report.annotator_excluded > 0 && report.no_mask > 0);
        assert_eq!(report.total, report.retained + report.annotator_excluded + report.no_mask);
    }

    #[test]
    fn depth_is_positive() {
        let index = generate_benchmark(&SyntheticParams {
            with_depth: true,
            ..small()
        });
        for scene in index.scenes.values() {
            assert!(scene.image.depth().unwrap().iter().all(|&d| d > 0));
        }
    }

    #[test]
    fn farthest_outside() {
        let m = BinaryMask::from_fn(5, 5, |x, y| x == 0 && y == 0).unwrap();
        assert_eq!(farthest_outside_point(&m), Some(Point2D::new(4, 4)));
        assert_eq!(farthest_outside_point(&BinaryMask::filled(2, 2).unwrap()), None);
    }
}
