//! Placement files and the three reference baselines.
//!
//! A placement file is JSON lines of `{"image": .., "object": .., "point": [x, y]}`,
//! one per image-object pair, written in canonical (image, object) order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, random_placement, DatasetIndex, EvaluablePair};
use crate::geometry::Point2D;
use crate::metrics::PairKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementLine {
    pub image: String,
    pub object: String,
    pub point: Point2D,
}

#[derive(Debug, thiserror::Error)]
pub enum PlacementError {
    #[error("{image}/{object}: no {kind} point is annotated")]
    MissingAnnotationPoint {
        image: String,
        object: String,
        kind: BaselineKind,
    },
    #[error("placements line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("placements list {image}/{object} twice")]
    Duplicate { image: String, object: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Uniformly random pixel, seeded per pair.
    Random,
    /// The annotated natural point.
    Natural,
    /// The annotated unnatural point.
    Unnatural,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Natural, BaselineKind::Random, BaselineKind::Unnatural];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Natural => "natural",
            BaselineKind::Unnatural => "unnatural",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "natural" => Ok(BaselineKind::Natural),
            "unnatural" => Ok(BaselineKind::Unnatural),
            other => Err(format!("unknown baseline kind {other:?} (expected random, natural or unnatural)")),
        }
    }
}

/// Baseline placements for every evaluable pair.
pub fn baseline_placements(
    index: &DatasetIndex,
    pairs: &[EvaluablePair],
    kind: BaselineKind,
    seed: u64,
) -> Result<BTreeMap<PairKey, Point2D>, PlacementError> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let point = match kind {
            BaselineKind::Random => {
                let (w, h) = pair.mask.dimensions();
                random_placement(w, h, derive_seed(seed, &pair.image_id, &pair.object))
            }
            BaselineKind::Natural | BaselineKind::Unnatural => {
                let ann = index.annotations.get(&pair.image_id, &pair.object);
                let point = ann.and_then(|a| if kind == BaselineKind::Natural { a.natural } else { a.unnatural });
                point.ok_or_else(|| PlacementError::MissingAnnotationPoint {
                    image: pair.image_id.clone(),
                    object: pair.object.clone(),
                    kind,
                })?
            }
        };
        out.insert((pair.image_id.clone(), pair.object.clone()), point);
    }
    Ok(out)
}

pub fn to_jsonl(placements: &BTreeMap<PairKey, Point2D>) -> String {
    placements
        .iter()
        .map(|((image, object), &point)| {
            let line = PlacementLine {
                image: image.clone(),
                object: object.clone(),
                point,
            };
            serde_json::to_string(&line).expect("placement serializes") + "\n"
        })
        .collect()
}

/// Parses a placement file. Blank lines are skipped; a pair listed twice is
/// an error.
pub fn from_jsonl(text: &str) -> Result<BTreeMap<PairKey, Point2D>, PlacementError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PlacementLine = serde_json::from_str(line).map_err(|e| PlacementError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if out.insert((p.image.clone(), p.object.clone()), p.point).is_some() {
            return Err(PlacementError::Duplicate {
                image: p.image,
                object: p.object,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::filter_evaluable_pairs;
    use crate::synthetic::{generate_benchmark, SyntheticParams};

    fn small() -> DatasetIndex {
        generate_benchmark(&SyntheticParams {
            scenes: 2,
            width: 60,
            height: 45,
            objects_per_scene: 3,
            seed: 5,
            ..Default::default()
        })
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let index = small();
        let (pairs, _) = filter_evaluable_pairs(&index);
        let placements = baseline_placements(&index, &pairs, BaselineKind::Random, 3).unwrap();
        let text = to_jsonl(&placements);
        assert_eq!(from_jsonl(&text).unwrap(), placements);
        assert_eq!(text, to_jsonl(&baseline_placements(&index, &pairs, BaselineKind::Random, 3).unwrap()));

        let first = text.lines().next().unwrap();
        let doubled = format!("{first}\n{first}\n");
        assert!(matches!(from_jsonl(&doubled), Err(PlacementError::Duplicate { .. })));
        assert!(matches!(from_jsonl("\n{\"image\":1}"), Err(PlacementError::Parse { line: 2, .. })));
    }

    #[test]
    fn annotated_kinds_need_points() {
        let mut index = small();
        let (pairs, _) = filter_evaluable_pairs(&index);
        let natural = baseline_placements(&index, &pairs, BaselineKind::Natural, 0).unwrap();
        assert!(pairs.iter().all(|p| p.mask.at(natural[&(p.image_id.clone(), p.object.clone())]) == Some(true)));

        let pair = &pairs[0];
        index.annotations.images.get_mut(&pair.image_id).unwrap().get_mut(&pair.object).unwrap().unnatural = None;
        let err = baseline_placements(&index, &pairs, BaselineKind::Unnatural, 0).unwrap_err();
        assert!(matches!(err, PlacementError::MissingAnnotationPoint { kind: BaselineKind::Unnatural, .. }));
        assert_eq!("natural".parse::<BaselineKind>(), Ok(BaselineKind::Natural));
        assert!("best".parse::<BaselineKind>().is_err());
    }
}
