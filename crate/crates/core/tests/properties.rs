//! Property tests against brute-force oracles.

use std::collections::BTreeMap;

use pearl::dataset::{apply_remap, consolidate_mask, random_placement, LabelMap, LabelMask, RemapTable};
use pearl::geometry::{
    euclidean_distance_transform, innermost_point_with_depth, mask_union, nearest_opposite_point, signed_distance,
    BinaryMask, Point2D,
};
use pearl::metrics::{in_mask_score, pearl_score};
use pearl::pipeline::detector_kept_tags;
use pearl::backend::BBox;
use pearl::EvaluablePair;
use proptest::prelude::*;

fn mask_strategy(max: u32) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, 0.05f64..0.95).prop_flat_map(|(w, h, density)| {
        proptest::collection::vec(proptest::bool::weighted(density), (w * h) as usize)
            .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    })
}

fn nonuniform(max: u32) -> impl Strategy<Value = BinaryMask> {
    mask_strategy(max).prop_filter("mask must contain both classes", |m| !m.is_uniform())
}

/// Exhaustive nearest pixel of `class` with the smallest-y-then-x tie-break.
fn brute_nearest(m: &BinaryMask, p: Point2D, class: bool) -> Option<(Point2D, u64)> {
    let mut best: Option<(Point2D, u64)> = None;
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) == class {
                let q = Point2D::new(x as i64, y as i64);
                let d = p.squared_distance(q);
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some((q, d));
                }
            }
        }
    }
    best
}

fn points(m: &BinaryMask) -> impl Iterator<Item = Point2D> + '_ {
    (0..m.height()).flat_map(move |y| (0..m.width()).map(move |x| Point2D::new(x as i64, y as i64)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn edt_matches_brute_force(m in nonuniform(24), target in any::<bool>()) {
        let field = euclidean_distance_transform(&m, target).unwrap();
        for p in points(&m) {
            let (x, y) = (p.x as u32, p.y as u32);
            let expected = if m.get(x, y) == target { brute_nearest(&m, p, !target).unwrap().1 } else { 0 };
            prop_assert_eq!(field.squared(x, y), expected);
        }
    }

    #[test]
    fn sign_law_and_nearest_point(m in nonuniform(20)) {
        for p in points(&m) {
            let bit = m.get(p.x as u32, p.y as u32);
            let sd = signed_distance(&m, p).unwrap();
            prop_assert_eq!(sd > 0.0, bit);
            prop_assert_eq!(sd < 0.0, !bit);
            let q = nearest_opposite_point(&m, p).unwrap();
            let (oracle, sq) = brute_nearest(&m, p, !bit).unwrap();
            prop_assert_eq!(q, oracle);
            prop_assert_eq!(sd.abs(), (sq as f64).sqrt());
            prop_assert_eq!(sd.abs(), p.distance(q));
        }
    }

    #[test]
    fn innermost_point_is_deepest(m in mask_strategy(20).prop_filter("non-empty", |m| !m.is_empty())) {
        let (best, depth) = innermost_point_with_depth(&m).unwrap();
        prop_assert!(m.get(best.x as u32, best.y as u32));
        // Interior depth with the frame edge counting as background.
        let interior = |p: Point2D| -> u64 {
            let to_frame = [p.x + 1, p.y + 1, m.width() as i64 - p.x, m.height() as i64 - p.y]
                .into_iter().min().unwrap() as u64;
            let frame_sq = to_frame * to_frame;
            brute_nearest(&m, p, false).map_or(frame_sq, |(_, d)| d.min(frame_sq))
        };
        let best_sq = interior(best);
        prop_assert_eq!(depth, (best_sq as f64).sqrt());
        for p in m.set_points() {
            let sq = interior(p);
            prop_assert!(sq <= best_sq);
            if sq == best_sq {
                prop_assert!((best.y, best.x) <= (p.y, p.x));
            }
        }
    }

    #[test]
    fn translation_equivariance(
        content in mask_strategy(10).prop_filter("both classes", |m| !m.is_uniform()),
        a in (1u32..6, 1u32..6),
        b in (1u32..6, 1u32..6),
    ) {
        // Content keeps a background margin of at least one pixel in both placements.
        let (cw, ch) = content.dimensions();
        let canvas = |(ox, oy): (u32, u32)| BinaryMask::from_fn(cw + 8, ch + 8, |x, y| {
            x >= ox && y >= oy && x < ox + cw && y < oy + ch && content.get(x - ox, y - oy)
        }).unwrap();
        let (ma, mb) = (canvas(a), canvas(b));
        let (dx, dy) = (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
        let shift = |p: Point2D| Point2D::new(p.x + dx, p.y + dy);
        for y in 0..ch as i64 {
            for x in 0..cw as i64 {
                let p = Point2D::new(x + a.0 as i64, y + a.1 as i64);
                prop_assert_eq!(signed_distance(&ma, p).unwrap(), signed_distance(&mb, shift(p)).unwrap());
                prop_assert_eq!(shift(nearest_opposite_point(&ma, p).unwrap()), nearest_opposite_point(&mb, shift(p)).unwrap());
            }
        }
        if !content.is_empty() {
            let (pa, da) = innermost_point_with_depth(&ma).unwrap();
            let (pb, db) = innermost_point_with_depth(&mb).unwrap();
            prop_assert_eq!(shift(pa), pb);
            prop_assert_eq!(da, db);
        }
    }

    #[test]
    fn remap_is_idempotent(
        rules in proptest::collection::btree_map("[a-e]{1,2}", "[f-j]{1,2}", 0..6),
        name in "[a-j]{1,2}",
    ) {
        let table = RemapTable::new(rules).unwrap();
        let once = apply_remap(&name, &table).to_string();
        prop_assert_eq!(apply_remap(&once, &table), once.as_str());
    }

    #[test]
    fn consolidation_distributes_over_union(
        (w, h, labels) in (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(0u16..6, (w * h) as usize))
        }),
        a in proptest::sample::subsequence(vec!["floor", "table", "couch", "wall", "bed"], 0..=5),
        b in proptest::sample::subsequence(vec!["floor", "table", "couch", "wall", "bed"], 0..=5),
    ) {
        let map = LabelMap::new([(1, "floor"), (2, "table"), (3, "sofa"), (4, "wall"), (5, "desk")]
            .map(|(i, n)| (i, n.to_string()))).unwrap();
        let table = RemapTable::new([("sofa".to_string(), "couch".to_string()), ("desk".to_string(), "table".to_string())]).unwrap();
        let mask = LabelMask::new(w, h, labels).unwrap();
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let union: Vec<String> = own(&a).into_iter().chain(own(&b)).collect();
        let lhs = consolidate_mask(&mask, &map, &table, &union);
        let rhs = mask_union(&[consolidate_mask(&mask, &map, &table, &own(&a)), consolidate_mask(&mask, &map, &table, &own(&b))]).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn detector_filter_shrinks_with_threshold(
        boxes in proptest::collection::vec((0usize..5, 0.0f64..1.0, 0.0f64..10.0, 0.0f64..10.0), 0..8),
        t1 in 0.01f64..0.99,
        t2 in 0.01f64..0.99,
    ) {
        let names = ["table", "wooden table", "floor", "room", "lamp"];
        let tags: Vec<String> = ["table", "floor", "room", "lamp", "bed"].iter().map(|s| s.to_string()).collect();
        let boxes: Vec<BBox> = boxes.into_iter().map(|(n, score, bw, bh)| BBox {
            x0: 0.0, y0: 0.0, x1: bw, y1: bh, phrase: names[n].to_string(), score,
        }).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let strict = detector_kept_tags(&tags, &boxes, (10, 10), hi, 0.9);
        let loose = detector_kept_tags(&tags, &boxes, (10, 10), lo, 0.9);
        prop_assert!(strict.iter().all(|t| loose.contains(t)));
    }

    #[test]
    fn in_mask_bounds_and_permutation(
        masks in proptest::collection::vec(nonuniform(12), 1..7),
        assignment in proptest::collection::vec(0usize..3, 7),
        seed in any::<u64>(),
    ) {
        let pairs: Vec<EvaluablePair> = masks.into_iter().enumerate().map(|(i, mask)| EvaluablePair {
            image_id: format!("img{}", assignment[i]),
            object: format!("obj{i}"),
            mask,
        }).collect();
        let placements: BTreeMap<(String, String), Point2D> = pairs.iter().enumerate().map(|(i, p)| {
            let q = random_placement(p.mask.width(), p.mask.height(), seed.wrapping_add(i as u64));
            ((p.image_id.clone(), p.object.clone()), q)
        }).collect();
        let score = in_mask_score(&placements, &pairs).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        let all_in = pairs.iter().all(|p| p.mask.at(placements[&(p.image_id.clone(), p.object.clone())]) == Some(true));
        prop_assert_eq!(score == 1.0, all_in);

        let mut reversed = pairs.clone();
        reversed.reverse();
        prop_assert_eq!(pearl_score(&placements, &pairs).unwrap(), pearl_score(&placements, &reversed).unwrap());
    }

    #[test]
    fn random_placement_is_reproducible(w in 1u32..600, h in 1u32..600, seed in any::<u64>()) {
        let p = random_placement(w, h, seed);
        prop_assert_eq!(p, random_placement(w, h, seed));
        prop_assert!(p.x >= 0 && p.y >= 0 && p.x < w as i64 && p.y < h as i64);
    }
}
