use rand::Rng;
use proptest::prelude::*;

use super::*;

fn ann(tag: u32, score: f64) -> ObjectAnnotation {
    ObjectAnnotation::new(0, [0.1, 0.1, 0.2, 0.2], tag, score)
}

fn rng() -> RngState {
    RngState::new(42)
}

#[test]
fn anchor_is_nearest_available_frame() {
    let cfg = ObjectConfig::deterministic();
    assert_eq!(select_anchor_frame(&[2, 6, 10, 14], &[3, 9, 20], &cfg, &mut rng()).unwrap(), 9);
    assert_eq!(select_anchor_frame(&[8, 10, 12], &[12, 8], &cfg, &mut rng()).unwrap(), 8);
    assert!(matches!(
        select_anchor_frame(&[1, 2], &[], &cfg, &mut rng()),
        Err(Error::Input(_))
    ));
}

#[test]
fn anchor_distance_matches_exhaustive_search() {
    let cfg = ObjectConfig::deterministic();
    let mut r = RngState::new(1);
    for _ in 0..200 {
        let l = r.gen_range(1..6);
        let clip: Vec<usize> = (0..l).map(|_| r.gen_range(0..30)).collect();
        let avail: Vec<usize> = (0..r.gen_range(1..6)).map(|_| r.gen_range(0..30)).collect();
        let central = clip[l / 2];
        let best = avail.iter().map(|&a| a.abs_diff(central)).min().unwrap();
        let expected = avail.iter().filter(|&&a| a.abs_diff(central) == best).min().copied().unwrap();
        assert_eq!(select_anchor_frame(&clip, &avail, &cfg, &mut r).unwrap(), expected);
    }
}

#[test]
fn shift_moves_to_an_adjacent_available_frame() {
    let cfg = ObjectConfig {
        shift_prob: 1.0,
        ..ObjectConfig::deterministic()
    };
    let mut r = rng();
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..64 {
        seen.insert(select_anchor_frame(&[0, 4, 8], &[1, 3, 5, 7], &cfg, &mut r).unwrap());
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 5]);
    for _ in 0..16 {
        assert_eq!(select_anchor_frame(&[0, 4, 8], &[6], &cfg, &mut r).unwrap(), 6);
    }
}

#[test]
fn select_objects_keeps_best_per_tag() {
    let (dog, cat, tree) = (0, 1, 2);
    let input = vec![ann(dog, 0.9), ann(dog, 0.7), ann(cat, 0.8), ann(tree, 0.6), ann(cat, 0.5)];
    let cfg = ObjectConfig {
        top_n: 3,
        ..ObjectConfig::deterministic()
    };
    let out = select_objects(&input, &cfg, &mut rng());
    let got: Vec<(u32, f64)> = out.iter().map(|a| (a.tag_id, a.score)).collect();
    assert_eq!(got, vec![(dog, 0.9), (cat, 0.8), (tree, 0.6)]);
    assert!(select_objects(&[], &cfg, &mut rng()).is_empty());
}

#[test]
fn full_frame_box_is_halved_in_area() {
    let a = ObjectAnnotation::new(0, [0.0, 0.0, 1.0, 1.0], 0, 1.0);
    let out = select_objects(&[a], &ObjectConfig::deterministic(), &mut rng());
    let h = std::f64::consts::SQRT_2 / 4.0;
    let expected = [0.5 - h, 0.5 - h, 0.5 + h, 0.5 + h];
    for (x, y) in out[0].bbox.iter().zip(expected) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((out[0].area() - 0.5).abs() < 1e-12);
}

#[test]
fn dropping_never_empties_the_selection() {
    let cfg = ObjectConfig {
        top_n: 1,
        drop_prob: 1.0,
        ..ObjectConfig::deterministic()
    };
    let out = select_objects(&[ann(3, 0.4)], &cfg, &mut rng());
    assert_eq!(out.len(), 1);
    let cfg = ObjectConfig {
        drop_prob: 1.0,
        ..ObjectConfig::deterministic()
    };
    let out = select_objects(&[ann(3, 0.4), ann(5, 0.7)], &cfg, &mut rng());
    assert_eq!(out.iter().map(|a| a.tag_id).collect::<Vec<_>>(), vec![5]);
}

#[test]
fn single_small_box_keeps_one_cell() {
    let kept = vec![ObjectAnnotation::new(0, [0.0, 0.0, 0.25, 0.25], 0, 1.0)];
    let grid = build_patch_mask(&kept, 64, 64, 16, &ObjectConfig::deterministic(), &mut rng()).unwrap();
    let mut expected = vec![false; 16];
    expected[0] = true;
    assert_eq!(grid.cells, expected);
    assert!(!grid.used_fallback);
}

#[test]
fn oversized_or_missing_boxes_fall_back_to_central_crop() {
    let center: Vec<bool> = (0..16).map(|i| [5, 6, 9, 10].contains(&i)).collect();
    let full = vec![ObjectAnnotation::new(0, [0.0, 0.0, 1.0, 1.0], 0, 1.0)];
    let grid = build_patch_mask(&full, 64, 64, 16, &ObjectConfig::deterministic(), &mut rng()).unwrap();
    assert!(grid.used_fallback);
    assert_eq!(grid.cells, center);
    let none = build_patch_mask(&[], 64, 64, 16, &ObjectConfig::deterministic(), &mut rng()).unwrap();
    assert!(none.used_fallback);
    assert_eq!(none.cells, center);
}

#[test]
fn central_crop_is_never_empty() {
    for w in 1..8 {
        for h in 1..8 {
            let c = central_crop(w, h);
            assert_eq!(c.iter().filter(|&&k| k).count(), (w / 2).max(1) * (h / 2).max(1));
        }
    }
}

#[test]
fn full_extra_masking_keeps_the_best_covered_cell() {
    let cfg = ObjectConfig {
        extra_mask_prob: 1.0,
        ..ObjectConfig::deterministic()
    };
    let kept = vec![ObjectAnnotation::new(0, [0.2, 0.2, 0.45, 0.45], 0, 1.0)];
    let grid = build_patch_mask(&kept, 64, 64, 16, &cfg, &mut rng()).unwrap();
    assert_eq!(grid.cells.iter().filter(|&&k| k).count(), 1);
    assert!(grid.cells[5]);
}

#[test]
fn patch_mask_rejects_untiled_frames() {
    assert!(build_patch_mask(&[], 30, 32, 8, &ObjectConfig::default(), &mut rng()).is_err());
}

#[test]
fn randomized_operations_are_reproducible() {
    let input: Vec<ObjectAnnotation> = (0..8).map(|i| ann(i, 0.1 * i as f64)).collect();
    let cfg = ObjectConfig {
        drop_prob: 0.5,
        ..ObjectConfig::default()
    };
    let a = select_objects(&input, &cfg, &mut RngState::new(3));
    let b = select_objects(&input, &cfg, &mut RngState::new(3));
    assert_eq!(a, b);
}

#[test]
fn tag_stream_strategies() {
    let (a, woman, waters, tree) = (5u32, 6u32, 7u32, 8u32);
    let table = vec![vec![woman], vec![tree]];
    let kept = vec![ann(0, 0.9), ann(1, 0.8)];
    let caption = vec![CLS, a, woman, waters, a, tree, PAD, PAD];

    let two = build_tag_stream(&kept, TagStrategy::TwoStream, &caption, &table, 16).unwrap();
    assert_eq!(two.tags, Some(vec![CLS, woman, tree]));
    assert_eq!(two.caption, vec![CLS, a, woman, waters, a, tree]);

    let pad = build_tag_stream(&kept, TagStrategy::Padding, &caption, &table, 16).unwrap();
    assert_eq!(pad.caption, vec![CLS, a, woman, waters, a, tree, SEP, woman, tree]);
    assert_eq!(pad.tags, None);

    let both = build_tag_stream(&kept, TagStrategy::TwoStreamPadding, &caption, &table, 16).unwrap();
    assert_eq!(both.tags, Some(pad.caption.clone()));
    assert_eq!(both.caption, two.caption);

    let empty = build_tag_stream(&[], TagStrategy::TwoStream, &caption, &table, 16).unwrap();
    assert_eq!(empty.tags, Some(vec![CLS, NOOBJ]));

    let short = build_tag_stream(&kept, TagStrategy::Padding, &caption, &table, 7).unwrap();
    assert_eq!(short.caption, vec![CLS, a, woman, waters, a, tree, SEP]);

    assert!(build_tag_stream(&[ann(9, 0.5)], TagStrategy::TwoStream, &caption, &table, 16).is_err());
}

#[test]
fn tag_strategy_names() {
    assert_eq!("two-stream".parse::<TagStrategy>().unwrap(), TagStrategy::TwoStream);
    assert_eq!("two_stream_padding".parse::<TagStrategy>().unwrap(), TagStrategy::TwoStreamPadding);
    assert_eq!("padding".parse::<TagStrategy>().unwrap(), TagStrategy::Padding);
    assert!(matches!("oscar".parse::<TagStrategy>(), Err(Error::Config(_))));
}

#[test]
fn pipeline_calls_are_counted() {
    let (before, local) = (invocation_count(), thread_invocation_count());
    let _ = select_objects(&[], &ObjectConfig::default(), &mut rng());
    assert!(invocation_count() > before);
    assert_eq!(thread_invocation_count(), local + 1);
}

#[test]
fn anchor_pipeline_and_render() {
    let frames: Vec<Frame> = (0..8).map(|i| Frame::filled(32, 32, [i as u8 * 10, 0, 0])).collect();
    let objects = vec![
        ObjectAnnotation::new(3, [0.0, 0.0, 0.2, 0.2], 0, 0.9),
        ObjectAnnotation::new(5, [0.5, 0.5, 0.7, 0.7], 1, 0.9),
    ];
    let anchor = build_masked_anchor(
        &frames,
        &[1, 3, 5, 7],
        &objects,
        8,
        &ObjectConfig::deterministic(),
        &mut rng(),
    )
    .unwrap();
    assert_eq!(anchor.anchor_frame_index, 5);
    assert_eq!(anchor.pixels, frames[5]);
    let kept: Vec<usize> = (0..16).filter(|&i| anchor.keep_grid[i]).collect();
    assert_eq!(kept, vec![10]);
    let img = anchor.render();
    assert_eq!(img.get(0, 0), &[128, 128, 128]);
    assert_eq!(img.get(20, 20), &[50, 0, 0]);
    assert_eq!(nearest_clip_slot(&[1, 3, 5, 7], 5), 2);
    assert_eq!(nearest_clip_slot(&[1, 3, 5, 7], 4), 1);

    let fallback = build_masked_anchor(&frames, &[1, 3, 5, 7], &[], 8, &ObjectConfig::default(), &mut rng()).unwrap();
    assert!(fallback.used_fallback);
    assert_eq!(fallback.anchor_frame_index, 5);
}

fn boxes() -> impl Strategy<Value = Vec<[f64; 4]>> {
    proptest::collection::vec(
        (0.0f64..0.95, 0.0f64..0.95, 0.01f64..1.0, 0.01f64..1.0)
            .prop_map(|(x, y, w, h)| [x, y, (x + w * (1.0 - x)).max(x + 1e-3), (y + h * (1.0 - y)).max(y + 1e-3)]),
        1..5,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn keep_grid_matches_intersection_oracle(bs in boxes(), grid in 1usize..9, patch in 1usize..9) {
        let size = grid * patch;
        let kept: Vec<ObjectAnnotation> = bs.iter().enumerate().map(|(i, b)| ObjectAnnotation::new(0, *b, i as u32, 0.5)).collect();
        let cfg = ObjectConfig { crop_fallback_keep_frac: 1.0, ..ObjectConfig::deterministic() };
        let got = build_patch_mask(&kept, size, size, patch, &cfg, &mut rng()).unwrap();
        for r in 0..grid {
            for c in 0..grid {
                let oracle = bs.iter().any(|b| {
                    let w = (b[2] * size as f64).min(((c + 1) * patch) as f64) - (b[0] * size as f64).max((c * patch) as f64);
                    let h = (b[3] * size as f64).min(((r + 1) * patch) as f64) - (b[1] * size as f64).max((r * patch) as f64);
                    w > 0.0 && h > 0.0
                });
                prop_assert_eq!(got.cells[r * grid + c], oracle);
            }
        }
    }

    #[test]
    fn keep_grid_is_never_empty(bs in boxes(), p in 0.0f64..1.0, seed in 0u64..1000) {
        let kept: Vec<ObjectAnnotation> = bs.iter().map(|b| ObjectAnnotation::new(0, *b, 0, 0.5)).collect();
        let cfg = ObjectConfig { extra_mask_prob: p, ..ObjectConfig::default() };
        let got = build_patch_mask(&kept, 32, 32, 8, &cfg, &mut RngState::new(seed)).unwrap();
        prop_assert!(got.cells.iter().any(|&k| k));
        if !got.used_fallback {
            for (i, &k) in got.cells.iter().enumerate() {
                if k {
                    prop_assert!(bs.iter().any(|b| cell_intersects(b, 32, 32, 8, i / 4, i % 4)));
                }
            }
        }
    }

    #[test]
    fn selection_is_unique_bounded_and_shrunk(
        raw in proptest::collection::vec((0u32..6, 0.0f64..1.0, 0.05f64..1.0, 0.05f64..1.0), 0..12),
        n in 1usize..6,
        seed in 0u64..100,
    ) {
        let input: Vec<ObjectAnnotation> = raw.iter().map(|&(t, s, w, h)| ObjectAnnotation::new(0, [0.0, 0.0, w, h], t, s)).collect();
        let cfg = ObjectConfig { top_n: n, ..ObjectConfig::default() };
        let out = select_objects(&input, &cfg, &mut RngState::new(seed));
        prop_assert!(out.len() <= n);
        prop_assert_eq!(out.is_empty(), input.is_empty());
        let mut tags: Vec<u32> = out.iter().map(|a| a.tag_id).collect();
        tags.sort_unstable();
        tags.dedup();
        prop_assert_eq!(tags.len(), out.len());
        for a in &out {
            let orig = input.iter().find(|b| b.tag_id == a.tag_id && b.score == a.score).unwrap();
            if orig.area() > cfg.large_box_area_frac {
                prop_assert!((a.area() - orig.area() / 2.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(a.bbox, orig.bbox);
            }
        }
    }

    #[test]
    fn selection_matches_subset_brute_force(
        raw in proptest::collection::vec((0u32..5, 0u32..100), 1..9),
        n in 1usize..5,
    ) {
        let input: Vec<ObjectAnnotation> = raw.iter().map(|&(t, s)| ann(t, s as f64 / 100.0)).collect();
        let cfg = ObjectConfig { top_n: n, ..ObjectConfig::deterministic() };
        let got: Vec<f64> = select_objects(&input, &cfg, &mut rng()).iter().map(|a| a.score).collect();
        let distinct = { let mut t: Vec<u32> = raw.iter().map(|r| r.0).collect(); t.sort_unstable(); t.dedup(); t.len() };
        let size = distinct.min(n);
        let mut best: Option<Vec<f64>> = None;
        for mask in 0u32..(1 << input.len()) {
            let chosen: Vec<&ObjectAnnotation> = (0..input.len()).filter(|i| mask >> i & 1 == 1).map(|i| &input[i]).collect();
            if chosen.len() != size {
                continue;
            }
            let mut tags: Vec<u32> = chosen.iter().map(|a| a.tag_id).collect();
            tags.sort_unstable();
            tags.dedup();
            if tags.len() != size {
                continue;
            }
            let mut scores: Vec<f64> = chosen.iter().map(|a| a.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            if best.as_ref().is_none_or(|b| scores > *b) {
                best = Some(scores);
            }
        }
        prop_assert_eq!(got, best.unwrap());
    }
}
