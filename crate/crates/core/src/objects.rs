//! Anchor-frame selection, object selection, object-guided patch masking and
//! tag-stream construction.
//!
//! Every entry point bumps a process-wide counter and a per-thread counter so
//! callers can prove that a code path (evaluation) never touches object
//! annotations.

use std::cell::Cell;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{CLS, NOOBJ, PAD, SEP};
use crate::data::Frame;
use crate::error::{input_err, Error, Result};
use crate::rng::RngState;

static INVOCATIONS: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static THREAD_INVOCATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of object-pipeline calls made by this process so far.
pub fn invocation_count() -> u64 {
    INVOCATIONS.load(Ordering::SeqCst)
}

/// Number of object-pipeline calls made on the current thread so far.
pub fn thread_invocation_count() -> u64 {
    THREAD_INVOCATIONS.with(Cell::get)
}

fn record_invocation() {
    INVOCATIONS.fetch_add(1, Ordering::SeqCst);
    THREAD_INVOCATIONS.with(|c| c.set(c.get() + 1));
}

/// One detected object: normalized box `[x1, y1, x2, y2]`, tag id, score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectAnnotation {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(rename = "tag")]
    pub tag_id: u32,
    pub score: f64,
}

impl ObjectAnnotation {
    pub fn new(frame_index: usize, bbox: [f64; 4], tag_id: u32, score: f64) -> Self {
        Self {
            frame_index,
            bbox,
            tag_id,
            score,
        }
    }

    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.bbox;
        (x2 - x1) * (y2 - y1)
    }

    /// Checks the box and score invariants; the message names the problem.
    pub fn check(&self) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.bbox;
        if !(x1 < x2 && y1 < y2) {
            return Err("box not ordered".into());
        }
        if self.bbox.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("box outside [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err("score outside [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectConfig {
    pub top_n: usize,
    pub drop_prob: f64,
    pub shift_prob: f64,
    pub extra_mask_prob: f64,
    pub large_box_area_frac: f64,
    pub crop_fallback_keep_frac: f64,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            drop_prob: 0.2,
            shift_prob: 0.5,
            extra_mask_prob: 0.2,
            large_box_area_frac: 0.25,
            crop_fallback_keep_frac: 0.75,
        }
    }
}

impl ObjectConfig {
    /// No random dropping, shifting or extra masking.
    pub fn deterministic() -> Self {
        Self {
            drop_prob: 0.0,
            shift_prob: 0.0,
            extra_mask_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("shift_prob", self.shift_prob),
            ("extra_mask_prob", self.extra_mask_prob),
            ("large_box_area_frac", self.large_box_area_frac),
            ("crop_fallback_keep_frac", self.crop_fallback_keep_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// The anchor frame with its patch-keep grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAnchorFrame {
    pub pixels: Frame,
    pub keep_grid: Vec<bool>,
    pub grid_width: usize,
    pub grid_height: usize,
    pub anchor_frame_index: usize,
    pub kept_objects: Vec<ObjectAnnotation>,
    pub used_fallback: bool,
}

impl MaskedAnchorFrame {
    pub fn kept_count(&self) -> usize {
        self.keep_grid.iter().filter(|&&k| k).count()
    }

    /// The frame with masked patches painted mid-gray.
    pub fn render(&self) -> Frame {
        let mut out = self.pixels.clone();
        let patch = out.width / self.grid_width;
        let gray = vec![128u8; out.channels];
        for (cell, &keep) in self.keep_grid.iter().enumerate() {
            if keep {
                continue;
            }
            let (r, c) = (cell / self.grid_width, cell % self.grid_width);
            for y in r * patch..(r + 1) * patch {
                for x in c * patch..(c + 1) * patch {
                    out.set(x, y, &gray);
                }
            }
        }
        out
    }
}

/// Nearest available object frame to the clip's central index (ties go to
/// the smaller frame), optionally shifted to an adjacent available frame.
pub fn select_anchor_frame(
    clip_frame_indices: &[usize],
    object_frames_available: &[usize],
    config: &ObjectConfig,
    rng: &mut RngState,
) -> Result<usize> {
    record_invocation();
    if clip_frame_indices.is_empty() {
        return Err(input_err!("clip has no frames"));
    }
    let mut available = object_frames_available.to_vec();
    available.sort_unstable();
    available.dedup();
    if available.is_empty() {
        return Err(input_err!("no frame carries object annotations"));
    }
    let central = clip_frame_indices[clip_frame_indices.len() / 2];
    let pos = (0..available.len())
        .min_by_key(|&i| (available[i].abs_diff(central), available[i]))
        .expect("nonempty");
    let pos = if rng.gen_bool(config.shift_prob) {
        if rng.gen_bool(0.5) {
            pos.saturating_sub(1)
        } else {
            (pos + 1).min(available.len() - 1)
        }
    } else {
        pos
    };
    Ok(available[pos])
}

fn shrink(bbox: [f64; 4]) -> [f64; 4] {
    let [x1, y1, x2, y2] = bbox;
    let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (hw, hh) = ((x2 - x1) * s / 2.0, (y2 - y1) * s / 2.0);
    [
        (cx - hw).clamp(0.0, 1.0),
        (cy - hh).clamp(0.0, 1.0),
        (cx + hw).clamp(0.0, 1.0),
        (cy + hh).clamp(0.0, 1.0),
    ]
}

/// Highest-scoring annotation per tag, best `top_n` by score, large boxes
/// halved in area, then random dropping that never empties the list.
pub fn select_objects(
    annotations: &[ObjectAnnotation],
    config: &ObjectConfig,
    rng: &mut RngState,
) -> Vec<ObjectAnnotation> {
    record_invocation();
    let mut best: Vec<ObjectAnnotation> = Vec::new();
    for a in annotations {
        match best.iter_mut().find(|b| b.tag_id == a.tag_id) {
            Some(b) if a.score > b.score => *b = a.clone(),
            Some(_) => {}
            None => best.push(a.clone()),
        }
    }
    best.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.tag_id.cmp(&b.tag_id)));
    best.truncate(config.top_n);
    for a in &mut best {
        if a.area() > config.large_box_area_frac {
            a.bbox = shrink(a.bbox);
        }
    }
    let survive: Vec<bool> = best.iter().map(|_| !rng.gen_bool(config.drop_prob)).collect();
    if survive.iter().any(|&s| s) {
        best.into_iter()
            .zip(survive)
            .filter_map(|(a, s)| s.then_some(a))
            .collect()
    } else {
        best.truncate(1);
        best
    }
}

/// Keep-grid for a frame divided into `patch`-pixel cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepGrid {
    pub cells: Vec<bool>,
    pub width: usize,
    pub height: usize,
    pub used_fallback: bool,
}

/// Whether the cell's pixel rectangle overlaps the box with positive area.
pub fn cell_intersects(bbox: &[f64; 4], frame_w: usize, frame_h: usize, patch: usize, row: usize, col: usize) -> bool {
    let [x1, y1, x2, y2] = *bbox;
    let (bx1, bx2) = (x1 * frame_w as f64, x2 * frame_w as f64);
    let (by1, by2) = (y1 * frame_h as f64, y2 * frame_h as f64);
    let (cx1, cx2) = ((col * patch) as f64, ((col + 1) * patch) as f64);
    let (cy1, cy2) = ((row * patch) as f64, ((row + 1) * patch) as f64);
    bx1 < cx2 && bx2 > cx1 && by1 < cy2 && by2 > cy1
}

fn overlap_area(bbox: &[f64; 4], frame_w: usize, frame_h: usize, patch: usize, row: usize, col: usize) -> f64 {
    let [x1, y1, x2, y2] = *bbox;
    let w = (x2 * frame_w as f64).min(((col + 1) * patch) as f64) - (x1 * frame_w as f64).max((col * patch) as f64);
    let h = (y2 * frame_h as f64).min(((row + 1) * patch) as f64) - (y1 * frame_h as f64).max((row * patch) as f64);
    w.max(0.0) * h.max(0.0)
}

/// Centered block spanning half the grid along each axis (at least one
/// cell).
pub fn central_crop(width: usize, height: usize) -> Vec<bool> {
    let (bw, bh) = ((width / 2).max(1), (height / 2).max(1));
    let (x0, y0) = ((width - bw) / 2, (height - bh) / 2);
    (0..width * height)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            (y0..y0 + bh).contains(&r) && (x0..x0 + bw).contains(&c)
        })
        .collect()
}

/// Keep cells that overlap any kept box, re-mask some of them at random,
/// and fall back to the central crop when nothing or too much is kept.
pub fn build_patch_mask(
    kept: &[ObjectAnnotation],
    frame_width: usize,
    frame_height: usize,
    patch: usize,
    config: &ObjectConfig,
    rng: &mut RngState,
) -> Result<KeepGrid> {
    record_invocation();
    if patch == 0 || !frame_width.is_multiple_of(patch) || !frame_height.is_multiple_of(patch) {
        return Err(input_err!(
            "patch {} does not tile a {}x{} frame",
            patch,
            frame_width,
            frame_height
        ));
    }
    let (gw, gh) = (frame_width / patch, frame_height / patch);
    let mut cells = vec![false; gw * gh];
    let mut overlap = vec![0.0; gw * gh];
    for (i, cell) in cells.iter_mut().enumerate() {
        let (r, c) = (i / gw, i % gw);
        for a in kept {
            if cell_intersects(&a.bbox, frame_width, frame_height, patch, r, c) {
                *cell = true;
                overlap[i] += overlap_area(&a.bbox, frame_width, frame_height, patch, r, c);
            }
        }
    }
    if config.extra_mask_prob > 0.0 && cells.iter().any(|&k| k) {
        let before = cells.clone();
        for cell in cells.iter_mut().filter(|k| **k) {
            if rng.gen_bool(config.extra_mask_prob) {
                *cell = false;
            }
        }
        if !cells.iter().any(|&k| k) {
            let best = (0..cells.len())
                .filter(|&i| before[i])
                .max_by(|&a, &b| overlap[a].total_cmp(&overlap[b]).then(b.cmp(&a)))
                .expect("some cell was kept");
            cells[best] = true;
        }
    }
    let kept_cells = cells.iter().filter(|&&k| k).count();
    let frac = kept_cells as f64 / cells.len() as f64;
    let used_fallback = kept_cells == 0 || frac > config.crop_fallback_keep_frac;
    if used_fallback {
        cells = central_crop(gw, gh);
    }
    Ok(KeepGrid {
        cells,
        width: gw,
        height: gh,
        used_fallback,
    })
}

/// Full anchor pipeline for one clip. `frames` holds every frame of the
/// video; `objects` every annotation.
pub fn build_masked_anchor(
    frames: &[Frame],
    clip_frame_indices: &[usize],
    objects: &[ObjectAnnotation],
    patch: usize,
    config: &ObjectConfig,
    rng: &mut RngState,
) -> Result<MaskedAnchorFrame> {
    record_invocation();
    if clip_frame_indices.is_empty() {
        return Err(input_err!("clip has no frames"));
    }
    let available: Vec<usize> = objects.iter().map(|a| a.frame_index).collect();
    let anchor = if available.is_empty() {
        clip_frame_indices[clip_frame_indices.len() / 2]
    } else {
        select_anchor_frame(clip_frame_indices, &available, config, rng)?
    };
    let pixels = frames
        .get(anchor)
        .ok_or_else(|| input_err!("anchor frame {} beyond {} frames", anchor, frames.len()))?
        .clone();
    let on_anchor: Vec<ObjectAnnotation> = objects.iter().filter(|a| a.frame_index == anchor).cloned().collect();
    let kept = select_objects(&on_anchor, config, rng);
    let grid = build_patch_mask(&kept, pixels.width, pixels.height, patch, config, rng)?;
    Ok(MaskedAnchorFrame {
        pixels,
        keep_grid: grid.cells,
        grid_width: grid.width,
        grid_height: grid.height,
        anchor_frame_index: anchor,
        kept_objects: kept,
        used_fallback: grid.used_fallback,
    })
}

/// Position within the clip whose frame is closest to `frame` (ties go to
/// the earlier position).
pub fn nearest_clip_slot(clip_frame_indices: &[usize], frame: usize) -> usize {
    (0..clip_frame_indices.len())
        .min_by_key(|&i| (clip_frame_indices[i].abs_diff(frame), i))
        .unwrap_or(0)
}

/// How object tags enter the text side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagStrategy {
    /// Tags appended to the caption; no separate tag stream.
    Padding,
    /// A separate `[CLS] tags...` stream.
    TwoStream,
    /// A separate stream holding the caption followed by the tags.
    TwoStreamPadding,
}

impl FromStr for TagStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "padding" => Ok(Self::Padding),
            "two_stream" => Ok(Self::TwoStream),
            "two_stream_padding" => Ok(Self::TwoStreamPadding),
            _ => Err(Error::Config(format!(
                "unknown tag strategy `{s}` (expected padding, two-stream or two-stream-padding)"
            ))),
        }
    }
}

/// Caption and optional tag stream token ids after applying a strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStreams {
    pub caption: Vec<u32>,
    pub tags: Option<Vec<u32>>,
}

/// `tag_tokens[tag_id]` gives the word ids spelling each tag. Kept objects
/// are assumed score-sorted with distinct tags (as `select_objects` returns).
pub fn build_tag_stream(
    kept: &[ObjectAnnotation],
    strategy: TagStrategy,
    caption_tokens: &[u32],
    tag_tokens: &[Vec<u32>],
    max_len: usize,
) -> Result<TagStreams> {
    record_invocation();
    let mut tags: Vec<u32> = Vec::new();
    let mut seen = Vec::new();
    for a in kept {
        if seen.contains(&a.tag_id) {
            continue;
        }
        seen.push(a.tag_id);
        let words = tag_tokens
            .get(a.tag_id as usize)
            .ok_or_else(|| input_err!("tag id {} outside tag vocabulary of {}", a.tag_id, tag_tokens.len()))?;
        tags.extend_from_slice(words);
    }
    if tags.is_empty() {
        tags.push(NOOBJ);
    }
    let caption: Vec<u32> = {
        let end = caption_tokens.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
        caption_tokens[..end].to_vec()
    };
    let padded = |mut seq: Vec<u32>| {
        seq.push(SEP);
        seq.extend_from_slice(&tags);
        seq.truncate(max_len);
        seq
    };
    Ok(match strategy {
        TagStrategy::Padding => TagStreams {
            caption: padded(caption),
            tags: None,
        },
        TagStrategy::TwoStream => {
            let mut stream = vec![CLS];
            stream.extend_from_slice(&tags);
            stream.truncate(max_len);
            TagStreams {
                caption,
                tags: Some(stream),
            }
        }
        TagStrategy::TwoStreamPadding => TagStreams {
            tags: Some(padded(caption.clone())),
            caption,
        },
    })
}

#[cfg(test)]
mod tests;
