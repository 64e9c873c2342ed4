//! Synthetic compositional corpus: colored glyphs drifting over structured
//! gray noise, captioned from templates over the glyph classes and the
//! motion direction, with exact per-frame boxes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frames::Frame;
use super::manifest::{write_manifest, FrameRef, VideoSample};
use super::vocab::{TagVocabulary, Vocabulary};
use super::Split;
use crate::error::{input_err, Error, Result};
use crate::objects::ObjectAnnotation;
use crate::rng::RngState;

pub const CLASS_NAMES: [&str; 16] = [
    "ball", "box", "kite", "cup", "tree", "car", "lamp", "bird", "fish", "boat", "star", "key",
    "hat", "bell", "leaf", "sign",
];

const CLASS_COLORS: [[u8; 3]; 16] = [
    [230, 40, 40],
    [40, 200, 60],
    [50, 80, 230],
    [230, 220, 40],
    [220, 50, 220],
    [40, 210, 220],
    [245, 140, 30],
    [140, 50, 200],
    [150, 230, 40],
    [250, 120, 170],
    [20, 140, 130],
    [150, 90, 40],
    [30, 40, 130],
    [130, 130, 20],
    [130, 20, 40],
    [100, 170, 250],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disk,
    Triangle,
    Cross,
    Ring,
    Diamond,
    HBar,
    VBar,
}

const SHAPES: [Shape; 8] = [
    Shape::Square,
    Shape::Disk,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
    Shape::Diamond,
    Shape::HBar,
    Shape::VBar,
];

impl Shape {
    /// Whether offset `(dx, dy)` of an `s × s` cell is painted.
    pub fn covers(self, dx: usize, dy: usize, s: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (x, y) = (dx as f64 - c, dy as f64 - c);
        let r = s as f64 / 2.0;
        match self {
            Shape::Square => true,
            Shape::Disk => x * x + y * y <= r * r,
            Shape::Triangle => x.abs() <= (dy as f64 + 1.0) / 2.0,
            Shape::Cross => x.abs() <= 1.0 || y.abs() <= 1.0,
            Shape::Ring => {
                let d2 = x * x + y * y;
                d2 <= r * r && d2 >= (r - 2.0) * (r - 2.0)
            }
            Shape::Diamond => x.abs() + y.abs() <= c,
            Shape::HBar => (s / 3..s - s / 3).contains(&dy),
            Shape::VBar => (s / 3..s - s / 3).contains(&dx),
        }
    }
}

pub fn class_color(class: usize) -> [u8; 3] {
    CLASS_COLORS[class]
}

pub fn class_shape(class: usize) -> Shape {
    SHAPES[class % SHAPES.len()]
}

const DIRECTIONS: [(&str, i64, i64); 4] = [("left", -1, 0), ("right", 1, 0), ("up", 0, -1), ("down", 0, 1)];
const VERBS: [&str; 4] = ["move", "drift", "slide", "glide"];
const TEMPLATES: [&str; 4] = [
    "{objs} {verb} {dir}",
    "in this clip {objs} {verb} {dir}",
    "we can see {objs} that {verb} {dir}",
    "{objs} {verb} {dir} over a gray background",
];
const DIR_PHRASES: [&str; 2] = ["to the {d}", "{d}"];
const FILLER: [&str; 16] = [
    "a", "and", "in", "this", "clip", "we", "can", "see", "that", "over", "gray", "background",
    "to", "the", "together", "slowly",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub num_frames: usize,
    pub captions_per_video: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_samples: 256,
            num_classes: 16,
            image_size: 32,
            num_frames: 8,
            captions_per_video: 2,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub samples: Vec<VideoSample>,
    pub vocab: Vocabulary,
    pub tags: TagVocabulary,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> Vec<VideoSample> {
        self.samples
            .iter()
            .filter(|s| Split::of(&s.video_id) == split)
            .cloned()
            .collect()
    }

    /// Writes `train/val/test.jsonl`, `vocab.txt` and `tags.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in [Split::Train, Split::Val, Split::Test] {
            write_manifest(&dir.join(format!("{}.jsonl", split.name())), &self.split(split))?;
        }
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.tags.save(&dir.join("tags.txt"))
    }
}

/// Word vocabulary covering every caption the generator can emit.
pub fn synthetic_vocabulary(num_classes: usize) -> Vocabulary {
    let mut words: Vec<&str> = FILLER.to_vec();
    words.extend(VERBS);
    words.extend(DIRECTIONS.iter().map(|d| d.0));
    words.extend(&CLASS_NAMES[..num_classes]);
    Vocabulary::new(words)
}

struct Glyph {
    class: usize,
    size: usize,
    x0: i64,
    y0: i64,
}

fn background(size: usize, rng: &mut RngState) -> Vec<f64> {
    let coarse = 5;
    let knots: Vec<f64> = (0..coarse * coarse).map(|_| rng.gen_range(70.0..180.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fx = x as f64 / (size - 1).max(1) as f64 * (coarse - 1) as f64;
            let fy = y as f64 / (size - 1).max(1) as f64 * (coarse - 1) as f64;
            let (ix, iy) = ((fx as usize).min(coarse - 2), (fy as usize).min(coarse - 2));
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let k = |i: usize, j: usize| knots[j * coarse + i];
            let top = k(ix, iy) * (1.0 - tx) + k(ix + 1, iy) * tx;
            let bottom = k(ix, iy + 1) * (1.0 - tx) + k(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn place(
    classes: &[usize],
    size_range: (usize, usize),
    image: usize,
    travel: (i64, i64),
    rng: &mut RngState,
) -> Option<Vec<Glyph>> {
    let mut glyphs: Vec<Glyph> = Vec::new();
    let mut swept: Vec<(i64, i64, i64, i64)> = Vec::new();
    for &class in classes {
        let size = rng.gen_range(size_range.0..=size_range.1);
        let (w, h) = (size as i64 + travel.0.abs(), size as i64 + travel.1.abs());
        let mut placed = false;
        for _ in 0..200 {
            let sx = rng.gen_range(0..=image as i64 - w);
            let sy = rng.gen_range(0..=image as i64 - h);
            let rect = (sx, sy, sx + w, sy + h);
            let clear = swept
                .iter()
                .all(|r| rect.2 < r.0 || r.2 < rect.0 || rect.3 < r.1 || r.3 < rect.1);
            if clear {
                swept.push(rect);
                let x0 = if travel.0 < 0 { sx - travel.0 } else { sx };
                let y0 = if travel.1 < 0 { sy - travel.1 } else { sy };
                glyphs.push(Glyph { class, size, x0, y0 });
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(glyphs)
}

fn object_phrase(nouns: &[&str]) -> String {
    let parts: Vec<String> = nouns.iter().map(|n| format!("a {n}")).collect();
    match parts.len() {
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(" , "), parts[n - 1]),
    }
}

fn caption(nouns: &[&str], direction: &str, rng: &mut RngState) -> String {
    let mut order = nouns.to_vec();
    order.shuffle(rng);
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    let dir = DIR_PHRASES[rng.gen_range(0..DIR_PHRASES.len())].replace("{d}", direction);
    let mut text = template
        .replace("{objs}", &object_phrase(&order))
        .replace("{verb}", verb)
        .replace("{dir}", &dir);
    if rng.gen_bool(0.3) {
        text.push_str(if rng.gen_bool(0.5) { " together" } else { " slowly" });
    }
    text
}

/// One synthetic video; `index` keys its random stream.
pub fn generate_sample(config: &SynthConfig, index: usize) -> Result<VideoSample> {
    let mut rng = RngState::new(config.seed).derive(&[index as u64]);
    let image = config.image_size;
    let frames_n = config.num_frames;
    let size_min = (image / 4).saturating_sub(1).max(4);
    let size_range = (size_min, size_min + 2);
    let (dir_name, vx, vy) = DIRECTIONS[rng.gen_range(0..DIRECTIONS.len())];
    let steps = frames_n as i64 - 1;
    let travel = (vx * steps, vy * steps);

    let mut count = rng.gen_range(1..=4usize).min(config.num_classes);
    let glyphs = loop {
        let mut classes: Vec<usize> = (0..config.num_classes).collect();
        classes.shuffle(&mut rng);
        classes.truncate(count);
        if let Some(g) = place(&classes, size_range, image, travel, &mut rng) {
            break g;
        }
        if count == 1 {
            return Err(input_err!("image of {} pixels cannot hold a moving glyph", image));
        }
        count -= 1;
    };

    let base = background(image, &mut rng);
    let mut frames = Vec::with_capacity(frames_n);
    let mut objects = Vec::new();
    for t in 0..frames_n {
        let mut pixels = Vec::with_capacity(image * image * 3);
        for &b in &base {
            let v = (b + rng.gen_range(-8.0..8.0)).round().clamp(0.0, 255.0) as u8;
            pixels.extend([v, v, v]);
        }
        let mut frame = Frame::new(image, image, 3, pixels)?;
        for g in &glyphs {
            let gx = g.x0 + vx * t as i64;
            let gy = g.y0 + vy * t as i64;
            let shape = class_shape(g.class);
            let color = class_color(g.class);
            let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
            for dy in 0..g.size {
                for dx in 0..g.size {
                    if shape.covers(dx, dy, g.size) {
                        let (x, y) = ((gx + dx as i64) as usize, (gy + dy as i64) as usize);
                        frame.set(x, y, &color);
                        x1 = x1.min(x);
                        y1 = y1.min(y);
                        x2 = x2.max(x + 1);
                        y2 = y2.max(y + 1);
                    }
                }
            }
            let n = image as f64;
            objects.push(ObjectAnnotation::new(
                t,
                [x1 as f64 / n, y1 as f64 / n, x2 as f64 / n, y2 as f64 / n],
                g.class as u32,
                (rng.gen_range(50..=100) as f64) / 100.0,
            ));
        }
        frames.push(frame);
    }

    let nouns: Vec<&str> = glyphs.iter().map(|g| CLASS_NAMES[g.class]).collect();
    let captions = (0..config.captions_per_video.max(1))
        .map(|_| caption(&nouns, dir_name, &mut rng))
        .collect();
    Ok(VideoSample {
        video_id: format!("synth-{}-{:05}", config.seed, index),
        frames: frames.iter().map(FrameRef::inline).collect(),
        captions,
        objects,
    })
}

pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.num_classes == 0 || config.num_classes > CLASS_NAMES.len() {
        return Err(input_err!("num_classes must be in 1..={}", CLASS_NAMES.len()));
    }
    if config.num_frames == 0 {
        return Err(input_err!("num_frames must be at least 1"));
    }
    let samples = (0..config.num_samples)
        .map(|i| generate_sample(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        samples,
        vocab: synthetic_vocabulary(config.num_classes),
        tags: TagVocabulary::new(CLASS_NAMES[..config.num_classes].iter().map(|s| s.to_string()).collect())?,
    })
}
