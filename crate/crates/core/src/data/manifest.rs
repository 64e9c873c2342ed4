//! JSON-lines manifest: one video per line.

use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::frames::Frame;
use crate::error::{input_err, Error, Result};
use crate::objects::ObjectAnnotation;

/// Raw 8-bit pixels stored in the manifest itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineFrame {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub base64: String,
}

/// A frame given by file path (PPM, relative to the manifest) or inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameRef {
    Path(String),
    Inline(InlineFrame),
}

impl FrameRef {
    pub fn inline(frame: &Frame) -> Self {
        FrameRef::Inline(InlineFrame {
            h: frame.height,
            w: frame.width,
            c: frame.channels,
            base64: STANDARD.encode(&frame.pixels),
        })
    }

    pub fn load(&self, base_dir: &Path) -> Result<Frame> {
        match self {
            FrameRef::Path(p) => Frame::read_ppm(&base_dir.join(p)),
            FrameRef::Inline(f) => {
                let pixels = STANDARD
                    .decode(&f.base64)
                    .map_err(|e| input_err!("inline frame is not valid base64: {e}"))?;
                Frame::new(f.w, f.h, f.c, pixels)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSample {
    pub video_id: String,
    pub frames: Vec<FrameRef>,
    pub captions: Vec<String>,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
}

impl VideoSample {
    fn check(&self) -> std::result::Result<(), String> {
        if self.video_id.is_empty() {
            return Err("video_id is empty".into());
        }
        if self.frames.is_empty() {
            return Err("frames: at least one frame required".into());
        }
        if self.captions.is_empty() {
            return Err("captions: at least one caption required".into());
        }
        for a in &self.objects {
            a.check()?;
            if a.frame_index >= self.frames.len() {
                return Err(format!(
                    "objects: frame_index {} beyond {} frames",
                    a.frame_index,
                    self.frames.len()
                ));
            }
        }
        Ok(())
    }

    pub fn load_frames(&self, base_dir: &Path) -> Result<Vec<Frame>> {
        self.frames.iter().map(|f| f.load(base_dir)).collect()
    }

    /// Copy without object annotations.
    pub fn without_objects(&self) -> Self {
        Self {
            objects: Vec::new(),
            ..self.clone()
        }
    }
}

/// Parse manifest text; errors carry the 1-based line number.
pub fn parse_manifest(text: &str) -> Result<Vec<VideoSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: VideoSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.check().map_err(|message| Error::Parse { line: i + 1, message })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<VideoSample>> {
    parse_manifest(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn manifest_text(samples: &[VideoSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, samples: &[VideoSample]) -> Result<()> {
    let text = manifest_text(samples)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Rejects tags outside a vocabulary of `num_tags`.
pub fn check_tags(samples: &[VideoSample], num_tags: usize) -> Result<()> {
    for s in samples {
        if let Some(a) = s.objects.iter().find(|a| a.tag_id as usize >= num_tags) {
            return Err(input_err!(
                "video `{}` has tag {} outside a vocabulary of {}",
                s.video_id,
                a.tag_id,
                num_tags
            ));
        }
    }
    Ok(())
}

/// Directory that relative frame paths resolve against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}
