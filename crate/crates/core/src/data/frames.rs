//! Raw RGB frames and binary PPM (P6) I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

/// An 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(input_err!(
                "{}x{}x{} frame needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            channels: 3,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub fn set(&mut self, x: usize, y: usize, value: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.pixels[i..i + self.channels].copy_from_slice(value);
    }

    /// Flatten patch `(row, col)` of a `patch × patch` grid into
    /// `(dy, dx, channel)` order, mapping bytes to [-1, 1].
    pub fn patch_values(&self, patch: usize, row: usize, col: usize, out: &mut Vec<f32>) {
        for dy in 0..patch {
            let y = row * patch + dy;
            let start = (y * self.width + col * patch) * self.channels;
            out.extend(
                self.pixels[start..start + patch * self.channels]
                    .iter()
                    .map(|&b| b as f32 / 127.5 - 1.0),
            );
        }
    }

    pub fn to_ppm(&self) -> Result<Vec<u8>> {
        if self.channels != 3 {
            return Err(input_err!("PPM needs 3 channels, frame has {}", self.channels));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        Ok(out)
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(input_err!("truncated PPM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(input_err!("not a binary PPM (magic {:?})", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| input_err!("bad PPM header field {:?}", s));
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max != 255 {
            return Err(input_err!("only 8-bit PPM supported, maxval {}", max));
        }
        let body = &bytes[(pos + 1).min(bytes.len())..];
        if body.len() != w * h * 3 {
            return Err(input_err!("PPM body has {} bytes, expected {}", body.len(), w * h * 3));
        }
        Frame::new(w, h, 3, body.to_vec())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }
}

/// Place frames left to right on one canvas.
pub fn tile_horizontally(frames: &[Frame]) -> Result<Frame> {
    let first = frames.first().ok_or_else(|| input_err!("no frames to tile"))?;
    let (h, c) = (first.height, first.channels);
    if frames.iter().any(|f| f.height != h || f.channels != c) {
        return Err(input_err!("tiled frames must share height and channels"));
    }
    let width: usize = frames.iter().map(|f| f.width).sum();
    let mut out = Frame::new(width, h, c, vec![0; width * h * c])?;
    let mut x0 = 0;
    for f in frames {
        for y in 0..h {
            for x in 0..f.width {
                out.set(x0 + x, y, f.get(x, y));
            }
        }
        x0 += f.width;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut f = Frame::filled(3, 2, [10, 20, 30]);
        f.set(2, 1, &[255, 0, 7]);
        let back = Frame::from_ppm(&f.to_ppm().unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(Frame::from_ppm(&bytes).unwrap().pixels, vec![1, 2, 3]);
        assert!(Frame::from_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn patch_values_order() {
        let mut f = Frame::filled(4, 4, [0, 0, 0]);
        f.set(2, 0, &[255, 255, 255]);
        let mut out = Vec::new();
        f.patch_values(2, 0, 1, &mut out);
        assert_eq!(out.len(), 12);
        assert_eq!(&out[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(out[3], -1.0);
    }
}
