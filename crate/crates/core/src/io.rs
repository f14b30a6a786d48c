//! PFM (linear, canonical) and binary PPM (display-encoded) image files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Display transform exponent used when writing PPM.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Minimal header tokenizer that tracks byte offsets for diagnostics.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Header<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            format: self.format,
            offset,
            message: message.into(),
        }
    }

    fn skip_space(&mut self, allow_comments: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if allow_comments && b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, allow_comments: bool, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space(allow_comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, format!("expected {what}, found end of data")));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.err(start, format!("non-ascii bytes where {what} expected")))?;
        Ok((start, tok))
    }

    fn dimension(&mut self, allow_comments: bool, what: &str) -> Result<usize> {
        let (at, tok) = self.token(allow_comments, what)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(self.err(at, format!("invalid {what} {tok:?}"))),
        }
    }

    /// Consumes the single whitespace byte that terminates the header.
    fn end_of_header(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(self.pos, "missing whitespace after header")),
        }
    }
}

/// Decodes a three-channel PFM. Both byte orders are accepted.
pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let mut hdr = Header {
        bytes,
        pos: 0,
        format: "PFM",
    };
    let (at, magic) = hdr.token(false, "magic")?;
    if magic != "PF" {
        return Err(hdr.err(at, format!("expected magic \"PF\", found {magic:?}")));
    }
    let width = hdr.dimension(false, "width")?;
    let height = hdr.dimension(false, "height")?;
    let (at, scale_tok) = hdr.token(false, "scale")?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| hdr.err(at, format!("invalid scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(hdr.err(at, "scale must be finite and non-zero"));
    }
    hdr.end_of_header()?;
    let little = scale < 0.0;
    let body = &bytes[hdr.pos..];
    let need = width * height * 3 * 4;
    if body.len() != need {
        return Err(hdr.err(
            hdr.pos,
            format!("expected {need} bytes of samples, found {}", body.len()),
        ));
    }
    let mut data = vec![0.0f32; width * height * 3];
    for (row_in_file, row) in body.chunks_exact(width * 12).enumerate() {
        // Scanlines are stored bottom to top.
        let y = height - 1 - row_in_file;
        for (i, sample) in row.chunks_exact(4).enumerate() {
            let raw = [sample[0], sample[1], sample[2], sample[3]];
            data[y * width * 3 + i] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Image::new(height, width, data)
}

/// Encodes an image as little-endian PFM.
pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for y in (0..h).rev() {
        for v in &img.data()[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

/// Encodes a linear image as 8-bit P6 with the display transform
/// `clamp(v, 0, 1)^(1/2.2)`.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| {
        let d = (v as f64).clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA);
        (d * 255.0).round() as u8
    }));
    out
}

/// Decodes a P6 file into display-referred values `v / maxval`.
///
/// No inverse display transform is applied; callers that need linear
/// light should linearize explicitly.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut hdr = Header {
        bytes,
        pos: 0,
        format: "PPM",
    };
    let (at, magic) = hdr.token(true, "magic")?;
    if magic != "P6" {
        return Err(hdr.err(at, format!("expected magic \"P6\", found {magic:?}")));
    }
    let width = hdr.dimension(true, "width")?;
    let height = hdr.dimension(true, "height")?;
    let (at, max_tok) = hdr.token(true, "maxval")?;
    let maxval: u32 = match max_tok.parse() {
        Ok(v) if (1..=65535).contains(&v) => v,
        _ => return Err(hdr.err(at, format!("invalid maxval {max_tok:?}"))),
    };
    hdr.end_of_header()?;
    let bps = if maxval > 255 { 2 } else { 1 };
    let body = &bytes[hdr.pos..];
    let need = width * height * 3 * bps;
    if body.len() < need {
        return Err(hdr.err(
            hdr.pos,
            format!("expected {need} bytes of samples, found {}", body.len()),
        ));
    }
    let scale = 1.0 / maxval as f32;
    let data = if bps == 1 {
        body[..need].iter().map(|&b| b as f32 * scale).collect()
    } else {
        body[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 * scale)
            .collect()
    };
    Image::new(height, width, data)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}
