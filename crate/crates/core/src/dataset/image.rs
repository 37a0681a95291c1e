//! 8-bit grayscale raster plus codecs (PNG/JPEG in, PNG/PGM out).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::DatasetError;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::Argument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(DatasetError::Argument(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Lossless PNG encoding (8-bit gray).
    pub fn encode_png(&self) -> Vec<u8> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("dimensions checked at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, DatasetError> {
        let bad = |why: &str| DatasetError::Decode {
            path: None,
            reason: format!("PGM: {why}"),
        };
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let end = pos + w * h;
        if end > bytes.len() {
            return Err(bad("truncated raster"));
        }
        Image::new(w, h, bytes[pos..end].to_vec())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_pgm()).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// ITU-R BT.601 luma in integer arithmetic: round(0.299 R + 0.587 G + 0.114 B).
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let sum = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((sum + 500) / 1000).min(255) as u8
}

/// Decode a PNG or JPEG stream to 8-bit grayscale.
///
/// Single-channel 8-bit sources pass through unchanged; colour sources are
/// converted with [`luma`], ignoring alpha. 16-bit gray is reduced to its
/// high byte rounded.
pub fn decode_to_grayscale(encoded: &[u8]) -> Result<Image, DatasetError> {
    let decoded = image::load_from_memory(encoded).map_err(|e| DatasetError::Decode {
        path: None,
        reason: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| ((v as u32 + 128) / 257).min(255) as u8)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    Image::new(w, h, pixels)
}

/// Box/area downscale: each output pixel is the rounded mean of its source
/// rectangle. Rectangles are `[floor(i*S/T), ceil((i+1)*S/T))`, so integer
/// factors give disjoint equal blocks.
pub fn resize_area(img: &Image, out_w: usize, out_h: usize) -> Result<Image, DatasetError> {
    if out_w == 0 || out_h == 0 {
        return Err(DatasetError::Argument(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let span = |i: usize, src: usize, dst: usize| {
        let lo = i * src / dst;
        let hi = ((i + 1) * src).div_ceil(dst).max(lo + 1).min(src);
        (lo, hi)
    };
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1) = span(oy, img.height, out_h);
        for ox in 0..out_w {
            let (x0, x1) = span(ox, img.width, out_w);
            let mut sum = 0u64;
            for y in y0..y1 {
                let row = &img.pixels[y * img.width..(y + 1) * img.width];
                sum += row[x0..x1].iter().map(|&p| p as u64).sum::<u64>();
            }
            let n = ((y1 - y0) * (x1 - x0)) as u64;
            pixels.push(((sum + n / 2) / n) as u8);
        }
    }
    Image::new(out_w, out_h, pixels)
}
