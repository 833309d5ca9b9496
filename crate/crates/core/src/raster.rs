//! Pixel grids at three levels (color, gray, binary), plus PNG/BMP I/O.
//!
//! All images are row-major. Binary masks use the dark-on-light convention:
//! `true` marks a signal (trace) pixel, and mask files store signal as black.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid dimensions {width}x{height} for {len} pixels")]
    Dimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("image encode failed: {0}")]
    Encode(String),
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(RasterError::Dimensions { width, height, len });
    }
    Ok(())
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, RasterError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Result<Self, RasterError> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        self.pixels[y * self.width + x] = color;
    }
}

/// 8-bit single-channel intensity image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// 256-bin intensity histogram.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }
}

/// Two-level image; `true` is signal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, RasterError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// All-background mask.
    pub fn empty(width: usize, height: usize) -> Result<Self, RasterError> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Pixelwise union. Panics on dimension mismatch.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    /// True when every signal pixel of `self` is also signal in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.pixels.iter().zip(&other.pixels).all(|(&a, &b)| !a || b)
    }
}

/// ITU-R 601 luma, rounded half-up in integer arithmetic.
#[inline]
pub fn luma([r, g, b]: [u8; 3]) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000).min(255) as u8
}

pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| luma(p)).collect(),
    }
}

/// Marks pixels strictly darker than `threshold` as signal.
pub fn binarize_fixed(img: &GrayImage, threshold: f64) -> BinaryMask {
    BinaryMask {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| (p as f64) < threshold).collect(),
    }
}

/// Result of decoding an image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decoded {
    Color(RasterImage),
    Mask(BinaryMask),
}

impl Decoded {
    /// The decoded pixels as a color image (masks become black on white).
    pub fn into_color(self) -> RasterImage {
        match self {
            Decoded::Color(img) => img,
            Decoded::Mask(mask) => mask_to_color(&mask),
        }
    }

    /// The decoded pixels as a mask; color images are rejected.
    pub fn into_mask(self) -> Result<BinaryMask, RasterError> {
        match self {
            Decoded::Mask(mask) => Ok(mask),
            Decoded::Color(_) => Err(RasterError::Unsupported(
                "image is not a pure black/white mask".into(),
            )),
        }
    }
}

fn mask_to_color(mask: &BinaryMask) -> RasterImage {
    RasterImage {
        width: mask.width,
        height: mask.height,
        pixels: mask
            .pixels
            .iter()
            .map(|&s| if s { [0, 0, 0] } else { [255, 255, 255] })
            .collect(),
    }
}

/// Decodes a PNG or BMP file from memory.
///
/// The result is a [`Decoded::Mask`] iff every pixel is pure black or pure
/// white; black decodes as signal.
pub fn decode_image(bytes: &[u8]) -> Result<Decoded, RasterError> {
    let format = image::guess_format(bytes)
        .map_err(|e| RasterError::Decode(format!("unrecognized header: {e}")))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Bmp) {
        return Err(RasterError::Unsupported(format!("{format:?}")));
    }
    let dynamic = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(u) => RasterError::Unsupported(u.to_string()),
        other => RasterError::Decode(other.to_string()),
    })?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let pixels: Vec<[u8; 3]> = match dynamic {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| [v, v, v]).collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        // BMP decoding of palette files goes through RGBA; accept it only when opaque.
        DynamicImage::ImageRgba8(buf) if format == ImageFormat::Bmp => {
            let raw = buf.into_raw();
            if raw.chunks_exact(4).any(|c| c[3] != 255) {
                return Err(RasterError::Unsupported("BMP with alpha channel".into()));
            }
            raw.chunks_exact(4).map(|c| [c[0], c[1], c[2]]).collect()
        }
        other => {
            return Err(RasterError::Unsupported(format!(
                "{format:?} with color type {:?}",
                other.color()
            )))
        }
    };
    let all_bw = pixels
        .iter()
        .all(|&p| p == [0, 0, 0] || p == [255, 255, 255]);
    if all_bw {
        let mask = BinaryMask::new(width, height, pixels.iter().map(|p| p[0] == 0).collect())?;
        Ok(Decoded::Mask(mask))
    } else {
        Ok(Decoded::Color(RasterImage::new(width, height, pixels)?))
    }
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out)
}

/// Encodes a color image as 8-bit RGB PNG.
pub fn encode_png_rgb(img: &RasterImage) -> Result<Vec<u8>, RasterError> {
    let raw: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| RasterError::Encode("buffer size mismatch".into()))?;
    encode_png(DynamicImage::ImageRgb8(buf))
}

/// Encodes a mask as 8-bit grayscale PNG, signal black and background white.
pub fn encode_png_mask(mask: &BinaryMask) -> Result<Vec<u8>, RasterError> {
    let raw: Vec<u8> = mask.pixels.iter().map(|&s| if s { 0 } else { 255 }).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .ok_or_else(|| RasterError::Encode("buffer size mismatch".into()))?;
    encode_png(DynamicImage::ImageLuma8(buf))
}

/// Encodes a grayscale image as 8-bit grayscale PNG.
pub fn encode_png_gray(img: &GrayImage) -> Result<Vec<u8>, RasterError> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| RasterError::Encode("buffer size mismatch".into()))?;
    encode_png(DynamicImage::ImageLuma8(buf))
}
