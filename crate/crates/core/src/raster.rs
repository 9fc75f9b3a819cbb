//! 8-bit raster images and the binary Netpbm codecs (P5/P6).
//!
//! Resampling is bilinear with pixel-center alignment, so an exact 2x
//! reduction degenerates to a 2x2 box average.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be non-zero, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "sample buffer has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Zero-filled image.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![0; width.saturating_mul(height).saturating_mul(channels)],
        )
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luminance in `[0, 1]` (Rec. 601 weights for RGB).
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let i = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            f64::from(self.data[i]) / 255.0
        } else {
            (0.299 * f64::from(self.data[i])
                + 0.587 * f64::from(self.data[i + 1])
                + 0.114 * f64::from(self.data[i + 2]))
                / 255.0
        }
    }

    /// Bilinear resize to `new_width x new_height`.
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid("resize target must be non-zero"));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let ch = self.channels;
        let xs = axis_taps(self.width, new_width);
        let ys = axis_taps(self.height, new_height);
        let mut out = vec![0u8; new_width * new_height * ch];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let row0 = &self.data[y0 * self.width * ch..(y0 + 1) * self.width * ch];
            let row1 = &self.data[y1 * self.width * ch..(y1 + 1) * self.width * ch];
            let dst = &mut out[oy * new_width * ch..(oy + 1) * new_width * ch];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..ch {
                    let a = f64::from(row0[x0 * ch + c]);
                    let b = f64::from(row0[x1 * ch + c]);
                    let d = f64::from(row1[x0 * ch + c]);
                    let e = f64::from(row1[x1 * ch + c]);
                    let top = a + (b - a) * fx;
                    let bottom = d + (e - d) * fx;
                    let v = top + (bottom - top) * fy;
                    dst[ox * ch + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Self::new(new_width, new_height, ch, out)
    }

    /// Places the image at the top-left of a zero canvas of the given size.
    pub fn pad_to(&self, width: usize, height: usize) -> Result<Self> {
        if width < self.width || height < self.height {
            return Err(Error::invalid(format!(
                "cannot pad {}x{} down to {width}x{height}",
                self.width, self.height
            )));
        }
        let ch = self.channels;
        let mut out = vec![0u8; width * height * ch];
        for y in 0..self.height {
            let src = &self.data[y * self.width * ch..(y + 1) * self.width * ch];
            out[y * width * ch..y * width * ch + self.width * ch].copy_from_slice(src);
        }
        Self::new(width, height, ch, out)
    }

    /// Copies the `width x height` block at `(x, y)`; samples outside the
    /// image read as zero.
    pub fn crop_zero_fill(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        let ch = self.channels;
        let mut out = vec![0u8; width * height * ch];
        let x_end = (x + width).min(self.width);
        for row in 0..height {
            let sy = y + row;
            if sy >= self.height || x >= self.width {
                continue;
            }
            let n = (x_end - x) * ch;
            let src = &self.data[(sy * self.width + x) * ch..(sy * self.width + x) * ch + n];
            out[row * width * ch..row * width * ch + n].copy_from_slice(src);
        }
        Self::new(width, height, ch, out)
    }

    /// Writes `block` with its top-left corner at `(x, y)`, clipping to bounds.
    pub fn blit(&mut self, block: &RasterImage, x: usize, y: usize) -> Result<()> {
        if block.channels != self.channels {
            return Err(Error::invalid("channel mismatch in blit"));
        }
        let ch = self.channels;
        for row in 0..block.height {
            let dy = y + row;
            if dy >= self.height || x >= self.width {
                continue;
            }
            let n = block.width.min(self.width - x) * ch;
            let dst = (dy * self.width + x) * ch;
            let src = row * block.width * ch;
            self.data[dst..dst + n].copy_from_slice(&block.data[src..src + n]);
        }
        Ok(())
    }

    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Encodes as binary PGM (gray) or PPM (RGB) depending on channel count.
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = PnmCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::format("netpbm", format!("unsupported magic {other:?}"))),
        };
        let width = cursor.number()?;
        let height = cursor.number()?;
        let maxval = cursor.number()?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::format(
                "netpbm",
                format!("only 8-bit maxval is supported, got {maxval}"),
            ));
        }
        // exactly one whitespace byte separates the header from the raster
        cursor.pos += 1;
        let len = width * height * channels;
        let body = bytes
            .get(cursor.pos..cursor.pos + len)
            .ok_or_else(|| Error::format("netpbm", "truncated raster data"))?;
        let data = if maxval == 255 {
            body.to_vec()
        } else {
            body.iter()
                .map(|&v| ((u32::from(v) * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8)
                .collect()
        };
        Self::new(width, height, channels, data)
    }

    /// Loads a P5/P6 file, or PNG when the `png` feature is enabled.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if bytes.starts_with(b"\x89PNG") {
            return decode_png(&bytes);
        }
        Self::decode_pnm(&bytes)
    }

    pub fn save_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode_pnm())?;
        Ok(())
    }
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?;
    match img.color().channel_count() {
        1 | 2 => {
            let g = img.to_luma8();
            RasterImage::new(g.width() as usize, g.height() as usize, 1, g.into_raw())
        }
        _ => {
            let rgb = img.to_rgb8();
            RasterImage::new(rgb.width() as usize, rgb.height() as usize, 3, rgb.into_raw())
        }
    }
}

#[cfg(not(feature = "png"))]
fn decode_png(_bytes: &[u8]) -> Result<RasterImage> {
    Err(Error::format(
        "png",
        "PNG input requires building with the `png` feature",
    ))
}

/// Per output coordinate: the two source taps and the interpolation weight.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("netpbm", "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::format("netpbm", format!("expected a number, got {tok:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_roundtrip_gray_and_rgb() {
        let g = RasterImage::from_fn(5, 3, 1, |x, y, _| (x * 10 + y) as u8).unwrap();
        assert_eq!(RasterImage::decode_pnm(&g.encode_pnm()).unwrap(), g);
        let c = RasterImage::from_fn(4, 2, 3, |x, y, c| (x + 7 * y + 50 * c) as u8).unwrap();
        assert_eq!(RasterImage::decode_pnm(&c.encode_pnm()).unwrap(), c);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n# max\n255\n\x01\x02";
        let img = RasterImage::decode_pnm(bytes).unwrap();
        assert_eq!(img.data(), &[1, 2]);
    }

    #[test]
    fn rejects_truncated_and_wide_samples() {
        assert!(RasterImage::decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(RasterImage::decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(RasterImage::decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn rejects_zero_sized() {
        assert!(RasterImage::zeros(0, 4, 1).is_err());
    }

    #[test]
    fn halving_is_box_average() {
        let img = RasterImage::from_fn(4, 2, 1, |x, _, _| [10, 20, 30, 50][x]).unwrap();
        let half = img.resize_bilinear(2, 1).unwrap();
        assert_eq!(half.data(), &[15, 40]);
    }

    #[test]
    fn crop_outside_is_zero() {
        let img = RasterImage::from_fn(3, 3, 1, |_, _, _| 9).unwrap();
        let block = img.crop_zero_fill(2, 2, 2, 2).unwrap();
        assert_eq!(block.data(), &[9, 0, 0, 0]);
    }
}
