//! Image loading and saving. Pixels live in memory as f32 in [0, 1],
//! row-major HWC. PPM (binary P6) is parsed and written here; PNG goes
//! through the `image` crate. The format is picked by file extension.

use std::path::Path;

use crate::error::{Error, Result};

/// Float image, `data[(i * w + j) * c + k]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::Shape(format!("image shape {h}x{w}x{c} unsupported")));
        }
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "image data length {} != {h}*{w}*{c}",
                data.len()
            )));
        }
        Ok(ImageBuf { h, w, c, data })
    }

    /// Convert to a channel count: 3→1 averages RGB, 1→3 replicates.
    pub fn to_channels(&self, c: usize) -> Result<ImageBuf> {
        if c == self.c {
            return Ok(self.clone());
        }
        let data = match (self.c, c) {
            (3, 1) => self
                .data
                .chunks_exact(3)
                .map(|p| (p[0] + p[1] + p[2]) / 3.0)
                .collect(),
            (1, 3) => self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            _ => return Err(Error::Shape(format!("cannot convert {} channels to {c}", self.c))),
        };
        ImageBuf::new(self.h, self.w, c, data)
    }
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Mean squared error between two images of identical shape.
pub fn mse(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if (a.h, a.w, a.c) != (b.h, b.w, b.c) {
        return Err(Error::Shape(format!(
            "mse: {}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.c, b.h, b.w, b.c
        )));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// PSNR in dB for signals in [0, 1]. A perfect reconstruction would divide
/// by zero, so it reports a 999.0 sentinel instead.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        999.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn ppm_bytes(img: &ImageBuf) -> Result<Vec<u8>> {
    let rgb = img.to_channels(3)?;
    let mut out = format!("P6\n{} {}\n255\n", rgb.w, rgb.h).into_bytes();
    out.extend(rgb.data.iter().map(|&v| quantize_u8(v)));
    Ok(out)
}

/// Whitespace/comment-tolerant ASCII token scanner for the PPM header.
struct PpmHeader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PpmHeader<'a> {
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("ppm: truncated header".into()));
        }
        Ok(&self.buf[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("ppm: bad number {:?}", String::from_utf8_lossy(tok))))
    }
}

fn parse_ppm(bytes: &[u8]) -> Result<ImageBuf> {
    let mut hdr = PpmHeader { buf: bytes, pos: 0 };
    if hdr.token()? != b"P6" {
        return Err(Error::Format("ppm: bad magic, expected P6".into()));
    }
    let w = hdr.number()?;
    let h = hdr.number()?;
    let maxval = hdr.number()?;
    if maxval != 255 {
        return Err(Error::Format(format!("ppm: maxval {maxval} unsupported, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = hdr.pos + 1;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Format("ppm: dimension overflow".into()))?;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| Error::Format("ppm: truncated raster".into()))?;
    ImageBuf::new(h, w, 3, raster.iter().map(|&b| dequantize_u8(b)).collect())
}

fn ext_of(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Load a PPM or PNG image as floats in [0, 1] (always 3 channels).
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    match ext_of(path).as_str() {
        "ppm" => parse_ppm(&std::fs::read(path)?),
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            ImageBuf::new(
                h as usize,
                w as usize,
                3,
                img.as_raw().iter().map(|&b| dequantize_u8(b)).collect(),
            )
        }
        other => Err(Error::Data(format!(
            "unsupported image extension {other:?} (expected ppm or png): {}",
            path.display()
        ))),
    }
}

/// Save as PPM or PNG depending on extension; single-channel images are
/// expanded to gray RGB.
pub fn write_image(path: &Path, img: &ImageBuf) -> Result<()> {
    match ext_of(path).as_str() {
        "ppm" => Ok(std::fs::write(path, ppm_bytes(img)?)?),
        "png" => {
            let rgb = img.to_channels(3)?;
            let raw: Vec<u8> = rgb.data.iter().map(|&v| quantize_u8(v)).collect();
            let buf = image::RgbImage::from_raw(rgb.w as u32, rgb.h as u32, raw)
                .ok_or_else(|| Error::Shape("png buffer size mismatch".into()))?;
            buf.save(path)
                .map_err(|e| Error::Format(format!("png save {}: {e}", path.display())))
        }
        other => Err(Error::Data(format!(
            "unsupported image extension {other:?} (expected ppm or png): {}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> ImageBuf {
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h {
            for j in 0..w {
                data.push(i as f32 / (h - 1).max(1) as f32);
                data.push(j as f32 / (w - 1).max(1) as f32);
                data.push(0.25);
            }
        }
        ImageBuf::new(h, w, 3, data).unwrap()
    }

    // Quantizing to u8 and back is the identity on already-quantized data.
    fn quantized(img: &ImageBuf) -> ImageBuf {
        ImageBuf {
            data: img.data.iter().map(|&v| dequantize_u8(quantize_u8(v))).collect(),
            ..img.clone()
        }
    }

    #[test]
    fn quantization_is_round_to_nearest() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-0.5), 0);
        assert_eq!(quantize_u8(1.5), 255);
        assert_eq!(quantize_u8(0.5), 128); // 127.5 rounds away from zero
        assert_eq!(quantize_u8(128.4 / 255.0), 128);
    }

    #[test]
    fn ppm_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = gradient(5, 7);
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back, quantized(&img));
        // Writing what was read reproduces the file byte for byte.
        let bytes = std::fs::read(&path).unwrap();
        write_image(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn png_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = gradient(6, 4);
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), quantized(&img));
    }

    #[test]
    fn ppm_header_allows_comments_and_whitespace() {
        let mut bytes = b"P6 # a comment\n# another\n 2\t1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 1, 2, 3]);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!((img.h, img.w, img.c), (1, 2, 3));
        assert!((img.data[1] - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn ppm_rejects_bad_magic_maxval_and_truncation() {
        assert!(parse_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(parse_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(parse_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(parse_ppm(b"P6\n1 ").is_err());
    }

    #[test]
    fn channel_conversion_round_trips_gray() {
        let gray = ImageBuf::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let rgb = gray.to_channels(3).unwrap();
        assert_eq!(rgb.to_channels(1).unwrap(), gray);
        assert!(gray.to_channels(2).is_err());
    }

    #[test]
    fn mse_and_psnr_basics() {
        let a = gradient(4, 4);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(0.0), 999.0);
        let mut b = a.clone();
        for v in &mut b.data {
            *v += 0.1; // f32 rounding keeps each delta within ~1e-8 of 0.1
        }
        let m = mse(&a, &b).unwrap();
        assert!((m - 0.01).abs() < 1e-7);
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
        assert!(mse(&a, &gradient(3, 4)).is_err());
    }

    #[test]
    fn unknown_extension_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bmp");
        assert!(matches!(read_image(&path), Err(Error::Data(_))));
        assert!(matches!(write_image(&path, &gradient(2, 2)), Err(Error::Data(_))));
    }
}
