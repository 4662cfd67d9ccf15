//! Linear-light RGBA image buffers and PNG I/O.
//!
//! All processing happens in linear floats. The sRGB transfer function is
//! applied only when crossing an 8-bit PNG boundary; 16-bit PNGs store
//! linear values quantized to the full u16 range, which round-trips
//! bit-exactly.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgba};
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    pub width: usize,
    pub height: usize,
    /// Row-major RGBA samples.
    pub data: Vec<[S; 4]>,
}

pub type Imagef = Image<f64>;

impl<S: Float> Image<S> {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![[S::zero(); 4]; width * height],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [S; 4] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [S; 4] {
        &mut self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_f64(&self) -> Imagef {
        Imagef {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| {
                    [
                        p[0].to_f64().unwrap(),
                        p[1].to_f64().unwrap(),
                        p[2].to_f64().unwrap(),
                        p[3].to_f64().unwrap(),
                    ]
                })
                .collect(),
        }
    }
}

impl Imagef {
    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Max absolute difference over all RGBA channels.
    pub fn max_abs_diff(&self, other: &Imagef) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn srgb_encode(linear: f64) -> f64 {
    let l = linear.clamp(0.0, 1.0);
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(encoded: f64) -> f64 {
    let e = encoded.clamp(0.0, 1.0);
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    /// 8-bit, sRGB-encoded color, linear alpha.
    Eight,
    /// 16-bit, linear color and alpha.
    Sixteen,
}

/// Write an image as RGBA PNG at the requested depth. Values are clamped to
/// [0, 1] at this boundary.
pub fn write_png(img: &Imagef, path: &Path, depth: PngDepth) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    match depth {
        PngDepth::Eight => {
            let mut buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
                ImageBuffer::new(img.width as u32, img.height as u32);
            for (i, p) in img.data.iter().enumerate() {
                let x = (i % img.width) as u32;
                let y = (i / img.width) as u32;
                buf.put_pixel(
                    x,
                    y,
                    Rgba([
                        (srgb_encode(p[0]) * 255.0).round() as u8,
                        (srgb_encode(p[1]) * 255.0).round() as u8,
                        (srgb_encode(p[2]) * 255.0).round() as u8,
                        (p[3].clamp(0.0, 1.0) * 255.0).round() as u8,
                    ]),
                );
            }
            buf.save(path)?;
        }
        PngDepth::Sixteen => {
            let mut buf: ImageBuffer<Rgba<u16>, Vec<u16>> =
                ImageBuffer::new(img.width as u32, img.height as u32);
            for (i, p) in img.data.iter().enumerate() {
                let x = (i % img.width) as u32;
                let y = (i / img.width) as u32;
                let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                buf.put_pixel(x, y, Rgba([q(p[0]), q(p[1]), q(p[2]), q(p[3])]));
            }
            buf.save(path)?;
        }
    }
    Ok(())
}

/// Read a PNG into linear floats. 8-bit inputs are sRGB-decoded; 16-bit
/// inputs are divided by 65535 directly. Images without alpha get alpha 1.
pub fn read_png(path: &Path) -> Result<Imagef> {
    let dynimg = image::open(path)?;
    Ok(match dynimg {
        DynamicImage::ImageRgba16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Imagef {
                width: w,
                height: h,
                data: buf
                    .pixels()
                    .map(|p| {
                        [
                            p.0[0] as f64 / 65535.0,
                            p.0[1] as f64 / 65535.0,
                            p.0[2] as f64 / 65535.0,
                            p.0[3] as f64 / 65535.0,
                        ]
                    })
                    .collect(),
            }
        }
        DynamicImage::ImageRgb16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Imagef {
                width: w,
                height: h,
                data: buf
                    .pixels()
                    .map(|p| {
                        [
                            p.0[0] as f64 / 65535.0,
                            p.0[1] as f64 / 65535.0,
                            p.0[2] as f64 / 65535.0,
                            1.0,
                        ]
                    })
                    .collect(),
            }
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Imagef {
                width: w,
                height: h,
                data: buf
                    .pixels()
                    .map(|p| {
                        let v = p.0[0] as f64 / 65535.0;
                        [v, v, v, 1.0]
                    })
                    .collect(),
            }
        }
        other => {
            let buf = other.to_rgba8();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Imagef {
                width: w,
                height: h,
                data: buf
                    .pixels()
                    .map(|p| {
                        [
                            srgb_decode(p.0[0] as f64 / 255.0),
                            srgb_decode(p.0[1] as f64 / 255.0),
                            srgb_decode(p.0[2] as f64 / 255.0),
                            p.0[3] as f64 / 255.0,
                        ]
                    })
                    .collect(),
            }
        }
    })
}

/// Binary mask loaded from a PNG. Errors unless every pixel is exactly 0 or
/// full scale in its first channel.
pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let dynimg = image::open(path)?;
    let (values, full): (Vec<u16>, u16) = match &dynimg {
        DynamicImage::ImageLuma16(buf) => (buf.pixels().map(|p| p.0[0]).collect(), u16::MAX),
        DynamicImage::ImageLuma8(buf) => {
            (buf.pixels().map(|p| p.0[0] as u16).collect(), u8::MAX as u16)
        }
        other => (
            other.to_luma8().pixels().map(|p| p.0[0] as u16).collect(),
            u8::MAX as u16,
        ),
    };
    values
        .into_iter()
        .map(|v| {
            if v == 0 {
                Ok(false)
            } else if v == full {
                Ok(true)
            } else {
                Err(Error::dataset(
                    "mask-not-binary",
                    format!("mask {} has value {v}", path.display()),
                ))
            }
        })
        .collect()
}

/// Write a binary mask as an 8-bit grayscale PNG.
pub fn write_mask(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let buf: ImageBuffer<image::Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(
        width as u32,
        height as u32,
        |x, y| image::Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }]),
    );
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_transfer_roundtrip() {
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            assert!((srgb_decode(srgb_encode(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn png16_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Imagef::new(7, 5);
        // Values on the u16 grid survive write -> read unchanged.
        for (i, p) in img.data.iter_mut().enumerate() {
            let q = ((i * 2654435761) % 65536) as f64 / 65535.0;
            *p = [q, 1.0 - q, q * 0.5, 1.0];
        }
        // Snap to the grid first.
        for p in img.data.iter_mut() {
            for c in p.iter_mut() {
                *c = (*c * 65535.0).round() / 65535.0;
            }
        }
        write_png(&img, &path, PngDepth::Sixteen).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(img, back);
        // And a second write produces identical bytes.
        let path2 = dir.path().join("img2.png");
        write_png(&back, &path2, PngDepth::Sixteen).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn mask_roundtrip_and_binary_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask = vec![true, false, false, true, true, false];
        write_mask(&mask, 3, 2, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);

        // A gray pixel is rejected.
        let gray: ImageBuffer<image::Luma<u8>, Vec<u8>> =
            ImageBuffer::from_pixel(2, 2, image::Luma([127]));
        let bad = dir.path().join("bad.png");
        gray.save(&bad).unwrap();
        let err = read_mask(&bad).unwrap_err();
        assert!(matches!(err, Error::Dataset { code: "mask-not-binary", .. }));
    }
}
