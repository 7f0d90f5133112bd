//! PNG and binary PGM (P5) reading and writing.
//!
//! Intensities are normalized to [0,1] on read (divide by 255 or 65535) and
//! quantized with round-half-up on write, after clipping to [0,1].

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

/// Output bit depth for grayscale files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn codec(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Codec(other.to_string()),
    }
}

/// Read an 8/16-bit grayscale or 8-bit RGB PNG, or a binary PGM.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let dynamic = image::ImageReader::open(path.as_ref())?.with_guessed_format()?.decode().map_err(codec)?;
    from_dynamic(dynamic)
}

fn from_dynamic(dynamic: DynamicImage) -> Result<Image> {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        DynamicImage::ImageLuma8(buf) => {
            Image::gray(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            Image::gray(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageRgb8(buf) => {
            Image::new(h, w, 3, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLumaA8(_) => from_dynamic(DynamicImage::ImageLuma8(dynamic_to_l8(dynamic))),
        DynamicImage::ImageRgba8(_) => from_dynamic(DynamicImage::ImageRgb8(dynamic.to_rgb8())),
        other => Err(Error::Codec(format!("unsupported pixel layout {:?}", other.color()))),
    }
}

fn dynamic_to_l8(d: DynamicImage) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    d.to_luma8()
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor().min(max)
}

/// Write a grayscale or RGB PNG.
pub fn write_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match (img.channels(), depth) {
        (1, BitDepth::Eight) => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).unwrap().save_with_format(path, ImageFormat::Png)
        }
        (1, BitDepth::Sixteen) => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).unwrap().save_with_format(path, ImageFormat::Png)
        }
        (3, BitDepth::Eight) => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).unwrap().save_with_format(path, ImageFormat::Png)
        }
        (3, BitDepth::Sixteen) => return Err(Error::InvalidArgument("16-bit RGB output is not supported".into())),
        _ => unreachable!("images have 1 or 3 channels"),
    };
    result.map_err(codec)
}

/// Write a binary 8-bit PGM (P5).
pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    img.require_single_channel()?;
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&v| quantize(v, 255.0) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Binary mask PNG: 255 where `u >= 0.5`.
pub fn write_binary_mask(u: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let bin = u.to_image().map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    write_png(&bin, path, BitDepth::Eight)
}

/// Read a mask file, clamping intensities into [0,1].
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::from_image_clamped(&read_image(path)?.luma())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0, 255.0), 1.0);
        assert_eq!(quantize(1.49 / 255.0, 255.0), 1.0);
        assert_eq!(quantize(1.2, 255.0), 255.0);
        assert_eq!(quantize(-0.1, 255.0), 0.0);
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, |r, c| ((r * 7 + c) * 7) as f64 / 255.0);
        for (name, depth) in [("a8.png", BitDepth::Eight), ("a16.png", BitDepth::Sixteen)] {
            let p = dir.path().join(name);
            write_png(&img, &p, depth).unwrap();
            let back = read_image(&p).unwrap();
            for (x, y) in back.data().iter().zip(img.data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let p = dir.path().join("a.pgm");
        write_pgm(&img, &p).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.dims(), (5, 7));
        assert!((back.at(4, 6) - img.at(4, 6)).abs() < 1e-9);

        let rgb = Image::from_channels(&[img.clone(), img.map(|v| 1.0 - v), img.clone()]).unwrap();
        let p = dir.path().join("rgb.png");
        write_png(&rgb, &p, BitDepth::Eight).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.channels(), 3);
        assert!((back.data()[4] - rgb.data()[4]).abs() < 1e-9);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_image("/definitely/not/here.png"), Err(Error::Io(_))));
    }
}
