//! PNG rendering of image batches as sample grids and interpolation rows.

use std::io::Cursor;
use std::path::Path;

use candle_core::{DType, Tensor};
use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{contract, Result};
use crate::fsutil::write_atomic;

const PAD: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([32, 32, 32]);

fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Converts a `(n, c, s, s)` batch in `[-1, 1]` to RGB images; one channel is
/// rendered as gray.
pub fn to_rgb_images(batch: &Tensor, scale: u32) -> Result<Vec<RgbImage>> {
    let (n, c, h, w) = batch.dims4()?;
    if c != 1 && c != 3 {
        return Err(contract(format!("cannot render {c}-channel images")));
    }
    let data = batch.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    let scale = scale.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * c * plane;
        let img = RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
            let p = (y / scale) as usize * w + (x / scale) as usize;
            if c == 1 {
                let v = to_u8(data[base + p]);
                Rgb([v, v, v])
            } else {
                Rgb([
                    to_u8(data[base + p]),
                    to_u8(data[base + plane + p]),
                    to_u8(data[base + 2 * plane + p]),
                ])
            }
        });
        out.push(img);
    }
    Ok(out)
}

fn tile(images: &[RgbImage], cols: usize) -> RgbImage {
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols).max(1);
    let (w, h) = images.first().map(|i| i.dimensions()).unwrap_or((1, 1));
    let mut sheet = RgbImage::from_pixel(
        cols as u32 * (w + PAD) + PAD,
        rows as u32 * (h + PAD) + PAD,
        BACKGROUND,
    );
    for (k, img) in images.iter().enumerate() {
        let x = PAD + (k % cols) as u32 * (w + PAD);
        let y = PAD + (k / cols) as u32 * (h + PAD);
        image::imageops::replace(&mut sheet, img, x as i64, y as i64);
    }
    sheet
}

/// Lays a batch out row-major with `cols` images per row.
pub fn render_grid(batch: &Tensor, cols: usize, scale: u32) -> Result<RgbImage> {
    Ok(tile(&to_rgb_images(batch, scale)?, cols))
}

/// Stacks equally long rows (e.g. class interpolations) into one sheet.
pub fn render_rows(rows: &[Tensor], scale: u32) -> Result<RgbImage> {
    let cols = rows.first().map(|r| r.dim(0)).transpose()?.unwrap_or(1);
    let mut images = Vec::new();
    for r in rows {
        if r.dim(0)? != cols {
            return Err(contract("interpolation rows must have equal length"));
        }
        images.extend(to_rgb_images(r, scale)?);
    }
    Ok(tile(&images, cols))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}
