//! `<root>/<class_name>/*.png|jpg` ingestion. Class index is the lexicographic
//! rank of the class folder name; images are center-cropped to square and resized.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::DatasetSpec;
use crate::error::{config, Result};

pub(super) struct Listing {
    pub files: Vec<(PathBuf, usize)>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

pub(super) fn list(spec: &DatasetSpec) -> Result<Listing> {
    let root = spec
        .path
        .as_ref()
        .ok_or_else(|| config(format!("directory dataset `{}` has no path", spec.id)))?;
    if !root.is_dir() {
        return Err(config(format!("dataset path {} does not exist", root.display())));
    }
    let mut classes: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.len() != spec.class_count && !classes.is_empty() {
        return Err(config(format!(
            "dataset `{}` declares {} classes but {} has {} class folders",
            spec.id,
            spec.class_count,
            root.display(),
            classes.len()
        )));
    }
    let mut files = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        let mut imgs: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        imgs.sort();
        files.extend(imgs.into_iter().map(|p| (p, label)));
    }
    Ok(Listing { files })
}

/// Decodes one file into `(3, size, size)` RGB in `[0, 1]`.
pub(super) fn decode(path: &Path, size: usize) -> Result<Vec<f32>> {
    super::access::record(format!("decode {}", path.display()));
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle);
    let plane = size * size;
    let mut out = vec![0f32; 3 * plane];
    for (x, y, px) in resized.enumerate_pixels() {
        let i = y as usize * size + x as usize;
        for c in 0..3 {
            out[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}
