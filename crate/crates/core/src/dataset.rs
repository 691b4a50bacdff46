//! On-disk datasets: `images/NNNN.png`, `masks/NNNN.png` and
//! `labels/NNNN.jsonl` under one directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{load_gray, load_mask, save_gray_png, save_mask, GrayImage};
use crate::labels::{gen_scene, parse_annotations, write_annotations, Lane, Scene, SceneConfig};
use crate::mask::ClassMask;
use crate::par::Exec;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A training or evaluation example: `1×H×W` image in `[0, 1]` and its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: ClassMask,
}

impl Sample {
    pub fn from_scene(scene: &Scene) -> Sample {
        Sample {
            image: scene.image.to_tensor(),
            mask: scene.mask.clone(),
        }
    }
}

pub const IMAGES: &str = "images";
pub const MASKS: &str = "masks";
pub const LABELS: &str = "labels";

/// Seed of the `index`-th scene of a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed, index as u64).next_u64()
}

/// `count` scenes sharing `template` apart from their derived seeds.
pub fn gen_scenes(
    template: &SceneConfig,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Scene>> {
    exec.map_range(count, |i| {
        gen_scene(&SceneConfig {
            seed: scene_seed(seed, i),
            ..template.clone()
        })
    })
    .into_iter()
    .collect()
}

fn stem(i: usize) -> String {
    format!("{i:04}")
}

/// Writes scenes and returns the paths written, in order.
pub fn save_scenes(dir: &Path, scenes: &[Scene]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(scenes.len() * 3);
    for (i, s) in scenes.iter().enumerate() {
        let name = stem(i);
        let img = dir.join(IMAGES).join(format!("{name}.png"));
        let mask = dir.join(MASKS).join(format!("{name}.png"));
        let labels = dir.join(LABELS).join(format!("{name}.jsonl"));
        save_gray_png(&s.image, &img)?;
        save_mask(&s.mask, &mask)?;
        write_file(&labels, write_annotations(&s.lanes).as_bytes())?;
        written.extend([img, mask, labels]);
    }
    Ok(written)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sorted stems of `dir/images/*.png`.
pub fn list_stems(dir: &Path) -> Result<Vec<String>> {
    let images = dir.join(IMAGES);
    let entries = std::fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&images, e))?.path();
        if path.extension().is_some_and(|e| e == "png" || e == "pgm") {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(s.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn image_path(dir: &Path, stem: &str) -> PathBuf {
    let png = dir.join(IMAGES).join(format!("{stem}.png"));
    if png.exists() {
        png
    } else {
        dir.join(IMAGES).join(format!("{stem}.pgm"))
    }
}

pub fn load_image(dir: &Path, stem: &str) -> Result<GrayImage> {
    load_gray(&image_path(dir, stem))
}

/// Loads every image with its mask.
pub fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let stems = list_stems(dir)?;
    if stems.is_empty() {
        return Err(Error::Data(format!("{}: no images", dir.display())));
    }
    stems
        .iter()
        .map(|s| {
            let image = load_image(dir, s)?;
            let mask = load_mask(&dir.join(MASKS).join(format!("{s}.png")))?;
            if (image.width(), image.height()) != (mask.width(), mask.height()) {
                return Err(Error::Data(format!("{s}: image and mask sizes differ")));
            }
            Ok(Sample {
                image: image.to_tensor(),
                mask,
            })
        })
        .collect()
}

pub fn load_lanes(dir: &Path, stem: &str) -> Result<Vec<Lane>> {
    let p = dir.join(LABELS).join(format!("{stem}.jsonl"));
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_annotations(&text)
}

/// Train/val/test sizes `n/2`, `n/6`, remainder (≈ `n/3`), rounded.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 / 2.0).round() as usize;
    let val = ((n as f64 / 6.0).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Copies a dataset into `out/{train,val,test}` after a seeded shuffle.
/// Returns the stems of each part.
pub fn split(data: &Path, out: &Path, seed: u64) -> Result<[Vec<String>; 3]> {
    let mut stems = list_stems(data)?;
    Rng::derive(seed, 0x5911).shuffle(&mut stems);
    let (nt, nv, _) = split_sizes(stems.len());
    let mut parts = [
        stems[..nt].to_vec(),
        stems[nt..nt + nv].to_vec(),
        stems[nt + nv..].to_vec(),
    ];
    for (part, name) in parts.iter_mut().zip(["train", "val", "test"]) {
        part.sort();
        let dst = out.join(name);
        for s in part.iter() {
            let img = image_path(data, s);
            let ext = img.extension().and_then(|e| e.to_str()).unwrap_or("png");
            copy(&img, &dst.join(IMAGES).join(format!("{s}.{ext}")))?;
            copy(
                &data.join(MASKS).join(format!("{s}.png")),
                &dst.join(MASKS).join(format!("{s}.png")),
            )?;
            let labels = data.join(LABELS).join(format!("{s}.jsonl"));
            if labels.exists() {
                copy(&labels, &dst.join(LABELS).join(format!("{s}.jsonl")))?;
            }
        }
    }
    Ok(parts)
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    let bytes = std::fs::read(from).map_err(|e| Error::io(from, e))?;
    write_file(to, &bytes)
}
