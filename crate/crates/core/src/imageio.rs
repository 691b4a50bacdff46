//! 8-bit grayscale images, indexed mask PNGs and colour overlays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{ClassMask, NUM_CLASSES};
use crate::tensor::Tensor;

/// Background black; classes 1–4 blue, green, red, yellow.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [0, 0, 255],
    [0, 255, 0],
    [255, 0, 0],
    [255, 255, 0],
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}×{height} image",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// `1×H×W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f64 / 255.0).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("consistent shape")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let w = create(path)?;
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Dimension(format!("image side {v} too large")))
    };
    let mut enc = png::Encoder::new(w, dim(width)?, dim(height)?);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer
        .write_image_data(data)
        .map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Raw 8-bit samples and colour type, without palette expansion.
fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(f));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(
            path,
            format!("unsupported bit depth {:?}", info.bit_depth),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        buf,
    ))
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    write_png(
        path,
        img.width,
        img.height,
        png::ColorType::Grayscale,
        None,
        &img.data,
    )
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)
        .and_then(|_| w.write_all(&img.data))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("bad PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 PGM is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = bytes
        .get(i + 1..i + 1 + w * h)
        .ok_or_else(|| bad("truncated PGM data"))?;
    GrayImage::new(w, h, data.to_vec())
}

/// Loads an 8-bit grayscale PNG or binary PGM.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return parse_pgm(&bytes, path);
    }
    let (w, h, color, data) = read_png(path)?;
    match color {
        png::ColorType::Grayscale => GrayImage::new(w, h, data),
        other => Err(png_err(
            path,
            format!("expected 8-bit grayscale, found {other:?}"),
        )),
    }
}

/// Saves a grayscale image as PGM when the extension is `.pgm`, PNG otherwise.
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(img, path),
        _ => save_gray_png(img, path),
    }
}

/// Indexed PNG whose pixel indices are the class labels.
pub fn save_mask(mask: &ClassMask, path: &Path) -> Result<()> {
    if mask.max_class() as usize >= NUM_CLASSES {
        return Err(Error::Data(format!(
            "mask class {} has no palette entry",
            mask.max_class()
        )));
    }
    let palette = PALETTE.iter().flatten().copied().collect();
    write_png(
        path,
        mask.width(),
        mask.height(),
        png::ColorType::Indexed,
        Some(palette),
        mask.data(),
    )
}

/// Reads an indexed or grayscale PNG whose values are class labels.
pub fn load_mask(path: &Path) -> Result<ClassMask> {
    let (w, h, color, data) = read_png(path)?;
    if !matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(png_err(
            path,
            format!("mask must be indexed or grayscale, found {color:?}"),
        ));
    }
    if let Some(v) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return Err(Error::Data(format!(
            "{}: mask value {v} outside 0..{NUM_CLASSES}",
            path.display()
        )));
    }
    ClassMask::new(w, h, data)
}

/// RGB rendering: lane pixels in their palette colour, background showing
/// the input image.
pub fn overlay(image: &GrayImage, mask: &ClassMask) -> Result<Vec<u8>> {
    if (image.width, image.height) != (mask.width(), mask.height()) {
        return Err(Error::Dimension(
            "overlay image and mask sizes differ".into(),
        ));
    }
    let mut rgb = Vec::with_capacity(image.data.len() * 3);
    for (&g, &c) in image.data.iter().zip(mask.data()) {
        match c {
            0 => rgb.extend_from_slice(&[g, g, g]),
            c => rgb.extend_from_slice(&PALETTE[(c as usize).min(NUM_CLASSES - 1)]),
        }
    }
    Ok(rgb)
}

pub fn save_overlay(image: &GrayImage, mask: &ClassMask, path: &Path) -> Result<()> {
    let rgb = overlay(image, mask)?;
    write_png(
        path,
        image.width,
        image.height,
        png::ColorType::Rgb,
        None,
        &rgb,
    )
}
