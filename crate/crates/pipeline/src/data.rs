//! Manifest parsing, image decoding, colour handling and image output.
//!
//! Colour images are split with full-range BT.601:
//! `Y = 0.299 R + 0.587 G + 0.114 B`, chroma centred on 0.5 after scaling to
//! [0, 1]. The luma plane is what gets fused.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageBuffer, ImageEncoder, Luma, RgbImage};
use medfuse_core::metrics::quantize;
use medfuse_core::plane::Plane;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How colour inputs are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorPolicy {
    /// Grayscale stays as is; RGB is fused on luma and its chroma kept.
    #[default]
    Auto,
    /// RGB is reduced to luma and its chroma discarded.
    Gray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// First source, relative paths resolve against the manifest's folder.
    pub a: PathBuf,
    pub b: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_b: Option<String>,
    /// Untagged entries take part in both training and evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default)]
    pub color: ColorPolicy,
}

impl ManifestEntry {
    pub fn in_split(&self, split: Split) -> bool {
        self.split.map_or(true, |s| s == split)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.id.is_empty() {
                return Err(PipelineError::Manifest("empty pair id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate pair id `{}`", e.id)));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(json_err(path))?;
        Self::new(entries, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(&self.entries).expect("plain data serializes");
        json.push('\n');
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn select(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.in_split(split))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_pair(&self, entry: &ManifestEntry, size: Option<usize>) -> Result<ImagePair> {
        load_pair(entry, &self.resolve(&entry.a), &self.resolve(&entry.b), size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chroma {
    pub cb: Plane,
    pub cr: Plane,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub a: Plane,
    pub b: Plane,
    /// Chroma of the colour source, if either source was colour.
    pub chroma: Option<Chroma>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Gray(Plane),
    Color { y: Plane, chroma: Chroma },
}

impl Decoded {
    pub fn luma(&self) -> &Plane {
        match self {
            Decoded::Gray(p) | Decoded::Color { y: p, .. } => p,
        }
    }
}

/// Full-range BT.601, inputs and outputs in [0, 1].
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 0.5 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (y, cb, cr)
}

pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let (cb, cr) = (cb - 0.5, cr - 0.5);
    (y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb)
}

fn plane_from_gray(img: &GrayImage) -> Plane {
    let (w, h) = img.dimensions();
    Plane::new(h as usize, w as usize, img.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
        .expect("buffer matches dimensions")
}

pub fn read_image(path: &Path) -> Result<Decoded> {
    let img = image::open(path).map_err(|source| PipelineError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if !img.color().has_color() {
        return Ok(Decoded::Gray(plane_from_gray(&img.to_luma8())));
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let n = (w * h) as usize;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in rgb.pixels() {
        let [r, g, b] = px.0.map(|v| v as f64 / 255.0);
        let (a, b_, c) = rgb_to_ycbcr(r, g, b);
        y.push(a);
        cb.push(b_);
        cr.push(c);
    }
    let plane = |v| Plane::new(h as usize, w as usize, v).expect("buffer matches dimensions");
    Ok(Decoded::Color {
        y: plane(y),
        chroma: Chroma {
            cb: plane(cb),
            cr: plane(cr),
        },
    })
}

/// Bilinear resampling.
pub fn resize(p: &Plane, height: usize, width: usize) -> Plane {
    if p.dims() == [height, width] {
        return p.clone();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
        p.width() as u32,
        p.height() as u32,
        p.data().iter().map(|&v| v as f32).collect(),
    )
    .expect("buffer matches dimensions");
    let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
    Plane::new(height, width, out.into_raw().into_iter().map(f64::from).collect()).expect("resize output size")
}

/// Decodes both sources, converts colour per the entry's policy and brings
/// them to `size × size` when given.
pub fn load_pair(entry: &ManifestEntry, path_a: &Path, path_b: &Path, size: Option<usize>) -> Result<ImagePair> {
    let fit = |p: &Plane| match size {
        Some(s) => resize(p, s, s),
        None => p.clone(),
    };
    let da = read_image(path_a)?;
    let db = read_image(path_b)?;
    let chroma = match entry.color {
        ColorPolicy::Gray => None,
        ColorPolicy::Auto => match (&db, &da) {
            (Decoded::Color { chroma, .. }, _) | (_, Decoded::Color { chroma, .. }) => Some(Chroma {
                cb: fit(&chroma.cb),
                cr: fit(&chroma.cr),
            }),
            _ => None,
        },
    };
    let (a, b) = (fit(da.luma()), fit(db.luma()));
    if a.dims() != b.dims() {
        return Err(PipelineError::Pair {
            id: entry.id.clone(),
            reason: format!(
                "sources differ in size after preprocessing: {:?} vs {:?}",
                a.dims(),
                b.dims()
            ),
        });
    }
    Ok(ImagePair {
        id: entry.id.clone(),
        a,
        b,
        chroma,
    })
}

pub fn to_gray8(p: &Plane) -> GrayImage {
    GrayImage::from_raw(p.width() as u32, p.height() as u32, p.data().iter().map(|&v| quantize(v)).collect())
        .expect("buffer matches dimensions")
}

/// Colour image from a luma plane and chroma planes.
pub fn to_rgb8(y: &Plane, chroma: &Chroma) -> Result<RgbImage> {
    if y.dims() != chroma.cb.dims() || y.dims() != chroma.cr.dims() {
        return Err(PipelineError::Pair {
            id: String::new(),
            reason: format!("chroma size {:?} does not match luma {:?}", chroma.cb.dims(), y.dims()),
        });
    }
    let mut raw = Vec::with_capacity(y.len() * 3);
    for ((&l, &cb), &cr) in y.data().iter().zip(chroma.cb.data()).zip(chroma.cr.data()) {
        let (r, g, b) = ycbcr_to_rgb(l, cb, cr);
        raw.extend([quantize(r), quantize(g), quantize(b)]);
    }
    Ok(RgbImage::from_raw(y.width() as u32, y.height() as u32, raw).expect("buffer matches dimensions"))
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// 8-bit grayscale output; `.pgm` paths are written as binary P5, anything
/// else as PNG.
pub fn write_gray(path: &Path, p: &Plane) -> Result<()> {
    let img = to_gray8(p);
    let img_err = |source| PipelineError::Image {
        path: path.to_path_buf(),
        source,
    };
    if is_pgm(path) {
        let f = BufWriter::new(File::create(path).map_err(io_err(path))?);
        PnmEncoder::new(f)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), image::ColorType::L8)
            .map_err(img_err)
    } else {
        DynamicImage::ImageLuma8(img)
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(img_err)
    }
}

pub fn write_color(path: &Path, y: &Plane, chroma: &Chroma) -> Result<()> {
    to_rgb8(y, chroma)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| PipelineError::Image {
            path: path.to_path_buf(),
            source,
        })
}
