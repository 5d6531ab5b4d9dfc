//! Image loading and preprocessing: grayscale in `[0, 1]`, center crop and
//! bilinear resize to the training lattice, and Tikhonov high-pass filtering.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Fft2d, ImagePlane};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
pub const DEFAULT_HIGHPASS_REG: f64 = 5.0;
pub const MIN_SOURCE_SIDE: usize = 8;
const SUPPORTED_EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

fn ingest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a PNG or binary PGM as luma in `[0, 1]`. Inputs deeper than 8 bits
/// are rejected unless `allow_16bit` is set, in which case they are divided
/// by 65535.
pub fn load_grayscale(path: &Path, allow_16bit: bool) -> Result<ImagePlane> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| ingest_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    if wide && !allow_16bit {
        return Err(ingest_err(path, "bit depth above 8 needs the 16-bit option"));
    }
    let gray = img.color().channel_count() <= 2;
    let data: Vec<f64> = match (&img, wide, gray) {
        (_, false, true) => img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (_, false, false) => img.to_rgb8().pixels().map(|p| luma(p.0.map(f64::from)) / 255.0).collect(),
        (DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_), true, true) => {
            img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        _ => img.to_rgb16().pixels().map(|p| luma(p.0.map(f64::from)) / 65535.0).collect(),
    };
    ImagePlane::new(h, w, data).map_err(|e| ingest_err(path, e.to_string()))
}

fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Splits `s` into `(lowpass, highpass)` where
/// `lowpass = argmin_l 1/2 |l - s|^2 + reg/2 (|G_r l|^2 + |G_c l|^2)` with
/// circular forward differences, and `highpass = s - lowpass`.
pub fn tikhonov_highpass(s: &ImagePlane, reg: f64) -> Result<(ImagePlane, ImagePlane)> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization must be positive, got {reg}")));
    }
    let (h, w) = s.dims();
    let fft = Fft2d::new(h, w);
    let mut spec = fft.forward_real(s.as_slice());
    let row_gain: Vec<f64> = (0..h).map(|i| (2.0 * (PI * i as f64 / h as f64).sin()).powi(2)).collect();
    let col_gain: Vec<f64> = (0..w).map(|j| (2.0 * (PI * j as f64 / w as f64).sin()).powi(2)).collect();
    for i in 0..h {
        for j in 0..w {
            spec[i * w + j] /= 1.0 + reg * (row_gain[i] + col_gain[j]);
        }
    }
    let low = ImagePlane::new(h, w, fft.inverse_real(&spec))?;
    let high = ImagePlane::new(
        h,
        w,
        s.as_slice().iter().zip(low.as_slice()).map(|(a, b)| a - b).collect(),
    )?;
    Ok((low, high))
}

/// Largest centered crop with the aspect ratio of `height x width`, resized
/// bilinearly (pixel-center aligned). Returns `s` unchanged when it already
/// has the target size.
pub fn center_crop_resize(s: &ImagePlane, height: usize, width: usize) -> Result<ImagePlane> {
    let (sh, sw) = s.dims();
    if sh < MIN_SOURCE_SIDE || sw < MIN_SOURCE_SIDE {
        return Err(Error::InvalidParameter(format!(
            "source {sh}x{sw} is smaller than {MIN_SOURCE_SIDE}x{MIN_SOURCE_SIDE}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter("target lattice must be nonempty".into()));
    }
    if (sh, sw) == (height, width) {
        return Ok(s.clone());
    }
    let (ch, cw) = if sw * height > sh * width {
        (sh, ((sh * width) as f64 / height as f64).round().max(1.0) as usize)
    } else {
        (((sw * height) as f64 / width as f64).round().max(1.0) as usize, sw)
    };
    let (r0, c0) = ((sh - ch) / 2, (sw - cw) / 2);
    let sy = ch as f64 / height as f64;
    let sx = cw as f64 / width as f64;
    let sample = |pos: f64, len: usize| -> (usize, usize, f64) {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    Ok(ImagePlane::from_fn(height, width, |r, c| {
        let (y0, y1, fy) = sample((r as f64 + 0.5) * sy - 0.5, ch);
        let (x0, x1, fx) = sample((c as f64 + 0.5) * sx - 0.5, cw);
        let at = |y: usize, x: usize| s.get(r0 + y, c0 + x);
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// What happened to one input image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub file: String,
    pub original_height: usize,
    pub original_width: usize,
    pub resized: bool,
    pub mean_before: f64,
    pub mean_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessReport {
    pub records: Vec<PreprocessRecord>,
}

impl PreprocessReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for r in &self.records {
            wtr.serialize(r)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessOptions {
    /// Target lattice; `None` adopts the size of the first listed image.
    pub lattice: Option<(usize, usize)>,
    pub highpass_reg: f64,
    pub allow_16bit: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            lattice: None,
            highpass_reg: DEFAULT_HIGHPASS_REG,
            allow_16bit: false,
        }
    }
}

/// A directory of images in a fixed order.
#[derive(Clone, Debug)]
pub struct DatasetSource {
    root: PathBuf,
    files: Vec<PathBuf>,
    lattice: (usize, usize),
    options: PreprocessOptions,
}

impl DatasetSource {
    /// Lists supported images under `root` sorted by file name.
    pub fn open(root: &Path, options: PreprocessOptions) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Config(format!("data directory {} does not exist", root.display())));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_supported(p))
            .collect();
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        if files.is_empty() {
            return Err(Error::Config(format!("no PNG or PGM images in {}", root.display())));
        }
        let lattice = match options.lattice {
            Some(l) => l,
            None => load_grayscale(&files[0], options.allow_16bit)?.dims(),
        };
        if !options.highpass_reg.is_finite() || options.highpass_reg <= 0.0 {
            return Err(Error::Config(format!(
                "highpass regularization must be positive, got {}",
                options.highpass_reg
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            files,
            lattice,
            options,
        })
    }

    /// Seeded permutation of the file order.
    pub fn shuffle(&mut self, seed: u64) {
        self.files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn lattice(&self) -> (usize, usize) {
        self.lattice
    }

    /// Load, crop/resize and high-pass one file.
    pub fn preprocess(&self, path: &Path) -> Result<(ImagePlane, PreprocessRecord)> {
        let raw = load_grayscale(path, self.options.allow_16bit)?;
        let (h, w) = self.lattice;
        let sized = center_crop_resize(&raw, h, w).map_err(|e| ingest_err(path, e.to_string()))?;
        let (_, high) = tikhonov_highpass(&sized, self.options.highpass_reg)?;
        let record = PreprocessRecord {
            file: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            original_height: raw.dims().0,
            original_width: raw.dims().1,
            resized: raw.dims() != (h, w),
            mean_before: sized.mean(),
            mean_after: high.mean(),
        };
        Ok((high, record))
    }

    /// Preprocessed planes in listed order, produced lazily.
    pub fn stream(&self) -> impl Iterator<Item = Result<ImagePlane>> + '_ {
        self.files.iter().map(move |p| self.preprocess(p).map(|(s, _)| s))
    }
}

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

const PLANE_MAGIC: &[u8; 4] = b"OCDP";

/// Raw plane file: magic "OCDP", height and width as u32, then f64 values,
/// all little-endian.
pub fn write_plane(plane: &ImagePlane, path: &Path) -> Result<()> {
    let (h, w) = plane.dims();
    let mut buf = Vec::with_capacity(12 + 8 * h * w);
    buf.extend_from_slice(PLANE_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    plane.as_slice().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_plane(path: &Path) -> Result<ImagePlane> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != PLANE_MAGIC {
        return Err(Error::Format(format!("{} is not a plane file", path.display())));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 12 + 8 * h * w {
        return Err(Error::Format(format!("{} has the wrong length for {h}x{w}", path.display())));
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ImagePlane::new(h, w, data)
}
