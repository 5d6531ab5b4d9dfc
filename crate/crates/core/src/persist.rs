//! Checkpoints, dictionary tile images and the per-sample metrics log.
//!
//! Checkpoint layout, little-endian throughout:
//!
//! ```text
//! magic "OCDL" | version u32 | algorithm u8 | K, H, W, m u32 | N u64 | lambda f64 | rho0 f64
//! dictionary K*m*m f64 | alpha K*H*W f64 | beta K*H*W (re, im) f64 | rng 4*u64
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dict::FilterBank;
use crate::error::{Error, Result};
use crate::history::HistoryPair;
use crate::spectral::{Complex64, FilterSupport, ImagePlane, SpectrumPlane};
use crate::train::Algorithm;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OCDL";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Bytes outside the `8 K (m^2 + 3 H W)` payload: the 49-byte header and the
/// 32-byte RNG state.
pub const CHECKPOINT_OVERHEAD: usize = 4 + 4 + 1 + 4 * 4 + 8 + 8 + 8 + 4 * 8;

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub rho0: f64,
    pub dict: FilterBank,
    pub history: HistoryPair,
    pub rng_state: [u64; 4],
}

impl Checkpoint {
    pub fn sample_count(&self) -> u64 {
        self.history.sample_count
    }
}

/// Exact checkpoint size for the given shape.
pub fn checkpoint_size(k: usize, height: usize, width: usize, m: usize) -> usize {
    CHECKPOINT_OVERHEAD + 8 * k * (m * m + 3 * height * width)
}

fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let k = ck.dict.len();
    let m = ck.dict.side();
    let (h, w) = ck.history.dims();
    ck.history.check_shape(k, h, w)?;
    let mut buf = Vec::with_capacity(checkpoint_size(k, h, w, m));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(ck.algorithm.id());
    for v in [k, h, w, m] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&ck.history.sample_count.to_le_bytes());
    buf.extend_from_slice(&ck.lambda.to_le_bytes());
    buf.extend_from_slice(&ck.rho0.to_le_bytes());
    for f in ck.dict.filters() {
        f.as_slice().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    for a in &ck.history.alpha {
        a.as_slice().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    for b in &ck.history.beta {
        for c in b.as_slice() {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    for v in ck.rng_state {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(buf.len(), checkpoint_size(k, h, w, m));
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, not a checkpoint")));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let [alg] = cur.take::<1>()?;
    let algorithm = Algorithm::from_id(alg)?;
    let k = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    if k == 0 || m == 0 || m > h.min(w) {
        return Err(Error::Format(format!("inconsistent dimensions K={k} H={h} W={w} m={m}")));
    }
    let expected = k
        .checked_mul(m * m + 3 * h.checked_mul(w).unwrap_or(usize::MAX / 4))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(CHECKPOINT_OVERHEAD));
    match expected {
        Some(n) if n == bytes.len() => {}
        Some(n) if n > bytes.len() => {
            return Err(Error::Format(format!("truncated checkpoint: {} of {n} bytes", bytes.len())))
        }
        _ => {
            return Err(Error::Format(format!(
                "checkpoint size {} does not match K={k} H={h} W={w} m={m}",
                bytes.len()
            )))
        }
    }
    let sample_count = cur.u64()?;
    let lambda = cur.f64()?;
    let rho0 = cur.f64()?;
    let filters = (0..k)
        .map(|_| FilterSupport::new(m, cur.f64s(m * m)?))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(format!("dictionary: {e}")))?;
    let dict = FilterBank::new(filters).map_err(|e| Error::Format(format!("dictionary: {e}")))?;
    let alpha = (0..k)
        .map(|_| ImagePlane::new(h, w, cur.f64s(h * w)?))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(format!("history: {e}")))?;
    let beta = (0..k)
        .map(|_| {
            let vals = (0..h * w)
                .map(|_| Ok(Complex64::new(cur.f64()?, cur.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            SpectrumPlane::new(h, w, vals)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format(format!("history: {e}")))?;
    let rng_state = [cur.u64()?, cur.u64()?, cur.u64()?, cur.u64()?];
    Ok(Checkpoint {
        algorithm,
        lambda,
        rho0,
        dict,
        history: HistoryPair {
            alpha,
            beta,
            sample_count,
        },
        rng_state,
    })
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = temp_sibling(path);
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Gray levels of one tile, min-max normalized per filter. A constant filter
/// maps to 128.
pub fn tile_levels(filter: &FilterSupport) -> Vec<u8> {
    let vals = filter.as_slice();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![128; vals.len()];
    }
    vals.iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// `(width, height)` of the tile image for `k` filters of side `m`.
pub fn tile_layout(k: usize, m: usize, cols: usize) -> (usize, usize) {
    let cols = cols.clamp(1, k.max(1));
    let rows = k.div_ceil(cols);
    (cols * m + cols + 1, rows * m + rows + 1)
}

/// Writes the bank as an 8-bit grayscale PNG grid, filters row-major, with
/// black 1-pixel separators.
pub fn export_dictionary_tiles(dict: &FilterBank, path: &Path, cols: usize) -> Result<()> {
    if cols == 0 {
        return Err(Error::InvalidParameter("cols must be at least 1".into()));
    }
    let k = dict.len();
    let m = dict.side();
    let cols = cols.min(k);
    let (width, height) = tile_layout(k, m, cols);
    let mut img = image::GrayImage::new(width as u32, height as u32);
    for (idx, f) in dict.filters().iter().enumerate() {
        let (tr, tc) = (idx / cols, idx % cols);
        let (y0, x0) = (1 + tr * (m + 1), 1 + tc * (m + 1));
        for (i, level) in tile_levels(f).into_iter().enumerate() {
            img.put_pixel((x0 + i % m) as u32, (y0 + i / m) as u32, image::Luma([level]));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}

/// One line of the per-sample training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sample_index: u64,
    pub csc_iterations: u64,
    pub dict_iterations: u64,
    /// Coding objective of the sample under the dictionary that coded it.
    pub csc_objective: f64,
    pub approx_fit_term: f64,
    pub wall_time_seconds: f64,
}

/// Appends one row, writing the header first if the file is new or empty.
pub fn append_metrics(row: &MetricsRow, path: &Path) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(BufWriter::new(file));
    wtr.serialize(row).map_err(|e| csv_error(path, e))?;
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}
