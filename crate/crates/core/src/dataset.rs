//! Training pairs (distorted AIS, clean AIS) and the `AISD` container.
//!
//! Per sample, all randomness comes from one stream
//! `sample_stream(seed, index)`, drawn in this order: source range `r_s`,
//! wave range `r_l`, the coupling matrix (see [`sample_coupling`]), then the
//! noise field element by element, frequency fastest, each entry as an
//! amplitude `N(0, 1)` followed by a phase `U(0, 2π)`. Ranges `r_s` and `r_l`
//! are measured from the nearest array element; coupling therefore happens
//! `r_s − r_l` from the source.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! header : "AISD" | u16 version (=1) | u64 sample count
//! sample : u32 L | u32 n | n bytes of UTF-8 "key=value\n" lines
//!          | L·L f32 distorted | L·L f32 clean | u32 CRC-32 of everything
//!          in the sample before the checksum
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Environment;
use crate::coupling::{sample_coupling, CouplingError, CouplingMatrix, RandomCouplingConfig};
use crate::field::{initial_amplitudes, pressure_at_array, ArrayGeometry, FieldError};
use crate::image::{resize, ImageAxes, ImageError, StriationImage};
use crate::modes::{solve_band, Band, ModeError, ModeSet};
use crate::rng::{sample_stream, standard_normal, uniform};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"AISD";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("field is identically zero; SNR undefined")]
    ZeroField,
    #[error("sample {index}: {source}")]
    Sample { index: u64, source: Box<DatasetError> },
    #[error("not an AISD file")]
    BadMagic,
    #[error("unsupported AISD version {0}")]
    Version(u16),
    #[error("sample {index}: checksum failure ({detail})")]
    Checksum { index: u64, detail: String },
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Horizontal line array: element count, spacing and depth (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub element_count: usize,
    pub spacing: f64,
    pub depth: f64,
}

impl ArraySpec {
    pub fn geometry<T: Real>(&self, nearest_range: f64) -> Result<ArrayGeometry<T>, FieldError> {
        ArrayGeometry::new(self.element_count, T::lit(self.spacing), T::lit(self.depth), T::lit(nearest_range))
    }

    pub fn aperture(&self) -> f64 {
        self.spacing * (self.element_count.saturating_sub(1)) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub sample_count: u64,
    /// `r_s` bounds, m from the array.
    pub source_range: (f64, f64),
    /// `r_l` bounds, m from the array.
    pub coupling_range: (f64, f64),
    /// Target SNR; absent means noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub band: Band,
    pub image_size: usize,
    pub array: ArraySpec,
    pub source_depth: f64,
    pub coupling: RandomCouplingConfig,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    /// Full-scale recipe: 41 elements at 50 m, 1 Hz steps, 112×112 images.
    pub fn paper() -> Self {
        Self {
            sample_count: 10_000,
            source_range: (20e3, 60e3),
            coupling_range: (5e3, 15e3),
            snr_db: Some(10.0),
            band: Band { start: 600.0, end: 800.0, step: 1.0 },
            image_size: 112,
            array: ArraySpec { element_count: 41, spacing: 50.0, depth: 35.0 },
            source_depth: 35.0,
            coupling: RandomCouplingConfig::default(),
            seed: 0,
        }
    }

    /// Reduced recipe: 11 elements at 200 m, 4 Hz steps, 32×32 images.
    pub fn desk() -> Self {
        Self {
            sample_count: 500,
            band: Band { start: 600.0, end: 800.0, step: 4.0 },
            image_size: 32,
            array: ArraySpec { element_count: 11, spacing: 200.0, depth: 35.0 },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ordered(self.source_range) {
            return bad(format!("source range {:?}", self.source_range));
        }
        if !ordered(self.coupling_range) {
            return bad(format!("coupling range {:?}", self.coupling_range));
        }
        if self.coupling_range.1 >= self.source_range.0 {
            return bad("coupling must lie between source and array".into());
        }
        if self.image_size < 16 {
            return bad(format!("image size {} below 16", self.image_size));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad(format!("snr {snr}"));
            }
        }
        if !(self.source_depth > 0.0) {
            return bad(format!("source depth {}", self.source_depth));
        }
        self.band.validate()?;
        self.coupling.validate()?;
        self.array.geometry::<f64>(self.source_range.0)?;
        Ok(())
    }
}

/// Complex field on the array, rows = elements, columns = frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Complex<T>>,
}

impl<T: Real> FieldGrid<T> {
    fn from_columns(columns: &[Vec<Complex<T>>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for c in columns {
                values.push(c[i]);
            }
        }
        Self { rows, cols, values }
    }

    pub fn mean_power(&self) -> T {
        self.values.iter().map(|z| z.norm_sqr()).sum::<T>() / T::from_usize_lossy(self.values.len().max(1))
    }

    /// `|p|²` normalized so each frequency column peaks at one.
    pub fn normalized_intensity(&self, axes: ImageAxes) -> StriationImage<T> {
        let mut peak = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (j, p) in peak.iter_mut().enumerate() {
                *p = p.max(self.values[i * self.cols + j].norm_sqr());
            }
        }
        StriationImage::from_fn(self.rows, self.cols, axes, |i, j| {
            let v = self.values[i * self.cols + j].norm_sqr();
            if peak[j] > T::zero() {
                v / peak[j]
            } else {
                T::zero()
            }
        })
    }
}

/// Noise scale `σ` for which `10 log₁₀(mean |p|² / σ²)` equals the target.
pub fn snr_sigma<T: Real>(field: &[Complex<T>], target_snr_db: f64) -> Result<T, DatasetError> {
    let mean = field.iter().map(|z| z.norm_sqr()).sum::<T>() / T::from_usize_lossy(field.len().max(1));
    if !(mean > T::zero()) {
        return Err(DatasetError::ZeroField);
    }
    Ok((mean / T::lit(10f64.powf(target_snr_db / 10.0))).sqrt())
}

/// `σ · A e^{iφ}` per entry, `A ~ N(0, 1)`, `φ ~ U(0, 2π)`.
pub fn noise_field<T: Real, R: Rng + ?Sized>(len: usize, sigma: T, rng: &mut R) -> Vec<Complex<T>> {
    (0..len)
        .map(|_| {
            let a = standard_normal(rng);
            let phi = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
            Complex::from_polar(sigma * T::lit(a), T::lit(phi))
        })
        .collect()
}

/// SNR of a realized noise field, dB.
pub fn measured_snr_db<T: Real>(field: &[Complex<T>], noise: &[Complex<T>]) -> f64 {
    let s: f64 = field.iter().map(|z| z.norm_sqr().as_f64()).sum();
    let n: f64 = noise.iter().map(|z| z.norm_sqr().as_f64()).sum();
    10.0 * (s / n).log10()
}

/// Clean and coupled array fields over a band.
///
/// `couplings[n]` is applied at `coupling_range` (from the source) for
/// frequency `n`.
pub fn array_fields<T: Real>(
    modes: &[ModeSet<T>],
    couplings: &[CouplingMatrix<T>],
    geometry: &ArrayGeometry<T>,
    source_depth: T,
    coupling_range: T,
) -> Result<(FieldGrid<T>, FieldGrid<T>), FieldError> {
    if modes.len() != couplings.len() {
        return Err(FieldError::DimensionMismatch { expected: modes.len(), got: couplings.len() });
    }
    let mut clean = Vec::with_capacity(modes.len());
    let mut coupled = Vec::with_capacity(modes.len());
    for (set, lambda) in modes.iter().zip(couplings) {
        let a0 = initial_amplitudes(set, source_depth)?;
        let identity = CouplingMatrix::identity(set.count());
        clean.push(pressure_at_array(&a0, set, geometry, &identity, coupling_range)?);
        coupled.push(pressure_at_array(&a0, set, geometry, lambda, coupling_range)?);
    }
    Ok((FieldGrid::from_columns(&clean), FieldGrid::from_columns(&coupled)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T> {
    pub distorted: StriationImage<T>,
    pub clean: StriationImage<T>,
}

/// Imaging of a pair of fields: noise on the coupled field, per-frequency
/// normalization, then resampling to `size × size`.
pub fn image_pair<T: Real, R: Rng + ?Sized>(
    clean: &FieldGrid<T>,
    coupled: &FieldGrid<T>,
    axes: ImageAxes,
    snr_db: Option<f64>,
    size: usize,
    rng: &mut R,
) -> Result<ImagePair<T>, DatasetError> {
    let noisy = match snr_db {
        Some(snr) => {
            let sigma = snr_sigma(&coupled.values, snr)?;
            let noise = noise_field(coupled.values.len(), sigma, rng);
            FieldGrid { values: coupled.values.iter().zip(&noise).map(|(p, n)| *p + *n).collect(), ..coupled.clone() }
        }
        None => coupled.clone(),
    };
    Ok(ImagePair {
        distorted: resize(&noisy.normalized_intensity(axes), size)?,
        clean: resize(&clean.normalized_intensity(axes), size)?,
    })
}

pub fn image_axes(array: &ArraySpec, band: &Band, source_range: f64) -> ImageAxes {
    ImageAxes {
        range_start: source_range,
        range_end: source_range + array.aperture(),
        freq_start: band.start,
        freq_end: band.last(),
    }
}

/// One generated training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub index: u64,
    pub distorted: StriationImage<T>,
    pub clean: StriationImage<T>,
}

/// Mode sets for the band, solved once and shared by every sample.
pub struct DatasetContext<T> {
    pub spec: DatasetSpec,
    pub modes: Vec<ModeSet<T>>,
}

impl<T: Real> DatasetContext<T> {
    pub fn new(env: &Environment<T>, spec: DatasetSpec) -> Result<Self, DatasetError> {
        spec.validate()?;
        let b = spec.band;
        let modes = solve_band(&env.waveguide, T::lit(b.start), T::lit(b.end), T::lit(b.step))?;
        Ok(Self { spec, modes })
    }

    pub fn max_modes(&self) -> usize {
        self.modes.iter().map(ModeSet::count).max().unwrap_or(0)
    }

    /// The pair for `index`; a pure function of (spec, index).
    ///
    /// One coupling matrix is drawn at the largest mode count of the band;
    /// frequencies with fewer modes use its leading block.
    pub fn make_pair(&self, index: u64) -> Result<Sample<T>, DatasetError> {
        self.make_pair_inner(index).map_err(|e| DatasetError::Sample { index, source: Box::new(e) })
    }

    fn make_pair_inner(&self, index: u64) -> Result<Sample<T>, DatasetError> {
        let spec = &self.spec;
        let mut rng = sample_stream(spec.seed, index);
        let r_s = uniform(&mut rng, spec.source_range.0, spec.source_range.1);
        let r_l = uniform(&mut rng, spec.coupling_range.0, spec.coupling_range.1);
        let lambda: CouplingMatrix<T> = sample_coupling(&spec.coupling, self.max_modes(), &mut rng)?;
        let couplings: Vec<_> = self.modes.iter().map(|m| lambda.leading_block(m.count())).collect();
        let geometry = spec.array.geometry::<T>(r_s)?;
        let (clean, coupled) =
            array_fields(&self.modes, &couplings, &geometry, T::lit(spec.source_depth), T::lit(r_s - r_l))?;
        let axes = image_axes(&spec.array, &spec.band, r_s);
        let pair = image_pair(&clean, &coupled, axes, spec.snr_db, spec.image_size, &mut rng)?;
        let meta = sample_meta(index, spec, r_s, r_l);
        let mut distorted = pair.distorted;
        let mut clean = pair.clean;
        distorted.meta = meta.clone();
        clean.meta = meta;
        Ok(Sample { index, distorted, clean })
    }

    /// Samples `range` in index order, computed in parallel.
    pub fn generate(&self, range: std::ops::Range<u64>) -> Result<Vec<Sample<T>>, DatasetError> {
        range.into_par_iter().map(|i| self.make_pair(i)).collect()
    }
}

fn sample_meta(index: u64, spec: &DatasetSpec, r_s: f64, r_l: f64) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "random".into());
    meta.insert("index".into(), index.to_string());
    meta.insert("seed".into(), spec.seed.to_string());
    meta.insert("r_s".into(), format!("{r_s}"));
    meta.insert("r_l".into(), format!("{r_l}"));
    meta.insert("snr_db".into(), spec.snr_db.map_or("inf".into(), |s| format!("{s}")));
    meta
}

/// Streaming `AISD` writer; the sample count is patched in by [`finish`](Self::finish).
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    count: u64,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W) -> Result<Self, DatasetError> {
        inner.write_all(MAGIC)?;
        inner.write_all(&FORMAT_VERSION.to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        Ok(Self { inner, count: 0 })
    }

    pub fn push<T: Real>(&mut self, sample: &Sample<T>) -> Result<(), DatasetError> {
        let size = sample.distorted.rows();
        if sample.distorted.cols() != size || sample.clean.rows() != size || sample.clean.cols() != size {
            return Err(DatasetError::InvalidSpec("samples must be square and of one size".into()));
        }
        let mut meta = String::new();
        let axes = sample.distorted.axes;
        for (k, v) in [
            ("axes.range_start", axes.range_start),
            ("axes.range_end", axes.range_end),
            ("axes.freq_start", axes.freq_start),
            ("axes.freq_end", axes.freq_end),
        ] {
            meta.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in &sample.distorted.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(DatasetError::Metadata(format!("unencodable entry {k:?}")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        let mut buf = Vec::with_capacity(8 + meta.len() + 8 * size * size + 4);
        buf.extend_from_slice(&(size as u32).to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        for v in sample.distorted.values().iter().chain(sample.clean.values()) {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        self.inner.write_all(&buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, DatasetError> {
        self.inner.seek(SeekFrom::Start(6))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming `AISD` reader yielding `f32` samples.
pub struct DatasetReader<R: Read> {
    inner: R,
    count: u64,
    next: u64,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self, DatasetError> {
        let mut header = [0u8; HEADER_LEN as usize];
        inner.read_exact(&mut header).map_err(|_| DatasetError::BadMagic)?;
        if &header[..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FORMAT_VERSION {
            return Err(DatasetError::Version(version));
        }
        let count = u64::from_le_bytes(header[6..14].try_into().expect("eight bytes"));
        Ok(Self { inner, count, next: 0 })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn read_sample(&mut self) -> Result<Sample<f32>, DatasetError> {
        let index = self.next;
        let truncated = |e: io::Error| -> DatasetError {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                DatasetError::Checksum { index, detail: "file truncated".into() }
            } else {
                DatasetError::Io(e)
            }
        };
        let mut head = [0u8; 8];
        self.inner.read_exact(&mut head).map_err(truncated)?;
        let size = u32::from_le_bytes(head[..4].try_into().expect("four bytes")) as usize;
        let meta_len = u32::from_le_bytes(head[4..].try_into().expect("four bytes")) as usize;
        if size > 1 << 14 || meta_len > 1 << 24 {
            return Err(DatasetError::Checksum { index, detail: "implausible header".into() });
        }
        let mut body = vec![0u8; meta_len + 8 * size * size + 4];
        self.inner.read_exact(&mut body).map_err(truncated)?;
        let (payload, tail) = body.split_at(body.len() - 4);
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&head);
        hasher.update(payload);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if hasher.finalize() != stored {
            return Err(DatasetError::Checksum { index, detail: "CRC mismatch".into() });
        }
        let text = std::str::from_utf8(&payload[..meta_len]).map_err(|e| DatasetError::Metadata(e.to_string()))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Metadata(line.to_string()))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let mut axis = |key: &str| -> Result<f64, DatasetError> {
            meta.remove(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DatasetError::Metadata(format!("missing {key}")))
        };
        let axes = ImageAxes {
            range_start: axis("axes.range_start")?,
            range_end: axis("axes.range_end")?,
            freq_start: axis("axes.freq_start")?,
            freq_end: axis("axes.freq_end")?,
        };
        let floats: Vec<f32> = payload[meta_len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let (d, c) = floats.split_at(size * size);
        let mut distorted = StriationImage::new(size, size, d.to_vec(), axes)?;
        let mut clean = StriationImage::new(size, size, c.to_vec(), axes)?;
        distorted.meta = meta.clone();
        clean.meta = meta;
        let sample_index = distorted.meta.get("index").and_then(|v| v.parse().ok()).unwrap_or(index);
        Ok(Sample { index: sample_index, distorted, clean })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Sample<f32>, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let out = self.read_sample();
        self.next = if out.is_ok() { self.next + 1 } else { self.count };
        Some(out)
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample<f32>>, DatasetError> {
    DatasetReader::open(path)?.collect()
}

pub fn write_samples<T: Real>(path: impl AsRef<Path>, samples: &[Sample<T>]) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(path)?;
    for s in samples {
        w.push(s)?;
    }
    w.finish()?;
    Ok(())
}

/// Sidecar describing how a dataset file was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub build: String,
    pub samples: u64,
    pub file_crc32: u32,
    pub spec: DatasetSpec,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

pub fn build_id() -> String {
    format!("striae-{}", env!("CARGO_PKG_VERSION"))
}

pub fn file_crc32(path: impl AsRef<Path>) -> Result<u32, DatasetError> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = crc32fast::Hasher::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize())
}

/// Generates the whole dataset into `path` in index order, `chunk` samples at
/// a time, and writes the manifest next to it (`<path>.manifest.toml`).
pub fn write_dataset<T: Real>(ctx: &DatasetContext<T>, path: impl AsRef<Path>, chunk: u64) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let mut writer = DatasetWriter::create(path)?;
    let total = ctx.spec.sample_count;
    let mut start = 0;
    while start < total {
        let end = (start + chunk.max(1)).min(total);
        for s in ctx.generate(start..end)? {
            writer.push(&s)?;
        }
        start = end;
    }
    writer.finish()?;
    let manifest = DatasetManifest {
        format: format!("AISD v{FORMAT_VERSION}"),
        build: build_id(),
        samples: total,
        file_crc32: file_crc32(path)?,
        spec: ctx.spec.clone(),
    };
    std::fs::write(manifest_path(path), manifest.to_toml())?;
    Ok(manifest)
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.toml");
    path.with_file_name(name)
}
