//! Waveguide-invariant analytics on striation images: β-spectra, spectrum
//! correlation, source ranging and sweep tables.
//!
//! The β-spectrum is a slope-energy scan of the image's 2-D spectrum. A
//! striation `I = g(f − s r)` puts its energy on the line `κ_r = −s κ_f`, and
//! a slope maps to `β = (r_c/f_c) s`. For every β bin the windowed, zero-padded
//! power spectrum is sampled along that line (linear interpolation in `κ_r`,
//! one sample per `κ_f > 0` column) and summed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::image::StriationImage;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("image is {rows}x{cols}; at least 8x8 is required")]
    TooSmall { rows: usize, cols: usize },
    #[error("center range and frequency must be positive, got {range} m and {frequency} Hz")]
    InvalidCenter { range: f64, frequency: f64 },
    #[error("spectra are on different β grids")]
    GridMismatch,
    #[error("spectrum has zero variance")]
    ZeroVariance,
    #[error("no dominant slope (peak quality {quality:.3} below {threshold:.3})")]
    NoDominantSlope { quality: f64, threshold: f64 },
    #[error("waveguide invariant must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("sets differ in length: {0}, {1}, {2}")]
    LengthMismatch(usize, usize, usize),
    #[error("sample {index}: metadata key `{key}` missing or not numeric")]
    MissingMeta { index: usize, key: String },
    #[error("no rows to aggregate")]
    Empty,
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Uniform β grid; the default is 401 points over `[−10, 10]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self { min: -10.0, max: 10.0, points: 401 }
    }
}

impl BetaGrid {
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + self.step() * i as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaOptions {
    pub grid: BetaGrid,
    /// Each axis is zero-padded to at least this multiple of its length.
    pub padding: usize,
}

impl Default for BetaOptions {
    fn default() -> Self {
        Self { grid: BetaGrid::default(), padding: 8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSpectrum<T> {
    pub grid: BetaGrid,
    pub energy: Vec<T>,
    /// Set when the image carried no spectral energy; `energy` is then all zero.
    pub degenerate: bool,
}

/// A local maximum of a spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub index: usize,
    /// Sub-bin location from a parabola through the peak and its neighbours.
    pub beta: f64,
    pub height: f64,
}

impl<T: Real> BetaSpectrum<T> {
    pub fn betas(&self) -> Vec<f64> {
        (0..self.grid.points).map(|i| self.grid.value(i)).collect()
    }

    /// Local maxima, highest first. Plateaus count once, at their left edge.
    pub fn peaks(&self) -> Vec<Peak> {
        let e: Vec<f64> = self.energy.iter().map(|v| v.as_f64()).collect();
        let n = e.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && e[j + 1] == e[i] {
                j += 1;
            }
            let left_ok = i == 0 || e[i - 1] < e[i];
            let right_ok = j + 1 == n || e[j + 1] < e[i];
            if left_ok && right_ok && e[i] > 0.0 {
                out.push(Peak { index: i, beta: self.refine(i), height: e[i] });
            }
            i = j + 1;
        }
        out.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.index.cmp(&b.index)));
        out
    }

    fn refine(&self, i: usize) -> f64 {
        let b = self.grid.value(i);
        if i == 0 || i + 1 == self.energy.len() {
            return b;
        }
        let (l, c, r) = (self.energy[i - 1].as_f64(), self.energy[i].as_f64(), self.energy[i + 1].as_f64());
        let denom = l - 2.0 * c + r;
        if denom >= 0.0 {
            return b;
        }
        b + self.grid.step() * (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    }

    /// Ratio of the highest peak to the second highest; infinite for a single peak.
    pub fn peak_quality(&self) -> f64 {
        let peaks = self.peaks();
        match peaks.as_slice() {
            [] => 0.0,
            [_] => f64::INFINITY,
            [a, b, ..] => a.height / b.height,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,energy\n");
        for (i, e) in self.energy.iter().enumerate() {
            let _ = writeln!(out, "{:.4},{:e}", self.grid.value(i), e.as_f64());
        }
        out
    }
}

fn hann<T: Real>(n: usize) -> Vec<T> {
    if n < 2 {
        return vec![T::one(); n];
    }
    (0..n)
        .map(|i| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

fn padded_len(n: usize, factor: usize) -> usize {
    (n * factor.max(1)).max(64).next_power_of_two()
}

pub fn beta_spectrum<T: Real>(image: &StriationImage<T>, r_center: f64, f_center: f64) -> Result<BetaSpectrum<T>, AnalysisError> {
    beta_spectrum_with(image, r_center, f_center, &BetaOptions::default())
}

/// β-spectrum centred on the image's own axes.
pub fn beta_spectrum_auto<T: Real>(image: &StriationImage<T>) -> Result<BetaSpectrum<T>, AnalysisError> {
    beta_spectrum(image, image.axes.range_center(), image.axes.freq_center())
}

pub fn beta_spectrum_with<T: Real>(
    image: &StriationImage<T>,
    r_center: f64,
    f_center: f64,
    options: &BetaOptions,
) -> Result<BetaSpectrum<T>, AnalysisError> {
    let (rows, cols) = (image.rows(), image.cols());
    if rows < 8 || cols < 8 {
        return Err(AnalysisError::TooSmall { rows, cols });
    }
    if !(r_center > 0.0 && f_center > 0.0) {
        return Err(AnalysisError::InvalidCenter { range: r_center, frequency: f_center });
    }
    let grid = options.grid;
    let zero = Complex::new(T::zero(), T::zero());
    let mean = image.values().iter().copied().sum::<T>() / T::from_usize_lossy(rows * cols);
    let spread = image.values().iter().map(|v| (*v - mean).abs()).fold(T::zero(), T::max);
    if !(spread > T::epsilon() * T::lit(64.0) * mean.abs()) || !spread.is_finite() {
        return Ok(BetaSpectrum { grid, energy: vec![T::zero(); grid.points], degenerate: true });
    }
    let (wr, wf) = (hann::<T>(rows), hann::<T>(cols));
    let (p_len, q_len) = (padded_len(rows, options.padding), padded_len(cols, options.padding));

    let mut buf = vec![zero; p_len * q_len];
    let mut planner = FftPlanner::<T>::new();
    let fft_q = planner.plan_fft_forward(q_len);
    let fft_p = planner.plan_fft_forward(p_len);
    let mut scratch = vec![zero; fft_q.get_inplace_scratch_len().max(fft_p.get_inplace_scratch_len())];
    for i in 0..rows {
        let row = &mut buf[i * q_len..(i + 1) * q_len];
        for j in 0..cols {
            row[j] = Complex::new((image.get(i, j) - mean) * wr[i] * wf[j], T::zero());
        }
        fft_q.process_with_scratch(row, &mut scratch);
    }
    let mut column = vec![zero; p_len];
    let mut power = vec![T::zero(); p_len];
    let mut energy = vec![T::zero(); grid.points];
    let (dr, df) = (image.range_step(), image.freq_step());
    let scale = f_center / r_center;
    let half = (p_len / 2) as f64;
    // Real input: the half-plane q ∈ [1, Q/2] carries all distinct cells.
    for q in 1..=q_len / 2 {
        for p in 0..p_len {
            column[p] = buf[p * q_len + q];
        }
        fft_p.process_with_scratch(&mut column, &mut scratch);
        for (w, s) in power.iter_mut().zip(&column) {
            *w = s.norm_sqr();
        }
        let kf = q as f64 / (q_len as f64 * df);
        for (b, e) in energy.iter_mut().enumerate() {
            // Fractional row index of κ_r = −(f_c/r_c) β κ_f on this column.
            let x = -scale * grid.value(b) * kf * p_len as f64 * dr;
            if x.abs() >= half {
                continue;
            }
            let x = if x < 0.0 { x + p_len as f64 } else { x };
            let lo = (x.floor() as usize) % p_len;
            let t = T::lit(x - x.floor());
            *e += power[lo] + t * (power[(lo + 1) % p_len] - power[lo]);
        }
    }
    let peak = energy.iter().copied().fold(T::zero(), T::max);
    let degenerate = !(peak > T::zero()) || !peak.is_finite();
    if degenerate {
        energy.iter_mut().for_each(|e| *e = T::zero());
    } else {
        energy.iter_mut().for_each(|e| *e /= peak);
    }
    Ok(BetaSpectrum { grid, energy, degenerate })
}

/// Integral correlation of two spectra over the grid, trapezoidal rule.
pub fn correlation<T: Real>(a: &BetaSpectrum<T>, b: &BetaSpectrum<T>) -> Result<f64, AnalysisError> {
    if a.grid != b.grid || a.energy.len() != b.energy.len() {
        return Err(AnalysisError::GridMismatch);
    }
    let h = a.grid.step();
    let width = a.grid.max - a.grid.min;
    let n = a.energy.len();
    let trap = |f: &dyn Fn(usize) -> f64| -> f64 {
        (0..n).map(|i| if i == 0 || i + 1 == n { 0.5 * f(i) } else { f(i) }).sum::<f64>() * h
    };
    let ea = |i: usize| a.energy[i].as_f64();
    let eb = |i: usize| b.energy[i].as_f64();
    let ma = trap(&ea) / width;
    let mb = trap(&eb) / width;
    let cov = trap(&|i| (ea(i) - ma) * (eb(i) - mb));
    let va = trap(&|i| (ea(i) - ma).powi(2));
    let vb = trap(&|i| (eb(i) - mb).powi(2));
    let flat = |v: f64, m: f64| !(v > 1e-24 * (m * m * width).max(f64::MIN_POSITIVE));
    if flat(va, ma) || flat(vb, mb) {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangingResult {
    /// Estimated source range, m.
    pub range: f64,
    pub beta: f64,
    /// Dominant striation slope δr/δf, m/Hz.
    pub slope: f64,
    /// β at the spectral peak for the probe range.
    pub apparent_beta: f64,
    pub peak_quality: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangingOptions {
    pub beta: BetaOptions,
    pub min_peak_quality: f64,
}

impl Default for RangingOptions {
    fn default() -> Self {
        Self { beta: BetaOptions::default(), min_peak_quality: 1.0 }
    }
}

/// `r₀ = β · f · δr/δf` with the slope read off the β-spectrum peak.
pub fn range_from_slope(beta: f64, f_center: f64, slope: f64) -> f64 {
    beta * f_center * slope
}

pub fn estimate_range<T: Real>(
    image: &StriationImage<T>,
    beta: f64,
    f_center: f64,
    r_probe: f64,
) -> Result<RangingResult, AnalysisError> {
    estimate_range_with(image, beta, f_center, r_probe, &RangingOptions::default())
}

pub fn estimate_range_with<T: Real>(
    image: &StriationImage<T>,
    beta: f64,
    f_center: f64,
    r_probe: f64,
    options: &RangingOptions,
) -> Result<RangingResult, AnalysisError> {
    if !(beta > 0.0) {
        return Err(AnalysisError::InvalidBeta(beta));
    }
    let spectrum = beta_spectrum_with(image, r_probe, f_center, &options.beta)?;
    let peaks = spectrum.peaks();
    let quality = spectrum.peak_quality();
    let threshold = options.min_peak_quality;
    let top = match peaks.first() {
        Some(p) if quality >= threshold && p.beta != 0.0 => *p,
        _ => return Err(AnalysisError::NoDominantSlope { quality, threshold }),
    };
    let slope = r_probe / (top.beta * f_center);
    Ok(RangingResult {
        range: range_from_slope(beta, f_center, slope),
        beta,
        slope,
        apparent_beta: top.beta,
        peak_quality: quality,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricOptions {
    pub beta: BetaOptions,
    /// Waveguide invariant used for ranging on the recovered image, if any.
    pub ranging_beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub r_s: f64,
    pub r_l: f64,
    pub c_d: f64,
    pub c_r: f64,
    pub r0: Option<f64>,
    pub range_error: Option<f64>,
}

fn meta_f64<T>(image: &StriationImage<T>, index: usize, key: &str) -> Result<f64, AnalysisError> {
    image
        .meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| AnalysisError::MissingMeta { index, key: key.to_string() })
}

/// Correlation of one spectrum against the label spectrum; a flat spectrum
/// on either side scores zero.
fn score<T: Real>(x: &BetaSpectrum<T>, label: &BetaSpectrum<T>) -> Result<f64, AnalysisError> {
    match correlation(x, label) {
        Err(AnalysisError::ZeroVariance) => Ok(0.0),
        other => other,
    }
}

/// One row per test sample: `C_D = corr(E_D, E)`, `C_R = corr(E_R, E)`.
///
/// Each label image must carry numeric `r_s` and `r_l` metadata; `parameter`
/// (text) and `value` (numeric) are optional.
pub fn sweep_metrics<T: Real>(
    test_set: &[StriationImage<T>],
    recovered_set: &[StriationImage<T>],
    labels: &[StriationImage<T>],
    options: &MetricOptions,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if test_set.len() != recovered_set.len() || test_set.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch(test_set.len(), recovered_set.len(), labels.len()));
    }
    let mut rows = Vec::with_capacity(labels.len());
    for (i, ((d, r), a)) in test_set.iter().zip(recovered_set).zip(labels).enumerate() {
        let r_s = meta_f64(a, i, "r_s")?;
        let r_l = meta_f64(a, i, "r_l")?;
        let (rc, fc) = (a.axes.range_center(), a.axes.freq_center());
        let e = beta_spectrum_with(a, rc, fc, &options.beta)?;
        let e_d = beta_spectrum_with(d, rc, fc, &options.beta)?;
        let e_r = beta_spectrum_with(r, rc, fc, &options.beta)?;
        let (r0, range_error) = match options.ranging_beta {
            Some(beta) => match estimate_range_with(r, beta, fc, rc, &RangingOptions { beta: options.beta, ..Default::default() }) {
                Ok(res) => (Some(res.range), Some((res.range - rc).abs() / rc)),
                Err(AnalysisError::NoDominantSlope { .. }) => (None, None),
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        rows.push(SweepRow {
            parameter: a.meta.get("parameter").cloned().unwrap_or_default(),
            value: a.meta.get("value").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN),
            r_s,
            r_l,
            c_d: score(&e_d, &e)?,
            c_r: score(&e_r, &e)?,
            r0,
            range_error,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AverageRow {
    pub parameter: String,
    pub value: f64,
    pub count: usize,
    pub mean_c_d: f64,
    pub mean_c_r: f64,
}

/// Averages `C_D` and `C_R` over rows whose `r_l` lies in the open window,
/// grouped by (parameter, value) in sorted order.
pub fn window_averages(rows: &[SweepRow], window: (f64, f64)) -> Result<Vec<AverageRow>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut groups: BTreeMap<(String, u64), (f64, usize, f64, f64)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.r_l > window.0 && r.r_l < window.1) {
        let key = (row.parameter.clone(), ordered_bits(row.value));
        let g = groups.entry(key).or_insert((row.value, 0, 0.0, 0.0));
        g.1 += 1;
        g.2 += row.c_d;
        g.3 += row.c_r;
    }
    Ok(groups
        .into_iter()
        .map(|((parameter, _), (value, count, d, r))| AverageRow {
            parameter,
            value,
            count,
            mean_c_d: d / count as f64,
            mean_c_r: r / count as f64,
        })
        .collect())
}

/// Bit pattern whose unsigned order matches the float order.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("parameter,value,r_s,r_l,c_d,c_r,r0,range_error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{}",
            r.parameter,
            r.value,
            r.r_s,
            r.r_l,
            r.c_d,
            r.c_r,
            opt(r.r0),
            opt(r.range_error)
        );
    }
    out
}

/// Inverse of [`rows_csv`].
pub fn parse_rows_csv(text: &str) -> Result<Vec<SweepRow>, AnalysisError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "parameter,value,r_s,r_l,c_d,c_r,r0,range_error" => {}
        _ => return Err(AnalysisError::Parse { line: 1, detail: "unexpected header".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |detail: String| AnalysisError::Parse { line: i + 1, detail };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("{} fields", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let maybe = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(SweepRow {
            parameter: f[0].to_string(),
            value: num(f[1])?,
            r_s: num(f[2])?,
            r_l: num(f[3])?,
            c_d: num(f[4])?,
            c_r: num(f[5])?,
            r0: maybe(f[6])?,
            range_error: maybe(f[7])?,
        });
    }
    Ok(rows)
}

pub fn averages_csv(rows: &[AverageRow]) -> String {
    let mut out = String::from("parameter,value,count,mean_c_d,mean_c_r\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.parameter, r.value, r.count, r.mean_c_d, r.mean_c_r);
    }
    out
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
