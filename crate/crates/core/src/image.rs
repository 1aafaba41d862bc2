//! Range × frequency intensity images.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image must be at least {min}x{min}, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize, min: usize },
    #[error("value buffer has {got} entries, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("images differ in shape")]
    ShapeMismatch,
}

/// Physical extent of an image: rows run over range, columns over frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageAxes {
    pub range_start: f64,
    pub range_end: f64,
    pub freq_start: f64,
    pub freq_end: f64,
}

impl ImageAxes {
    pub fn range_center(&self) -> f64 {
        0.5 * (self.range_start + self.range_end)
    }

    pub fn freq_center(&self) -> f64 {
        0.5 * (self.freq_start + self.freq_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StriationImage<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    pub axes: ImageAxes,
    pub meta: BTreeMap<String, String>,
}

impl<T: Real> StriationImage<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>, axes: ImageAxes) -> Result<Self, ImageError> {
        if values.len() != rows * cols {
            return Err(ImageError::BadLength { expected: rows * cols, got: values.len() });
        }
        Ok(Self { rows, cols, values, axes, meta: BTreeMap::new() })
    }

    pub fn from_fn(rows: usize, cols: usize, axes: ImageAxes, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values, axes, meta: BTreeMap::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    /// Range of row `i`, m.
    pub fn range_at(&self, row: usize) -> f64 {
        lerp_axis(self.axes.range_start, self.axes.range_end, row, self.rows)
    }

    /// Frequency of column `j`, Hz.
    pub fn freq_at(&self, col: usize) -> f64 {
        lerp_axis(self.axes.freq_start, self.axes.freq_end, col, self.cols)
    }

    pub fn range_step(&self) -> f64 {
        (self.axes.range_end - self.axes.range_start) / (self.rows.max(2) - 1) as f64
    }

    pub fn freq_step(&self) -> f64 {
        (self.axes.freq_end - self.axes.freq_start) / (self.cols.max(2) - 1) as f64
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { values: self.values.iter().map(|v| f(*v)).collect(), ..self.clone() }
    }

    pub fn cast<U: Real>(&self) -> StriationImage<U> {
        StriationImage {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            axes: self.axes,
            meta: self.meta.clone(),
        }
    }

    /// Maximum of each frequency column.
    pub fn column_max(&self) -> Vec<T> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).fold(T::neg_infinity(), T::max))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T, ImageError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(ImageError::ShapeMismatch);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max))
    }
}

fn lerp_axis(start: f64, end: f64, i: usize, n: usize) -> f64 {
    if n < 2 {
        return start;
    }
    start + (end - start) * i as f64 / (n - 1) as f64
}

/// Bilinear resampling onto `size × size`, corners aligned, clamped to `[0, 1]`.
pub fn resize<T: Real>(image: &StriationImage<T>, size: usize) -> Result<StriationImage<T>, ImageError> {
    if image.rows < 2 || image.cols < 2 || size < 2 {
        return Err(ImageError::TooSmall { rows: image.rows, cols: image.cols, min: 2 });
    }
    let map = |i: usize, n: usize| -> (usize, T) {
        let x = i as f64 * (n - 1) as f64 / (size - 1) as f64;
        let lo = (x.floor() as usize).min(n - 2);
        (lo, T::lit(x - lo as f64))
    };
    let row_map: Vec<_> = (0..size).map(|i| map(i, image.rows)).collect();
    let col_map: Vec<_> = (0..size).map(|j| map(j, image.cols)).collect();
    let mut out = StriationImage::from_fn(size, size, image.axes, |i, j| {
        let (r, tr) = row_map[i];
        let (c, tc) = col_map[j];
        let top = image.get(r, c) + tc * (image.get(r, c + 1) - image.get(r, c));
        let bottom = image.get(r + 1, c) + tc * (image.get(r + 1, c + 1) - image.get(r + 1, c));
        (top + tr * (bottom - top)).max(T::zero()).min(T::one())
    });
    out.meta = image.meta.clone();
    Ok(out)
}

/// Writes images side by side as one binary PGM (P5), values in `[0, 1]`.
pub fn write_pgm<T: Real, W: Write>(out: &mut W, panels: &[&StriationImage<T>]) -> io::Result<()> {
    let rows = panels.iter().map(|p| p.rows).max().unwrap_or(0);
    let gap = 2;
    let width: usize = panels.iter().map(|p| p.cols).sum::<usize>() + gap * panels.len().saturating_sub(1);
    write!(out, "P5\n{width} {rows}\n255\n")?;
    let mut line = Vec::with_capacity(width);
    for i in 0..rows {
        line.clear();
        for (k, p) in panels.iter().enumerate() {
            if k > 0 {
                line.extend(std::iter::repeat_n(255u8, gap));
            }
            for j in 0..p.cols {
                let v = if i < p.rows { p.get(i, j).as_f64() } else { 0.0 };
                line.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out.write_all(&line)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> ImageAxes {
        ImageAxes { range_start: 20_000.0, range_end: 21_000.0, freq_start: 600.0, freq_end: 800.0 }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = StriationImage::from_fn(5, 7, axes(), |i, j| ((i * 7 + j) as f64 / 40.0).min(1.0));
        let img = StriationImage::new(5, 5, img.values()[..25].to_vec(), axes()).unwrap();
        assert_eq!(resize(&img, 5).unwrap().values(), img.values());
    }

    #[test]
    fn resize_reproduces_affine_ramps() {
        let f = |x: f64, y: f64| 0.1 + 0.3 * x + 0.5 * y;
        let img = StriationImage::from_fn(4, 9, axes(), |i, j| f(i as f64 / 3.0, j as f64 / 8.0));
        for size in [2, 3, 16, 33] {
            let r = resize(&img, size).unwrap();
            for i in 0..size {
                for j in 0..size {
                    let expected = f(i as f64 / (size - 1) as f64, j as f64 / (size - 1) as f64);
                    assert!((r.get(i, j) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn resize_constant_and_clamp() {
        let img = StriationImage::from_fn(3, 3, axes(), |_, _| 0.25f32);
        assert!(resize(&img, 8).unwrap().values().iter().all(|v| *v == 0.25));
        let hot = StriationImage::from_fn(2, 2, axes(), |_, _| 1.5f64);
        assert!(resize(&hot, 4).unwrap().values().iter().all(|v| *v == 1.0));
        assert!(resize(&StriationImage::from_fn(1, 4, axes(), |_, _| 0.0f64), 4).is_err());
    }

    #[test]
    fn axes_lookup() {
        let img = StriationImage::from_fn(11, 51, axes(), |_, _| 0.0f64);
        assert_eq!(img.range_at(10), 21_000.0);
        assert_eq!(img.freq_at(25), 700.0);
        assert_eq!(img.freq_step(), 4.0);
    }

    #[test]
    fn pgm_header_and_size() {
        let a = StriationImage::from_fn(4, 3, axes(), |i, _| i as f64 / 3.0);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &[&a, &a]).unwrap();
        let header = b"P5\n8 4\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 8 * 4);
    }
}
