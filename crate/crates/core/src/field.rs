//! Narrowband pressure on a horizontal line array from modal amplitudes.
//!
//! Amplitudes start as the point-source excitation `A_m(0) = φ_m(z_s)`, travel
//! adiabatically to the coupling range, are mixed by a coupling matrix and
//! travel on to each element, where
//! `p(r) = Σ_m A_m(r) φ_m(z_r) / sqrt(k_m r)`.
//! The usual source prefactor is dropped; per-frequency normalization removes it.

use num_complex::Complex;
use thiserror::Error;

use crate::coupling::CouplingMatrix;
use crate::modes::{ModeError, ModeSet};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("depth {0} m outside the water column")]
    DepthOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("frequency mismatch: {0} Hz vs {1} Hz")]
    FrequencyMismatch(f64, f64),
    #[error("negative propagation distance {0} m")]
    NegativeRange(f64),
    #[error("coupling range {coupling} m not inside (0, {nearest}) m")]
    CouplingOutsidePath { coupling: f64, nearest: f64 },
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),
}

impl From<ModeError> for FieldError {
    fn from(e: ModeError) -> Self {
        match e {
            ModeError::DepthOutOfRange { depth } => FieldError::DepthOutOfRange(depth),
            other => FieldError::InvalidGeometry(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeAmplitudes<T> {
    pub frequency: T,
    pub values: Vec<Complex<T>>,
}

/// Diagonal adiabatic propagator `exp(i (k_m + i α_m) Δr)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix<T> {
    pub diagonal: Vec<Complex<T>>,
}

impl<T: Real> PropagationMatrix<T> {
    pub fn new(modes: &ModeSet<T>, distance: T) -> Result<Self, FieldError> {
        if !(distance >= T::zero()) {
            return Err(FieldError::NegativeRange(distance.as_f64()));
        }
        Ok(Self { diagonal: propagator(modes, distance) })
    }

    /// Inverse propagator; used to factor background travel out of a coupling product.
    pub fn inverse(&self) -> Self {
        Self { diagonal: self.diagonal.iter().map(|z| z.inv()).collect() }
    }
}

pub(crate) fn propagator<T: Real>(modes: &ModeSet<T>, distance: T) -> Vec<Complex<T>> {
    modes
        .wavenumbers
        .iter()
        .zip(&modes.attenuations)
        .map(|(&k, &a)| Complex::from_polar((-a * distance).exp(), k * distance))
        .collect()
}

/// Receivers at `nearest_range + i·spacing` from the source, all at one depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArrayGeometry<T> {
    pub element_count: usize,
    pub spacing: T,
    pub depth: T,
    pub nearest_range: T,
}

impl<T: Real> ArrayGeometry<T> {
    pub fn new(element_count: usize, spacing: T, depth: T, nearest_range: T) -> Result<Self, FieldError> {
        let g = Self { element_count, spacing, depth, nearest_range };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.element_count < 2 {
            return Err(FieldError::InvalidGeometry("need at least two elements".into()));
        }
        if !(self.spacing > T::zero()) {
            return Err(FieldError::InvalidGeometry("spacing must be positive".into()));
        }
        if !(self.nearest_range > T::zero()) {
            return Err(FieldError::InvalidGeometry("nearest range must be positive".into()));
        }
        Ok(())
    }

    pub fn ranges(&self) -> Vec<T> {
        (0..self.element_count).map(|i| self.nearest_range + T::from_usize_lossy(i) * self.spacing).collect()
    }

    pub fn aperture(&self) -> T {
        T::from_usize_lossy(self.element_count - 1) * self.spacing
    }

    pub fn center_range(&self) -> T {
        self.nearest_range + T::lit(0.5) * self.aperture()
    }

    pub fn with_nearest_range(&self, nearest_range: T) -> Self {
        Self { nearest_range, ..*self }
    }
}

pub fn initial_amplitudes<T: Real>(modes: &ModeSet<T>, source_depth: T) -> Result<ModeAmplitudes<T>, FieldError> {
    if !(source_depth > T::zero() && source_depth < modes.water_depth()) {
        return Err(FieldError::DepthOutOfRange(source_depth.as_f64()));
    }
    let values = modes.functions_at(source_depth)?.into_iter().map(|p| Complex::new(p, T::zero())).collect();
    Ok(ModeAmplitudes { frequency: modes.frequency, values })
}

fn check_dims<T: Real>(amps: &ModeAmplitudes<T>, modes: &ModeSet<T>) -> Result<(), FieldError> {
    if amps.values.len() != modes.count() {
        return Err(FieldError::DimensionMismatch { expected: modes.count(), got: amps.values.len() });
    }
    if amps.frequency != modes.frequency {
        return Err(FieldError::FrequencyMismatch(amps.frequency.as_f64(), modes.frequency.as_f64()));
    }
    Ok(())
}

pub fn propagate<T: Real>(amps: &ModeAmplitudes<T>, modes: &ModeSet<T>, distance: T) -> Result<ModeAmplitudes<T>, FieldError> {
    check_dims(amps, modes)?;
    let t = PropagationMatrix::new(modes, distance)?;
    let values = amps.values.iter().zip(&t.diagonal).map(|(a, d)| *a * *d).collect();
    Ok(ModeAmplitudes { frequency: amps.frequency, values })
}

pub fn apply_coupling<T: Real>(amps: &ModeAmplitudes<T>, coupling: &CouplingMatrix<T>) -> Result<ModeAmplitudes<T>, FieldError> {
    if coupling.dim() != amps.values.len() {
        return Err(FieldError::DimensionMismatch { expected: amps.values.len(), got: coupling.dim() });
    }
    Ok(ModeAmplitudes { frequency: amps.frequency, values: coupling.apply(&amps.values) })
}

/// Modal sum at range `range` for amplitudes already propagated there.
pub fn modal_sum<T: Real>(amps: &[Complex<T>], modes: &ModeSet<T>, receiver_shapes: &[T], range: T) -> Complex<T> {
    amps.iter()
        .zip(receiver_shapes)
        .zip(&modes.wavenumbers)
        .fold(Complex::new(T::zero(), T::zero()), |acc, ((a, phi), k)| acc + *a * (*phi / (*k * range).sqrt()))
}

/// Pressure at every element with a single coupling event at `coupling_range`
/// (measured from the source).
pub fn pressure_at_array<T: Real>(
    amps_at_source: &ModeAmplitudes<T>,
    modes: &ModeSet<T>,
    geometry: &ArrayGeometry<T>,
    coupling: &CouplingMatrix<T>,
    coupling_range: T,
) -> Result<Vec<Complex<T>>, FieldError> {
    geometry.validate()?;
    check_dims(amps_at_source, modes)?;
    if !(coupling_range > T::zero() && coupling_range < geometry.nearest_range) {
        return Err(FieldError::CouplingOutsidePath {
            coupling: coupling_range.as_f64(),
            nearest: geometry.nearest_range.as_f64(),
        });
    }
    if coupling.dim() != modes.count() {
        return Err(FieldError::DimensionMismatch { expected: modes.count(), got: coupling.dim() });
    }
    // A_m(r) = e^{i k_m r − α_m (r − r_l)} Σ_n Λ_mn e^{i (k_n − k_m) r_l − α_n r_l} A_n(0):
    // only wavenumber differences multiply r_l, so Λ = I reproduces the
    // adiabatic phases, and each decay factor covers one physical leg.
    let m = modes.count();
    let (k, alpha) = (&modes.wavenumbers, &modes.attenuations);
    let lambda = coupling.matrix();
    let reduced: Vec<Complex<T>> = (0..m)
        .map(|row| {
            (0..m).fold(Complex::new(T::zero(), T::zero()), |acc, n| {
                let phase = if n == row { T::zero() } else { (k[n] - k[row]) * coupling_range };
                let shift = Complex::from_polar((-alpha[n] * coupling_range).exp(), phase);
                acc + lambda[(row, n)] * shift * amps_at_source.values[n]
            })
        })
        .collect();
    array_sum(&reduced, modes, geometry, coupling_range)
}

/// Modal sum at every element for amplitudes `reduced` whose decay is
/// accounted for up to `decay_origin`.
fn array_sum<T: Real>(
    reduced: &[Complex<T>],
    modes: &ModeSet<T>,
    geometry: &ArrayGeometry<T>,
    decay_origin: T,
) -> Result<Vec<Complex<T>>, FieldError> {
    let shapes = modes.functions_at(geometry.depth)?;
    geometry
        .ranges()
        .into_iter()
        .map(|r| {
            let there: Vec<Complex<T>> = reduced
                .iter()
                .zip(modes.wavenumbers.iter().zip(&modes.attenuations))
                .map(|(a, (k, alpha))| *a * Complex::from_polar((-*alpha * (r - decay_origin)).exp(), *k * r))
                .collect();
            Ok(modal_sum(&there, modes, &shapes, r))
        })
        .collect()
}

/// Pressure without any coupling event.
pub fn adiabatic_pressure<T: Real>(
    amps_at_source: &ModeAmplitudes<T>,
    modes: &ModeSet<T>,
    geometry: &ArrayGeometry<T>,
) -> Result<Vec<Complex<T>>, FieldError> {
    geometry.validate()?;
    check_dims(amps_at_source, modes)?;
    array_sum(&amps_at_source.values, modes, geometry, T::zero())
}

/// Per-mode power `|A_m(r) φ_m(z)|² / (k_m r)` at a receiver without coupling.
pub fn modal_powers<T: Real>(modes: &ModeSet<T>, source_depth: T, receiver_depth: T, range: T) -> Result<Vec<T>, FieldError> {
    let a0 = initial_amplitudes(modes, source_depth)?;
    let a = propagate(&a0, modes, range)?;
    let shapes = modes.functions_at(receiver_depth)?;
    Ok(a.values
        .iter()
        .zip(&shapes)
        .zip(&modes.wavenumbers)
        .map(|((a, phi), k)| a.norm_sqr() * *phi * *phi / (*k * range))
        .collect())
}

/// Comma-separated `element,range_m,re,im` dump of an array field.
pub fn field_csv<T: Real>(geometry: &ArrayGeometry<T>, field: &[Complex<T>]) -> String {
    let mut out = String::from("element,range_m,re,im\n");
    for (i, (r, p)) in geometry.ranges().iter().zip(field).enumerate() {
        out.push_str(&format!("{i},{r},{:e},{:e}\n", p.re, p.im));
    }
    out
}
