//! Nonlinear internal waves: thermocline displacement, coupling matrices from a
//! staircase of range-independent segments, the diagonal-phase diagnostic and
//! the moving source/wave test timeline.
//!
//! Coupling is expressed relative to the background. With `S` the amplitude map
//! across the wave's support of length `W` (mode projections at every segment
//! interface, adiabatic propagation inside each segment) and `T_½` the
//! background propagator over `W/2`,
//!
//! ```text
//!     Λ = T_½⁻¹ · S · T_½⁻¹,
//! ```
//!
//! so a single coupling event at the wave centre reproduces the staircase
//! field, and `Λ = I` when there is no wave.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Environment, Thermocline};
use crate::coupling::{CouplingError, CouplingMatrix, Provenance};
use crate::field::propagator;
use crate::linalg::CMatrix;
use crate::modes::{solve_modes_with, Band, ModeError, ModeSet, SolverOptions, SoundSpeedProfile};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NliwError {
    #[error("invalid internal-wave shape: {0}")]
    InvalidShape(String),
    #[error("displacement {displacement} m pushes the thermocline top past {limit} m")]
    DisplacementExceedsDepth { displacement: f64, limit: f64 },
    #[error("segment {segment}: mode-1 overlap {overlap:.3} between neighbouring segments is too small")]
    SegmentTooWide { segment: usize, overlap: f64 },
    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
    #[error("at {frequency} Hz: {source}")]
    AtFrequency { frequency: f64, source: Box<NliwError> },
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliwKind {
    /// `η(r) = η₀ sech²((r − r_l)/L)`.
    Sech,
    /// `η(r) = η₀` for `|r − r_l| ≤ w`.
    Rect,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NliwShape<T> {
    pub kind: NliwKind,
    /// Downward thermocline displacement at the crest, m.
    pub amplitude: T,
    /// `L` for Sech, half-width `w` for Rect, m.
    pub width: T,
    /// Range of the crest, m.
    pub center: T,
}

/// Sech support is truncated at this many widths either side of the crest.
pub const SECH_TRUNCATION: f64 = 5.0;

impl<T: Real> NliwShape<T> {
    pub fn new(kind: NliwKind, amplitude: T, width: T, center: T) -> Result<Self, NliwError> {
        let s = Self { kind, amplitude, width, center };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), NliwError> {
        if !(self.amplitude >= T::zero()) || !self.amplitude.is_finite() {
            return Err(NliwError::InvalidShape(format!("amplitude {}", self.amplitude)));
        }
        if !(self.width > T::zero()) || !self.width.is_finite() {
            return Err(NliwError::InvalidShape(format!("width {}", self.width)));
        }
        Ok(())
    }

    pub fn displacement(&self, r: T) -> T {
        let x = (r - self.center) / self.width;
        match self.kind {
            NliwKind::Sech => {
                let s = T::one() / x.cosh();
                self.amplitude * s * s
            }
            NliwKind::Rect if x.abs() <= T::one() => self.amplitude,
            NliwKind::Rect => T::zero(),
        }
    }

    /// Half-length of the modelled support around the crest.
    pub fn half_support(&self) -> T {
        match self.kind {
            NliwKind::Sech => T::lit(SECH_TRUNCATION) * self.width,
            NliwKind::Rect => self.width,
        }
    }

    pub fn with_center(&self, center: T) -> Self {
        Self { center, ..*self }
    }
}

/// Sound-speed profile with the water between the surface and the merge
/// depth remapped so the thermocline top sits `displacement` deeper.
///
/// A parcel at depth `ζ` moves to `ζ + D(ζ)`, with `D` rising linearly from
/// zero at the surface to `displacement` at the thermocline top and falling
/// linearly back to zero at the merge depth. Both the map and the profile are
/// piecewise linear, so the result is exact on the mapped breakpoints.
pub fn displaced_profile<T: Real>(
    ssp: &SoundSpeedProfile<T>,
    thermocline: &Thermocline<T>,
    displacement: T,
) -> Result<SoundSpeedProfile<T>, NliwError> {
    if displacement == T::zero() {
        return Ok(ssp.clone());
    }
    let (top, merge) = (thermocline.top, thermocline.merge_depth);
    if !(displacement > T::zero()) || !(top + displacement < merge) {
        return Err(NliwError::DisplacementExceedsDepth { displacement: displacement.as_f64(), limit: merge.as_f64() });
    }
    let shift = |z: T| -> T {
        if z <= top {
            displacement * z / top
        } else if z < merge {
            displacement * (merge - z) / (merge - top)
        } else {
            T::zero()
        }
    };
    let mut depths: Vec<T> = ssp.depths().to_vec();
    depths.extend([top, merge]);
    depths.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    depths.dedup();
    let samples = depths.into_iter().map(|z| (z + shift(z), ssp.speed_at(z))).collect();
    Ok(SoundSpeedProfile::new(samples)?)
}

pub fn perturbed_profile<T: Real>(env: &Environment<T>, shape: &NliwShape<T>, r: T) -> Result<SoundSpeedProfile<T>, NliwError> {
    displaced_profile(&env.waveguide.ssp, &env.thermocline, shape.displacement(r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaircaseOptions {
    /// Solver settings shared by the background and every segment; the
    /// segments always reuse the background's mesh.
    pub solver: SolverOptions,
    /// Sech segments per width `L`.
    pub segments_per_width: usize,
    /// Smallest acceptable mode-1 overlap across an interface.
    pub min_overlap: f64,
}

impl Default for StaircaseOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions { richardson_levels: 2, ..SolverOptions::default() },
            segments_per_width: 8,
            min_overlap: 0.5,
        }
    }
}

/// Constant-displacement pieces covering the support, in range order.
fn segments<T: Real>(shape: &NliwShape<T>, options: &StaircaseOptions) -> Vec<(T, T)> {
    match shape.kind {
        NliwKind::Rect => vec![(T::lit(2.0) * shape.width, shape.amplitude)],
        NliwKind::Sech => {
            let n = (2.0 * SECH_TRUNCATION * options.segments_per_width.max(1) as f64).ceil() as usize;
            let total = T::lit(2.0) * shape.half_support();
            let len = total / T::from_usize_lossy(n);
            (0..n)
                .map(|j| {
                    let mid = -shape.half_support() + (T::from_usize_lossy(j) + T::lit(0.5)) * len;
                    (len, shape.with_center(T::zero()).displacement(mid))
                })
                .collect()
        }
    }
}

/// `C_mn = ∫ φ_m^{to} φ_n^{from} / ρ dz`.
fn projection<T: Real>(to: &ModeSet<T>, from: &ModeSet<T>) -> CMatrix<T> {
    CMatrix::from_fn(to.count(), from.count(), |m, n| Complex::new(to.overlap(from, m, n), T::zero()))
}

pub fn nliw_coupling_matrix<T: Real>(env: &Environment<T>, shape: &NliwShape<T>, frequency: T) -> Result<CouplingMatrix<T>, NliwError> {
    nliw_coupling_matrix_with(env, shape, frequency, &StaircaseOptions::default())
}

pub fn nliw_coupling_matrix_with<T: Real>(
    env: &Environment<T>,
    shape: &NliwShape<T>,
    frequency: T,
    options: &StaircaseOptions,
) -> Result<CouplingMatrix<T>, NliwError> {
    let background = solve_modes_with(&env.waveguide, frequency, &options.solver)?;
    relative_coupling(env, &background, shape, options)
}

/// Coupling matrix against an already solved background.
///
/// `background` must come from `options.solver` so that segment and
/// background wavenumbers share one discretization.
pub fn relative_coupling<T: Real>(
    env: &Environment<T>,
    background: &ModeSet<T>,
    shape: &NliwShape<T>,
    options: &StaircaseOptions,
) -> Result<CouplingMatrix<T>, NliwError> {
    shape.validate()?;
    let solver = SolverOptions { mesh_intervals: Some(background.intervals()), ..options.solver };
    let pieces = segments(shape, options);
    let mut solved: Vec<(T, ModeSet<T>)> = Vec::new();
    let mut index_of = Vec::with_capacity(pieces.len());
    for (_, eta) in &pieces {
        if *eta == T::zero() {
            index_of.push(None);
            continue;
        }
        let found = solved.iter().position(|(e, _)| e == eta);
        let i = match found {
            Some(i) => i,
            None => {
                let ssp = displaced_profile(&env.waveguide.ssp, &env.thermocline, *eta)?;
                let modes = solve_modes_with(&env.waveguide.with_profile(ssp), background.frequency, &solver)?;
                solved.push((*eta, modes));
                solved.len() - 1
            }
        };
        index_of.push(Some(i));
    }
    let lookup = |slot: Option<usize>| -> &ModeSet<T> { slot.map_or(background, |i| &solved[i].1) };

    let mut state = CMatrix::identity(background.count());
    let mut current = background;
    let mut total = T::zero();
    for (j, ((len, _), slot)) in pieces.iter().zip(&index_of).enumerate() {
        let next = lookup(*slot);
        if !std::ptr::eq(next, current) {
            let c = projection(next, current);
            check_overlap(&c, j, options.min_overlap)?;
            state = c.matmul(&state);
        }
        let phase = propagator(next, *len);
        let ones = vec![Complex::new(T::one(), T::zero()); state.cols()];
        state = state.scale_diagonals(&phase, &ones);
        current = next;
        total += *len;
    }
    if !std::ptr::eq(current, background) {
        let c = projection(background, current);
        check_overlap(&c, pieces.len(), options.min_overlap)?;
        state = c.matmul(&state);
    }
    let half: Vec<Complex<T>> = propagator(background, total * T::lit(0.5)).into_iter().map(|z| z.inv()).collect();
    Ok(CouplingMatrix::new(state.scale_diagonals(&half, &half), Provenance::Nliw)?)
}

fn check_overlap<T: Real>(c: &CMatrix<T>, segment: usize, threshold: f64) -> Result<(), NliwError> {
    let overlap = c[(0, 0)].norm().as_f64();
    if overlap < threshold {
        return Err(NliwError::SegmentTooWide { segment, overlap });
    }
    Ok(())
}

/// Background modes and wave coupling matrices for every frequency of a band.
#[derive(Clone)]
pub struct CoupledBand<T> {
    pub shape: NliwShape<T>,
    pub modes: Vec<ModeSet<T>>,
    pub couplings: Vec<CouplingMatrix<T>>,
}

pub fn coupled_band<T: Real>(
    env: &Environment<T>,
    shape: &NliwShape<T>,
    band: &Band,
    options: &StaircaseOptions,
) -> Result<CoupledBand<T>, NliwError> {
    band.validate()?;
    let per_freq: Vec<(ModeSet<T>, CouplingMatrix<T>)> = band
        .frequencies::<T>()
        .into_par_iter()
        .map(|f| {
            let run = || -> Result<_, NliwError> {
                let modes = solve_modes_with(&env.waveguide, f, &options.solver)?;
                let coupling = relative_coupling(env, &modes, shape, options)?;
                Ok((modes, coupling))
            };
            run().map_err(|e| NliwError::AtFrequency { frequency: f.as_f64(), source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    let (modes, couplings) = per_freq.into_iter().unzip();
    Ok(CoupledBand { shape: *shape, modes, couplings })
}

/// Diagonal-phase diagnostic over a band.
///
/// `θ_m(f) = arg Λ_mm(f) + k_m W` is the phase a mode accumulates across the
/// wave support `W`, `θ⁰_m(f) = k_m W` the background value; both are
/// unwrapped along frequency and re-referenced to the first band frequency,
/// and `Δθ_m = |θ̃_m − θ̃⁰_m|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDiagnostic {
    pub frequencies: Vec<f64>,
    /// `theta[m][i]` at `frequencies[i]`.
    pub theta: Vec<Vec<f64>>,
    pub theta0: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    /// Largest distance of `Δθ_m` from a multiple of 2π over the band.
    pub worst_offset: Vec<f64>,
    pub flagged: Vec<bool>,
    pub threshold: f64,
}

impl PhaseDiagnostic {
    pub fn mode_count(&self) -> usize {
        self.delta.len()
    }

    /// `max_f Δθ_m(f)` for mode index `m` (0-based).
    pub fn max_delta(&self, m: usize) -> f64 {
        self.delta[m].iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,mode,theta,theta0,delta_theta\n");
        for m in 0..self.mode_count() {
            for (i, f) in self.frequencies.iter().enumerate() {
                out.push_str(&format!(
                    "{f},{},{:.9},{:.9},{:.9}\n",
                    m + 1,
                    self.theta[m][i],
                    self.theta0[m][i],
                    self.delta[m][i]
                ));
            }
        }
        out
    }
}

/// Removes 2π jumps between consecutive samples.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, p) in phase.iter().enumerate() {
        if i > 0 {
            let jump = p - phase[i - 1];
            offset -= two_pi * (jump / two_pi).round();
        }
        out.push(p + offset);
    }
    out
}

pub fn phase_diagnostic<T: Real>(
    env: &Environment<T>,
    shape: &NliwShape<T>,
    band: &Band,
    options: &StaircaseOptions,
    threshold: f64,
) -> Result<PhaseDiagnostic, NliwError> {
    let scene = coupled_band(env, shape, band, options)?;
    Ok(diagnose(&scene, threshold))
}

/// Diagnostic from precomputed band couplings (the same matrices scenes use).
pub fn diagnose<T: Real>(scene: &CoupledBand<T>, threshold: f64) -> PhaseDiagnostic {
    let count = scene.modes.iter().map(ModeSet::count).min().unwrap_or(0);
    let width = (T::lit(2.0) * scene.shape.half_support()).as_f64();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut theta = Vec::with_capacity(count);
    let mut theta0 = Vec::with_capacity(count);
    let mut delta = Vec::with_capacity(count);
    let mut worst_offset = Vec::with_capacity(count);
    for m in 0..count {
        let arg: Vec<f64> = scene.couplings.iter().map(|c| c.matrix()[(m, m)].arg().as_f64()).collect();
        let arg = unwrap_phase(&arg);
        let t0: Vec<f64> = scene.modes.iter().map(|s| s.wavenumbers[m].as_f64() * width).collect();
        let th: Vec<f64> = arg.iter().zip(&t0).map(|(a, k)| a + k).collect();
        let th_ref: Vec<f64> = th.iter().map(|v| v - th[0]).collect();
        let t0_ref: Vec<f64> = t0.iter().map(|v| v - t0[0]).collect();
        let d: Vec<f64> = th_ref.iter().zip(&t0_ref).map(|(a, b)| (a - b).abs()).collect();
        let worst = d.iter().map(|v| (v - two_pi * (v / two_pi).round()).abs()).fold(0.0, f64::max);
        theta.push(th_ref);
        theta0.push(t0_ref);
        delta.push(d);
        worst_offset.push(worst);
    }
    PhaseDiagnostic {
        frequencies: scene.modes.iter().map(|s| s.frequency.as_f64()).collect(),
        flagged: worst_offset.iter().map(|w| *w > threshold).collect(),
        theta,
        theta0,
        delta,
        worst_offset,
        threshold,
    }
}

/// Source and wave positions over time: `r_s(t) = r_s0 + v_s t`,
/// `r_l(t) = r_l0 + v_l t`, both measured from the array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTimeline {
    pub source_speed: f64,
    pub nliw_speed: f64,
    pub source_start: f64,
    pub nliw_start: f64,
    pub interval: f64,
    pub duration: f64,
}

impl Default for SceneTimeline {
    fn default() -> Self {
        Self { source_speed: 2.4, nliw_speed: 0.6, source_start: 2e4, nliw_start: 2e3, interval: 600.0, duration: 2.4e4 }
    }
}

impl SceneTimeline {
    pub fn validate(&self) -> Result<(), NliwError> {
        let ok = self.interval > 0.0 && self.duration >= 0.0 && self.source_start > 0.0 && self.nliw_start > 0.0;
        if !ok {
            return Err(NliwError::InvalidTimeline(format!("{self:?}")));
        }
        if self.nliw_range(self.duration) >= self.source_range(self.duration) || self.nliw_start >= self.source_start {
            return Err(NliwError::InvalidTimeline("the wave must stay between source and array".into()));
        }
        Ok(())
    }

    pub fn source_range(&self, t: f64) -> f64 {
        self.source_start + self.source_speed * t
    }

    pub fn nliw_range(&self, t: f64) -> f64 {
        self.nliw_start + self.nliw_speed * t
    }

    /// Snapshot times `0, Δt, 2Δt, …` within the duration.
    pub fn times(&self) -> Vec<f64> {
        let n = (self.duration / self.interval + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.interval).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_environment;

    #[test]
    fn shapes() {
        let s = NliwShape::new(NliwKind::Sech, 9.0, 75.0, 7000.0).unwrap();
        assert_eq!(s.displacement(7000.0), 9.0);
        assert!(s.displacement(7000.0 + 750.0) < 1e-7);
        let r = NliwShape::new(NliwKind::Rect, 9.0, 200.0, 7000.0).unwrap();
        assert_eq!(r.displacement(7200.0), 9.0);
        assert_eq!(r.displacement(7200.1), 0.0);
        assert!(NliwShape::new(NliwKind::Rect, -1.0, 200.0, 0.0).is_err());
        assert!(NliwShape::new(NliwKind::Sech, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn displaced_profile_moves_thermocline_top() {
        let env = default_environment::<f64>();
        let p = displaced_profile(&env.waveguide.ssp, &env.thermocline, 9.0).unwrap();
        let bg = &env.waveguide.ssp;
        assert_eq!(p.speed_at(19.0), bg.speed_at(10.0));
        assert_eq!(p.speed_at(5.0), bg.speed_at(5.0));
        assert!(p.speed_at(25.0) > bg.speed_at(25.0));
        for z in [50.0, 55.0, 62.0] {
            assert!((p.speed_at(z) - bg.speed_at(z)).abs() < 1e-12);
        }
        assert_eq!(displaced_profile(bg, &env.thermocline, 0.0).unwrap(), *bg);
        assert!(displaced_profile(bg, &env.thermocline, 40.0).is_err());
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw = [3.0, -3.1, 2.9, -3.0];
        let u = unwrap_phase(&raw);
        for w in u.windows(2) {
            assert!((w[1] - w[0]).abs() < std::f64::consts::PI);
        }
    }

    #[test]
    fn timeline_positions() {
        let t = SceneTimeline::default();
        t.validate().unwrap();
        assert_eq!(t.source_range(0.0), 20_000.0);
        assert_eq!(t.nliw_range(0.0), 2_000.0);
        assert_eq!(t.source_range(600.0) - t.source_range(0.0), 2.4 * 600.0);
        assert_eq!(t.times().len(), 41);
    }
}
