//! Normal modes of a range-independent fluid waveguide.
//!
//! The depth equation
//!
//! ```text
//!     ρ d/dz (1/ρ dφ/dz) + (ω²/c²(z) − k²) φ = 0,    φ(0) = 0
//! ```
//!
//! is discretized with centred second differences on a uniform mesh. The
//! bottom closure is either a fluid half-space (impedance condition
//! `φ'(D) = −(ρ_w/ρ_b) γ φ(D)`, `γ = sqrt(k² − ω²/c_b²)`), a rigid floor or a
//! pressure-release floor. For a trial `k²` the number of modes with larger
//! eigenvalue is read off the inertia of the tridiagonal pencil (Sturm count),
//! each eigenvalue is isolated and refined by bisection, and the mesh error is
//! removed by Richardson extrapolation in `h²` over successively halved meshes.
//! Mode shapes come from inverse iteration on the base mesh and are normalized
//! with the discrete density-weighted inner product (including the exponential
//! tail in the half-space), under which distinct modes are orthogonal exactly.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Nepers per decibel is `1 / (20 log10 e)`.
const DB_PER_NEPER: f64 = 8.685_889_638_065_037;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("invalid sound speed profile: {0}")]
    InvalidProfile(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid frequency {0} Hz")]
    InvalidFrequency(f64),
    #[error("no trapped modes at {frequency} Hz")]
    NoTrappedModes { frequency: f64 },
    #[error("eigenvalue {mode} did not converge at {frequency} Hz")]
    ConvergenceFailure { frequency: f64, mode: usize },
    #[error("depth {depth} m outside the water column")]
    DepthOutOfRange { depth: f64 },
    #[error("at {frequency} Hz: {source}")]
    AtFrequency {
        frequency: f64,
        #[source]
        source: Box<ModeError>,
    },
}

/// Piecewise-linear sound speed profile `c(z)` of the water column.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundSpeedProfile<T> {
    depths: Vec<T>,
    speeds: Vec<T>,
}

impl<T: Real> SoundSpeedProfile<T> {
    /// Lowest and highest admissible water sound speed, m/s.
    pub const SPEED_LIMITS: (f64, f64) = (1400.0, 1600.0);

    pub fn new(samples: Vec<(T, T)>) -> Result<Self, ModeError> {
        if samples.len() < 2 {
            return Err(ModeError::InvalidProfile("need at least two samples".into()));
        }
        if samples[0].0 != T::zero() {
            return Err(ModeError::InvalidProfile("first sample must be at the surface".into()));
        }
        for pair in samples.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(ModeError::InvalidProfile(format!(
                    "depths must increase strictly ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        let (lo, hi) = Self::SPEED_LIMITS;
        for &(z, c) in &samples {
            if !(c.as_f64() >= lo && c.as_f64() <= hi) {
                return Err(ModeError::InvalidProfile(format!("speed {c} m/s at {z} m outside [{lo}, {hi}]")));
            }
        }
        let (depths, speeds) = samples.into_iter().unzip();
        Ok(Self { depths, speeds })
    }

    pub fn isovelocity(speed: T, depth: T) -> Result<Self, ModeError> {
        Self::new(vec![(T::zero(), speed), (depth, speed)])
    }

    pub fn depths(&self) -> &[T] {
        &self.depths
    }

    pub fn speeds(&self) -> &[T] {
        &self.speeds
    }

    pub fn samples(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.depths.iter().copied().zip(self.speeds.iter().copied())
    }

    /// Linear interpolation; constant extrapolation beyond the end samples.
    pub fn speed_at(&self, z: T) -> T {
        let d = &self.depths;
        if z <= d[0] {
            return self.speeds[0];
        }
        let last = d.len() - 1;
        if z >= d[last] {
            return self.speeds[last];
        }
        let i = d.partition_point(|&x| x <= z) - 1;
        let t = (z - d[i]) / (d[i + 1] - d[i]);
        self.speeds[i] + t * (self.speeds[i + 1] - self.speeds[i])
    }

    pub fn min_speed(&self) -> T {
        self.speeds.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_speed(&self) -> T {
        self.speeds.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Fluid sediment half-space below the water column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfSpace<T> {
    /// Compressional speed, m/s.
    pub speed: T,
    /// Density, g/cm³.
    pub density: T,
    /// Attenuation, dB per wavelength.
    pub attenuation: T,
}

/// Lower boundary of the water column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bottom<T> {
    HalfSpace(HalfSpace<T>),
    /// `φ'(D) = 0`; used with a pressure-release surface for the ideal waveguide.
    Rigid,
    /// `φ(D) = 0`.
    PressureRelease,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveguideEnv<T> {
    pub ssp: SoundSpeedProfile<T>,
    pub water_depth: T,
    pub water_density: T,
    pub bottom: Bottom<T>,
}

impl<T: Real> WaveguideEnv<T> {
    pub fn new(ssp: SoundSpeedProfile<T>, water_depth: T, bottom: Bottom<T>) -> Result<Self, ModeError> {
        let env = Self { ssp, water_depth, water_density: T::one(), bottom };
        env.validate()?;
        Ok(env)
    }

    pub fn pekeris(speed: T, depth: T, bottom: HalfSpace<T>) -> Result<Self, ModeError> {
        Self::new(SoundSpeedProfile::isovelocity(speed, depth)?, depth, Bottom::HalfSpace(bottom))
    }

    pub fn validate(&self) -> Result<(), ModeError> {
        if !(self.water_depth > T::zero()) {
            return Err(ModeError::InvalidEnvironment("water depth must be positive".into()));
        }
        if !(self.water_density > T::zero()) {
            return Err(ModeError::InvalidEnvironment("water density must be positive".into()));
        }
        let last = *self.ssp.depths().last().expect("non-empty profile");
        if last < self.water_depth {
            return Err(ModeError::InvalidEnvironment(format!(
                "profile ends at {last} m, above the bottom at {} m",
                self.water_depth
            )));
        }
        if let Bottom::HalfSpace(hs) = self.bottom {
            if !(hs.speed > self.ssp.max_speed()) {
                return Err(ModeError::InvalidEnvironment(format!(
                    "bottom speed {} m/s does not exceed the water speeds",
                    hs.speed
                )));
            }
            if !(hs.density > T::zero()) {
                return Err(ModeError::InvalidEnvironment("bottom density must be positive".into()));
            }
            if !(hs.attenuation >= T::zero()) {
                return Err(ModeError::InvalidEnvironment("bottom attenuation must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Lowest water sound speed over the column actually occupied by water.
    pub fn min_water_speed(&self) -> T {
        let mut c = self.ssp.speed_at(self.water_depth);
        for (z, s) in self.ssp.samples() {
            if z <= self.water_depth {
                c = c.min(s);
            }
        }
        c
    }

    pub fn with_profile(&self, ssp: SoundSpeedProfile<T>) -> Self {
        Self { ssp, ..self.clone() }
    }
}

/// Discretization controls for [`solve_modes_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Mesh points per shortest water wavelength on the base mesh.
    pub points_per_wavelength: f64,
    /// Number of meshes (`h`, `h/2`, ...) combined by Richardson extrapolation.
    pub richardson_levels: usize,
    /// Explicit base mesh interval count; overrides `points_per_wavelength`.
    pub mesh_intervals: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { points_per_wavelength: 20.0, richardson_levels: 4, mesh_intervals: None }
    }
}

impl SolverOptions {
    pub fn base_intervals<T: Real>(&self, env: &WaveguideEnv<T>, frequency: T) -> usize {
        if let Some(n) = self.mesh_intervals {
            return n.max(2);
        }
        let lambda = env.min_water_speed().as_f64() / frequency.as_f64();
        let h = lambda / self.points_per_wavelength;
        ((env.water_depth.as_f64() / h).ceil() as usize).max(8)
    }
}

/// Trapped modes of one frequency.
#[derive(Clone, PartialEq)]
pub struct ModeSet<T> {
    pub frequency: T,
    /// Horizontal wavenumbers `k_m`, rad/m, strictly descending.
    pub wavenumbers: Vec<T>,
    /// Modal attenuations `α_m`, nepers/m.
    pub attenuations: Vec<T>,
    /// Mesh spacing of `functions`, m.
    pub step: T,
    /// Mode shapes sampled at `z_j = j·step`, `j = 0..=intervals`.
    pub functions: Vec<Vec<T>>,
    /// Half-space decay rates `γ_m` consistent with `functions` (zero for closed bottoms).
    pub tail_decay: Vec<T>,
    pub water_density: T,
    /// Density of the half-space, `None` for closed bottoms.
    pub bottom_density: Option<T>,
}

impl<T: Real> fmt::Debug for ModeSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModeSet")
            .field("frequency", &self.frequency)
            .field("count", &self.count())
            .field("wavenumbers", &self.wavenumbers)
            .field("attenuations", &self.attenuations)
            .field("step", &self.step)
            .finish()
    }
}

impl<T: Real> ModeSet<T> {
    pub fn count(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn intervals(&self) -> usize {
        self.functions.first().map_or(0, |f| f.len() - 1)
    }

    pub fn angular_frequency(&self) -> T {
        T::lit(2.0) * T::PI() * self.frequency
    }

    pub fn depth_grid(&self) -> Vec<T> {
        (0..=self.intervals()).map(|j| T::from_usize_lossy(j) * self.step).collect()
    }

    pub fn water_depth(&self) -> T {
        T::from_usize_lossy(self.intervals()) * self.step
    }

    /// Linearly interpolated `φ_m(z)`.
    pub fn function_at(&self, mode: usize, z: T) -> Result<T, ModeError> {
        let depth = self.water_depth();
        if !(z >= T::zero() && z <= depth) {
            return Err(ModeError::DepthOutOfRange { depth: z.as_f64() });
        }
        let f = &self.functions[mode];
        let x = z / self.step;
        let j = x.floor().to_usize().unwrap_or(0).min(f.len() - 2);
        let t = x - T::from_usize_lossy(j);
        Ok(f[j] + t * (f[j + 1] - f[j]))
    }

    /// All mode shapes at depth `z`.
    pub fn functions_at(&self, z: T) -> Result<Vec<T>, ModeError> {
        (0..self.count()).map(|m| self.function_at(m, z)).collect()
    }

    /// `∫ φ_m φ_n / ρ dz` over water and half-space tail.
    pub fn inner_product(&self, m: usize, n: usize) -> T {
        self.overlap(self, m, n)
    }

    /// `∫ φ_m^{self} φ_n^{other} / ρ dz` between two mode sets on the same mesh.
    ///
    /// Trapezoid weights on the water mesh plus the closed-form integral of the
    /// product of the two exponential tails.
    pub fn overlap(&self, other: &ModeSet<T>, m: usize, n: usize) -> T {
        debug_assert_eq!(self.intervals(), other.intervals());
        let a = &self.functions[m];
        let b = &other.functions[n];
        let last = a.len() - 1;
        let mut s = T::zero();
        for j in 1..last {
            s += a[j] * b[j];
        }
        s += T::lit(0.5) * a[last] * b[last];
        let mut total = s * self.step / self.water_density;
        if let Some(rho_b) = self.bottom_density {
            let decay = self.tail_decay[m] + other.tail_decay[n];
            if decay > T::zero() {
                total += a[last] * b[last] / (rho_b * decay);
            }
        }
        total
    }
}

/// Tridiagonal pencil of the depth equation on one mesh, scaled by `h²`.
struct DepthOperator<T> {
    step: T,
    /// `h² ω² / c_j²` for `j = 1..=n`.
    potential: Vec<T>,
    closure: Closure<T>,
}

#[derive(Clone, Copy)]
enum Closure<T> {
    /// Impedance row at `z = D`; `ratio = ρ_w/ρ_b`, `cutoff = ω²/c_b²`.
    HalfSpace { ratio: T, cutoff: T },
    Rigid,
    Dirichlet,
}

impl<T: Real> DepthOperator<T> {
    fn new(env: &WaveguideEnv<T>, omega: T, intervals: usize) -> Self {
        let step = env.water_depth / T::from_usize_lossy(intervals);
        let unknowns = match env.bottom {
            Bottom::PressureRelease => intervals - 1,
            _ => intervals,
        };
        let potential = (1..=unknowns)
            .map(|j| {
                let c = env.ssp.speed_at(T::from_usize_lossy(j) * step);
                let kw = omega / c;
                step * step * kw * kw
            })
            .collect();
        let closure = match env.bottom {
            Bottom::HalfSpace(hs) => {
                let kb = omega / hs.speed;
                Closure::HalfSpace { ratio: env.water_density / hs.density, cutoff: kb * kb }
            }
            Bottom::Rigid => Closure::Rigid,
            Bottom::PressureRelease => Closure::Dirichlet,
        };
        Self { step, potential, closure }
    }

    fn len(&self) -> usize {
        self.potential.len()
    }

    fn decay(&self, k2: T) -> T {
        match self.closure {
            Closure::HalfSpace { cutoff, .. } => (k2 - cutoff).max(T::zero()).sqrt(),
            _ => T::zero(),
        }
    }

    /// Diagonal of the symmetric scaled pencil `h² (A(k²) − k² M)`.
    fn diagonal(&self, k2: T, j: usize) -> T {
        let h2k2 = self.step * self.step * k2;
        let n = self.len();
        match self.closure {
            Closure::Dirichlet => -T::lit(2.0) + self.potential[j] - h2k2,
            _ if j + 1 < n => -T::lit(2.0) + self.potential[j] - h2k2,
            Closure::HalfSpace { ratio, .. } => {
                -T::one() - ratio * self.decay(k2) * self.step + T::lit(0.5) * (self.potential[j] - h2k2)
            }
            Closure::Rigid => -T::one() + T::lit(0.5) * (self.potential[j] - h2k2),
        }
    }

    /// Derivative of the diagonal with respect to `k²`.
    fn diagonal_slope(&self, k2: T, j: usize) -> T {
        let h2 = self.step * self.step;
        let n = self.len();
        match self.closure {
            Closure::Dirichlet => -h2,
            _ if j + 1 < n => -h2,
            Closure::HalfSpace { ratio, .. } => {
                let gamma = self.decay(k2).max(T::epsilon());
                -ratio * self.step / (T::lit(2.0) * gamma) - T::lit(0.5) * h2
            }
            Closure::Rigid => -T::lit(0.5) * h2,
        }
    }

    /// Sturm count (number of modes with `k_m² > k2`) together with the
    /// logarithmic derivative `d ln|det| / dk²` of the pencil.
    fn inertia(&self, k2: T) -> (usize, T) {
        let tiny = T::min_positive_value().sqrt();
        let mut negatives = 0;
        let mut q = T::one();
        let mut dq = T::zero();
        let mut log_slope = T::zero();
        for j in 0..self.len() {
            let d = self.diagonal(k2, j);
            let dd = self.diagonal_slope(k2, j);
            if j == 0 {
                q = d;
                dq = dd;
            } else {
                let inv = T::one() / q;
                dq = dd + dq * inv * inv;
                q = d - inv;
            }
            if q == T::zero() {
                q = -tiny;
            }
            if q < T::zero() {
                negatives += 1;
            }
            log_slope += dq / q;
        }
        (self.len() - negatives, log_slope)
    }

    /// Number of modes with `k_m² > k2`.
    fn count_above(&self, k2: T) -> usize {
        self.inertia(k2).0
    }

    /// Locates the `mode`-th largest eigenvalue (0-based): bisection until it
    /// is isolated, then Newton steps on the determinant safeguarded by the
    /// Sturm count. `probes` holds every `(k², count)` evaluated so far and
    /// supplies the starting bracket.
    fn locate(&self, mode: usize, probes: &mut Vec<(T, usize)>) -> Option<T> {
        let half = T::lit(0.5);
        let (mut lo, mut cnt_lo) = probes
            .iter()
            .filter(|p| p.1 > mode)
            .copied()
            .fold((T::neg_infinity(), 0), |acc, p| if p.0 > acc.0 { p } else { acc });
        let (mut hi, mut cnt_hi) = probes
            .iter()
            .filter(|p| p.1 <= mode)
            .copied()
            .fold((T::infinity(), 0), |acc, p| if p.0 < acc.0 { p } else { acc });
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        let mut x = half * (lo + hi);
        for _ in 0..300 {
            let (count, log_slope) = self.inertia(x);
            probes.push((x, count));
            if count > mode {
                lo = x;
                cnt_lo = count;
            } else {
                hi = x;
                cnt_hi = count;
            }
            let width = hi - lo;
            if width <= T::lit(8.0) * T::epsilon() * hi.abs().max(T::min_positive_value()) {
                return Some(half * (lo + hi));
            }
            let isolated = cnt_lo == mode + 1 && cnt_hi == mode;
            let mid = half * (lo + hi);
            let mut next = mid;
            if isolated && log_slope != T::zero() && log_slope.is_finite() {
                let newton = x - T::one() / log_slope;
                if newton > lo && newton < hi {
                    if (newton - x).abs() <= T::lit(2.0) * T::epsilon() * x.abs() {
                        return Some(newton);
                    }
                    next = newton;
                }
            }
            if next <= lo || next >= hi {
                return Some(mid);
            }
            x = next;
        }
        None
    }

    /// Eigenvector for eigenvalue `k2` by inverse iteration.
    fn eigenvector(&self, k2: T) -> Vec<T> {
        let n = self.len();
        let shift = k2 * (T::one() + T::lit(4.0) * T::epsilon());
        let diag: Vec<T> = (0..n).map(|j| self.diagonal(shift, j)).collect();
        let off = vec![T::one(); n.saturating_sub(1)];
        let mut x = vec![T::one(); n];
        for _ in 0..3 {
            x = solve_tridiagonal(&off, &diag, &off, &x);
            let norm = x.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if !(norm > T::zero()) || !norm.is_finite() {
                break;
            }
            for v in &mut x {
                *v /= norm;
            }
        }
        x
    }
}

/// Gaussian elimination with partial pivoting for a tridiagonal system.
pub(crate) fn solve_tridiagonal<T: Real>(sub: &[T], diag: &[T], sup: &[T], rhs: &[T]) -> Vec<T> {
    let n = diag.len();
    if n == 1 {
        let d = if diag[0] == T::zero() { T::epsilon() } else { diag[0] };
        return vec![rhs[0] / d];
    }
    // Row i holds (d, u, w) on columns i, i+1, i+2 after elimination.
    let mut d = diag.to_vec();
    let mut u: Vec<T> = sup.iter().copied().chain(std::iter::once(T::zero())).collect();
    let mut w = vec![T::zero(); n];
    let mut l = sub.to_vec();
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        if l[i].abs() > d[i].abs() {
            // swap rows i and i+1
            let (di, ui, bi) = (d[i], u[i], b[i]);
            d[i] = l[i];
            u[i] = d[i + 1];
            w[i] = if i + 1 < n - 1 { u[i + 1] } else { T::zero() };
            b[i] = b[i + 1];
            l[i] = di;
            d[i + 1] = ui;
            if i + 1 < n - 1 {
                u[i + 1] = T::zero();
            }
            b[i + 1] = bi;
        }
        if d[i] == T::zero() {
            d[i] = T::epsilon() * T::epsilon();
        }
        let factor = l[i] / d[i];
        d[i + 1] -= factor * u[i];
        if i + 1 < n - 1 {
            u[i + 1] -= factor * w[i];
        }
        let bi = b[i];
        b[i + 1] -= factor * bi;
    }
    if d[n - 1] == T::zero() {
        d[n - 1] = T::epsilon() * T::epsilon();
    }
    let mut x = vec![T::zero(); n];
    x[n - 1] = b[n - 1] / d[n - 1];
    x[n - 2] = (b[n - 2] - u[n - 2] * x[n - 1]) / d[n - 2];
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - u[i] * x[i + 1] - w[i] * x[i + 2]) / d[i];
    }
    x
}

/// Eigenvalue search interval `(lower, upper)` for `k²`.
fn search_interval<T: Real>(env: &WaveguideEnv<T>, omega: T) -> (T, T) {
    let cmin = env.min_water_speed();
    let upper = (omega / cmin) * (omega / cmin) * T::lit(1.0 + 1e-9);
    let lower = match env.bottom {
        Bottom::HalfSpace(hs) => (omega / hs.speed) * (omega / hs.speed),
        _ => T::zero(),
    };
    (lower, upper)
}

/// Eigenvalues `k_m²` of one mesh, in descending order.
fn mesh_eigenvalues<T: Real>(op: &DepthOperator<T>, lower: T, upper: T, frequency: f64) -> Result<Vec<T>, ModeError> {
    let count = op.count_above(lower);
    let mut probes = vec![(lower, count), (upper, op.count_above(upper))];
    (0..count)
        .map(|mode| op.locate(mode, &mut probes).ok_or(ModeError::ConvergenceFailure { frequency, mode: mode + 1 }))
        .collect()
}

/// Richardson extrapolation to `h → 0` of values sampled at `h`, `h/2`, `h/4`, ...
fn extrapolate<T: Real>(values: &[T]) -> T {
    let mut table = values.to_vec();
    let mut factor = T::lit(4.0);
    for level in 1..table.len() {
        for i in (level..table.len()).rev() {
            table[i] = table[i] + (table[i] - table[i - 1]) / (factor - T::one());
        }
        factor *= T::lit(4.0);
    }
    *table.last().expect("at least one mesh")
}

pub fn solve_modes<T: Real>(env: &WaveguideEnv<T>, frequency: T) -> Result<ModeSet<T>, ModeError> {
    solve_modes_with(env, frequency, &SolverOptions::default())
}

pub fn solve_modes_with<T: Real>(
    env: &WaveguideEnv<T>,
    frequency: T,
    options: &SolverOptions,
) -> Result<ModeSet<T>, ModeError> {
    if !(frequency > T::zero()) || !frequency.is_finite() {
        return Err(ModeError::InvalidFrequency(frequency.as_f64()));
    }
    env.validate()?;
    let f64_freq = frequency.as_f64();
    let omega = T::lit(2.0) * T::PI() * frequency;
    let (lower, upper) = search_interval(env, omega);
    let base = options.base_intervals(env, frequency);
    let levels = options.richardson_levels.max(1);

    let base_op = DepthOperator::new(env, omega, base);
    let mut per_mesh = vec![mesh_eigenvalues(&base_op, lower, upper, f64_freq)?];
    for level in 1..levels {
        let op = DepthOperator::new(env, omega, base << level);
        per_mesh.push(mesh_eigenvalues(&op, lower, upper, f64_freq)?);
    }
    let count = per_mesh.iter().map(Vec::len).min().unwrap_or(0);
    if count == 0 {
        return Err(ModeError::NoTrappedModes { frequency: f64_freq });
    }

    let step = base_op.step;
    let mut wavenumbers = Vec::with_capacity(count);
    let mut attenuations = Vec::with_capacity(count);
    let mut functions = Vec::with_capacity(count);
    let mut tail_decay = Vec::with_capacity(count);
    for m in 0..count {
        let samples: Vec<T> = per_mesh.iter().map(|mesh| mesh[m]).collect();
        let k2 = extrapolate(&samples);
        if !(k2 > lower) {
            break;
        }
        let k = k2.sqrt();
        let base_k2 = per_mesh[0][m];
        let gamma = base_op.decay(base_k2);

        let interior = base_op.eigenvector(base_k2);
        let mut phi = Vec::with_capacity(base + 1);
        phi.push(T::zero());
        phi.extend_from_slice(&interior);
        if phi.len() < base + 1 {
            phi.push(T::zero());
        }
        let tail = match env.bottom {
            Bottom::HalfSpace(hs) if gamma > T::zero() => phi[base] * phi[base] / (T::lit(2.0) * gamma * hs.density),
            _ => T::zero(),
        };
        let water: T = phi[1..base].iter().map(|v| *v * *v).sum::<T>() + T::lit(0.5) * phi[base] * phi[base];
        let norm = (water * step / env.water_density + tail).sqrt();
        let sign = if phi[1] < T::zero() { -T::one() } else { T::one() };
        for v in &mut phi {
            *v = sign * *v / norm;
        }

        let alpha = match env.bottom {
            Bottom::HalfSpace(hs) if gamma > T::zero() => {
                let nepers_per_m = hs.attenuation * frequency / (hs.speed * T::lit(DB_PER_NEPER));
                let tail_weight = phi[base] * phi[base] / (T::lit(2.0) * gamma * hs.density);
                nepers_per_m * (omega / hs.speed) * tail_weight / k
            }
            _ => T::zero(),
        };

        wavenumbers.push(k);
        attenuations.push(alpha);
        functions.push(phi);
        tail_decay.push(gamma);
    }
    if wavenumbers.is_empty() {
        return Err(ModeError::NoTrappedModes { frequency: f64_freq });
    }
    for pair in wavenumbers.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(ModeError::ConvergenceFailure { frequency: f64_freq, mode: wavenumbers.len() });
        }
    }

    Ok(ModeSet {
        frequency,
        wavenumbers,
        attenuations,
        step,
        functions,
        tail_decay,
        water_density: env.water_density,
        bottom_density: match env.bottom {
            Bottom::HalfSpace(hs) => Some(hs.density),
            _ => None,
        },
    })
}

/// Uniform frequency band, Hz, both ends inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Band {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self, ModeError> {
        let band = Self { start, end, step };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<(), ModeError> {
        if !(self.start > 0.0 && self.start <= self.end && self.step > 0.0 && self.end.is_finite()) {
            return Err(ModeError::InvalidFrequency(self.start));
        }
        Ok(())
    }

    pub fn frequencies<T: Real>(&self) -> Vec<T> {
        band_frequencies(T::lit(self.start), T::lit(self.end), T::lit(self.step))
    }

    pub fn len(&self) -> usize {
        band_frequencies(self.start, self.end, self.step).len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Last frequency actually on the grid.
    pub fn last(&self) -> f64 {
        self.start + (self.len() - 1) as f64 * self.step
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.last())
    }
}

/// Frequencies `start, start + step, ...` up to `end` inclusive.
pub fn band_frequencies<T: Real>(start: T, end: T, step: T) -> Vec<T> {
    let n = ((end - start) / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    (0..n).map(|i| start + T::from_usize_lossy(i) * step).collect()
}

pub fn solve_band<T: Real>(env: &WaveguideEnv<T>, start: T, end: T, step: T) -> Result<Vec<ModeSet<T>>, ModeError> {
    solve_band_with(env, start, end, step, &SolverOptions::default())
}

/// One [`ModeSet`] per frequency of the band, solved in parallel.
pub fn solve_band_with<T: Real>(
    env: &WaveguideEnv<T>,
    start: T,
    end: T,
    step: T,
    options: &SolverOptions,
) -> Result<Vec<ModeSet<T>>, ModeError> {
    if !(start <= end) || !(step > T::zero()) {
        return Err(ModeError::InvalidFrequency(start.as_f64()));
    }
    band_frequencies(start, end, step)
        .into_par_iter()
        .map(|f| {
            solve_modes_with(env, f, options)
                .map_err(|e| ModeError::AtFrequency { frequency: f.as_f64(), source: Box::new(e) })
        })
        .collect()
}

/// Diagnostic table `frequency_hz,mode,k_rad_per_m,alpha_np_per_m`, modes 1-based.
pub fn mode_table_csv<T: Real>(modes: &ModeSet<T>) -> String {
    let mut out = String::from("frequency_hz,mode,k_rad_per_m,alpha_np_per_m\n");
    for (m, (k, a)) in modes.wavenumbers.iter().zip(&modes.attenuations).enumerate() {
        out.push_str(&format!("{},{},{:.12e},{:.6e}\n", modes.frequency, m + 1, k, a));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(depth: f64) -> WaveguideEnv<f64> {
        WaveguideEnv::new(SoundSpeedProfile::isovelocity(1500.0, depth).unwrap(), depth, Bottom::Rigid).unwrap()
    }

    #[test]
    fn profile_validation() {
        assert!(SoundSpeedProfile::<f64>::new(vec![(0.0, 1500.0)]).is_err());
        assert!(SoundSpeedProfile::<f64>::new(vec![(0.0, 1500.0), (0.0, 1500.0)]).is_err());
        assert!(SoundSpeedProfile::<f64>::new(vec![(0.0, 1500.0), (10.0, 1700.0)]).is_err());
        assert!(SoundSpeedProfile::<f64>::new(vec![(1.0, 1500.0), (10.0, 1500.0)]).is_err());
        let p = SoundSpeedProfile::new(vec![(0.0, 1520.0), (10.0, 1500.0)]).unwrap();
        assert_eq!(p.speed_at(5.0), 1510.0);
        assert_eq!(p.speed_at(50.0), 1500.0);
    }

    #[test]
    fn bottom_must_trap() {
        let ssp = SoundSpeedProfile::isovelocity(1500.0, 50.0).unwrap();
        let hs = HalfSpace { speed: 1490.0, density: 1.5, attenuation: 0.0 };
        assert!(WaveguideEnv::new(ssp, 50.0, Bottom::HalfSpace(hs)).is_err());
    }

    #[test]
    fn ideal_first_mode() {
        let modes = solve_modes(&ideal(50.0), 600.0).unwrap();
        let kw = 2.0 * std::f64::consts::PI * 600.0 / 1500.0;
        let gamma = 0.5 * std::f64::consts::PI / 50.0;
        let exact = (kw * kw - gamma * gamma).sqrt();
        assert!((modes.wavenumbers[0] - exact).abs() / exact < 1e-10);
        assert!((modes.wavenumbers[0] - 2.513078).abs() < 1e-6);
        assert_eq!(modes.count(), 40);
    }

    #[test]
    fn too_low_frequency_has_no_modes() {
        let err = solve_modes(&ideal(5.0), 10.0).unwrap_err();
        assert!(matches!(err, ModeError::NoTrappedModes { .. }));
    }

    #[test]
    fn tridiagonal_solver_with_pivoting() {
        // [[0,1,0],[2,1,1],[0,3,4]] x = [1,2,3]
        let sub = [2.0, 3.0];
        let diag = [0.0, 1.0, 4.0];
        let sup = [1.0, 1.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &[1.0, 2.0, 3.0]);
        let r: [f64; 3] = [x[1], 2.0 * x[0] + x[1] + x[2], 3.0 * x[1] + 4.0 * x[2]];
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn richardson_removes_quadratic_error() {
        let f = |h: f64| 3.0 + 0.7 * h * h - 0.2 * h.powi(4);
        let v = [f(0.4), f(0.2), f(0.1)];
        assert!((extrapolate(&v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn band_frequency_count() {
        assert_eq!(band_frequencies(600.0, 800.0, 1.0).len(), 201);
        assert_eq!(band_frequencies(600.0, 800.0, 4.0).len(), 51);
        assert_eq!(band_frequencies(700.0, 700.0, 1.0), vec![700.0]);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let modes = solve_modes(&ideal(10.0), 200.0).unwrap();
        let csv = mode_table_csv(&modes);
        assert_eq!(csv.lines().count(), modes.count() + 1);
    }
}
