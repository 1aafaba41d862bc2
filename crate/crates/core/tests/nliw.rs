//! Internal-wave coupling against an independent two-interface mode-matching evaluation.

use num_complex::Complex;
use proptest::prelude::*;
use striae::config::{default_environment, Environment};
use striae::linalg::CMatrix;
use striae::modes::{solve_modes_with, Band, ModeSet, SolverOptions};
use striae::nliw::*;

fn env() -> Environment<f64> {
    default_environment()
}

fn identity_error(m: &CMatrix<f64>) -> f64 {
    m.max_abs_diff(&CMatrix::identity(m.rows()))
}

/// `∫ a b / ρ dz` written out from the stored samples: trapezoid in water
/// plus the analytic integral of the product of the exponential tails.
fn overlap_oracle(a: &ModeSet<f64>, m: usize, b: &ModeSet<f64>, n: usize) -> f64 {
    let (fa, fb) = (&a.functions[m], &b.functions[n]);
    let last = fa.len() - 1;
    let mut water = 0.0;
    for j in 0..=last {
        let w = if j == 0 || j == last { 0.5 } else { 1.0 };
        water += w * fa[j] * fb[j];
    }
    water * a.step / a.water_density + fa[last] * fb[last] / (a.bottom_density.unwrap() * (a.tail_decay[m] + b.tail_decay[n]))
}

/// Background → depressed → background for a Rect wave, evaluated directly.
fn rect_oracle(env: &Environment<f64>, eta: f64, half_width: f64, freq: f64) -> CMatrix<f64> {
    let opts = StaircaseOptions::default().solver;
    let bg = solve_modes_with(&env.waveguide, freq, &opts).unwrap();
    let fixed = SolverOptions { mesh_intervals: Some(bg.intervals()), ..opts };
    let ssp = displaced_profile(&env.waveguide.ssp, &env.thermocline, eta).unwrap();
    let inner = solve_modes_with(&env.waveguide.with_profile(ssp), freq, &fixed).unwrap();
    let (mb, mi) = (bg.count(), inner.count());
    let l = |s: &ModeSet<f64>, m: usize| Complex::new(s.wavenumbers[m], s.attenuations[m]);
    let i = Complex::new(0.0, 1.0);
    let mut out = CMatrix::zeros(mb, mb);
    for p in 0..mb {
        for q in 0..mb {
            let mut sum = Complex::new(0.0, 0.0);
            for j in 0..mi {
                let c_out = overlap_oracle(&bg, p, &inner, j);
                let c_in = overlap_oracle(&inner, j, &bg, q);
                sum += c_out * (i * l(&inner, j) * 2.0 * half_width).exp() * c_in;
            }
            let half = (-i * (l(&bg, p) + l(&bg, q)) * half_width).exp();
            out[(p, q)] = sum * half;
        }
    }
    out
}

#[test]
fn zero_amplitude_is_identity() {
    for kind in [NliwKind::Sech, NliwKind::Rect] {
        let shape = NliwShape::new(kind, 0.0, 75.0, 7_000.0).unwrap();
        let c = nliw_coupling_matrix(&env(), &shape, 700.0).unwrap();
        assert!(identity_error(c.matrix()) < 1e-10, "{kind:?}: {}", identity_error(c.matrix()));
    }
}

#[test]
fn rect_matches_two_interface_oracle() {
    let e = env();
    for (eta, w) in [(3.0, 100.0), (9.0, 200.0), (18.0, 150.0)] {
        let shape = NliwShape::new(NliwKind::Rect, eta, w, 7_000.0).unwrap();
        let c = nliw_coupling_matrix(&e, &shape, 650.0).unwrap();
        let oracle = rect_oracle(&e, eta, w, 650.0);
        assert!(c.matrix().max_abs_diff(&oracle) < 1e-10, "η={eta}: {}", c.matrix().max_abs_diff(&oracle));
    }
}

#[test]
fn interface_projection_is_nearly_unitary_for_small_steps() {
    let e = env();
    let opts = StaircaseOptions::default().solver;
    let bg = solve_modes_with(&e.waveguide, 700.0, &opts).unwrap();
    let ssp = displaced_profile(&e.waveguide.ssp, &e.thermocline, 1.0).unwrap();
    let fixed = SolverOptions { mesh_intervals: Some(bg.intervals()), ..opts };
    let inner = solve_modes_with(&e.waveguide.with_profile(ssp), 700.0, &fixed).unwrap();
    let m = bg.count().min(inner.count());
    // Well-trapped modes only; the basis is truncated near cutoff.
    for p in 0..m.min(8) {
        for q in 0..m.min(8) {
            let g: f64 = (0..inner.count()).map(|j| overlap_oracle(&bg, p, &inner, j) * overlap_oracle(&inner, j, &bg, q)).sum();
            let expected = if p == q { 1.0 } else { 0.0 };
            assert!((g - expected).abs() < 1e-3, "({p},{q}) {g}");
        }
    }
}

#[test]
fn off_diagonal_coupling_is_linear_for_small_amplitude() {
    let e = env();
    let off = |eta: f64| {
        let shape = NliwShape::new(NliwKind::Rect, eta, 200.0, 7_000.0).unwrap();
        nliw_coupling_matrix(&e, &shape, 700.0).unwrap().matrix().off_diagonal_norm()
    };
    let (a, b) = (off(0.02), off(0.04));
    assert!(a > 0.0);
    assert!((b / a - 2.0).abs() < 0.05, "ratio {}", b / a);
}

#[test]
fn sech_staircase_converges() {
    let e = env();
    let shape = NliwShape::new(NliwKind::Sech, 9.0, 75.0, 7_000.0).unwrap();
    let coarse = nliw_coupling_matrix(&e, &shape, 700.0).unwrap();
    let fine = nliw_coupling_matrix_with(&e, &shape, 700.0, &StaircaseOptions { segments_per_width: 16, ..Default::default() }).unwrap();
    let (a, b) = (coarse.matrix().frobenius_norm(), fine.matrix().frobenius_norm());
    assert!((a - b).abs() / b < 1e-3);
    assert!(coarse.matrix().off_diagonal_norm() > 0.1);
}

#[test]
fn vanishing_rect_width_is_identity() {
    let e = env();
    let err = |w: f64| {
        let shape = NliwShape::new(NliwKind::Rect, 9.0, w, 7_000.0).unwrap();
        identity_error(nliw_coupling_matrix(&e, &shape, 700.0).unwrap().matrix())
    };
    let (a, b) = (err(1.0), err(0.01));
    assert!(b < a && b < 0.1, "{a} {b}");
}

#[test]
fn profile_perturbation_examples() {
    let e = env();
    let bg = &e.waveguide.ssp;
    let sech = NliwShape::new(NliwKind::Sech, 9.0, 75.0, 7_000.0).unwrap();
    let far = perturbed_profile(&e, &sech, 7_000.0 + 10.0 * 75.0).unwrap();
    for z in (0..=62).map(f64::from) {
        assert!((far.speed_at(z) - bg.speed_at(z)).abs() < 1e-6);
    }
    let rect = NliwShape::new(NliwKind::Rect, 9.0, 200.0, 7_000.0).unwrap();
    assert_eq!(&perturbed_profile(&e, &rect, 7_201.0).unwrap(), bg);
    let crest = perturbed_profile(&e, &rect, 7_000.0).unwrap();
    // The mixed layer now reaches 19 m; the thermocline starts there.
    assert_eq!(crest.speed_at(19.0), bg.speed_at(10.0));
    assert_eq!(crest.speed_at(18.0), bg.speed_at(10.0));
    assert!(crest.speed_at(20.0) < bg.speed_at(10.0));
    let deep = NliwShape::new(NliwKind::Rect, 45.0, 200.0, 7_000.0).unwrap();
    assert!(matches!(perturbed_profile(&e, &deep, 7_000.0), Err(NliwError::DisplacementExceedsDepth { .. })));
}

#[test]
fn phase_diagnostic_onset() {
    let e = env();
    let band = Band::new(600.0, 800.0, 4.0).unwrap();
    let opts = StaircaseOptions::default();
    let threshold = std::f64::consts::FRAC_PI_2;
    let diag = |eta: f64, w: f64| {
        let shape = NliwShape::new(NliwKind::Rect, eta, w, 7_000.0).unwrap();
        phase_diagnostic(&e, &shape, &band, &opts, threshold).unwrap()
    };
    let zero = diag(0.0, 200.0);
    assert!(zero.delta.iter().flatten().all(|d| d.abs() < 1e-9));
    let small = diag(1.0, 50.0);
    assert!(small.flagged.iter().take(3).all(|f| !f));
    assert!((0..3).all(|m| small.max_delta(m) < threshold));
    let mut previous = -1.0;
    for eta in [1.0, 5.0, 9.0, 13.0, 18.0] {
        let d = diag(eta, 200.0);
        assert!(d.delta.iter().all(|curve| curve[0] == 0.0));
        let worst = (0..3).map(|m| d.max_delta(m)).fold(0.0, f64::max);
        assert!(worst >= previous, "η={eta}: {worst} < {previous}");
        previous = worst;
    }
    let wide = diag(18.0, 1_000.0);
    assert!(wide.flagged.iter().take(3).any(|f| *f));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn displaced_profile_is_background_outside_the_moved_band(eta in 0.0f64..39.0) {
        let e = env();
        let p = displaced_profile(&e.waveguide.ssp, &e.thermocline, eta).unwrap();
        prop_assert_eq!(p.speed_at(10.0 + eta), e.waveguide.ssp.speed_at(10.0));
        for z in [0.0, 0.5 * (10.0 + eta), 50.0, 55.0, 62.0] {
            // Above the moved top the mixed layer is isovelocity; below the merge nothing moves.
            let source = if z >= 50.0 { z } else { z.min(10.0) };
            let diff = (p.speed_at(z) - e.waveguide.ssp.speed_at(source)).abs();
            prop_assert!(diff < 1e-9);
        }
        prop_assert!(p.speeds().windows(2).all(|w| w[1] <= w[0]));
    }
}
