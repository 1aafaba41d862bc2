//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use striae::image::{ImageAxes, StriationImage};
use striae::modes::ModeSet;
use striae::nn::{loss_bce, Network, NetworkSpec, Tensor4};
use striae::rng::sample_stream;

/// Roots of the Pekeris dispersion relation
/// `ρ_w γ_b sin(γ_w D) + ρ_b γ_w cos(γ_w D) = 0`, bracketed per half period
/// of `γ_w D` and refined by plain bisection.
pub fn pekeris_oracle(c_w: f64, c_b: f64, rho_b: f64, depth: f64, freq: f64) -> Vec<f64> {
    let omega = 2.0 * PI * freq;
    let kw = omega / c_w;
    let kb = omega / c_b;
    let g_max = (kw * kw - kb * kb).sqrt();
    let f = |g: f64| {
        let k2 = kw * kw - g * g;
        let gb = (k2 - kb * kb).max(0.0).sqrt();
        gb * (g * depth).sin() + rho_b * g * (g * depth).cos()
    };
    let mut roots = Vec::new();
    let mut m = 1;
    loop {
        let lo = (m as f64 - 0.5) * PI / depth;
        let hi = (m as f64 * PI / depth).min(g_max);
        if lo >= g_max {
            break;
        }
        let (mut a, mut b) = (lo, hi);
        if f(a) * f(b) > 0.0 {
            break;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if f(a) * f(mid) <= 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        let g = 0.5 * (a + b);
        roots.push((kw * kw - g * g).sqrt());
        m += 1;
    }
    roots
}

pub fn max_orthonormality_error(modes: &ModeSet<f64>) -> f64 {
    let mut worst = 0.0f64;
    for m in 0..modes.count() {
        for n in 0..modes.count() {
            let expected = if m == n { 1.0 } else { 0.0 };
            worst = worst.max((modes.inner_product(m, n) - expected).abs());
        }
    }
    worst
}

/// Striations `I = ½ + ½ cos(2π (f − f_c − s (r − r_c)) / period)` whose
/// slope `s = δf/δr = β f_c / r_c` encodes a chosen waveguide invariant.
pub fn striations(beta: f64, rows: usize, cols: usize, r_start: f64, aperture: f64, period: f64) -> StriationImage<f64> {
    let axes = ImageAxes { range_start: r_start, range_end: r_start + aperture, freq_start: 600.0, freq_end: 800.0 };
    let (rc, fc) = (axes.range_center(), axes.freq_center());
    let slope = beta * fc / rc;
    let img = StriationImage::from_fn(rows, cols, axes, |_, _| 0.0);
    StriationImage::from_fn(rows, cols, axes, |i, j| {
        let (r, f) = (img.range_at(i), img.freq_at(j));
        0.5 + 0.5 * (2.0 * PI * (f - fc - slope * (r - rc)) / period).cos()
    })
}

pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
    let mut rng = sample_stream(seed, 0);
    let n = dims.iter().product();
    Tensor4::new(dims, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Worst relative error between analytic and central-difference gradients
/// over every weight and bias of the network.
pub fn check_gradients(spec: NetworkSpec, seed: u64) -> f64 {
    let mut net = Network::<f64>::build(spec, seed).unwrap();
    // Biases off zero so no pre-activation sits on the ReLU kink.
    let mut rng = sample_stream(seed, 1);
    for l in &mut net.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random::<f64>() * 0.2 - 0.1);
    }
    let n = spec.input_size;
    let x = random_tensor([2, 1, n, n], seed + 10);
    let y = random_tensor([2, 1, n, n], seed + 20);
    let (_, grads) = net.gradients(&x, &y).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for li in 0..net.layers.len() {
        for (which, count) in [(0, net.layers[li].weight.len()), (1, net.layers[li].bias.len())] {
            for i in 0..count {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    let p = if which == 0 { &mut probe.layers[li].weight } else { &mut probe.layers[li].bias };
                    p[i] += delta;
                    loss_bce(&probe.forward(&x).unwrap(), &y).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let g = if which == 0 { grads.weight[li][i] } else { grads.bias[li][i] };
                let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-5);
                worst = worst.max(err);
            }
        }
    }
    worst
}

pub fn blob_pairs(n: usize, size: usize) -> Vec<(StriationImage<f32>, StriationImage<f32>)> {
    let axes = ImageAxes { range_start: 0.0, range_end: 1.0, freq_start: 0.0, freq_end: 1.0 };
    (0..n)
        .map(|k| {
            let label = StriationImage::from_fn(size, size, axes, |i, j| if (i + j + k) % 4 < 2 { 1.0 } else { 0.0 });
            let input = label.map(|v| 0.25 + 0.5 * v);
            (input, label)
        })
        .collect()
}

