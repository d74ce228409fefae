//! Analytic VAE gradients against central finite differences.

#![allow(clippy::needless_range_loop)]

use latmorph_core::vae::{Architecture, NetShape, Vae};
use latmorph_core::CELL_PIXELS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
/// Retry step for entries whose ±STEP interval crosses a leaky-ReLU kink.
const KINK_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared on an absolute scale.
const FLOOR: f64 = 1e-6;
const BATCH: usize = 3;

fn reduced() -> NetShape {
    NetShape {
        channels: [2, 3, 3, 4],
        latent_dim: 4,
        stiffness_embed: 3,
    }
}

fn central(
    net: &mut Vae<f64>,
    k: usize,
    i: usize,
    h: f64,
    eval: &dyn Fn(&mut Vae<f64>) -> f64,
) -> f64 {
    let original = net.params_mut()[k].value[i];
    net.params_mut()[k].value[i] = original + h;
    let up = eval(net);
    net.params_mut()[k].value[i] = original - h;
    let down = eval(net);
    net.params_mut()[k].value[i] = original;
    (up - down) / (2.0 * h)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn check(arch: Architecture, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Vae::<f64>::new(arch, reduced(), seed);
    let images: Vec<f64> = (0..BATCH * CELL_PIXELS)
        .map(|_| rng.random::<f64>())
        .collect();
    let stiffness: Vec<f64> = (0..BATCH * 9).map(|_| rng.random::<f64>()).collect();
    let noise: Vec<f64> = (0..BATCH * 4)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let stiff = (arch == Architecture::Hybrid).then_some(stiffness.as_slice());
    let beta_norm = 0.32;

    net.forward_loss(&images, stiff, Some(&noise), beta_norm, BATCH, true)
        .unwrap();
    let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.clone()).collect();

    let eval = |net: &mut Vae<f64>| {
        net.forward_loss(&images, stiff, Some(&noise), beta_norm, BATCH, false)
            .unwrap()
            .total
    };
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks) = (0usize, 0usize);
    let n_params = analytic.len();
    for k in 0..n_params {
        let len = analytic[k].len();
        // every entry of small tensors, a strided sample of large ones
        let stride = (len / 40).max(1);
        for i in (0..len).step_by(stride) {
            let a = analytic[k][i];
            let mut numeric = central(&mut net, k, i, STEP, &eval);
            let mut rel = rel_err(a, numeric);
            if rel >= REL_TOL {
                kinks += 1;
                numeric = central(&mut net, k, i, KINK_STEP, &eval);
                rel = rel_err(a, numeric);
            }
            assert!(
                rel < REL_TOL,
                "{arch}: param tensor {k} entry {i}: analytic {a:e} numeric {numeric:e} (rel {rel:e})"
            );
            checked += 1;
            worst = worst.max(rel);
        }
    }
    println!("{arch}: {checked} entries checked, {kinks} retried at the kink step");
    assert!(
        kinks * 20 <= checked,
        "too many kink retries: {kinks} of {checked}"
    );
    worst
}

#[test]
fn geometry_gradients_match_finite_differences() {
    let worst = check(Architecture::Geometry, 11);
    println!("geometry worst relative error {worst:e}");
}

#[test]
fn hybrid_gradients_match_finite_differences() {
    let worst = check(Architecture::Hybrid, 12);
    println!("hybrid worst relative error {worst:e}");
}
