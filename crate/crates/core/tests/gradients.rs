//! Backpropagated gradients against central finite differences.

use boost_hdp::mlp::{Activation, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error with a small absolute floor so entries that are zero up to
/// roundoff do not dominate.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Richardson-extrapolated central difference: O(h⁴) truncation.
fn fd(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    let d2 = (f(h / 2.0) - f(-h / 2.0)) / h;
    (4.0 * d2 - d1) / 3.0
}

fn random_net(rng: &mut ChaCha8Rng) -> (Mlp, Vec<f64>, Vec<f64>) {
    let depth = rng.random_range(2..=4);
    let sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    let out = if rng.random_bool(0.5) { Activation::Linear } else { Activation::Sigmoid };
    let mut net = Mlp::init(&sizes, out, rng.random()).unwrap();
    let (_, biases) = net.params_mut();
    for b in biases.iter_mut().flatten() {
        *b = rng.random_range(-0.5..0.5);
    }
    let x = (0..sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
    let c = (0..sizes[depth - 1]).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x, c)
}

fn loss(net: &Mlp, x: &[f64], c: &[f64]) -> f64 {
    net.eval(x).unwrap().iter().zip(c).map(|(y, c)| y * c).sum()
}

#[test]
fn weight_and_input_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (net, x, c) = random_net(&mut rng);
        let (_, cache) = net.forward(&x).unwrap();
        let (gw, gx) = net.grad_both(&cache, &c).unwrap();
        assert_eq!(gw.values().count(), net.num_params());

        let analytic: Vec<f64> = gw.values().copied().collect();
        for (k, a) in analytic.iter().enumerate() {
            let mut f = |d: f64| {
                let mut n = net.clone();
                let (w, b) = n.params_mut();
                let p = w.iter_mut().chain(b.iter_mut()).flatten().nth(k).unwrap();
                *p += d;
                loss(&n, &x, &c)
            };
            let e = rel_err(*a, fd(&mut f, 1e-3));
            worst = worst.max(e);
        }
        for (k, a) in gx.iter().enumerate() {
            let mut f = |d: f64| {
                let mut xp = x.clone();
                xp[k] += d;
                loss(&net, &xp, &c)
            };
            worst = worst.max(rel_err(*a, fd(&mut f, 1e-3)));
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn grad_input_equals_grad_both_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (net, x, c) = random_net(&mut rng);
        let (_, cache) = net.forward(&x).unwrap();
        let (gw, gx) = net.grad_both(&cache, &c).unwrap();
        assert_eq!(gx, net.grad_input(&cache, &c).unwrap());
        assert_eq!(gw, net.grad_weights(&cache, &c).unwrap());
    }
}
