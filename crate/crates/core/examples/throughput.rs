//! Times one full-batch training step and one render of the default network.

use kanpnp::kan::{default_dims, init_network, BasisSpec, GradientBundle};
use std::time::Instant;

fn main() {
    let net = init_network(&default_dims(3), BasisSpec::bspline(5, 3), 0).unwrap();
    let n = 16384;
    let x: Vec<f64> = (0..2 * n).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    let t: Vec<f64> = vec![0.5; 3 * n];
    let mut g = GradientBundle::zeros_like(&net);
    let s = Instant::now();
    let l = net.accumulate_sq_error(&x, &t, 1.0, &mut g).unwrap();
    let dt = s.elapsed().as_secs_f64();
    println!("loss {l:.4} {dt:.3}s for {n} -> {:.2}s per 512x384 step", dt * 196608.0 / n as f64);
    let s = Instant::now();
    let _ = net.eval(&x).unwrap();
    let dt = s.elapsed().as_secs_f64();
    println!("eval {dt:.3}s -> {:.2}s per 512x384 render", dt * 196608.0 / n as f64);
}
