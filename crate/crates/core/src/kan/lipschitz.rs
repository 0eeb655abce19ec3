//! Lipschitz constants of KAN networks.
//!
//! The certified bound works edge by edge: each edge function gets an upper
//! bound on `sup |phi'|`, a layer gets `max_j sum_i L_ji`, and the network gets
//! the product over layers. The per-layer quantity bounds the layer map in the
//! max-norm (`|Phi(x)_j - Phi(y)_j| <= sum_i L_ji |x_i - y_i|`), so the sampled
//! estimate is measured in the same norm.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::basis::BasisKind;
use super::network::{silu_deriv, KanLayer, KanNetwork};
use crate::error::{Error, Result};

/// `sup_x |silu'(x)|`, attained where `x tanh(x/2) = 2`.
pub fn silu_deriv_sup() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| {
        // Newton on g(x) = x tanh(x/2) - 2 from x = 2.4
        let mut x: f64 = 2.4;
        for _ in 0..50 {
            let t = (x / 2.0).tanh();
            let g = x * t - 2.0;
            let dg = t + x * 0.5 * (1.0 - t * t);
            x -= g / dg;
        }
        // silu' has its global max at +x and min (about -0.0998) at -x
        let v = silu_deriv(x).abs().max(silu_deriv(-x).abs());
        v * (1.0 + 1e-12)
    })
}

/// Upper bound on `sup |d/dx basis branch|` of edge `(j, i)`.
pub fn spline_branch_bound(layer: &KanLayer, j: usize, i: usize) -> f64 {
    let c = layer.edge_coeffs(j, i);
    let basis = &layer.basis;
    match basis.kind {
        BasisKind::BSpline => {
            // derivative spline coefficients k (c_{m+1} - c_m) / (t_{m+k+1} - t_{m+1}),
            // which is (c_{m+1} - c_m) / h on uniform knots
            let h = basis.step();
            c.windows(2)
                .map(|w| ((w[1] - w[0]) / h).abs())
                .fold(0.0, f64::max)
        }
        BasisKind::Fourier => (1..=basis.order)
            .map(|m| basis.omega(m) * (c[2 * m - 1].abs() + c[2 * m].abs()))
            .sum(),
    }
}

/// Upper bound on `sup |phi_ji'|` including the base branch.
pub fn edge_bound(layer: &KanLayer, j: usize, i: usize) -> f64 {
    let base = layer.base_weights[j * layer.in_dim + i].abs() * silu_deriv_sup();
    spline_branch_bound(layer, j, i) + base
}

/// `max_j sum_i L_ji` for one layer.
pub fn layer_bound(layer: &KanLayer) -> f64 {
    (0..layer.out_dim)
        .map(|j| (0..layer.in_dim).map(|i| edge_bound(layer, j, i)).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn lipschitz_upper_bound(net: &KanNetwork) -> Result<f64> {
    net.validate()?;
    Ok(net.layers.iter().map(layer_bound).product())
}

/// Largest sampled ratio `||H(x) - H(y)||_inf / ||x - y||_inf` over `n_pairs`
/// pairs in the input domain.
///
/// Half the pairs are independent uniform draws; the other half are local
/// perturbations, which probe derivative-scale behaviour.
pub fn lipschitz_empirical(net: &KanNetwork, n_pairs: usize, seed: u64) -> Result<f64> {
    net.validate()?;
    if n_pairs == 0 {
        return Err(Error::config("n_pairs must be at least 1"));
    }
    let (lo, hi) = net.layers[0].basis.domain;
    let d = net.in_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n_pairs * d);
    let mut ys = Vec::with_capacity(n_pairs * d);
    for p in 0..n_pairs {
        for _ in 0..d {
            let x = rng.random_range(lo..=hi);
            let y = if p % 2 == 0 {
                rng.random_range(lo..=hi)
            } else {
                let eps = (hi - lo) * 1e-3;
                (x + rng.random_range(-eps..=eps)).clamp(lo, hi)
            };
            xs.push(x);
            ys.push(y);
        }
    }
    let hx = net.eval(&xs)?;
    let hy = net.eval(&ys)?;
    let od = net.out_dim();
    let mut best: f64 = 0.0;
    for p in 0..n_pairs {
        let dx = (0..d)
            .map(|k| (xs[p * d + k] - ys[p * d + k]).abs())
            .fold(0.0, f64::max);
        if dx == 0.0 {
            continue;
        }
        let dh = (0..od)
            .map(|k| (hx[p * od + k] - hy[p * od + k]).abs())
            .fold(0.0, f64::max);
        best = best.max(dh / dx);
    }
    Ok(best)
}
