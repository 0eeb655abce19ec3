//! KAN layers and networks.
//!
//! Every edge `(j, i)` of a layer carries the function
//!
//! ```text
//! phi_ji(x) = base_ji * silu(x) + sum_m coeff_jim * basis_m(clamp(x))
//! ```
//!
//! and output `j` sums its incoming edges. The basis branch sees the input
//! clamped to the basis domain; the base branch sees the raw input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::basis::{BasisSpec, MAX_ACTIVE};
use crate::error::{Error, Result};

/// Default layer widths between the 2-D coordinate input and the channel output.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 32, 16];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid-weighted linear unit, the fixed base activation.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub basis: BasisSpec,
    /// `[out_dim, in_dim, n_basis]`, row-major.
    pub spline_coeffs: Vec<f64>,
    /// `[out_dim, in_dim]`, row-major.
    pub base_weights: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, basis: BasisSpec) -> Self {
        KanLayer {
            in_dim,
            out_dim,
            basis,
            spline_coeffs: vec![0.0; out_dim * in_dim * basis.n_basis()],
            base_weights: vec![0.0; out_dim * in_dim],
        }
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    #[inline]
    pub fn coeff_index(&self, j: usize, i: usize, m: usize) -> usize {
        (j * self.in_dim + i) * self.n_basis() + m
    }

    /// Coefficients of edge `(j, i)`.
    pub fn edge_coeffs(&self, j: usize, i: usize) -> &[f64] {
        let nb = self.n_basis();
        let start = (j * self.in_dim + i) * nb;
        &self.spline_coeffs[start..start + nb]
    }

    pub fn edge_coeffs_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let nb = self.n_basis();
        let start = (j * self.in_dim + i) * nb;
        &mut self.spline_coeffs[start..start + nb]
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        let want = self.out_dim * self.in_dim * self.n_basis();
        if self.spline_coeffs.len() != want {
            return Err(Error::shape(want, self.spline_coeffs.len()));
        }
        if self.base_weights.len() != self.out_dim * self.in_dim {
            return Err(Error::shape(self.out_dim * self.in_dim, self.base_weights.len()));
        }
        if !self
            .spline_coeffs
            .iter()
            .chain(&self.base_weights)
            .all(|v| v.is_finite())
        {
            return Err(Error::config("layer coefficients must be finite"));
        }
        Ok(())
    }

    /// Evaluates the scalar edge function `phi_ji` at `x`.
    pub fn edge_eval(&self, j: usize, i: usize, x: f64) -> f64 {
        let mut vals = [0.0; MAX_ACTIVE];
        let start = self.basis.eval_local(x, &mut vals, None);
        let c = self.edge_coeffs(j, i);
        let spline: f64 = (0..self.basis.active()).map(|r| c[start + r] * vals[r]).sum();
        self.base_weights[j * self.in_dim + i] * silu(x) + spline
    }

    /// Width of one input's block in the dense feature row: the base
    /// activation followed by every basis function.
    fn block(&self) -> usize {
        self.n_basis() + 1
    }

    /// Base weights and coefficients interleaved as `[out, in * block]`, the
    /// right-hand operand of the feature GEMM.
    fn packed_weights(&self) -> Vec<f64> {
        let nb = self.n_basis();
        let q = self.block();
        let mut w = vec![0.0; self.out_dim * self.in_dim * q];
        for j in 0..self.out_dim {
            for i in 0..self.in_dim {
                let dst = &mut w[(j * self.in_dim + i) * q..(j * self.in_dim + i + 1) * q];
                dst[0] = self.base_weights[j * self.in_dim + i];
                dst[1..].copy_from_slice(&self.spline_coeffs[(j * self.in_dim + i) * nb..][..nb]);
            }
        }
        w
    }

    /// Dense features for `n` samples: per input, `[silu(x), basis_0(x), ...]`.
    /// With `dfeats`, also writes their input derivatives (the basis part is
    /// zero where the input was clamped).
    fn features(&self, x: &[f64], n: usize, feats: &mut [f64], mut dfeats: Option<&mut [f64]>) {
        let q = self.block();
        let act = self.basis.active();
        let row = self.in_dim * q;
        let mut vals = [0.0; MAX_ACTIVE];
        let mut ders = [0.0; MAX_ACTIVE];
        feats[..n * row].iter_mut().for_each(|v| *v = 0.0);
        if let Some(d) = dfeats.as_deref_mut() {
            d[..n * row].iter_mut().for_each(|v| *v = 0.0);
        }
        for s in 0..n {
            for i in 0..self.in_dim {
                let xi = x[s * self.in_dim + i];
                let off = s * row + i * q;
                let start = match dfeats.as_deref_mut() {
                    Some(d) => {
                        let start = self.basis.eval_local(xi, &mut vals, Some(&mut ders));
                        d[off] = silu_deriv(xi);
                        if self.basis.contains(xi) {
                            d[off + 1 + start..off + 1 + start + act].copy_from_slice(&ders[..act]);
                        }
                        start
                    }
                    None => self.basis.eval_local(xi, &mut vals, None),
                };
                feats[off] = silu(xi);
                feats[off + 1 + start..off + 1 + start + act].copy_from_slice(&vals[..act]);
            }
        }
    }
}

/// `C = A * B + beta * C` over strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanNetwork {
    pub layers: Vec<KanLayer>,
    pub seed: u64,
}

/// Per-layer inputs recorded by [`KanNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    batch: usize,
    /// `inputs[l]` is the `[batch, dims[l]]` input to layer `l`.
    inputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub spline_coeffs: Vec<f64>,
    pub base_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    /// `[batch, in_dim]`, empty when input gradients were not requested.
    pub input_grad: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(net: &KanNetwork) -> Self {
        GradientBundle {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    spline_coeffs: vec![0.0; l.spline_coeffs.len()],
                    base_weights: vec![0.0; l.base_weights.len()],
                })
                .collect(),
            input_grad: Vec::new(),
        }
    }

    /// Parameter gradients in the order of [`KanNetwork::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.spline_coeffs.as_slice(), l.base_weights.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.spline_coeffs.as_mut_slice(), l.base_weights.as_mut_slice()])
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
        self.input_grad.iter_mut().for_each(|v| *v *= s);
    }
}

/// Initializes a network with the given layer widths.
///
/// Spline coefficients are drawn from `N(0, (0.1 / sqrt(n_basis))^2)` and base
/// weights from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, both from a ChaCha8
/// stream seeded with `seed`.
pub fn init_network(dims: &[usize], basis: BasisSpec, seed: u64) -> Result<KanNetwork> {
    if dims.len() < 2 {
        return Err(Error::config("network needs at least input and output dims"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config("network dims must be positive"));
    }
    basis.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = basis.n_basis();
    let coeff_dist = Normal::new(0.0, 0.1 / (nb as f64).sqrt()).expect("finite std");
    let layers = dims
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let mut layer = KanLayer::zeros(n_in, n_out, basis);
            for c in layer.spline_coeffs.iter_mut() {
                *c = coeff_dist.sample(&mut rng);
            }
            let bound = 1.0 / (n_in as f64).sqrt();
            let base_dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in layer.base_weights.iter_mut() {
                *w = base_dist.sample(&mut rng);
            }
            layer
        })
        .collect();
    Ok(KanNetwork { layers, seed })
}

/// Default coordinate-network widths `[2, 128, 32, 16, channels]`.
pub fn default_dims(channels: usize) -> Vec<usize> {
    let mut d = vec![2];
    d.extend_from_slice(&DEFAULT_HIDDEN);
    d.push(channels);
    d
}

impl KanNetwork {
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        if let Some(last) = self.layers.last() {
            d.push(last.out_dim);
        }
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::shape(
                    format!("layer input dim {}", w[0].out_dim),
                    w[1].in_dim,
                ));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spline_coeffs.len() + l.base_weights.len())
            .sum()
    }

    /// Parameter tensors in a fixed order: per layer, coefficients then base weights.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.spline_coeffs.as_mut_slice(), l.base_weights.as_mut_slice()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.spline_coeffs.as_slice(), l.base_weights.as_slice()])
            .collect()
    }

    /// FNV-1a over the parameter bits; ties a [`ForwardCache`] to the exact
    /// parameters it was produced with.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for l in &self.layers {
            mix(l.in_dim as u64);
            mix(l.out_dim as u64);
            for v in l.spline_coeffs.iter().chain(&l.base_weights) {
                mix(v.to_bits());
            }
        }
        h
    }

    fn check_batch(&self, batch: &[f64]) -> Result<usize> {
        let d = self.in_dim();
        if d == 0 || batch.len() % d != 0 {
            return Err(Error::shape(format!("[N, {d}]"), format!("{} values", batch.len())));
        }
        Ok(batch.len() / d)
    }

    /// Evaluates the network on `[N, in_dim]` inputs without recording a cache.
    pub fn eval(&self, batch: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(batch)?;
        let (d_in, d_out) = (self.in_dim(), self.out_dim());
        let mut out = vec![0.0; n * d_out];
        let mut ws = Workspace::new(self);
        for lo in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - lo);
            ws.acts[0][..m * d_in].copy_from_slice(&batch[lo * d_in..(lo + m) * d_in]);
            self.forward_chunk(m, &mut ws, false);
            out[lo * d_out..(lo + m) * d_out].copy_from_slice(&ws.acts[self.layers.len()][..m * d_out]);
        }
        Ok(out)
    }

    /// Forward pass over `[N, in_dim]`, recording every layer's input.
    pub fn forward(&self, batch: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let n = self.check_batch(batch)?;
        let dims = self.dims();
        let nl = self.layers.len();
        let mut inputs: Vec<Vec<f64>> = dims[..nl].iter().map(|&d| Vec::with_capacity(n * d)).collect();
        let d_out = self.out_dim();
        let mut out = vec![0.0; n * d_out];
        let mut ws = Workspace::new(self);
        for lo in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - lo);
            ws.acts[0][..m * dims[0]].copy_from_slice(&batch[lo * dims[0]..(lo + m) * dims[0]]);
            self.forward_chunk(m, &mut ws, false);
            for (l, input) in inputs.iter_mut().enumerate() {
                input.extend_from_slice(&ws.acts[l][..m * dims[l]]);
            }
            out[lo * d_out..(lo + m) * d_out].copy_from_slice(&ws.acts[nl][..m * d_out]);
        }
        Ok((
            out,
            ForwardCache {
                fingerprint: self.fingerprint(),
                batch: n,
                inputs,
            },
        ))
    }

    /// Exact gradients of `<outputs, out_grad>` with respect to every
    /// parameter and to the inputs.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<GradientBundle> {
        if cache.fingerprint != self.fingerprint() || cache.inputs.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache was produced by a different network state".into(),
            ));
        }
        let n = cache.batch;
        let d_out = self.out_dim();
        if out_grad.len() != n * d_out {
            return Err(Error::shape(n * d_out, out_grad.len()));
        }
        let dims = self.dims();
        let nl = self.layers.len();
        let mut ws = Workspace::new(self);
        let mut input_grad = vec![0.0; n * dims[0]];
        for lo in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - lo);
            for l in 0..nl {
                let d = dims[l];
                ws.acts[l][..m * d].copy_from_slice(&cache.inputs[l][lo * d..(lo + m) * d]);
            }
            for (l, layer) in self.layers.iter().enumerate() {
                layer.features(&ws.acts[l], m, &mut ws.feats[l], Some(&mut ws.dfeats[l]));
            }
            ws.grads[nl][..m * d_out].copy_from_slice(&out_grad[lo * d_out..(lo + m) * d_out]);
            self.backward_chunk(m, &mut ws, true);
            input_grad[lo * dims[0]..(lo + m) * dims[0]].copy_from_slice(&ws.grads[0][..m * dims[0]]);
        }
        let mut grads = ws.take_grads(self);
        grads.input_grad = input_grad;
        Ok(grads)
    }

    /// Fused forward/backward for a squared-error objective over a batch.
    ///
    /// Returns the sum over samples of `weight * ||f(x) - target||^2` and adds
    /// its parameter gradient into `grads`. Samples are processed in order, so
    /// the reduction is deterministic.
    pub fn accumulate_sq_error(
        &self,
        batch: &[f64],
        targets: &[f64],
        weight: f64,
        grads: &mut GradientBundle,
    ) -> Result<f64> {
        let n = self.check_batch(batch)?;
        let (d_in, d_out) = (self.in_dim(), self.out_dim());
        if targets.len() != n * d_out {
            return Err(Error::shape(n * d_out, targets.len()));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape(self.layers.len(), grads.layers.len()));
        }
        let nl = self.layers.len();
        let mut ws = Workspace::new(self);
        let mut total = 0.0;
        for lo in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - lo);
            ws.acts[0][..m * d_in].copy_from_slice(&batch[lo * d_in..(lo + m) * d_in]);
            self.forward_chunk(m, &mut ws, true);
            let t = &targets[lo * d_out..(lo + m) * d_out];
            let (out, g) = (&ws.acts[nl], &mut ws.grads[nl]);
            for idx in 0..m * d_out {
                let r = out[idx] - t[idx];
                total += weight * r * r;
                g[idx] = 2.0 * weight * r;
            }
            self.backward_chunk(m, &mut ws, false);
        }
        ws.add_grads_into(self, grads);
        Ok(total)
    }

    /// Runs `m` samples from `ws.acts[0]` through every layer, leaving features
    /// (and their derivatives when `with_derivs`) for [`Self::backward_chunk`].
    fn forward_chunk(&self, m: usize, ws: &mut Workspace, with_derivs: bool) {
        for (l, layer) in self.layers.iter().enumerate() {
            let k = layer.in_dim * layer.block();
            let d = if with_derivs { Some(&mut ws.dfeats[l][..]) } else { None };
            layer.features(&ws.acts[l], m, &mut ws.feats[l], d);
            // acts[l+1] = F * W^T
            gemm(
                m,
                k,
                layer.out_dim,
                &ws.feats[l],
                (k, 1),
                &ws.packed[l],
                (1, k),
                0.0,
                &mut ws.acts[l + 1],
                (layer.out_dim, 1),
            );
        }
    }

    /// Backpropagates `ws.grads[L]` for `m` samples, accumulating packed
    /// weight gradients and, when asked, the input gradient into `ws.grads[0]`.
    fn backward_chunk(&self, m: usize, ws: &mut Workspace, want_input_grad: bool) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            let q = layer.block();
            let k = n_in * q;
            // gW += g^T F
            gemm(
                n_out,
                m,
                k,
                &ws.grads[l + 1],
                (1, n_out),
                &ws.feats[l],
                (k, 1),
                1.0,
                &mut ws.gpacked[l],
                (k, 1),
            );
            if l == 0 && !want_input_grad {
                continue;
            }
            // gF = g W, then contract each block with its feature derivatives
            gemm(
                m,
                n_out,
                k,
                &ws.grads[l + 1],
                (n_out, 1),
                &ws.packed[l],
                (k, 1),
                0.0,
                &mut ws.gfeat,
                (k, 1),
            );
            let g_in = &mut ws.grads[l];
            let df = &ws.dfeats[l];
            for s in 0..m {
                for i in 0..n_in {
                    let off = s * k + i * q;
                    g_in[s * n_in + i] = ws.gfeat[off..off + q]
                        .iter()
                        .zip(&df[off..off + q])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
        }
    }
}

/// Samples per GEMM block.
const CHUNK: usize = 256;

/// Chunk-sized activation, feature and gradient buffers plus the packed
/// weights and their running gradients.
struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    feats: Vec<Vec<f64>>,
    dfeats: Vec<Vec<f64>>,
    gfeat: Vec<f64>,
    packed: Vec<Vec<f64>>,
    gpacked: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(net: &KanNetwork) -> Self {
        let dims = net.dims();
        let fw: Vec<usize> = net.layers.iter().map(|l| l.in_dim * l.block()).collect();
        let max_fw = fw.iter().copied().max().unwrap_or(0);
        Workspace {
            acts: dims.iter().map(|&d| vec![0.0; CHUNK * d]).collect(),
            grads: dims.iter().map(|&d| vec![0.0; CHUNK * d]).collect(),
            feats: fw.iter().map(|&k| vec![0.0; CHUNK * k]).collect(),
            dfeats: fw.iter().map(|&k| vec![0.0; CHUNK * k]).collect(),
            gfeat: vec![0.0; CHUNK * max_fw],
            packed: net.layers.iter().map(|l| l.packed_weights()).collect(),
            gpacked: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.out_dim * l.in_dim * l.block()])
                .collect(),
        }
    }

    fn add_grads_into(&self, net: &KanNetwork, grads: &mut GradientBundle) {
        for ((layer, gp), lg) in net.layers.iter().zip(&self.gpacked).zip(&mut grads.layers) {
            let nb = layer.n_basis();
            let q = layer.block();
            for e in 0..layer.out_dim * layer.in_dim {
                lg.base_weights[e] += gp[e * q];
                for mm in 0..nb {
                    lg.spline_coeffs[e * nb + mm] += gp[e * q + 1 + mm];
                }
            }
        }
    }

    fn take_grads(&self, net: &KanNetwork) -> GradientBundle {
        let mut g = GradientBundle::zeros_like(net);
        self.add_grads_into(net, &mut g);
        g
    }
}
