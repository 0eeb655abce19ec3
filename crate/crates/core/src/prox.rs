//! The data-fidelity proximal step
//!
//! ```text
//! z = argmin_z ||A z - y||^2 + (mu / 2) ||z - v||^2
//! ```
//!
//! which solves `(2 A^T A + mu I) z = 2 A^T y + mu v`. Blur and mosaic have
//! closed forms; every other operator goes through conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::{dot, ImageGrid, Shape};
use crate::operators::{mosaic_channel, ForwardOperator, OperatorKind, Psf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    /// Target relative residual `||A x - b|| / ||b||`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            tol: 1e-7,
            max_iters: 200,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::config("CG needs tol > 0 and max_iters >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Relative residual of the returned solution.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive-definite `linop`.
///
/// Stops at `tol` or after `max_iters`; running out of iterations is
/// reported through `converged`, not as an error.
pub fn cg_solve(
    mut linop: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    x0: &[f64],
    cfg: &CgConfig,
) -> Result<CgOutcome> {
    cfg.validate()?;
    if x0.len() != rhs.len() {
        return Err(Error::shape(rhs.len(), x0.len()));
    }
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; rhs.len()],
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut x = x0.to_vec();
    let ax = linop(&x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() / bnorm > cfg.tol && iterations < cfg.max_iters {
        let ap = linop(&p)?;
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > 0.0) {
            return Err(Error::numerical(
                "conjugate gradients",
                format!("curvature p^T A p = {pap} at iteration {iterations}"),
            ));
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
        iterations += 1;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("conjugate gradients", "non-finite iterate"));
    }
    let ax = linop(&x)?;
    let residual = rhs
        .iter()
        .zip(&ax)
        .map(|(b, a)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    Ok(CgOutcome {
        solution: x,
        iterations,
        residual,
        converged: residual <= cfg.tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxMethod {
    Identity,
    Fft,
    Diagonal,
    Cg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub z: ImageGrid,
    pub method: ProxMethod,
    /// CG iterations; zero for closed forms.
    pub iterations: usize,
    /// CG relative residual; zero for closed forms.
    pub cg_residual: f64,
    pub converged: bool,
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::config(format!("penalty mu must be positive, got {mu}")));
    }
    Ok(())
}

/// Solves the fidelity prox for `op`, picking a closed form when one exists.
pub fn prox_data_fidelity(
    op: &ForwardOperator,
    y: &ImageGrid,
    v: &ImageGrid,
    mu: f64,
    cfg: &CgConfig,
) -> Result<ProxOutcome> {
    check_mu(mu)?;
    y.ensure_shape(op.output())?;
    v.ensure_shape(op.input())?;
    let active: Vec<&ForwardOperator> = op
        .factors()
        .into_iter()
        .filter(|f| !matches!(f.kind, OperatorKind::Identity))
        .collect();
    let closed = |z, method| ProxOutcome {
        z,
        method,
        iterations: 0,
        cg_residual: 0.0,
        converged: true,
    };
    match active.as_slice() {
        [] => Ok(closed(
            y.zip_map(v, |yy, vv| scalar_prox(yy, vv, mu))?,
            ProxMethod::Identity,
        )),
        [f] => match &f.kind {
            OperatorKind::Blur { psf } => Ok(closed(deconv_fft_prox(psf, y, v, mu)?, ProxMethod::Fft)),
            OperatorKind::Mosaic => Ok(closed(mosaic_prox(y, v, mu)?, ProxMethod::Diagonal)),
            _ => prox_cg(op, y, v, mu, cfg),
        },
        _ => prox_cg(op, y, v, mu, cfg),
    }
}

/// The general path: CG on the normal equations, warm-started at `v`.
pub fn prox_cg(
    op: &ForwardOperator,
    y: &ImageGrid,
    v: &ImageGrid,
    mu: f64,
    cfg: &CgConfig,
) -> Result<ProxOutcome> {
    check_mu(mu)?;
    let rhs = normal_rhs(op, y, v, mu)?;
    let shape = op.input();
    let out = cg_solve(
        |x| normal_apply(op, &ImageGrid::from_vec(shape, x.to_vec())?, mu).map(ImageGrid::into_vec),
        rhs.data(),
        v.data(),
        cfg,
    )?;
    Ok(ProxOutcome {
        z: ImageGrid::from_vec(shape, out.solution)?,
        method: ProxMethod::Cg,
        iterations: out.iterations,
        cg_residual: out.residual,
        converged: out.converged,
    })
}

/// `(2 A^T A + mu I) z`.
pub fn normal_apply(op: &ForwardOperator, z: &ImageGrid, mu: f64) -> Result<ImageGrid> {
    let ata = op.op_adjoint(&op.op_apply(z)?)?;
    ata.zip_map(z, |a, zz| 2.0 * a + mu * zz)
}

/// `2 A^T y + mu v`.
pub fn normal_rhs(op: &ForwardOperator, y: &ImageGrid, v: &ImageGrid, mu: f64) -> Result<ImageGrid> {
    op.op_adjoint(y)?.zip_map(v, |a, vv| 2.0 * a + mu * vv)
}

/// Relative residual of `z` in the prox normal equations.
pub fn normal_residual(
    op: &ForwardOperator,
    y: &ImageGrid,
    v: &ImageGrid,
    mu: f64,
    z: &ImageGrid,
) -> Result<f64> {
    let rhs = normal_rhs(op, y, v, mu)?;
    let lhs = normal_apply(op, z, mu)?;
    let bn = rhs.norm();
    let r = lhs.sub(&rhs)?.norm();
    Ok(if bn > 0.0 { r / bn } else { r })
}

/// Periodic deconvolution prox, solved per frequency.
pub fn deconv_fft_prox(psf: &Psf, y: &ImageGrid, v: &ImageGrid, mu: f64) -> Result<ImageGrid> {
    check_mu(mu)?;
    let s = y.shape();
    v.ensure_shape(s)?;
    let plan = Fft2::new(s.height, s.width);
    let k = psf.spectrum(s.height, s.width);
    let planes = (0..s.channels)
        .map(|ch| {
            let yh = plan.forward_real(y.channel(ch).data());
            let vh = plan.forward_real(v.channel(ch).data());
            let zh = k
                .iter()
                .zip(yh.iter().zip(&vh))
                .map(|(kk, (a, b))| (2.0 * kk.conj() * a + mu * b) / (2.0 * kk.norm_sqr() + mu))
                .collect();
            ImageGrid::from_vec(Shape::new(s.height, s.width, 1), plan.inverse_real(zh))
        })
        .collect::<Result<Vec<_>>>()?;
    ImageGrid::from_channels(&planes)
}

/// `(2 y + mu v) / (2 + mu)`, written as a correction to `v` so that
/// `y == v` returns `v` exactly.
#[inline]
fn scalar_prox(y: f64, v: f64, mu: f64) -> f64 {
    v + 2.0 * (y - v) / (2.0 + mu)
}

/// Mosaic prox: `A^T A` is a 0/1 diagonal selecting the sampled channel.
fn mosaic_prox(y: &ImageGrid, v: &ImageGrid, mu: f64) -> Result<ImageGrid> {
    Ok(ImageGrid::from_fn(v.shape(), |r, c, ch| {
        let vv = v.get(r, c, ch);
        if mosaic_channel(r, c) == ch {
            scalar_prox(y.get(r, c, 0), vv, mu)
        } else {
            vv
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{compose, make_blur, make_downsample, make_identity, make_mosaic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn rand_img(shape: Shape, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0, 1.0).unwrap();
        ImageGrid::from_vec(shape, (0..shape.len()).map(|_| u.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn cg_small_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let mv = |x: &[f64]| -> Result<Vec<f64>> {
            Ok((0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect())
        };
        let out = cg_solve(mv, &[1.0, 2.0, 3.0], &[0.0; 3], &CgConfig::default()).unwrap();
        // Cramer's rule on the leading 2x2 block
        let want = [(3.0 - 2.0) / 11.0, (8.0 - 1.0) / 11.0, 1.5];
        for (x, w) in out.solution.iter().zip(want) {
            assert!((x - w).abs() < 1e-8);
        }
        assert!(out.converged);
    }

    #[test]
    fn cg_trivial_cases() {
        let id = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.to_vec()) };
        let out = cg_solve(id, &[1.0, -2.0], &[0.0, 0.0], &CgConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.solution, vec![1.0, -2.0]);
        let out = cg_solve(id, &[0.0, 0.0], &[5.0, 5.0], &CgConfig::default()).unwrap();
        assert_eq!(out.solution, vec![0.0, 0.0]);
        let bad = CgConfig {
            tol: 0.0,
            max_iters: 3,
        };
        assert!(cg_solve(id, &[1.0], &[0.0], &bad).is_err());
    }

    #[test]
    fn identity_prox_closed_form() {
        let s = Shape::new(4, 4, 3);
        let op = make_identity(s).unwrap();
        let (y, v) = (rand_img(s, 1), rand_img(s, 2));
        let mu = 0.7;
        let z = prox_data_fidelity(&op, &y, &v, mu, &CgConfig::default()).unwrap().z;
        for k in 0..s.len() {
            let want = (2.0 * y.data()[k] + mu * v.data()[k]) / (2.0 + mu);
            assert!((z.data()[k] - want).abs() < 1e-15);
        }
        let same = prox_data_fidelity(&op, &v, &v, mu, &CgConfig::default()).unwrap().z;
        for (a, b) in same.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(prox_data_fidelity(&op, &y, &v, 0.0, &CgConfig::default()).is_err());
    }

    #[test]
    fn every_path_solves_the_normal_equations() {
        let psf = Psf::gaussian(5, 1.0).unwrap();
        let ops = vec![
            (make_blur(psf.clone(), 16, 16, 3).unwrap(), ProxMethod::Fft),
            (make_mosaic(16, 16).unwrap(), ProxMethod::Diagonal),
            (make_downsample(16, 16, 2, 3).unwrap(), ProxMethod::Cg),
            (
                compose(make_mosaic(16, 16).unwrap(), make_blur(psf, 16, 16, 3).unwrap()).unwrap(),
                ProxMethod::Cg,
            ),
        ];
        for (i, (op, method)) in ops.iter().enumerate() {
            let y = rand_img(op.output(), 10 + i as u64);
            let v = rand_img(op.input(), 20 + i as u64);
            let out = prox_data_fidelity(op, &y, &v, 0.5, &CgConfig::default()).unwrap();
            assert_eq!(out.method, *method);
            assert!(normal_residual(op, &y, &v, 0.5, &out.z).unwrap() < 1e-6);
        }
    }

    #[test]
    fn fft_and_cg_agree() {
        let op = make_blur(Psf::gaussian(5, 1.0).unwrap(), 16, 16, 1).unwrap();
        let y = rand_img(op.output(), 3);
        let v = rand_img(op.input(), 4);
        let a = prox_data_fidelity(&op, &y, &v, 0.3, &CgConfig::default()).unwrap().z;
        let b = prox_cg(&op, &y, &v, 0.3, &CgConfig::default()).unwrap().z;
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn prox_distance_shrinks_with_mu() {
        let op = make_downsample(16, 16, 2, 1).unwrap();
        let y = rand_img(op.output(), 5);
        let v = rand_img(op.input(), 6);
        let mut last = f64::INFINITY;
        for mu in [0.01, 0.1, 1.0, 10.0, 100.0, 1e8] {
            let z = prox_data_fidelity(&op, &y, &v, mu, &CgConfig::default()).unwrap().z;
            let d = z.sub(&v).unwrap().norm();
            assert!(d <= last + 1e-9);
            last = d;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn identity_psf_reduces_to_scalar_prox() {
        let s = Shape::new(6, 6, 1);
        let (y, v) = (rand_img(s, 7), rand_img(s, 8));
        let z = deconv_fft_prox(&Psf::identity(), &y, &v, 2.0).unwrap();
        for k in 0..s.len() {
            assert!((z.data()[k] - (2.0 * y.data()[k] + 2.0 * v.data()[k]) / 4.0).abs() < 1e-14);
        }
        assert!(deconv_fft_prox(&Psf::identity(), &y, &v, 0.0).is_err());
    }
}
