//! Univariate bases for KAN edge functions.
//!
//! B-splines live on a uniform knot vector that extends the domain by `order`
//! intervals on each side, which gives `grid_size + order` basis functions that
//! sum to one everywhere on the domain. Fourier bases use the lowest `order`
//! harmonics of the domain period.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on active basis functions at one point, which keeps the hot
/// loops allocation-free. B-splines need `order + 1`, Fourier `2 * order + 1`.
pub const MAX_ACTIVE: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    BSpline,
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Interior grid intervals.
    pub grid_size: usize,
    /// Spline degree, or harmonic count for Fourier.
    pub order: usize,
    pub domain: (f64, f64),
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::bspline(5, 3)
    }
}

impl BasisSpec {
    pub fn bspline(grid_size: usize, order: usize) -> Self {
        BasisSpec {
            kind: BasisKind::BSpline,
            grid_size,
            order,
            domain: (-1.0, 1.0),
        }
    }

    pub fn fourier(grid_size: usize, harmonics: usize) -> Self {
        BasisSpec {
            kind: BasisKind::Fourier,
            grid_size,
            order: harmonics,
            domain: (-1.0, 1.0),
        }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::config("basis grid_size must be positive"));
        }
        if self.order == 0 {
            return Err(Error::config("basis order must be positive"));
        }
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::config(format!("invalid basis domain [{a}, {b}]")));
        }
        if self.active() > MAX_ACTIVE {
            return Err(Error::config(format!(
                "basis order {} too large (at most {MAX_ACTIVE} active functions)",
                self.order
            )));
        }
        Ok(())
    }

    pub fn n_basis(&self) -> usize {
        match self.kind {
            BasisKind::BSpline => self.grid_size + self.order,
            BasisKind::Fourier => 2 * self.order + 1,
        }
    }

    /// Number of basis functions that can be non-zero at a single point.
    pub fn active(&self) -> usize {
        match self.kind {
            BasisKind::BSpline => self.order + 1,
            BasisKind::Fourier => 2 * self.order + 1,
        }
    }

    pub fn step(&self) -> f64 {
        (self.domain.1 - self.domain.0) / self.grid_size as f64
    }

    /// Uniform knot vector `t_i = a + (i - k) h`, `i = 0..=G + 2k`.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        let k = self.order as f64;
        (0..=self.grid_size + 2 * self.order)
            .map(|i| self.domain.0 + (i as f64 - k) * h)
            .collect()
    }

    /// Angular frequency of harmonic `m` (1-based) in input units.
    pub fn omega(&self, m: usize) -> f64 {
        m as f64 * 2.0 * PI / (self.domain.1 - self.domain.0)
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.domain.0, self.domain.1)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    /// Evaluates the active basis functions at `x` (clamped into the domain).
    ///
    /// Writes `self.active()` values into `vals` and, when given, their
    /// derivatives into `derivs`; returns the global index of `vals[0]`.
    #[inline]
    pub fn eval_local(&self, x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let x = self.clamp(x);
        match self.kind {
            BasisKind::BSpline => self.bspline_local(x, vals, derivs),
            BasisKind::Fourier => {
                self.fourier_local(x, vals, derivs);
                0
            }
        }
    }

    fn bspline_local(&self, x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let p = self.order;
        let h = self.step();
        let (a, _) = self.domain;
        let s = (((x - a) / h).floor().max(0.0) as usize).min(self.grid_size - 1);
        // knot t_{s+k+j} - x == (s + j) h - (x - a) for uniform knots
        let off = x - a;
        let mut left = [0.0f64; MAX_ACTIVE];
        let mut right = [0.0f64; MAX_ACTIVE];
        let n = &mut vals[..=p];
        n[0] = 1.0;
        let mut lower = [0.0f64; MAX_ACTIVE];
        for j in 1..=p {
            left[j] = off - (s as f64 + 1.0 - j as f64) * h;
            right[j] = (s as f64 + j as f64) * h - off;
            if j == p {
                lower[..p].copy_from_slice(&n[..p]);
            }
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        if let Some(d) = derivs {
            // B'_{m,p} = (B_{m,p-1} - B_{m+1,p-1}) / h on uniform knots; lower[q]
            // holds B_{s+1+q,p-1}.
            let d = &mut d[..=p];
            for r in 0..=p {
                let a_term = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b_term = if r < p { lower[r] } else { 0.0 };
                d[r] = (a_term - b_term) / h;
            }
        }
        s
    }

    fn fourier_local(&self, x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) {
        let (a, b) = self.domain;
        let theta = (x - a) / (b - a) * 2.0 * PI;
        vals[0] = 1.0;
        for m in 1..=self.order {
            let (sn, cs) = (m as f64 * theta).sin_cos();
            vals[2 * m - 1] = cs;
            vals[2 * m] = sn;
        }
        if let Some(d) = derivs {
            d[0] = 0.0;
            for m in 1..=self.order {
                let w = self.omega(m);
                d[2 * m - 1] = -w * vals[2 * m];
                d[2 * m] = w * vals[2 * m - 1];
            }
        }
    }
}

/// Full-length basis vector at `x`.
pub fn basis_eval(basis: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    basis.validate()?;
    if !x.is_finite() {
        return Err(Error::config(format!("basis input {x} is not finite")));
    }
    let mut local = [0.0; MAX_ACTIVE];
    let start = basis.eval_local(x, &mut local, None);
    let mut out = vec![0.0; basis.n_basis()];
    out[start..start + basis.active()].copy_from_slice(&local[..basis.active()]);
    Ok(out)
}

/// Full-length derivative of [`basis_eval`] with respect to `x`.
pub fn basis_deriv(basis: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    basis.validate()?;
    if !x.is_finite() {
        return Err(Error::config(format!("basis input {x} is not finite")));
    }
    let mut local = [0.0; MAX_ACTIVE];
    let mut dlocal = [0.0; MAX_ACTIVE];
    let start = basis.eval_local(x, &mut local, Some(&mut dlocal));
    let mut out = vec![0.0; basis.n_basis()];
    out[start..start + basis.active()].copy_from_slice(&dlocal[..basis.active()]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Cox–de Boor recursion over the full knot vector.
    fn cox_de_boor(knots: &[f64], m: usize, p: usize, x: f64, last: bool) -> f64 {
        if p == 0 {
            let (lo, hi) = (knots[m], knots[m + 1]);
            return if (x >= lo && x < hi) || (last && x == hi && lo < hi) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[m + p] - knots[m];
        if d1 > 0.0 {
            v += (x - knots[m]) / d1 * cox_de_boor(knots, m, p - 1, x, last);
        }
        let d2 = knots[m + p + 1] - knots[m + 1];
        if d2 > 0.0 {
            v += (knots[m + p + 1] - x) / d2 * cox_de_boor(knots, m + 1, p - 1, x, last);
        }
        v
    }

    #[test]
    fn partition_of_unity_at_left_boundary() {
        let b = BasisSpec::bspline(5, 3);
        let v = basis_eval(&b, -1.0).unwrap();
        assert_eq!(v.len(), 8);
        // exact up to the rounding of 1/6 + 2/3 + 1/6
        assert!((v.iter().sum::<f64>() - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn linear_hats_at_midpoint() {
        let b = BasisSpec::bspline(1, 1).with_domain(0.0, 1.0);
        assert_eq!(b.knots(), vec![-1.0, 0.0, 1.0, 2.0]);
        let v = basis_eval(&b, 0.5).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn fourier_midpoint() {
        let b = BasisSpec::fourier(5, 1);
        let v = basis_eval(&b, 0.0).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] + 1.0).abs() < 1e-15);
        assert!(v[2].abs() < 1e-15);

        let d = basis_deriv(&b, 0.0).unwrap();
        let w = b.omega(1);
        assert_eq!(w, PI);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - (-(PI.sin()) * w)).abs() < 1e-12);
        assert!((d[2] - PI.cos() * w).abs() < 1e-12);
    }

    #[test]
    fn matches_recursive_cox_de_boor() {
        for &(g, k) in &[(3, 1), (5, 2), (5, 3), (8, 3), (4, 4)] {
            let b = BasisSpec::bspline(g, k);
            let knots = b.knots();
            for step in 0..=200 {
                let x = -1.0 + step as f64 * 0.01;
                let fast = basis_eval(&b, x).unwrap();
                for (m, &f) in fast.iter().enumerate() {
                    // the right end of the domain belongs to the last interior interval
                    let slow = if x == 1.0 {
                        cox_de_boor(&knots, m, k, x - 1e-15, false)
                    } else {
                        cox_de_boor(&knots, m, k, x, false)
                    };
                    assert!((f - slow).abs() < 1e-10, "g={g} k={k} x={x} m={m}: {f} vs {slow}");
                }
            }
        }
    }

    #[test]
    fn derivative_sums_to_zero_and_matches_fd() {
        let b = BasisSpec::bspline(5, 3);
        for &x in &[-0.93, -0.2, 0.3, 0.77] {
            let d = basis_deriv(&b, x).unwrap();
            assert!(d.iter().sum::<f64>().abs() < 1e-12);
        }
        let h = 1e-5;
        for spec in [BasisSpec::bspline(5, 3), BasisSpec::fourier(5, 3)] {
            let d = basis_deriv(&spec, 0.3).unwrap();
            let p = basis_eval(&spec, 0.3 + h).unwrap();
            let m = basis_eval(&spec, 0.3 - h).unwrap();
            for i in 0..d.len() {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-6, "{:?} idx {i}: {fd} vs {}", spec.kind, d[i]);
            }
        }
    }

    #[test]
    fn clamps_outside_domain() {
        let b = BasisSpec::bspline(5, 3);
        assert_eq!(basis_eval(&b, 3.0).unwrap(), basis_eval(&b, 1.0).unwrap());
        assert_eq!(basis_eval(&b, -7.0).unwrap(), basis_eval(&b, -1.0).unwrap());
        let right = basis_eval(&b, 1.0).unwrap();
        assert!((right.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_spec() {
        assert!(basis_eval(&BasisSpec::bspline(0, 3), 0.0).is_err());
        assert!(basis_eval(&BasisSpec::bspline(5, 0), 0.0).is_err());
        assert!(basis_eval(&BasisSpec::fourier(5, 0), 0.0).is_err());
        assert!(basis_eval(&BasisSpec::bspline(5, 3).with_domain(1.0, 1.0), 0.0).is_err());
        assert!(basis_eval(&BasisSpec::bspline(5, 3), f64::NAN).is_err());
    }
}
