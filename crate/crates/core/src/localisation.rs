//! Gaspari–Cohn localisation matrices, domain-localisation weights and the
//! positivity bound for tapering vectors.
//!
//! An infinite radius disables localisation exactly (every taper equals 1).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numkit::{gc_unchecked, psd_eig};

/// Spatial layout of the state variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Periodic ring of `n` sites.
    Ring { n: usize },
    /// Layer-major stack of `n_v` rings with `n_h` sites each.
    Stacked { n_v: usize, n_h: usize },
}

impl Geometry {
    pub fn n_x(&self) -> usize {
        match *self {
            Geometry::Ring { n } => n,
            Geometry::Stacked { n_v, n_h } => n_v * n_h,
        }
    }

    /// Circular distance on a ring; vertical (layer) distance on a stack.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match *self {
            Geometry::Ring { n } => ring_distance(a, b, n) as f64,
            Geometry::Stacked { n_h, .. } => (a / n_h).abs_diff(b / n_h) as f64,
        }
    }
}

/// `min(|a - b|, n - |a - b|)`.
pub fn ring_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

/// `GC(2d/r)`; exactly 1 for an infinite radius.
pub fn taper(d: f64, r: f64) -> f64 {
    if r.is_infinite() {
        1.0
    } else {
        gc_unchecked(2.0 * d / r)
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("localisation radius must be positive, got {r}")))
    }
}

/// `[ρ_xx]_{mn} = GC(2 d(m, n) / r)`.
pub fn rho_xx(geom: Geometry, r: f64) -> Result<DMatrix<f64>> {
    check_radius(r)?;
    let n = geom.n_x();
    Ok(DMatrix::from_fn(n, n, |i, j| taper(geom.distance(i, j), r)))
}

/// Cross-localisation between local parameters placed at grid indices
/// `q_sites` and the state.
pub fn rho_qx(geom: Geometry, q_sites: &[usize], r: f64) -> Result<DMatrix<f64>> {
    check_radius(r)?;
    Ok(DMatrix::from_fn(q_sites.len(), geom.n_x(), |m, n| {
        taper(geom.distance(q_sites[m], n), r)
    }))
}

/// Divides by the largest entry; returns the normalised matrix and that
/// entry, which the caller is expected to absorb into `ζ_q`.
pub fn normalise_max(rho: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let m = rho.max();
    if m > 0.0 {
        (rho / m, m)
    } else {
        (rho.clone(), 1.0)
    }
}

/// Domain-localisation weights `w_p = √GC(2 d(p, n) / r)` of the observations
/// located at `obs_sites` for the analysis at `site`, so that
/// `ρ_n ∘ R⁻¹ = diag(w) R⁻¹ diag(w)` for the product-form `ρ_n`.
pub fn dl_weights(geom: Geometry, site: usize, obs_sites: &[usize], r: f64) -> Result<DVector<f64>> {
    check_radius(r)?;
    Ok(DVector::from_iterator(
        obs_sites.len(),
        obs_sites.iter().map(|&p| taper(geom.distance(p, site), r).sqrt()),
    ))
}

/// Product-form domain-localisation matrix `[ρ_n]_{pq} = √(GC_p GC_q)`.
pub fn dl_matrix(weights: &DVector<f64>) -> DMatrix<f64> {
    weights * weights.transpose()
}

/// Norm bound on the tapering vector `ζ_p` under which the composed
/// localisation matrix `[ρ_xx, 1ζᵀ; ζ1ᵀ, ρ_pp]` is positive semi-definite:
/// `√(λ_min(ρ_pp) λ_min(ρ_xx) / N_x)`.
pub fn psd_bound(rho_xx: &DMatrix<f64>, rho_pp: &DMatrix<f64>) -> Result<f64> {
    let lx = psd_eig(rho_xx)?.eigenvalues.min().max(0.0);
    let lp = psd_eig(rho_pp)?.eigenvalues.min().max(0.0);
    Ok((lp * lx / rho_xx.nrows() as f64).sqrt())
}

/// `[ρ_xx, 1ζᵀ; ζ1ᵀ, ρ_pp]` with `ρ_px = ζ1ᵀ`.
pub fn compose_rho(rho_xx: &DMatrix<f64>, rho_pp: &DMatrix<f64>, zeta: &[f64]) -> DMatrix<f64> {
    let (nx, np) = (rho_xx.nrows(), rho_pp.nrows());
    let mut out = DMatrix::zeros(nx + np, nx + np);
    out.view_mut((0, 0), (nx, nx)).copy_from(rho_xx);
    out.view_mut((nx, nx), (np, np)).copy_from(rho_pp);
    for (i, &z) in zeta.iter().enumerate() {
        for n in 0..nx {
            out[(nx + i, n)] = z;
            out[(n, nx + i)] = z;
        }
    }
    out
}

/// `ρ_px = [Π; ρ_vx]` on a layer-major stack: `n_global` rows of ones for the
/// monomial coefficients, then one row per vertical forcing coefficient
/// `m = 0..n_v-1` located in layer `m + 1`, tapered by vertical distance.
pub fn rho_px_vertical(n_global: usize, n_v: usize, n_h: usize, r_v: f64) -> Result<DMatrix<f64>> {
    check_radius(r_v)?;
    let n_x = n_v * n_h;
    Ok(DMatrix::from_fn(n_global + n_v - 1, n_x, |i, n| {
        if i < n_global {
            1.0
        } else {
            let layer = i - n_global + 1;
            taper(layer.abs_diff(n / n_h) as f64, r_v)
        }
    }))
}
