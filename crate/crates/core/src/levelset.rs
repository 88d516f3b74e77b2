//! Control-point-parameterized level-set description of the material
//! layout.
//!
//! The implicit function is `phi(x) = sum_I R_I(x) alpha_I` with the same
//! spline basis as the analysis; `phi > 0` is solid, `phi < 0` is void. A
//! regularized Heaviside maps `phi` to an ersatz density in
//! `[rho_min, 1]` over a band of half-width `xi`, so no interface tracking
//! or reinitialization is ever needed: the design evolves purely through
//! the coefficients `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BasisTable, ControlMesh};

/// Regularized Heaviside: `rho_min` below the band, a cubic ramp inside
/// `|phi| <= xi`, and `1` above. Values are clamped to `[rho_min, 1]`; the
/// cubic passes below `rho_min` only in a sliver near `-xi`.
#[inline]
pub fn heaviside(phi: f64, xi: f64, rho_min: f64) -> f64 {
    if phi < -xi {
        rho_min
    } else if phi > xi {
        1.0
    } else {
        let t = phi / xi;
        let h = 0.75 * (t - t * t * t / 3.0) + 0.5;
        h.max(rho_min)
    }
}

/// Band derivative of [`heaviside`]: `(3/(4 xi)) (1 - phi^2/xi^2)` inside
/// the band, zero outside.
#[inline]
pub fn dirac(phi: f64, xi: f64) -> f64 {
    if phi.abs() > xi {
        0.0
    } else {
        let t = phi / xi;
        0.75 / xi * (1.0 - t * t)
    }
}

/// A spherical (circular) void seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Hole {
    /// Center inside the unit cell; trailing components ignored for d = 2.
    pub center: [f64; 3],
    pub radius: f64,
}

/// Initial material layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoleSeedConfig {
    /// `m^d` equally spaced holes of one radius, centered in the sub-cells.
    Lattice { per_dir: usize, radius: f64 },
    /// Explicit list of holes.
    Explicit { holes: Vec<Hole> },
    /// No voids: uniform solid material.
    Solid,
}

/// Level-set design state: coefficients at every control point plus the
/// fixed regularization and bound parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignField {
    pub alpha: Vec<f64>,
    /// Band half-width of the Heaviside regularization.
    pub xi: f64,
    /// Ersatz stiffness floor for void material.
    pub rho_min: f64,
    /// Optimizer box bounds, derived from the seeded field and held fixed.
    pub alpha_min: f64,
    pub alpha_max: f64,
}

pub const DEFAULT_RHO_MIN: f64 = 1e-6;

/// Default band half-width: 1.5 element widths.
pub fn default_band_width(mesh: &ControlMesh) -> f64 {
    1.5 * mesh.h[..mesh.dim].iter().cloned().fold(f64::MIN, f64::max)
}

impl DesignField {
    /// Seeds `alpha` with the signed distance to the nearest hole surface
    /// (negative inside a hole), evaluated at the control points and capped
    /// at `+/- 2 xi`. Distances wrap periodically so seeds near a face act
    /// on both sides.
    ///
    /// The cap doubles as the optimizer's box-bound scale. Densities only
    /// respond to `phi` inside the `+/- xi` band, so one extra band width is
    /// all the clearance a plateau needs; keeping the cap this tight makes a
    /// range-fraction move limit translate into interface steps the reduced
    /// bases can track.
    pub fn init_from_holes(
        mesh: &ControlMesh,
        seeds: &HoleSeedConfig,
        xi: f64,
        rho_min: f64,
    ) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::Config(format!("band half-width must be positive, got {xi}")));
        }
        if !(rho_min > 0.0 && rho_min < 1.0) {
            return Err(Error::Config(format!("rho_min must lie in (0, 1), got {rho_min}")));
        }
        let cap = 2.0 * xi;
        let holes = match seeds {
            HoleSeedConfig::Solid => Vec::new(),
            HoleSeedConfig::Explicit { holes } => {
                if holes.is_empty() {
                    return Err(Error::Config(
                        "empty hole list; use the solid preset for a hole-free start".into(),
                    ));
                }
                if holes.iter().any(|h| !(h.radius > 0.0)) {
                    return Err(Error::Config("hole radii must be positive".into()));
                }
                holes.clone()
            }
            HoleSeedConfig::Lattice { per_dir, radius } => {
                if *per_dir == 0 {
                    return Err(Error::Config("hole lattice needs per_dir >= 1".into()));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Config("hole radii must be positive".into()));
                }
                let m = *per_dir;
                let mut holes = Vec::new();
                let kmax = if mesh.dim == 3 { m } else { 1 };
                for k in 0..kmax {
                    for j in 0..m {
                        for i in 0..m {
                            let mut c = [0.5; 3];
                            c[0] = (i as f64 + 0.5) / m as f64;
                            c[1] = (j as f64 + 0.5) / m as f64;
                            if mesh.dim == 3 {
                                c[2] = (k as f64 + 0.5) / m as f64;
                            }
                            holes.push(Hole { center: c, radius: *radius });
                        }
                    }
                }
                holes
            }
        };

        let n = mesh.n_points();
        let mut alpha = vec![cap; n];
        if !holes.is_empty() {
            for g in 0..n {
                let x = mesh.point_coords(g);
                let mut d = f64::INFINITY;
                for hole in &holes {
                    d = d.min(periodic_surface_distance(&x, hole, mesh.dim));
                }
                alpha[g] = d.clamp(-cap, cap);
            }
        }

        let (mut lo, mut hi) = alpha
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
        if hi - lo < 1e-12 {
            // Degenerate seed (e.g. fully solid): fall back to the cap range
            // so the optimizer retains room to move.
            lo = -cap;
            hi = cap;
        }
        Ok(DesignField { alpha, xi, rho_min, alpha_min: lo, alpha_max: hi })
    }

    /// Level-set value and spatial gradient at a parent point of an element.
    pub fn eval_phi(&self, mesh: &ControlMesh, elem: usize, xi_parent: &[f64]) -> Result<(f64, [f64; 3])> {
        let basis = mesh.ext.eval(elem, xi_parent)?;
        let mut phi = 0.0;
        let mut grad = [0.0; 3];
        for (l, &g) in basis.fns.iter().enumerate() {
            let a = self.alpha[g];
            phi += a * basis.values[l];
            for d in 0..mesh.dim {
                grad[d] += a * basis.grads[l][d] * 2.0 / mesh.h[d];
            }
        }
        Ok((phi, grad))
    }

    #[inline]
    pub fn heaviside(&self, phi: f64) -> f64 {
        heaviside(phi, self.xi, self.rho_min)
    }

    #[inline]
    pub fn dirac(&self, phi: f64) -> f64 {
        dirac(phi, self.xi)
    }
}

/// Distance from `x` to the surface of `hole`, minimized over periodic
/// images of the hole center (negative inside).
fn periodic_surface_distance(x: &[f64; 3], hole: &Hole, dim: usize) -> f64 {
    let mut best = f64::INFINITY;
    let offsets = [-1.0, 0.0, 1.0];
    let kmax = if dim == 3 { 3 } else { 1 };
    for ok in 0..kmax {
        for oj in 0..3 {
            for oi in 0..3 {
                let mut d2 = 0.0;
                let off = [offsets[oi], offsets[oj], offsets[ok]];
                for d in 0..dim {
                    let dx = x[d] - (hole.center[d] + off[d]);
                    d2 += dx * dx;
                }
                best = best.min(d2.sqrt() - hole.radius);
            }
        }
    }
    best
}

/// Level-set values at every quadrature point, in basis-table layout.
#[derive(Debug, Clone)]
pub struct PhiTable {
    pub n_qp: usize,
    /// `phi[e * n_qp + q]`.
    pub phi: Vec<f64>,
}

impl PhiTable {
    pub fn build(field: &DesignField, table: &BasisTable) -> Self {
        let ne = table.conn.len();
        let n_qp = table.n_qp;
        let mut phi = vec![0.0; ne * n_qp];
        for e in 0..ne {
            let conn = &table.conn[e];
            for q in 0..n_qp {
                let vals = table.values_at(e, q);
                let mut s = 0.0;
                for (l, &g) in conn.iter().enumerate() {
                    s += field.alpha[g] * vals[l];
                }
                phi[e * n_qp + q] = s;
            }
        }
        PhiTable { n_qp, phi }
    }

    #[inline]
    pub fn at(&self, e: usize, q: usize) -> f64 {
        self.phi[e * self.n_qp + q]
    }

    /// True when some quadrature point of `e` lies inside the smoothing
    /// band; elements failing this cannot contribute to band integrals.
    #[inline]
    pub fn elem_in_band(&self, e: usize, xi: f64) -> bool {
        self.phi[e * self.n_qp..(e + 1) * self.n_qp]
            .iter()
            .any(|&p| p.abs() <= xi)
    }
}

/// Material volume fraction `integral of H(phi)` over the unit cell.
pub fn volume(field: &DesignField, table: &BasisTable, phi: &PhiTable) -> f64 {
    let ne = table.conn.len();
    let mut v = 0.0;
    for e in 0..ne {
        for q in 0..table.n_qp {
            v += field.heaviside(phi.at(e, q)) * table.wj[q];
        }
    }
    v
}
