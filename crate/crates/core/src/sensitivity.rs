//! Design sensitivities of the effective tensor, the tracking objective,
//! and the material volume.
//!
//! Shape derivatives of the level-set parameterization concentrate on the
//! smoothed interface band: every gradient here is an integral of
//! `delta(phi) * R_I(x) * q(x)` over band elements, where `q` is the
//! relevant energy density. At equilibrium the implicit terms vanish, so
//! the tensor derivative is the plain weighted energy density of the
//! corrected strains. When reduced solutions are used with a frozen basis
//! the solutions are no longer at equilibrium; the optional correction
//! fields restore the exact derivative of the reduced objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{n_cases, strains_at, MaterialModel};
use crate::levelset::{DesignField, PhiTable};
use crate::mesh::{BasisTable, ControlMesh};

/// One penalized entry of the effective tensor in Voigt indices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ObjectiveTerm {
    pub row: usize,
    pub col: usize,
    pub target: f64,
    pub weight: f64,
}

/// Weighted least-squares tracking of selected tensor entries:
/// `J = 1/2 sum_k w_k (C[r_k, c_k] - t_k)^2`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObjectiveSpec {
    pub terms: Vec<ObjectiveTerm>,
}

impl ObjectiveSpec {
    pub fn validate(&self, ncases: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("objective needs at least one tensor entry".into()));
        }
        for t in &self.terms {
            if t.row >= ncases || t.col >= ncases {
                return Err(Error::Config(format!(
                    "objective entry ({}, {}) outside the {ncases}x{ncases} tensor",
                    t.row, t.col
                )));
            }
            if !(t.weight >= 0.0) {
                return Err(Error::Config(format!(
                    "objective weight for ({}, {}) must be nonnegative",
                    t.row, t.col
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, c: &DMatrix<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| 0.5 * t.weight * (c[(t.row, t.col)] - t.target).powi(2))
            .sum()
    }

    /// Symmetric coefficient matrix `W` such that
    /// `dJ = sum_ab W_ab dC_ab` with the full double sum over `a, b`.
    pub fn weight_matrix(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let n = c.nrows();
        let mut w = DMatrix::zeros(n, n);
        for t in &self.terms {
            let coef = t.weight * (c[(t.row, t.col)] - t.target);
            if t.row == t.col {
                w[(t.row, t.col)] += coef;
            } else {
                w[(t.row, t.col)] += 0.5 * coef;
                w[(t.col, t.row)] += 0.5 * coef;
            }
        }
        w
    }
}

/// Coefficient matrix selecting a single tensor entry: contracts the
/// gradient kernel to `dC[i, j] / dalpha`.
pub fn component_weight(ncases: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(ncases, ncases);
    if i == j {
        w[(i, j)] = 1.0;
    } else {
        w[(i, j)] = 0.5;
        w[(j, i)] = 0.5;
    }
    w
}

/// Gradient of `sum_ab W_ab C_ab` with respect to every design value.
///
/// `chi` holds the per-case solutions in full control-point layout.
/// `corrections`, when present, holds `ncases^2` columns: column
/// `a * ncases + b` is the frozen-basis adjunct field for the pair
/// `(a, b)` (basis of case `a` applied to the residual of case `b`),
/// also in full layout. Elements whose quadrature points all sit outside
/// the interface band contribute nothing and are skipped.
pub fn weighted_tensor_gradient(
    mesh: &ControlMesh,
    table: &BasisTable,
    mat: &MaterialModel,
    field: &DesignField,
    phi: &PhiTable,
    chi: &DMatrix<f64>,
    w: &DMatrix<f64>,
    corrections: Option<&DMatrix<f64>>,
) -> Vec<f64> {
    let dim = mesh.dim;
    let ncases = n_cases(dim);
    assert_eq!(w.nrows(), ncases);
    let c = mat.voigt(dim);
    let nl = table.n_local;
    let nd = nl * dim;
    let npairs = ncases * ncases;

    let mut grad = vec![0.0; mesh.n_points()];
    let mut ue = vec![0.0; ncases * nd];
    let mut we = vec![0.0; npairs * nd];
    let mut eps = vec![0.0; ncases * 6];
    let mut epsw = vec![0.0; npairs * 6];
    let mut s = vec![0.0; ncases * 6];
    let mut cs = vec![0.0; ncases * 6];

    for e in 0..mesh.n_elements() {
        if !phi.elem_in_band(e, field.xi) {
            continue;
        }
        let conn = &table.conn[e];
        for (l, &g) in conn.iter().enumerate() {
            for comp in 0..dim {
                for case in 0..ncases {
                    ue[case * nd + l * dim + comp] = chi[(g * dim + comp, case)];
                }
                if let Some(cor) = corrections {
                    for p in 0..npairs {
                        we[p * nd + l * dim + comp] = cor[(g * dim + comp, p)];
                    }
                }
            }
        }
        for q in 0..table.n_qp {
            let d = field.dirac(phi.at(e, q));
            if d == 0.0 {
                continue;
            }
            let grads = table.grads_at(e, q);
            strains_at(grads, &ue, dim, ncases, &mut eps);
            for case in 0..ncases {
                for i in 0..ncases {
                    let e0 = if i == case { 1.0 } else { 0.0 };
                    s[case * 6 + i] = e0 - eps[case * 6 + i];
                }
            }
            for case in 0..ncases {
                for i in 0..ncases {
                    let mut v = 0.0;
                    for j in 0..ncases {
                        v += c[(i, j)] * s[case * 6 + j];
                    }
                    cs[case * 6 + i] = v;
                }
            }
            let mut density = 0.0;
            for a in 0..ncases {
                for b in 0..ncases {
                    let wab = w[(a, b)];
                    if wab == 0.0 {
                        continue;
                    }
                    let mut v = 0.0;
                    for i in 0..ncases {
                        v += s[a * 6 + i] * cs[b * 6 + i];
                    }
                    density += wab * v;
                }
            }
            if corrections.is_some() {
                strains_at(grads, &we, dim, npairs, &mut epsw);
                // d(C~_ab) picks up s_a^T C e(w_ab) + s_b^T C e(w_ba);
                // under the symmetric double sum both collapse to one term.
                for a in 0..ncases {
                    for b in 0..ncases {
                        let wab = w[(a, b)];
                        if wab == 0.0 {
                            continue;
                        }
                        let p = a * ncases + b;
                        let mut v = 0.0;
                        for i in 0..ncases {
                            v += cs[a * 6 + i] * epsw[p * 6 + i];
                        }
                        density += 2.0 * wab * v;
                    }
                }
            }
            let wq = d * table.wj[q] * density;
            let vals = table.values_at(e, q);
            for (l, &g) in conn.iter().enumerate() {
                grad[g] += vals[l] * wq;
            }
        }
    }
    grad
}

/// Gradient of the material volume fraction: `dV/dalpha_I >= 0` since the
/// mollified delta and the basis are nonnegative.
pub fn volume_gradient(
    mesh: &ControlMesh,
    table: &BasisTable,
    field: &DesignField,
    phi: &PhiTable,
) -> Vec<f64> {
    let mut grad = vec![0.0; mesh.n_points()];
    for e in 0..mesh.n_elements() {
        if !phi.elem_in_band(e, field.xi) {
            continue;
        }
        let conn = &table.conn[e];
        for q in 0..table.n_qp {
            let d = field.dirac(phi.at(e, q));
            if d == 0.0 {
                continue;
            }
            let wq = d * table.wj[q];
            let vals = table.values_at(e, q);
            for (l, &g) in conn.iter().enumerate() {
                grad[g] += vals[l] * wq;
            }
        }
    }
    grad
}
