//! Periodic unit-cell equilibrium problems and effective elasticity.
//!
//! For each independent unit macro-strain the cell problem
//! `K chi = F` is assembled on the periodic reduced unknowns with the
//! level-set density modulating the integrand at every quadrature point
//! (ersatz material: void keeps a tiny stiffness floor). The effective
//! tensor follows by volume-averaging the energy of the corrected strain
//! fields `e0 - e(chi)`.
//!
//! Voigt convention with engineering shear throughout: 2D rows
//! `(xx, yy, xy)`, 3D rows `(xx, yy, zz, yz, xz, xy)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::{DesignField, PhiTable};
use crate::mesh::{BasisTable, ControlMesh, PeriodicMap};
use crate::solver::{pcg_ssor, CsrMatrix, LdltFactor};

/// Isotropic base material.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MaterialModel {
    pub youngs: f64,
    pub poisson: f64,
    /// Plane-stress reduction for d = 2 (plane strain otherwise); ignored
    /// in 3D.
    pub plane_stress: bool,
}

impl MaterialModel {
    pub fn new(youngs: f64, poisson: f64, plane_stress: bool) -> Result<Self> {
        if !(youngs > 0.0) {
            return Err(Error::Config(format!("Young's modulus must be positive, got {youngs}")));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::Config(format!(
                "Poisson ratio must lie in (-1, 0.5), got {poisson}"
            )));
        }
        Ok(Self { youngs, poisson, plane_stress })
    }

    /// Voigt elasticity matrix (`3x3` for d = 2, `6x6` for d = 3) with
    /// engineering shear strain, so shear diagonals carry `G`.
    pub fn voigt(&self, dim: usize) -> DMatrix<f64> {
        let e = self.youngs;
        let nu = self.poisson;
        let g = e / (2.0 * (1.0 + nu));
        match dim {
            2 => {
                if self.plane_stress {
                    let f = e / (1.0 - nu * nu);
                    DMatrix::from_row_slice(
                        3,
                        3,
                        &[f, f * nu, 0.0, f * nu, f, 0.0, 0.0, 0.0, g],
                    )
                } else {
                    let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
                    DMatrix::from_row_slice(
                        3,
                        3,
                        &[
                            f * (1.0 - nu),
                            f * nu,
                            0.0,
                            f * nu,
                            f * (1.0 - nu),
                            0.0,
                            0.0,
                            0.0,
                            g,
                        ],
                    )
                }
            }
            3 => {
                let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
                let mut c = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for j in 0..3 {
                        c[(i, j)] = if i == j { lam + 2.0 * g } else { lam };
                    }
                    c[(i + 3, i + 3)] = g;
                }
                c
            }
            _ => panic!("dimension {dim} unsupported"),
        }
    }
}

/// Independent macro-strain cases: `d (d + 1) / 2`.
pub fn n_cases(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Unit macro strains as Voigt identity columns (engineering shear).
pub fn unit_strains(dim: usize) -> Vec<Vec<f64>> {
    let nc = n_cases(dim);
    (0..nc)
        .map(|c| {
            let mut v = vec![0.0; nc];
            v[c] = 1.0;
            v
        })
        .collect()
}

/// Sparse row of the strain-displacement operator for one local dof:
/// Voigt rows touched and the gradient components entering them.
#[inline]
fn b_column(dim: usize, comp: usize, g: &[f64; 3], rows: &mut [usize; 3], vals: &mut [f64; 3]) -> usize {
    match (dim, comp) {
        (2, 0) => {
            rows[0] = 0;
            vals[0] = g[0];
            rows[1] = 2;
            vals[1] = g[1];
            2
        }
        (2, 1) => {
            rows[0] = 1;
            vals[0] = g[1];
            rows[1] = 2;
            vals[1] = g[0];
            2
        }
        (3, 0) => {
            rows[0] = 0;
            vals[0] = g[0];
            rows[1] = 4;
            vals[1] = g[2];
            rows[2] = 5;
            vals[2] = g[1];
            3
        }
        (3, 1) => {
            rows[0] = 1;
            vals[0] = g[1];
            rows[1] = 3;
            vals[1] = g[2];
            rows[2] = 5;
            vals[2] = g[0];
            3
        }
        (3, 2) => {
            rows[0] = 2;
            vals[0] = g[2];
            rows[1] = 3;
            vals[1] = g[1];
            rows[2] = 4;
            vals[2] = g[0];
            3
        }
        _ => unreachable!(),
    }
}

/// Voigt strains of per-case element displacement vectors at one
/// quadrature point. `ue` is case-major: `ue[case * nd + l * dim + comp]`.
#[inline]
pub(crate) fn strains_at(
    grads: &[[f64; 3]],
    ue: &[f64],
    dim: usize,
    ncases: usize,
    out: &mut [f64],
) {
    let nl = grads.len();
    let nd = nl * dim;
    for v in out.iter_mut().take(ncases * 6) {
        *v = 0.0;
    }
    let mut rows = [0usize; 3];
    let mut vals = [0.0f64; 3];
    for l in 0..nl {
        let g = &grads[l];
        for comp in 0..dim {
            let nrows = b_column(dim, comp, g, &mut rows, &mut vals);
            let col = l * dim + comp;
            for case in 0..ncases {
                let u = ue[case * nd + col];
                if u != 0.0 {
                    for r in 0..nrows {
                        out[case * 6 + rows[r]] += vals[r] * u;
                    }
                }
            }
        }
    }
}

/// Assembled periodic cell problem for one design.
#[derive(Debug, Clone)]
pub struct CellProblem {
    /// Reduced stiffness, periodic elimination applied and the anchor
    /// corner constrained (its off-diagonal row/column zeroed).
    pub k: CsrMatrix,
    /// Reduced loads, one column per unit-strain case, before anchoring;
    /// each column is self-equilibrated.
    pub loads: DMatrix<f64>,
    pub anchor_dofs: Vec<usize>,
    pub dim: usize,
}

impl CellProblem {
    /// Loads with anchored entries zeroed; consistent with the anchored
    /// stiffness for solving and residual evaluation.
    pub fn effective_loads(&self) -> DMatrix<f64> {
        let mut f = self.loads.clone();
        for &a in &self.anchor_dofs {
            for c in 0..f.ncols() {
                f[(a, c)] = 0.0;
            }
        }
        f
    }

    pub fn n_cases(&self) -> usize {
        self.loads.ncols()
    }
}

/// Reusable assembly machinery: sparsity pattern, per-element scatter
/// positions, and dof maps. Built once per mesh, reused every iteration.
pub struct Assembler {
    pub dim: usize,
    ncases: usize,
    nd: usize,
    /// Per element: reduced dof per local dof.
    dof_map: Vec<Vec<u32>>,
    /// Per element: CSR value position for each `(a, b)` local pair.
    positions: Vec<Vec<u32>>,
    /// CSR pattern prototype (values zeroed).
    pattern: CsrMatrix,
    /// Positions to zero when anchoring (anchor row/col, excluding the
    /// diagonal).
    anchor_positions: Vec<u32>,
    anchor_dofs: Vec<usize>,
}

impl Assembler {
    pub fn new(mesh: &ControlMesh, table: &BasisTable, pmap: &PeriodicMap) -> Self {
        let dim = mesh.dim;
        let ncases = n_cases(dim);
        let ne = mesh.n_elements();
        let nd = table.n_local * dim;
        let n_red = pmap.n_reduced_dofs();

        let mut dof_map = Vec::with_capacity(ne);
        for e in 0..ne {
            let conn = &table.conn[e];
            let mut dofs = Vec::with_capacity(nd);
            for &g in conn {
                for c in 0..dim {
                    dofs.push(pmap.reduced_dof(g, c) as u32);
                }
            }
            dof_map.push(dofs);
        }

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_red];
        for dofs in &dof_map {
            for &a in dofs {
                for &b in dofs {
                    rows[a as usize].push(b);
                }
            }
        }
        let pattern = CsrMatrix::from_pattern(rows);

        let mut positions = Vec::with_capacity(ne);
        for dofs in &dof_map {
            let mut pos = Vec::with_capacity(nd * nd);
            for &a in dofs {
                for &b in dofs {
                    let p = pattern
                        .find(a as usize, b as usize)
                        .expect("pattern contains element couplings");
                    pos.push(p as u32);
                }
            }
            positions.push(pos);
        }

        let anchor_dofs = pmap.anchor_dofs();
        let mut anchor_positions = Vec::new();
        for &a in &anchor_dofs {
            for p in pattern.row_ptr[a]..pattern.row_ptr[a + 1] {
                if pattern.col_idx[p] as usize != a {
                    anchor_positions.push(p as u32);
                }
            }
        }
        // Column entries: symmetric pattern, so scan rows for anchor cols.
        for r in 0..n_red {
            if anchor_dofs.contains(&r) {
                continue;
            }
            for &a in &anchor_dofs {
                if let Some(p) = pattern.find(r, a) {
                    anchor_positions.push(p as u32);
                }
            }
        }

        Assembler { dim, ncases, nd, dof_map, positions, pattern, anchor_positions, anchor_dofs }
    }

    pub fn n_reduced_dofs(&self) -> usize {
        self.pattern.n
    }

    /// Assembles stiffness and loads for the current design. Element
    /// contributions are computed in parallel chunks and scattered in
    /// element order, so the result is independent of thread count.
    pub fn assemble(
        &self,
        mat: &MaterialModel,
        table: &BasisTable,
        field: &DesignField,
        phi: &PhiTable,
        parallel: bool,
    ) -> CellProblem {
        let dim = self.dim;
        let ncases = self.ncases;
        let nd = self.nd;
        let ne = self.dof_map.len();
        let c = mat.voigt(dim);
        let mut cflat = vec![0.0; ncases * ncases];
        for i in 0..ncases {
            for j in 0..ncases {
                cflat[i * ncases + j] = c[(i, j)];
            }
        }

        let mut k = self.pattern.clone();
        let mut loads = DMatrix::zeros(self.pattern.n, ncases);

        let kernel = |e: usize, ke: &mut [f64], fe: &mut [f64], cb: &mut [f64]| {
            ke.fill(0.0);
            fe.fill(0.0);
            let mut rows = [0usize; 3];
            let mut vals = [0.0f64; 3];
            for q in 0..table.n_qp {
                let h = field.heaviside(phi.at(e, q));
                let s = h * table.wj[q];
                let grads = table.grads_at(e, q);
                // cb = s * C * B, case-major.
                cb.fill(0.0);
                for (l, g) in grads.iter().enumerate() {
                    for comp in 0..dim {
                        let nrows = b_column(dim, comp, g, &mut rows, &mut vals);
                        let col = l * dim + comp;
                        for case in 0..ncases {
                            let mut acc = 0.0;
                            for r in 0..nrows {
                                acc += cflat[case * ncases + rows[r]] * vals[r];
                            }
                            cb[case * nd + col] = acc * s;
                        }
                    }
                }
                // ke += B^T (s C B), upper triangle; fe += B^T (s C) e_case.
                for (l, g) in grads.iter().enumerate() {
                    for comp in 0..dim {
                        let nrows = b_column(dim, comp, g, &mut rows, &mut vals);
                        let a = l * dim + comp;
                        for r in 0..nrows {
                            let va = vals[r];
                            let crow = &cb[rows[r] * nd..rows[r] * nd + nd];
                            let kerow = &mut ke[a * nd..a * nd + nd];
                            for b in a..nd {
                                kerow[b] += va * crow[b];
                            }
                        }
                        for case in 0..ncases {
                            fe[a * ncases + case] += cb[case * nd + a];
                        }
                    }
                }
            }
            // Mirror to the lower triangle.
            for a in 0..nd {
                for b in (a + 1)..nd {
                    ke[b * nd + a] = ke[a * nd + b];
                }
            }
        };

        let chunk = 64usize;
        let elems: Vec<usize> = (0..ne).collect();
        let mut scatter = |e: usize, ke: &[f64], fe: &[f64]| {
            let pos = &self.positions[e];
            for (i, &p) in pos.iter().enumerate() {
                k.values[p as usize] += ke[i];
            }
            let dofs = &self.dof_map[e];
            for (a, &dof) in dofs.iter().enumerate() {
                for case in 0..ncases {
                    loads[(dof as usize, case)] += fe[a * ncases + case];
                }
            }
        };

        if parallel {
            for chunk_elems in elems.chunks(chunk) {
                let results: Vec<(Vec<f64>, Vec<f64>)> = chunk_elems
                    .par_iter()
                    .map(|&e| {
                        let mut ke = vec![0.0; nd * nd];
                        let mut fe = vec![0.0; nd * ncases];
                        let mut cb = vec![0.0; ncases * nd];
                        kernel(e, &mut ke, &mut fe, &mut cb);
                        (ke, fe)
                    })
                    .collect();
                for (&e, (ke, fe)) in chunk_elems.iter().zip(&results) {
                    scatter(e, ke, fe);
                }
            }
        } else {
            let mut ke = vec![0.0; nd * nd];
            let mut fe = vec![0.0; nd * ncases];
            let mut cb = vec![0.0; ncases * nd];
            for &e in &elems {
                kernel(e, &mut ke, &mut fe, &mut cb);
                scatter(e, &ke, &fe);
            }
        }

        // Anchor: drop the corner's couplings, keep its assembled diagonal.
        for &p in &self.anchor_positions {
            k.values[p as usize] = 0.0;
        }

        CellProblem { k, loads, anchor_dofs: self.anchor_dofs.clone(), dim }
    }
}

/// Linear solve strategy for the full cell problems.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolveBackend {
    /// Sparse `L D L^T` with fill-reducing ordering; default for d = 2.
    Direct,
    /// Preconditioned conjugate gradients; default for d = 3.
    Pcg { tol: f64, max_iter: usize },
}

impl SolveBackend {
    pub fn default_for_dim(dim: usize) -> Self {
        if dim == 2 {
            SolveBackend::Direct
        } else {
            SolveBackend::Pcg { tol: 1e-9, max_iter: 40_000 }
        }
    }
}

/// Full-solve driver with warm starts and cumulative timing.
pub struct FullSolver {
    pub backend: SolveBackend,
    warm: Option<DMatrix<f64>>,
    pub solves: usize,
    pub seconds: f64,
}

/// Relative residual threshold every accepted full solution must satisfy.
pub const FULL_SOLVE_RESIDUAL: f64 = 1e-9;

impl FullSolver {
    pub fn new(backend: SolveBackend) -> Self {
        FullSolver { backend, warm: None, solves: 0, seconds: 0.0 }
    }

    /// Solves all load cases; returns reduced solutions (one column per
    /// case) verified to `FULL_SOLVE_RESIDUAL`.
    pub fn solve(&mut self, cp: &CellProblem) -> Result<DMatrix<f64>> {
        let t0 = std::time::Instant::now();
        let f = cp.effective_loads();
        let n = cp.k.n;
        let ncases = f.ncols();
        let mut x = DMatrix::zeros(n, ncases);
        match self.backend {
            SolveBackend::Direct => {
                let factor = LdltFactor::factor(&cp.k)?;
                for case in 0..ncases {
                    let b: Vec<f64> = f.column(case).iter().cloned().collect();
                    let sol = factor.solve(&b);
                    x.column_mut(case).copy_from_slice(&sol);
                }
            }
            SolveBackend::Pcg { tol, max_iter } => {
                for case in 0..ncases {
                    let b: Vec<f64> = f.column(case).iter().cloned().collect();
                    let mut x0 = match &self.warm {
                        Some(w) if w.nrows() == n => w.column(case).iter().cloned().collect(),
                        _ => vec![0.0; n],
                    };
                    pcg_ssor(&cp.k, &b, &mut x0, tol, max_iter)?;
                    x.column_mut(case).copy_from_slice(&x0);
                }
            }
        }
        // Residual audit on every case.
        let mut ax = vec![0.0; n];
        for case in 0..ncases {
            let xc: Vec<f64> = x.column(case).iter().cloned().collect();
            cp.k.matvec(&xc, &mut ax);
            let mut rn = 0.0;
            let mut fn2 = 0.0;
            for i in 0..n {
                rn += (ax[i] - f[(i, case)]).powi(2);
                fn2 += f[(i, case)].powi(2);
            }
            let rel = (rn / fn2.max(1e-300)).sqrt();
            if rel > FULL_SOLVE_RESIDUAL {
                return Err(Error::Solver(format!(
                    "case {case} residual {rel:.3e} exceeds {FULL_SOLVE_RESIDUAL:.1e}"
                )));
            }
        }
        self.warm = Some(x.clone());
        self.solves += 1;
        self.seconds += t0.elapsed().as_secs_f64();
        Ok(x)
    }

    pub fn reset_warm(&mut self) {
        self.warm = None;
    }

    pub fn warm_start(&self) -> Option<&DMatrix<f64>> {
        self.warm.as_ref()
    }

    pub fn set_warm_start(&mut self, warm: Option<DMatrix<f64>>) {
        self.warm = warm;
    }
}

/// Expands reduced per-case solutions to the full control-point layout
/// (slaves copy masters; anchored components are zero by construction).
pub fn scatter_solutions(pmap: &PeriodicMap, reduced: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = pmap.dim;
    let ncases = reduced.ncols();
    let mut full = DMatrix::zeros(pmap.n_points * dim, ncases);
    for g in 0..pmap.n_points {
        let r = pmap.reduced_of[g];
        for c in 0..dim {
            for case in 0..ncases {
                full[(g * dim + c, case)] = reduced[(r * dim + c, case)];
            }
        }
    }
    full
}

/// Volume-averaged effective elasticity in Voigt form.
#[derive(Debug, Clone)]
pub struct EffectiveTensor {
    pub c: DMatrix<f64>,
    /// Worst relative asymmetry observed before symmetrization.
    pub asymmetry: f64,
}

impl EffectiveTensor {
    /// Smallest eigenvalue (symmetric read); nonnegative up to roundoff for
    /// any admissible design.
    pub fn min_eigenvalue(&self) -> f64 {
        self.c
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Computes the effective tensor from full-layout solutions `chi`
/// (`n_points * dim` rows, one column per case).
pub fn effective_tensor(
    mat: &MaterialModel,
    mesh: &ControlMesh,
    table: &BasisTable,
    field: &DesignField,
    phi: &PhiTable,
    chi: &DMatrix<f64>,
) -> EffectiveTensor {
    let dim = mesh.dim;
    let ncases = n_cases(dim);
    let c = mat.voigt(dim);
    let ne = mesh.n_elements();
    let nl = table.n_local;
    let nd = nl * dim;

    let mut acc = vec![0.0; ncases * ncases];
    let mut ue = vec![0.0; ncases * nd];
    let mut eps = vec![0.0; ncases * 6];
    let mut s = vec![0.0; ncases * 6];
    let mut cs = vec![0.0; ncases * 6];

    for e in 0..ne {
        let conn = &table.conn[e];
        for (l, &g) in conn.iter().enumerate() {
            for comp in 0..dim {
                for case in 0..ncases {
                    ue[case * nd + l * dim + comp] = chi[(g * dim + comp, case)];
                }
            }
        }
        for q in 0..table.n_qp {
            let h = field.heaviside(phi.at(e, q));
            let w = h * table.wj[q];
            strains_at(table.grads_at(e, q), &ue, dim, ncases, &mut eps);
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
            for a in 0..ncases {
                for b in 0..ncases {
                    let mut v = 0.0;
                    for i in 0..ncases {
                        v += s[a * 6 + i] * cs[b * 6 + i];
                    }
                    acc[a * ncases + b] += v * w;
                }
            }
        }
    }

    let mut m = DMatrix::zeros(ncases, ncases);
    let mut asym = 0.0f64;
    let scale = acc.iter().fold(0.0f64, |mx, &v| mx.max(v.abs())).max(1e-300);
    for a in 0..ncases {
        for b in 0..ncases {
            let sym = 0.5 * (acc[a * ncases + b] + acc[b * ncases + a]);
            asym = asym.max((acc[a * ncases + b] - acc[b * ncases + a]).abs() / scale);
            m[(a, b)] = sym;
        }
    }
    EffectiveTensor { c: m, asymmetry: asym }
}

/// Directional engineering constants from the compliance of `C^H`.
#[derive(Debug, Clone)]
pub struct EngineeringConstants {
    pub dim: usize,
    /// `E_x, E_y, E_z` (third entry unused for d = 2).
    pub e: [f64; 3],
    /// Shear moduli in Voigt order: 2D `[G_xy, 0, 0]`; 3D
    /// `[G_yz, G_xz, G_xy]`.
    pub g: [f64; 3],
    /// `nu[i][j]` = contraction in `j` under uniaxial stress in `i`.
    pub nu: [[f64; 3]; 3],
}

pub fn engineering_constants(ct: &EffectiveTensor, dim: usize) -> Result<EngineeringConstants> {
    let c = &ct.c;
    let s = c.clone().try_inverse().ok_or_else(|| {
        Error::Solver(format!(
            "effective tensor is singular (min eigenvalue {:.3e}); no engineering constants",
            ct.min_eigenvalue()
        ))
    })?;
    let mut e = [0.0; 3];
    let mut g = [0.0; 3];
    let mut nu = [[0.0; 3]; 3];
    for i in 0..dim {
        e[i] = 1.0 / s[(i, i)];
        for j in 0..dim {
            if i != j {
                nu[i][j] = -s[(j, i)] / s[(i, i)];
            }
        }
    }
    match dim {
        2 => g[0] = 1.0 / s[(2, 2)],
        _ => {
            for k in 0..3 {
                g[k] = 1.0 / s[(3 + k, 3 + k)];
            }
        }
    }
    Ok(EngineeringConstants { dim, e, g, nu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{DesignField, Hole, HoleSeedConfig, PhiTable};
    use crate::mesh::{BasisTable, ControlMesh, PeriodicMap};
    use approx::assert_abs_diff_eq;

    fn setup(
        dim: usize,
        ne: usize,
        seeds: &HoleSeedConfig,
    ) -> (ControlMesh, BasisTable, PeriodicMap, Assembler, DesignField, PhiTable) {
        let elems = vec![ne; dim];
        let mesh = ControlMesh::unit_cell(dim, &elems, 2).unwrap();
        let table = BasisTable::build(&mesh);
        let pmap = PeriodicMap::build(&mesh);
        let asm = Assembler::new(&mesh, &table, &pmap);
        let xi = crate::levelset::default_band_width(&mesh);
        let field = DesignField::init_from_holes(&mesh, seeds, xi, 1e-6).unwrap();
        let phi = PhiTable::build(&field, &table);
        (mesh, table, pmap, asm, field, phi)
    }

    #[test]
    fn material_matrix_frozen_values() {
        let m = MaterialModel::new(1.0, 0.3, true).unwrap();
        let c = m.voigt(2);
        assert_abs_diff_eq!(c[(0, 0)], 1.0 / 0.91, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(0, 1)], 0.3 / 0.91, epsilon = 1e-14);
        // Engineering-shear convention: shear diagonal is G.
        assert_abs_diff_eq!(c[(2, 2)], 1.0 / 2.6, epsilon = 1e-14);
        let c3 = m.voigt(3);
        let lam = 0.3 / (1.3 * 0.4);
        let g = 1.0 / 2.6;
        assert_abs_diff_eq!(c3[(0, 0)], lam + 2.0 * g, epsilon = 1e-14);
        assert_abs_diff_eq!(c3[(0, 1)], lam, epsilon = 1e-14);
        assert_abs_diff_eq!(c3[(3, 3)], g, epsilon = 1e-14);
        assert_abs_diff_eq!(c3[(4, 5)], 0.0, epsilon = 1e-300);
        // Plane stress and plane strain differ.
        let ps = MaterialModel::new(1.0, 0.3, false).unwrap().voigt(2);
        assert!((ps[(0, 0)] - c[(0, 0)]).abs() > 1e-3);
    }

    #[test]
    fn material_validation() {
        assert!(MaterialModel::new(0.0, 0.3, true).is_err());
        assert!(MaterialModel::new(1.0, 0.5, true).is_err());
        assert!(MaterialModel::new(1.0, -1.0, true).is_err());
    }

    #[test]
    fn loads_are_self_equilibrated_per_direction() {
        let (_, table, pmap, asm, field, phi) =
            setup(2, 6, &HoleSeedConfig::Lattice { per_dir: 2, radius: 0.15 });
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let cp = asm.assemble(&mat, &table, &field, &phi, false);
        let dim = 2;
        for case in 0..cp.n_cases() {
            let col = cp.loads.column(case);
            let norm = col.norm();
            for c in 0..dim {
                let s: f64 = (0..pmap.n_reduced_points()).map(|r| col[r * dim + c]).sum();
                assert!(
                    s.abs() <= 1e-9 * norm.max(1e-300),
                    "case {case} direction {c}: net force {s:.3e} vs norm {norm:.3e}"
                );
            }
        }
    }

    #[test]
    fn stiffness_is_symmetric_and_spd() {
        let (_, table, _, asm, field, phi) =
            setup(2, 5, &HoleSeedConfig::Lattice { per_dir: 2, radius: 0.12 });
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let cp = asm.assemble(&mat, &table, &field, &phi, false);
        let dmax = (0..cp.k.n)
            .map(|i| cp.k.find(i, i).map(|p| cp.k.values[p]).unwrap_or(0.0))
            .fold(0.0f64, f64::max);
        assert!(cp.k.asymmetry() <= 1e-12 * dmax);
        assert!(LdltFactor::factor(&cp.k).is_ok());
    }

    #[test]
    fn parallel_assembly_matches_serial() {
        let (_, table, _, asm, field, phi) =
            setup(2, 6, &HoleSeedConfig::Lattice { per_dir: 2, radius: 0.18 });
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let a = asm.assemble(&mat, &table, &field, &phi, false);
        let b = asm.assemble(&mat, &table, &field, &phi, true);
        let worst = a
            .k
            .values
            .iter()
            .zip(&b.k.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-12, "parallel vs serial stiffness diff {worst}");
        let lw = (a.loads.clone() - b.loads.clone()).abs().max();
        assert!(lw <= 1e-12, "parallel vs serial load diff {lw}");
    }

    #[test]
    fn solid_cell_reproduces_base_material() {
        let (mesh, table, pmap, asm, field, phi) = setup(2, 6, &HoleSeedConfig::Solid);
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let cp = asm.assemble(&mat, &table, &field, &phi, false);
        let mut solver = FullSolver::new(SolveBackend::Direct);
        let red = solver.solve(&cp).unwrap();
        // Uniform material: correctors vanish.
        assert!(red.abs().max() < 1e-10, "correctors should vanish, got {}", red.abs().max());
        let chi = scatter_solutions(&pmap, &red);
        let ct = effective_tensor(&mat, &mesh, &table, &field, &phi, &chi);
        let c = mat.voigt(2);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (ct.c[(i, j)] - c[(i, j)]).abs() <= 1e-10 * c[(0, 0)],
                    "C^H[{i}{j}] = {} vs {}",
                    ct.c[(i, j)],
                    c[(i, j)]
                );
            }
        }
        assert!(ct.asymmetry < 1e-12);
    }

    #[test]
    fn scaling_youngs_modulus_scales_tensor_exactly() {
        let seeds = HoleSeedConfig::Explicit {
            holes: vec![Hole { center: [0.5, 0.5, 0.0], radius: 0.3 }],
        };
        let (mesh, table, pmap, asm, field, phi) = setup(2, 8, &seeds);
        let run = |e: f64| {
            let mat = MaterialModel::new(e, 0.3, true).unwrap();
            let cp = asm.assemble(&mat, &table, &field, &phi, false);
            let mut solver = FullSolver::new(SolveBackend::Direct);
            let red = solver.solve(&cp).unwrap();
            let chi = scatter_solutions(&pmap, &red);
            effective_tensor(&mat, &mesh, &table, &field, &phi, &chi)
        };
        let c1 = run(1.0);
        let c2 = run(2.0);
        for i in 0..3 {
            for j in 0..3 {
                // Doubling E rescales by a power of two: bitwise exact.
                assert_eq!(2.0 * c1.c[(i, j)], c2.c[(i, j)], "component ({i},{j})");
            }
        }
        let nu1 = engineering_constants(&c1, 2).unwrap();
        let nu2 = engineering_constants(&c2, 2).unwrap();
        assert_abs_diff_eq!(nu1.nu[0][1], nu2.nu[0][1], epsilon = 1e-14);
    }

    #[test]
    fn engineering_constants_frozen_auxetic_example() {
        // A strongly auxetic effective tensor: nu_xy = C12 / C11 for the
        // isotropic-normal block = -0.0372 / 0.0658.
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 0)] = 0.0658;
        c[(1, 1)] = 0.0658;
        c[(0, 1)] = -0.0372;
        c[(1, 0)] = -0.0372;
        c[(2, 2)] = 0.002;
        let ct = EffectiveTensor { c, asymmetry: 0.0 };
        let ec = engineering_constants(&ct, 2).unwrap();
        assert_abs_diff_eq!(ec.nu[0][1], -0.565, epsilon = 1e-3);
        assert_abs_diff_eq!(ec.nu[1][0], -0.565, epsilon = 1e-3);
        assert!(ec.e[0] > 0.0);
        assert_abs_diff_eq!(ec.g[0], 0.002, epsilon = 1e-15);
    }

    #[test]
    fn singular_tensor_is_rejected() {
        let ct = EffectiveTensor { c: DMatrix::zeros(3, 3), asymmetry: 0.0 };
        assert!(engineering_constants(&ct, 2).is_err());
    }

    #[test]
    fn direct_and_pcg_agree_on_a_holey_design() {
        let seeds = HoleSeedConfig::Lattice { per_dir: 2, radius: 0.16 };
        let (mesh, table, pmap, asm, field, phi) = setup(2, 8, &seeds);
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let cp = asm.assemble(&mat, &table, &field, &phi, false);
        let mut direct = FullSolver::new(SolveBackend::Direct);
        let xd = direct.solve(&cp).unwrap();
        let mut pcg = FullSolver::new(SolveBackend::Pcg { tol: 1e-11, max_iter: 20000 });
        let xp = pcg.solve(&cp).unwrap();
        let scale = xd.abs().max();
        assert!((xd.clone() - xp.clone()).abs().max() <= 1e-6 * scale);
        let chi_d = scatter_solutions(&pmap, &xd);
        let chi_p = scatter_solutions(&pmap, &xp);
        let cd = effective_tensor(&mat, &mesh, &table, &field, &phi, &chi_d);
        let cpn = effective_tensor(&mat, &mesh, &table, &field, &phi, &chi_p);
        assert!((cd.c - cpn.c).abs().max() < 1e-8);
    }

    #[test]
    fn effective_tensor_spsd_on_random_banded_design() {
        let (mesh, table, pmap, asm, mut field, _) = setup(2, 8, &HoleSeedConfig::Solid);
        // Deterministic wavy design crossing the band.
        for g in 0..mesh.n_points() {
            let x = mesh.point_coords(g);
            field.alpha[g] = 0.18
                * ((6.1 * x[0] + 1.0).sin() * (5.3 * x[1] + 0.4).cos() + 0.15);
        }
        let phi = PhiTable::build(&field, &table);
        let mat = MaterialModel::new(1.0, 0.3, true).unwrap();
        let cp = asm.assemble(&mat, &table, &field, &phi, false);
        let mut solver = FullSolver::new(SolveBackend::Direct);
        let red = solver.solve(&cp).unwrap();
        let chi = scatter_solutions(&pmap, &red);
        let ct = effective_tensor(&mat, &mesh, &table, &field, &phi, &chi);
        assert!(ct.min_eigenvalue() >= -1e-10 * ct.c.abs().max());
        assert!(ct.asymmetry <= 1e-10);
    }
}
