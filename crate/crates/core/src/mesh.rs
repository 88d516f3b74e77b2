//! Structured tensor-product discretization of the unit cell `[0,1]^d`.
//!
//! The mesh owns the per-direction knot vectors and extraction operators,
//! control-point coordinates at Greville abscissae (which makes the geometry
//! map affine with a constant Jacobian), the Gauss rule, and three derived
//! maps used everywhere downstream:
//!
//! * [`BasisTable`]: basis values and spatial gradients at every quadrature
//!   point, deduplicated over repeated extraction patterns,
//! * [`PeriodicMap`]: opposite-face control-point identification plus one
//!   anchored corner, producing the reduced unknown set,
//! * [`SymmetryMap`]: orbits of control points under reflections about the
//!   cell midplanes.

use crate::error::{Error, Result};
use crate::splines::{ExtractionSet, KnotVector, greville_points};

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Nodes and weights by Newton iteration on the Legendre polynomial.
    pub fn legendre(n: usize) -> Self {
        assert!(n >= 1 && n <= 16, "unsupported rule order {n}");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Chebyshev-like initial guess, refined by Newton.
            let mut x = (std::f64::consts::PI * (4.0 * i as f64 + 3.0) / (4.0 * n as f64 + 2.0)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_eval(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_eval(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // Ascending nodes; symmetrize pairs exactly.
        nodes.reverse();
        weights.reverse();
        for i in 0..n / 2 {
            let mag = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -mag;
            nodes[n - 1 - i] = mag;
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Structured unit-cell mesh.
#[derive(Debug, Clone)]
pub struct ControlMesh {
    pub dim: usize,
    /// Elements per direction.
    pub elems: Vec<usize>,
    pub degree: usize,
    pub ext: ExtractionSet,
    /// Greville abscissae per direction; control point `(i, j, k)` sits at
    /// `(greville[0][i], greville[1][j], greville[2][k])`.
    pub greville: Vec<Vec<f64>>,
    /// Element edge length per direction.
    pub h: Vec<f64>,
    pub quad_1d: GaussRule,
}

impl ControlMesh {
    pub fn unit_cell(dim: usize, elems: &[usize], degree: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension {dim} unsupported (expected 2 or 3)")));
        }
        if elems.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} element counts, got {}",
                elems.len()
            )));
        }
        if elems.iter().any(|&n| n < 2) {
            return Err(Error::Config("need at least 2 elements per direction".into()));
        }
        let kvs: Vec<KnotVector> = elems
            .iter()
            .map(|&n| KnotVector::open_uniform(degree, n))
            .collect::<Result<_>>()?;
        let greville = kvs.iter().map(greville_points).collect();
        let ext = ExtractionSet::new(&kvs, None)?;
        let h = elems.iter().map(|&n| 1.0 / n as f64).collect();
        let quad_1d = GaussRule::legendre(degree + 1);
        Ok(Self { dim, elems: elems.to_vec(), degree, ext, greville, h, quad_1d })
    }

    /// Control points per direction.
    pub fn point_counts(&self) -> Vec<usize> {
        self.ext.point_counts()
    }

    pub fn n_points(&self) -> usize {
        self.ext.n_points()
    }

    pub fn n_elements(&self) -> usize {
        self.ext.n_elements()
    }

    /// Local basis functions per element.
    pub fn n_local(&self) -> usize {
        (self.degree + 1).pow(self.dim as u32)
    }

    /// Quadrature points per element.
    pub fn n_qp(&self) -> usize {
        self.quad_1d.len().pow(self.dim as u32)
    }

    /// Physical coordinates of control point `g`.
    pub fn point_coords(&self, g: usize) -> [f64; 3] {
        let n = self.ext.point_counts();
        let mut rem = g;
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.greville[d][rem % n[d]];
            rem /= n[d];
        }
        x
    }

    /// Physical volume (area) of one element; uniform over the mesh.
    pub fn elem_measure(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Locates the element containing physical point `x` and the parent
    /// coordinates within it.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 3]) {
        let mut e = 0usize;
        let mut stride = 1usize;
        let mut xi = [0.0; 3];
        for d in 0..self.dim {
            let xd = x[d].clamp(0.0, 1.0);
            let mut ed = (xd / self.h[d]) as usize;
            if ed >= self.elems[d] {
                ed = self.elems[d] - 1;
            }
            xi[d] = (2.0 * (xd - ed as f64 * self.h[d]) / self.h[d] - 1.0).clamp(-1.0, 1.0);
            e += ed * stride;
            stride *= self.elems[d];
        }
        (e, xi)
    }
}

/// Precomputed basis data at every quadrature point.
///
/// Identical extraction patterns (ubiquitous on uniform meshes) share
/// storage; `pattern[e]` selects the block for element `e`. Gradients are
/// spatial, with the constant parent-to-physical scaling already applied.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub n_qp: usize,
    pub n_local: usize,
    /// Per element: global control-point indices.
    pub conn: Vec<Vec<usize>>,
    pub pattern: Vec<usize>,
    /// Per pattern: `n_qp * n_local` values, qp-major.
    pub values: Vec<Vec<f64>>,
    /// Per pattern: spatial gradients, qp-major.
    pub grads: Vec<Vec<[f64; 3]>>,
    /// Quadrature weight times Jacobian determinant per qp (uniform mesh:
    /// identical for all elements).
    pub wj: Vec<f64>,
    /// Parent coordinates of each qp.
    pub qp_parent: Vec<[f64; 3]>,
}

impl BasisTable {
    pub fn build(mesh: &ControlMesh) -> Self {
        let dim = mesh.dim;
        let nq1 = mesh.quad_1d.len();
        let n_qp = mesh.n_qp();
        let n_local = mesh.n_local();
        let ne = mesh.n_elements();

        // Tensor quadrature layout, x-fastest.
        let mut qp_parent = Vec::with_capacity(n_qp);
        let mut wj = Vec::with_capacity(n_qp);
        let jac: f64 = (0..dim).map(|d| 0.5 * mesh.h[d]).product();
        let kmax = if dim == 3 { nq1 } else { 1 };
        for k in 0..kmax {
            for j in 0..nq1 {
                for i in 0..nq1 {
                    let mut xi = [0.0; 3];
                    xi[0] = mesh.quad_1d.nodes[i];
                    xi[1] = mesh.quad_1d.nodes[j];
                    let mut w = mesh.quad_1d.weights[i] * mesh.quad_1d.weights[j];
                    if dim == 3 {
                        xi[2] = mesh.quad_1d.nodes[k];
                        w *= mesh.quad_1d.weights[k];
                    }
                    qp_parent.push(xi);
                    wj.push(w * jac);
                }
            }
        }

        // Deduplicate identical per-direction operators by bit pattern.
        let mut dir_ids: Vec<Vec<usize>> = Vec::with_capacity(dim);
        for d in 0..dim {
            let uni = &mesh.ext.dirs[d];
            let mut keys: Vec<Vec<u64>> = Vec::new();
            let mut ids = Vec::with_capacity(uni.ops.len());
            for op in &uni.ops {
                let key: Vec<u64> = op.iter().map(|v| v.to_bits()).collect();
                let id = match keys.iter().position(|k| *k == key) {
                    Some(i) => i,
                    None => {
                        keys.push(key);
                        keys.len() - 1
                    }
                };
                ids.push(id);
            }
            dir_ids.push(ids);
        }

        let mut pattern = vec![0usize; ne];
        let mut pattern_keys: Vec<[usize; 3]> = Vec::new();
        let mut pattern_rep: Vec<usize> = Vec::new();
        let mut conn = Vec::with_capacity(ne);
        for e in 0..ne {
            conn.push(mesh.ext.element_connectivity(e));
            let me = mesh.ext.elem_multi_index(e);
            let mut key = [usize::MAX; 3];
            for d in 0..dim {
                key[d] = dir_ids[d][me[d]];
            }
            pattern[e] = match pattern_keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    pattern_keys.push(key);
                    pattern_rep.push(e);
                    pattern_keys.len() - 1
                }
            };
        }

        let mut values = Vec::with_capacity(pattern_rep.len());
        let mut grads = Vec::with_capacity(pattern_rep.len());
        let scale: Vec<f64> = (0..3)
            .map(|d| if d < dim { 2.0 / mesh.h[d] } else { 0.0 })
            .collect();
        for &e in &pattern_rep {
            let mut pv = Vec::with_capacity(n_qp * n_local);
            let mut pg = Vec::with_capacity(n_qp * n_local);
            for q in 0..n_qp {
                let xi = &qp_parent[q][..dim];
                let basis = mesh.ext.eval(e, xi).expect("in-range evaluation");
                for l in 0..n_local {
                    pv.push(basis.values[l]);
                    let g = basis.grads[l];
                    pg.push([g[0] * scale[0], g[1] * scale[1], g[2] * scale[2]]);
                }
            }
            values.push(pv);
            grads.push(pg);
        }

        BasisTable { n_qp, n_local, conn, pattern, values, grads, wj, qp_parent }
    }

    /// Basis values for element `e` at quadrature point `q`.
    #[inline]
    pub fn values_at(&self, e: usize, q: usize) -> &[f64] {
        let p = self.pattern[e];
        &self.values[p][q * self.n_local..(q + 1) * self.n_local]
    }

    /// Spatial basis gradients for element `e` at quadrature point `q`.
    #[inline]
    pub fn grads_at(&self, e: usize, q: usize) -> &[[f64; 3]] {
        let p = self.pattern[e];
        &self.grads[p][q * self.n_local..(q + 1) * self.n_local]
    }
}

/// Opposite-face control-point identification with a single anchored corner.
///
/// Points with any direction index equal to `n_d - 1` are slaves of the
/// point with that index wrapped to `0`; corner points chain to the
/// minimal-coordinate representative. The lexicographically first corner is
/// the anchor whose displacement components are fixed to zero to remove
/// rigid translation.
#[derive(Debug, Clone)]
pub struct PeriodicMap {
    pub dim: usize,
    pub n_points: usize,
    /// Point to master point (identity on masters).
    pub master_of: Vec<usize>,
    /// Point to reduced point index; slaves carry their master's index.
    pub reduced_of: Vec<usize>,
    /// Reduced point index to global point.
    pub masters: Vec<usize>,
    /// Reduced point index of the anchored corner.
    pub anchor: usize,
}

impl PeriodicMap {
    pub fn build(mesh: &ControlMesh) -> Self {
        let dim = mesh.dim;
        let n = mesh.ext.point_counts();
        let n_points = mesh.n_points();

        // Opposite faces must carry matching transverse Greville abscissae;
        // on a shared per-direction grid this reduces to the end abscissae
        // sitting on the faces themselves.
        for d in 0..dim {
            let g = &mesh.greville[d];
            debug_assert!(g[0].abs() < 1e-12 && (g[g.len() - 1] - 1.0).abs() < 1e-12);
        }

        let mut master_of = vec![0usize; n_points];
        let mut reduced_of = vec![0usize; n_points];
        let mut masters = Vec::new();
        let red_counts: Vec<usize> = (0..dim).map(|d| n[d] - 1).collect();
        for g in 0..n_points {
            let mut rem = g;
            let mut folded = 0usize;
            let mut stride_full = 1usize;
            let mut stride_red = 1usize;
            let mut is_master = true;
            let mut master = 0usize;
            for d in 0..dim {
                let i = rem % n[d];
                rem /= n[d];
                let f = if i == n[d] - 1 { 0 } else { i };
                if f != i {
                    is_master = false;
                }
                folded += f * stride_red;
                master += f * stride_full;
                stride_full *= n[d];
                stride_red *= red_counts[d];
            }
            master_of[g] = master;
            reduced_of[g] = folded;
            if is_master {
                debug_assert_eq!(masters.len(), folded);
                masters.push(g);
            }
        }
        PeriodicMap { dim, n_points, master_of, reduced_of, masters, anchor: 0 }
    }

    pub fn n_reduced_points(&self) -> usize {
        self.masters.len()
    }

    /// Reduced displacement unknowns (anchored components included; they are
    /// constrained at the matrix level).
    pub fn n_reduced_dofs(&self) -> usize {
        self.masters.len() * self.dim
    }

    #[inline]
    pub fn reduced_dof(&self, point: usize, comp: usize) -> usize {
        self.reduced_of[point] * self.dim + comp
    }

    /// Anchored reduced dof indices.
    pub fn anchor_dofs(&self) -> Vec<usize> {
        (0..self.dim).map(|c| self.anchor * self.dim + c).collect()
    }

    /// Copies master values onto the full point set (slaves receive their
    /// master's value). `comps` is the number of values carried per point.
    pub fn scatter(&self, reduced: &[f64], comps: usize) -> Vec<f64> {
        assert_eq!(reduced.len(), self.masters.len() * comps);
        let mut full = vec![0.0; self.n_points * comps];
        for g in 0..self.n_points {
            let r = self.reduced_of[g];
            for c in 0..comps {
                full[g * comps + c] = reduced[r * comps + c];
            }
        }
        full
    }

    /// Extracts master values from a full vector.
    pub fn gather(&self, full: &[f64], comps: usize) -> Vec<f64> {
        assert_eq!(full.len(), self.n_points * comps);
        let mut reduced = vec![0.0; self.masters.len() * comps];
        for (r, &g) in self.masters.iter().enumerate() {
            for c in 0..comps {
                reduced[r * comps + c] = full[g * comps + c];
            }
        }
        reduced
    }
}

/// Control-point orbits under reflection about each cell midplane.
#[derive(Debug, Clone)]
pub struct SymmetryMap {
    /// Orbit id per point.
    pub orbit_of: Vec<usize>,
    /// Members of each orbit.
    pub orbits: Vec<Vec<usize>>,
    /// Canonical (minimal-index) representative per orbit.
    pub representative: Vec<usize>,
}

impl SymmetryMap {
    /// Orbits of the full reflection group (all `dim` midplanes).
    pub fn build(mesh: &ControlMesh) -> Self {
        let dim = mesh.dim;
        let n = mesh.ext.point_counts();
        let n_points = mesh.n_points();
        let mut orbit_of = vec![usize::MAX; n_points];
        let mut orbits: Vec<Vec<usize>> = Vec::new();
        let mut representative = Vec::new();
        for g in 0..n_points {
            if orbit_of[g] != usize::MAX {
                continue;
            }
            // Enumerate the orbit of g under all reflection combinations.
            let mut idx = [0usize; 3];
            let mut rem = g;
            for d in 0..dim {
                idx[d] = rem % n[d];
                rem /= n[d];
            }
            let mut members = Vec::new();
            for mask in 0..(1usize << dim) {
                let mut p = 0usize;
                let mut stride = 1usize;
                for d in 0..dim {
                    let i = if mask & (1 << d) != 0 { n[d] - 1 - idx[d] } else { idx[d] };
                    p += i * stride;
                    stride *= n[d];
                }
                if !members.contains(&p) {
                    members.push(p);
                }
            }
            members.sort_unstable();
            let id = orbits.len();
            for &m in &members {
                orbit_of[m] = id;
            }
            representative.push(members[0]);
            orbits.push(members);
        }
        SymmetryMap { orbit_of, orbits, representative }
    }

    pub fn n_orbits(&self) -> usize {
        self.orbits.len()
    }

    /// Sums per-point values over each orbit (gradient folding).
    pub fn fold(&self, per_point: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.orbits.len()];
        for (g, &o) in self.orbit_of.iter().enumerate() {
            out[o] += per_point[g];
        }
        out
    }

    /// Broadcasts orbit values back to all member points.
    pub fn expand(&self, per_orbit: &[f64]) -> Vec<f64> {
        assert_eq!(per_orbit.len(), self.orbits.len());
        self.orbit_of.iter().map(|&o| per_orbit[o]).collect()
    }

    /// Replaces each point value by its orbit mean (symmetrization).
    pub fn symmetrize(&self, per_point: &mut [f64]) {
        for members in &self.orbits {
            let mean = members.iter().map(|&m| per_point[m]).sum::<f64>() / members.len() as f64;
            for &m in members {
                per_point[m] = mean;
            }
        }
    }

    /// Orbit values read from representatives.
    pub fn collect_representatives(&self, per_point: &[f64]) -> Vec<f64> {
        self.representative.iter().map(|&r| per_point[r]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_frozen_low_order_rules() {
        let g2 = GaussRule::legendre(2);
        assert_abs_diff_eq!(g2.nodes[0], -(1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g2.nodes[1], (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g2.weights[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g2.weights[1], 1.0, epsilon = 1e-15);

        let g3 = GaussRule::legendre(3);
        assert_abs_diff_eq!(g3.nodes[0], -(0.6f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g3.nodes[1], 0.0, epsilon = 1e-300);
        assert_abs_diff_eq!(g3.weights[0], 5.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g3.weights[1], 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        for n in 1..=6 {
            let g = GaussRule::legendre(n);
            assert_abs_diff_eq!(g.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
            // Exact through degree 2n - 1.
            for deg in 0..=(2 * n - 1) {
                let num: f64 = g
                    .nodes
                    .iter()
                    .zip(&g.weights)
                    .map(|(&x, &w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(num, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn mesh_counts_and_measures() {
        let mesh = ControlMesh::unit_cell(2, &[4, 4], 1).unwrap();
        assert_eq!(mesh.n_points(), 25);
        assert_eq!(mesh.n_elements(), 16);
        let mesh = ControlMesh::unit_cell(2, &[2, 2], 2).unwrap();
        assert_eq!(mesh.n_points(), 16);
        let mesh = ControlMesh::unit_cell(3, &[2, 2, 2], 1).unwrap();
        assert_eq!(mesh.n_points(), 27);
        assert_eq!(mesh.n_elements(), 8);
        assert_abs_diff_eq!(mesh.elem_measure(), 0.125, epsilon = 1e-16);
    }

    #[test]
    fn quadrature_measure_sums_to_cell_volume() {
        for (dim, elems, p) in [(2usize, vec![5usize, 3], 2usize), (3, vec![2, 3, 2], 2), (2, vec![8, 8], 3)] {
            let mesh = ControlMesh::unit_cell(dim, &elems, p).unwrap();
            let table = BasisTable::build(&mesh);
            let total: f64 = (0..mesh.n_elements())
                .map(|_| table.wj.iter().sum::<f64>())
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn basis_table_partition_of_unity_everywhere() {
        let mesh = ControlMesh::unit_cell(2, &[6, 4], 2).unwrap();
        let table = BasisTable::build(&mesh);
        for e in 0..mesh.n_elements() {
            for q in 0..table.n_qp {
                let s: f64 = table.values_at(e, q).iter().sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-13);
                for c in 0..2 {
                    let g: f64 = table.grads_at(e, q).iter().map(|g| g[c]).sum();
                    assert_abs_diff_eq!(g, 0.0, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn basis_table_matches_unshared_evaluation() {
        // Dedup must not change values: compare against direct eval on every
        // element, including the boundary ones with distinct operators.
        let mesh = ControlMesh::unit_cell(2, &[5, 5], 2).unwrap();
        let table = BasisTable::build(&mesh);
        for e in 0..mesh.n_elements() {
            for (q, xi) in table.qp_parent.iter().enumerate() {
                let basis = mesh.ext.eval(e, &xi[..2]).unwrap();
                let vals = table.values_at(e, q);
                let grads = table.grads_at(e, q);
                for l in 0..table.n_local {
                    assert_abs_diff_eq!(vals[l], basis.values[l], epsilon = 1e-15);
                    for d in 0..2 {
                        assert_abs_diff_eq!(
                            grads[l][d],
                            basis.grads[l][d] * 2.0 / mesh.h[d],
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_difference_in_physical_space() {
        let mesh = ControlMesh::unit_cell(2, &[4, 3], 2).unwrap();
        // A random-ish smooth control field; its gradient via basis grads
        // must match finite differences of point evaluation.
        let n = mesh.n_points();
        let f: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        let eval = |x: &[f64]| -> f64 {
            let (e, xi) = mesh.locate(x);
            let basis = mesh.ext.eval(e, &xi[..2]).unwrap();
            basis.fns.iter().zip(&basis.values).map(|(&g, v)| f[g] * v).sum()
        };
        let x = [0.41, 0.63];
        let (e, xi) = mesh.locate(&x);
        let basis = mesh.ext.eval(e, &xi[..2]).unwrap();
        for d in 0..2 {
            let grad: f64 = basis
                .fns
                .iter()
                .zip(&basis.grads)
                .map(|(&g, gr)| f[g] * gr[d] * 2.0 / mesh.h[d])
                .sum();
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            assert_abs_diff_eq!(grad, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn periodic_reduction_counts() {
        // 4x4 elements, p = 1: 25 points, 16 masters.
        let mesh = ControlMesh::unit_cell(2, &[4, 4], 1).unwrap();
        let map = PeriodicMap::build(&mesh);
        assert_eq!(map.n_reduced_points(), 16);
        // 2x2 elements, p = 2: 16 points, 9 masters.
        let mesh = ControlMesh::unit_cell(2, &[2, 2], 2).unwrap();
        let map = PeriodicMap::build(&mesh);
        assert_eq!(map.n_reduced_points(), 9);
        // 2^3 elements, p = 1: 27 points, 8 masters.
        let mesh = ControlMesh::unit_cell(3, &[2, 2, 2], 1).unwrap();
        let map = PeriodicMap::build(&mesh);
        assert_eq!(map.n_reduced_points(), 8);
        assert_eq!(map.anchor, 0);
    }

    #[test]
    fn periodic_far_corner_chains_to_origin() {
        let mesh = ControlMesh::unit_cell(2, &[3, 3], 2).unwrap();
        let map = PeriodicMap::build(&mesh);
        let n = mesh.ext.point_counts();
        let far = (n[0] - 1) + n[0] * (n[1] - 1);
        assert_eq!(map.master_of[far], 0);
        let right_mid = (n[0] - 1) + n[0] * 2;
        assert_eq!(map.master_of[right_mid], n[0] * 2);
    }

    #[test]
    fn periodic_scatter_gather_identities() {
        let mesh = ControlMesh::unit_cell(2, &[3, 4], 2).unwrap();
        let map = PeriodicMap::build(&mesh);
        let nr = map.n_reduced_points();
        let reduced: Vec<f64> = (0..nr * 2).map(|i| i as f64 * 0.5 - 3.0).collect();
        let full = map.scatter(&reduced, 2);
        // gather(scatter(x)) == x exactly.
        assert_eq!(map.gather(&full, 2), reduced);
        // Slaves carry master values.
        for g in 0..map.n_points {
            let m = map.master_of[g];
            for c in 0..2 {
                assert_eq!(full[g * 2 + c], full[m * 2 + c]);
            }
        }
    }

    #[test]
    fn symmetry_orbit_counts_and_folding() {
        let mesh = ControlMesh::unit_cell(2, &[4, 4], 1).unwrap(); // 5x5 points
        let sym = SymmetryMap::build(&mesh);
        // ceil(5/2)^2 orbits.
        assert_eq!(sym.n_orbits(), 9);
        let ones = vec![1.0; mesh.n_points()];
        let folded = sym.fold(&ones);
        let total: f64 = folded.iter().sum();
        assert_abs_diff_eq!(total, 25.0, epsilon = 1e-14);
        // Center point is its own orbit.
        let center = 2 + 5 * 2;
        let o = sym.orbit_of[center];
        assert_eq!(sym.orbits[o], vec![center]);
    }

    #[test]
    fn symmetrize_then_fold_is_reflection_invariant() {
        let mesh = ControlMesh::unit_cell(2, &[3, 3], 2).unwrap();
        let sym = SymmetryMap::build(&mesh);
        let n = mesh.n_points();
        let npc = mesh.ext.point_counts();
        let mut vals: Vec<f64> = (0..n).map(|i| ((i * 17 + 3) % 13) as f64).collect();
        sym.symmetrize(&mut vals);
        // Reflecting the field in x leaves it unchanged.
        for j in 0..npc[1] {
            for i in 0..npc[0] {
                let a = vals[i + npc[0] * j];
                let b = vals[(npc[0] - 1 - i) + npc[0] * j];
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
        // expand(collect_representatives(.)) reproduces the symmetric field.
        let rep = sym.collect_representatives(&vals);
        let back = sym.expand(&rep);
        for (a, b) in vals.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn locate_maps_points_to_elements() {
        let mesh = ControlMesh::unit_cell(2, &[4, 4], 2).unwrap();
        let (e, xi) = mesh.locate(&[0.0, 0.0]);
        assert_eq!(e, 0);
        assert_abs_diff_eq!(xi[0], -1.0, epsilon = 1e-14);
        let (e, xi) = mesh.locate(&[1.0, 1.0]);
        assert_eq!(e, 15);
        assert_abs_diff_eq!(xi[0], 1.0, epsilon = 1e-14);
        let (e, _) = mesh.locate(&[0.3, 0.6]);
        assert_eq!(e, 1 + 4 * 2);
    }
}
