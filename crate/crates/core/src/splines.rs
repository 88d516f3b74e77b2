//! Univariate and tensor-product B-spline machinery in Bezier-extracted
//! form.
//!
//! Every element carries a small extraction operator `C^e` so that the
//! spline basis restricted to the element is `N(xi) = C^e B(xi)`, with `B`
//! the Bernstein polynomials on the parent interval `[-1, 1]`. Downstream
//! code (mesh, assembly, export) only ever touches per-element operators;
//! the global recursive evaluator [`KnotVector::eval_basis`] exists as an
//! independent route used for cross-checking and for dense reference
//! assemblies in tests.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Binomial coefficients up to the degrees supported by [`bernstein_eval`].
const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

pub const MAX_DEGREE: usize = 4;

/// Bernstein basis of degree `p` on the parent interval `[-1, 1]`.
///
/// Returns `(values, derivatives)` of the `p + 1` polynomials at `xi`;
/// derivatives are with respect to the parent coordinate.
pub fn bernstein_eval(p: usize, xi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if p == 0 || p > MAX_DEGREE {
        return Err(Error::Basis(format!(
            "Bernstein degree {p} unsupported (expected 1..={MAX_DEGREE})"
        )));
    }
    if !(-1.0..=1.0).contains(&xi) {
        return Err(Error::Basis(format!(
            "Bernstein evaluation point {xi} outside parent domain [-1, 1]"
        )));
    }
    let s = 0.5 * (1.0 + xi); // map to [0, 1]
    let t = 1.0 - s;
    let mut vals = vec![0.0; p + 1];
    for (i, v) in vals.iter_mut().enumerate() {
        *v = BINOMIAL[p][i] * s.powi(i as i32) * t.powi((p - i) as i32);
    }
    // dB_{i,p}/dxi = (p/2) (B_{i-1,p-1} - B_{i,p-1}), with out-of-range
    // lower-degree terms zero.
    let mut ders = vec![0.0; p + 1];
    let q = p - 1;
    let lower = |i: usize| -> f64 {
        if q == 0 {
            1.0
        } else {
            BINOMIAL[q][i] * s.powi(i as i32) * t.powi((q - i) as i32)
        }
    };
    for (i, d) in ders.iter_mut().enumerate() {
        let left = if i >= 1 && i - 1 <= q { lower(i - 1) } else { 0.0 };
        let right = if i <= q { lower(i) } else { 0.0 };
        *d = 0.5 * p as f64 * (left - right);
    }
    Ok((vals, ders))
}

/// An open (clamped) knot vector with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::Basis(format!(
                "degree {degree} unsupported (expected 1..={MAX_DEGREE})"
            )));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Basis(format!(
                "knot vector of length {} too short for degree {degree}",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Basis("knot vector must be nondecreasing".into()));
        }
        let p = degree;
        let n = knots.len();
        if knots[..=p].iter().any(|&k| k != knots[0])
            || knots[n - 1 - p..].iter().any(|&k| k != knots[n - 1])
        {
            return Err(Error::Basis(
                "knot vector must be open: first and last knots repeated degree + 1 times".into(),
            ));
        }
        if knots[0] == knots[n - 1] {
            return Err(Error::Basis("knot vector spans an empty interval".into()));
        }
        // Interior multiplicity above p would make the basis discontinuous.
        let interior = &knots[p + 1..n - p - 1];
        let mut run = 1usize;
        for i in 1..interior.len() {
            if interior[i] == interior[i - 1] {
                run += 1;
                if run > p {
                    return Err(Error::Basis(format!(
                        "interior knot {} has multiplicity above the degree",
                        interior[i]
                    )));
                }
            } else {
                run = 1;
            }
        }
        Ok(Self { degree, knots })
    }

    /// Uniform open knot vector over `[0, 1]` with `n_elems` nonzero spans.
    pub fn open_uniform(degree: usize, n_elems: usize) -> Result<Self> {
        if n_elems == 0 {
            return Err(Error::Basis("need at least one element".into()));
        }
        let mut knots = vec![0.0; degree];
        knots.extend((0..=n_elems).map(|i| i as f64 / n_elems as f64));
        knots.extend(std::iter::repeat(1.0).take(degree));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of B-spline basis functions.
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Nonzero knot spans as `(first_knot_index, start, end)` triples.
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for i in self.degree..self.knots.len() - self.degree - 1 {
            if self.knots[i + 1] > self.knots[i] {
                out.push((i, self.knots[i], self.knots[i + 1]));
            }
        }
        out
    }

    /// Index of the knot span containing `u` (clamped at the right end).
    pub fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let n = self.n_basis();
        let u = u.clamp(self.knots[0], self.knots[self.knots.len() - 1]);
        if u >= self.knots[n] {
            // Rightmost nonzero span.
            let mut k = n - 1;
            while self.knots[k + 1] <= self.knots[k] {
                k -= 1;
            }
            return k;
        }
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Direct recursive evaluation of the `p + 1` basis functions that are
    /// nonzero at `u`, together with first derivatives with respect to `u`.
    ///
    /// Returns `(first_fn, values, derivatives)`. This path never feeds the
    /// extraction-based pipeline; it is the reference the extraction route is
    /// tested against.
    pub fn eval_basis(&self, u: f64) -> (usize, Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let span = self.find_span(u);
        let k = &self.knots;

        // Triangular Cox-de Boor table; `ndu[j][r]` holds degree-j values.
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        ndu[0][0] = 1.0;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { ndu[j - 1][r] / denom };
                ndu[j][r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values = ndu[p].clone();

        // First derivative from the degree-(p-1) values:
        // N'_{i,p} = p [ N_{i,p-1}/(k_{i+p}-k_i) - N_{i+1,p-1}/(k_{i+p+1}-k_{i+1}) ].
        let mut ders = vec![0.0; p + 1];
        for r in 0..=p {
            let i = span - p + r;
            let mut d = 0.0;
            if r > 0 {
                let denom = k[i + p] - k[i];
                if denom != 0.0 {
                    d += ndu[p - 1][r - 1] / denom;
                }
            }
            if r < p {
                let denom = k[i + p + 1] - k[i + 1];
                if denom != 0.0 {
                    d -= ndu[p - 1][r] / denom;
                }
            }
            ders[r] = p as f64 * d;
        }
        (span - p, values, ders)
    }
}

/// Greville abscissae: averaged knots, one per basis function. Control
/// points placed here reproduce affine geometry exactly.
pub fn greville_points(kv: &KnotVector) -> Vec<f64> {
    let p = kv.degree();
    let k = kv.knots();
    (0..kv.n_basis())
        .map(|i| k[i + 1..=i + p].iter().sum::<f64>() / p as f64)
        .collect()
}

/// Per-element Bezier extraction of a univariate B-spline basis.
#[derive(Debug, Clone)]
pub struct UnivariateExtraction {
    pub degree: usize,
    /// One `(p+1) x (p+1)` operator per element; rows index the supported
    /// spline functions, columns the Bernstein polynomials.
    pub ops: Vec<DMatrix<f64>>,
    /// Global index of the first spline function supported on each element.
    pub first_fn: Vec<usize>,
    /// Parametric `(start, end)` of each element.
    pub spans: Vec<(f64, f64)>,
    pub n_fns: usize,
}

/// Builds per-element extraction operators by repeated knot insertion until
/// every interior knot reaches multiplicity `p`.
pub fn build_extraction(kv: &KnotVector) -> UnivariateExtraction {
    let p = kv.degree();
    let u = kv.knots();
    let m = u.len();
    let spans = kv.spans();
    let n_elems = spans.len();

    let mut ops = vec![DMatrix::<f64>::identity(p + 1, p + 1); n_elems];
    let mut alphas = vec![0.0; p.max(1)];

    let mut a = p;
    let mut b = a + 1;
    let mut nb = 0usize;
    while b < m - 1 {
        let i = b;
        while b < m - 1 && u[b + 1] == u[b] {
            b += 1;
        }
        let mult = b - i + 1;
        if mult < p {
            let numer = u[b] - u[a];
            for j in (mult + 1..=p).rev() {
                alphas[j - mult - 1] = numer / (u[a + j] - u[a]);
            }
            let r = p - mult;
            for j in 1..=r {
                let save = r - j;
                let s = mult + j;
                for kcol in (s..=p).rev() {
                    let alpha = alphas[kcol - s];
                    for row in 0..=p {
                        let v = alpha * ops[nb][(row, kcol)] + (1.0 - alpha) * ops[nb][(row, kcol - 1)];
                        ops[nb][(row, kcol)] = v;
                    }
                }
                if b < m - 1 {
                    // Overlapping coefficients carry into the next operator.
                    for l in 0..=j {
                        ops[nb + 1][(save + l, save)] = ops[nb][(p - j + l, p)];
                    }
                }
            }
        }
        nb += 1;
        if b < m - 1 {
            a = b;
            b += 1;
        }
    }

    let first_fn = spans.iter().map(|&(k, _, _)| k - p).collect();
    let spans = spans.iter().map(|&(_, s, e)| (s, e)).collect();
    UnivariateExtraction { degree: p, ops, first_fn, spans, n_fns: kv.n_basis() }
}

/// Basis values and parent-domain gradients of one element's supported
/// functions, in tensor-product (x-fastest) local order.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    /// Global control-point indices, x-fastest.
    pub fns: Vec<usize>,
    pub values: Vec<f64>,
    /// Gradients with respect to the parent coordinates; unused trailing
    /// components are zero for d = 2.
    pub grads: Vec<[f64; 3]>,
}

/// Tensor-product extraction over `d` parametric directions with per-point
/// rational weights.
#[derive(Debug, Clone)]
pub struct ExtractionSet {
    pub dirs: Vec<UnivariateExtraction>,
    /// One weight per global control point (`prod n_fns`), x-fastest. All
    /// ones gives the polynomial B-spline basis.
    pub weights: Vec<f64>,
}

impl ExtractionSet {
    pub fn new(kvs: &[KnotVector], weights: Option<Vec<f64>>) -> Result<Self> {
        if kvs.is_empty() || kvs.len() > 3 {
            return Err(Error::Basis(format!(
                "expected 1..=3 parametric directions, got {}",
                kvs.len()
            )));
        }
        let dirs: Vec<_> = kvs.iter().map(build_extraction).collect();
        let n_pts: usize = dirs.iter().map(|d| d.n_fns).product();
        let weights = match weights {
            Some(w) => {
                if w.len() != n_pts {
                    return Err(Error::Basis(format!(
                        "expected {} weights, got {}",
                        n_pts,
                        w.len()
                    )));
                }
                if w.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::Basis("control-point weights must be positive".into()));
                }
                w
            }
            None => vec![1.0; n_pts],
        };
        Ok(Self { dirs, weights })
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    pub fn n_elements(&self) -> usize {
        self.dirs.iter().map(|d| d.ops.len()).product()
    }

    pub fn n_points(&self) -> usize {
        self.dirs.iter().map(|d| d.n_fns).product()
    }

    /// Elements per direction.
    pub fn elem_counts(&self) -> Vec<usize> {
        self.dirs.iter().map(|d| d.ops.len()).collect()
    }

    /// Control points per direction.
    pub fn point_counts(&self) -> Vec<usize> {
        self.dirs.iter().map(|d| d.n_fns).collect()
    }

    /// Decomposes a flat element index into per-direction indices, x-fastest.
    pub fn elem_multi_index(&self, e: usize) -> [usize; 3] {
        let counts = self.elem_counts();
        let mut rem = e;
        let mut out = [0usize; 3];
        for (d, &c) in counts.iter().enumerate() {
            out[d] = rem % c;
            rem /= c;
        }
        out
    }

    /// Global control-point indices supported on element `e`, x-fastest.
    pub fn element_connectivity(&self, e: usize) -> Vec<usize> {
        let me = self.elem_multi_index(e);
        let npts = self.point_counts();
        let p: Vec<usize> = self.dirs.iter().map(|d| d.degree).collect();
        let first: Vec<usize> = self.dirs.iter().enumerate().map(|(d, u)| u.first_fn[me[d]]).collect();
        let dim = self.dim();
        let mut out = Vec::with_capacity(p.iter().map(|&q| q + 1).product());
        match dim {
            1 => {
                for i in 0..=p[0] {
                    out.push(first[0] + i);
                }
            }
            2 => {
                for j in 0..=p[1] {
                    for i in 0..=p[0] {
                        out.push(first[0] + i + npts[0] * (first[1] + j));
                    }
                }
            }
            _ => {
                for k in 0..=p[2] {
                    for j in 0..=p[1] {
                        for i in 0..=p[0] {
                            out.push(
                                first[0] + i + npts[0] * (first[1] + j + npts[1] * (first[2] + k)),
                            );
                        }
                    }
                }
            }
        }
        out
    }

    /// Rational basis values and parent-domain gradients on element `e` at
    /// parent point `xi` (one coordinate per direction, each in `[-1, 1]`).
    pub fn eval(&self, e: usize, xi: &[f64]) -> Result<ElementBasis> {
        let dim = self.dim();
        if xi.len() != dim {
            return Err(Error::Basis(format!(
                "expected {dim} parent coordinates, got {}",
                xi.len()
            )));
        }
        if e >= self.n_elements() {
            return Err(Error::Basis(format!(
                "element index {e} out of range ({} elements)",
                self.n_elements()
            )));
        }
        let me = self.elem_multi_index(e);

        // Per-direction spline values/derivatives through the extraction
        // operators.
        let mut vals_d: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut ders_d: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for d in 0..dim {
            let uni = &self.dirs[d];
            let p = uni.degree;
            let (b, db) = bernstein_eval(p, xi[d])?;
            let op = &uni.ops[me[d]];
            let mut v = vec![0.0; p + 1];
            let mut dv = vec![0.0; p + 1];
            for row in 0..=p {
                let mut sv = 0.0;
                let mut sd = 0.0;
                for col in 0..=p {
                    sv += op[(row, col)] * b[col];
                    sd += op[(row, col)] * db[col];
                }
                v[row] = sv;
                dv[row] = sd;
            }
            vals_d.push(v);
            ders_d.push(dv);
        }

        let fns = self.element_connectivity(e);
        let n_local = fns.len();
        let mut values = vec![0.0; n_local];
        let mut grads = vec![[0.0; 3]; n_local];

        // Homogeneous (weighted) values first.
        let mut wsum = 0.0;
        let mut dwsum = [0.0; 3];
        let p: Vec<usize> = self.dirs.iter().map(|d| d.degree).collect();
        let mut local = 0usize;
        let kmax = if dim == 3 { p[2] } else { 0 };
        let jmax = if dim >= 2 { p[1] } else { 0 };
        for k in 0..=kmax {
            for j in 0..=jmax {
                for i in 0..=p[0] {
                    let w = self.weights[fns[local]];
                    let vx = vals_d[0][i];
                    let dvx = ders_d[0][i];
                    let (vy, dvy) = if dim >= 2 { (vals_d[1][j], ders_d[1][j]) } else { (1.0, 0.0) };
                    let (vz, dvz) = if dim == 3 { (vals_d[2][k], ders_d[2][k]) } else { (1.0, 0.0) };
                    let n = vx * vy * vz;
                    let g = [dvx * vy * vz, vx * dvy * vz, vx * vy * dvz];
                    values[local] = w * n;
                    grads[local] = [w * g[0], w * g[1], w * g[2]];
                    wsum += w * n;
                    for c in 0..3 {
                        dwsum[c] += w * g[c];
                    }
                    local += 1;
                }
            }
        }

        // Rationalize: R = wN / W, dR = (w dN W - w N dW) / W^2.
        let inv_w = 1.0 / wsum;
        for l in 0..n_local {
            let v = values[l] * inv_w;
            for c in 0..3 {
                grads[l][c] = (grads[l][c] - v * dwsum[c]) * inv_w;
            }
            values[l] = v;
        }
        Ok(ElementBasis { fns, values, grads })
    }
}
