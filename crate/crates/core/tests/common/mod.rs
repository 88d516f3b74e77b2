//! Test-local dense homogenization oracle, written from first principles
//! against the method definition rather than the production code: direct
//! Cox-de Boor basis evaluation, its own Gauss table, dense assembly with
//! explicit periodic index folding, dense factorization, and direct
//! evaluation of the averaged tensor. It shares only the knot-vector
//! construction and the design coefficients with the pipeline under test.

use auxcell_core::nalgebra::DMatrix;
use auxcell_core::splines::KnotVector;

/// Gauss-Legendre nodes and weights on [-1, 1] for 2..=4 points.
fn gauss(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        2 => {
            let a = 0.577_350_269_189_625_8;
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = 0.774_596_669_241_483_4;
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = 0.339_981_043_584_856_26;
            let b = 0.861_136_311_594_052_6;
            let wa = 0.652_145_154_862_546_1;
            let wb = 0.347_854_845_137_453_85;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => panic!("no Gauss table for {n} points"),
    }
}

/// Restatement of the density regularization: `rho_min` below the band, a
/// cubic ramp clamped from below inside it, `1` above.
fn density(phi: f64, xi: f64, rho_min: f64) -> f64 {
    if phi < -xi {
        rho_min
    } else if phi > xi {
        1.0
    } else {
        let t = phi / xi;
        (0.75 * (t - t * t * t / 3.0) + 0.5).max(rho_min)
    }
}

fn plane_stress(e: f64, nu: f64) -> DMatrix<f64> {
    let f = e / (1.0 - nu * nu);
    DMatrix::from_row_slice(
        3,
        3,
        &[f, f * nu, 0.0, f * nu, f, 0.0, 0.0, 0.0, f * (1.0 - nu) / 2.0],
    )
}

pub struct OracleResult {
    /// Periodically folded stiffness with the first reduced point's rows
    /// and columns cleared to the diagonal (rigid-translation anchor).
    /// Not every test binary sharing this module consumes both fields.
    #[allow(dead_code)]
    pub k: DMatrix<f64>,
    pub c_h: DMatrix<f64>,
}

/// Dense 2D homogenization on an `ne x ne` grid of degree-`p` elements for
/// the design `alpha` (one coefficient per control point, x-fastest).
pub fn dense_oracle_2d(
    ne: usize,
    p: usize,
    alpha: &[f64],
    xi_band: f64,
    rho_min: f64,
    youngs: f64,
    poisson: f64,
) -> OracleResult {
    let kv = KnotVector::open_uniform(p, ne).unwrap();
    let n1 = kv.n_basis();
    assert_eq!(alpha.len(), n1 * n1);
    let nred1 = n1 - 1;
    let n_red = nred1 * nred1;
    let ndof = 2 * n_red;
    let c = plane_stress(youngs, poisson);
    let h = 1.0 / ne as f64;
    let (gn, gw) = gauss(p + 1);
    let nl = (p + 1) * (p + 1);

    // Periodic fold: the last point in each direction wraps to the first.
    let fold = |i: usize| if i == n1 - 1 { 0 } else { i };
    let red_point = |gx: usize, gy: usize| fold(gx) + nred1 * fold(gy);

    // Per-quadrature-point basis data, cached per element.
    struct QpData {
        n: Vec<f64>,
        gx: Vec<f64>,
        gy: Vec<f64>,
        w: f64,
    }
    let elem_basis = |ex: usize, ey: usize| -> (Vec<usize>, Vec<QpData>) {
        let mut conn = Vec::with_capacity(nl);
        let mut qps = Vec::new();
        let mut first = (0usize, 0usize);
        for (&ny_, &wy) in gn.iter().zip(&gw) {
            let v = (ey as f64 + 0.5 * (ny_ + 1.0)) * h;
            let (fy, by, dby) = kv.eval_basis(v);
            for (&nx_, &wx) in gn.iter().zip(&gw) {
                let u = (ex as f64 + 0.5 * (nx_ + 1.0)) * h;
                let (fx, bx, dbx) = kv.eval_basis(u);
                if qps.is_empty() {
                    first = (fx, fy);
                    for j in 0..=p {
                        for i in 0..=p {
                            conn.push((fx + i) + n1 * (fy + j));
                        }
                    }
                }
                assert_eq!((fx, fy), first, "span changed inside an element");
                let mut n = Vec::with_capacity(nl);
                let mut gx = Vec::with_capacity(nl);
                let mut gy = Vec::with_capacity(nl);
                for j in 0..=p {
                    for i in 0..=p {
                        n.push(bx[i] * by[j]);
                        gx.push(dbx[i] * by[j]);
                        gy.push(bx[i] * dby[j]);
                    }
                }
                qps.push(QpData { n, gx, gy, w: wx * wy * 0.25 * h * h });
            }
        }
        (conn, qps)
    };

    let mut k = DMatrix::<f64>::zeros(ndof, ndof);
    let mut loads = DMatrix::<f64>::zeros(ndof, 3);
    let unit = DMatrix::<f64>::identity(3, 3);

    let mut assemble_data: Vec<(Vec<usize>, Vec<QpData>)> = Vec::new();
    for ey in 0..ne {
        for ex in 0..ne {
            assemble_data.push(elem_basis(ex, ey));
        }
    }

    for (conn, qps) in &assemble_data {
        for qp in qps {
            let mut phi = 0.0;
            for (l, &g) in conn.iter().enumerate() {
                phi += alpha[g] * qp.n[l];
            }
            let rho = density(phi, xi_band, rho_min);
            let s = rho * qp.w;
            // Dense strain-displacement operator, 3 rows x 2 nl columns.
            let mut b = DMatrix::<f64>::zeros(3, 2 * nl);
            for l in 0..nl {
                b[(0, 2 * l)] = qp.gx[l];
                b[(2, 2 * l)] = qp.gy[l];
                b[(1, 2 * l + 1)] = qp.gy[l];
                b[(2, 2 * l + 1)] = qp.gx[l];
            }
            let ke = s * b.transpose() * &c * &b;
            let fe = s * b.transpose() * &c * &unit;
            for la in 0..nl {
                let (gax, gay) = (conn[la] % n1, conn[la] / n1);
                let ra = red_point(gax, gay);
                for ca in 0..2 {
                    let da = 2 * ra + ca;
                    for case in 0..3 {
                        loads[(da, case)] += fe[(2 * la + ca, case)];
                    }
                    for lb in 0..nl {
                        let (gbx, gby) = (conn[lb] % n1, conn[lb] / n1);
                        let rb = red_point(gbx, gby);
                        for cb in 0..2 {
                            k[(da, 2 * rb + cb)] += ke[(2 * la + ca, 2 * lb + cb)];
                        }
                    }
                }
            }
        }
    }

    // Anchor the first reduced point: clear its rows and columns, keep the
    // diagonal, and drop the corresponding load entries.
    for d in 0..2 {
        let diag = k[(d, d)];
        for j in 0..ndof {
            k[(d, j)] = 0.0;
            k[(j, d)] = 0.0;
        }
        k[(d, d)] = diag;
        for case in 0..3 {
            loads[(d, case)] = 0.0;
        }
    }

    let chol = k.clone().cholesky().expect("oracle stiffness should be positive definite");
    let mut u = DMatrix::<f64>::zeros(ndof, 3);
    for case in 0..3 {
        let x = chol.solve(&loads.column(case).into_owned());
        u.column_mut(case).copy_from(&x);
    }

    // Averaged tensor from the corrected strains.
    let mut c_h = DMatrix::<f64>::zeros(3, 3);
    for (conn, qps) in &assemble_data {
        for qp in qps {
            let mut phi = 0.0;
            for (l, &g) in conn.iter().enumerate() {
                phi += alpha[g] * qp.n[l];
            }
            let rho = density(phi, xi_band, rho_min);
            let mut strains = DMatrix::<f64>::zeros(3, 3);
            for (l, &g) in conn.iter().enumerate() {
                let (gx_, gy_) = (g % n1, g / n1);
                let r = red_point(gx_, gy_);
                for case in 0..3 {
                    let ux = u[(2 * r, case)];
                    let uy = u[(2 * r + 1, case)];
                    strains[(0, case)] += qp.gx[l] * ux;
                    strains[(1, case)] += qp.gy[l] * uy;
                    strains[(2, case)] += qp.gy[l] * ux + qp.gx[l] * uy;
                }
            }
            let corrected = &unit - strains;
            c_h += rho * qp.w * corrected.transpose() * &c * corrected;
        }
    }

    OracleResult { k, c_h }
}
