//! Method of moving asymptotes for box-bounded minimization with one
//! inequality constraint.
//!
//! Each step builds the separable convex approximation from the current
//! gradients and per-component asymptotes, then solves the subproblem
//! exactly through its scalar dual: the primal minimizer has a closed
//! form for fixed multiplier, and the multiplier comes from safeguarded
//! bisection with a Newton polish. Asymptotes widen where the iterate
//! moves monotonically and shrink where it oscillates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MmaConfig {
    /// Initial asymptote distance as a fraction of the variable range.
    pub asy_init: f64,
    /// Growth factor on monotone components.
    pub asy_incr: f64,
    /// Shrink factor on oscillating components.
    pub asy_decr: f64,
    /// Per-step move limit as a fraction of the variable range.
    pub move_limit: f64,
}

impl Default for MmaConfig {
    fn default() -> Self {
        MmaConfig { asy_init: 0.5, asy_incr: 1.2, asy_decr: 0.7, move_limit: 0.05 }
    }
}

impl MmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.asy_init > 0.0)
            || !(self.asy_incr > 1.0)
            || !(self.asy_decr > 0.0 && self.asy_decr < 1.0)
            || !(self.move_limit > 0.0)
        {
            return Err(Error::Config(
                "asymptote parameters must satisfy init > 0, incr > 1, 0 < decr < 1, move > 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of the asymptote gap kept between bounds and asymptotes.
const ALBEFA: f64 = 0.1;
/// Curvature floor added to both numerators.
const RAA0: f64 = 1e-5;
/// Closest an asymptote may come to the iterate, as a fraction of the
/// variable range. Near an interior optimum the iterates settle into a
/// small oscillation whose amplitude scales with this floor, so it caps
/// the attainable accuracy; 1e-3 keeps that well below working tolerances.
const ASY_MIN_FRAC: f64 = 1e-3;
/// Farthest an asymptote may drift, as a fraction of the variable range.
const ASY_MAX_FRAC: f64 = 10.0;
/// Linear penalty on the elastic constraint variable. The subproblem
/// always stays feasible: when the move-limited box cannot satisfy the
/// linearized constraint this step, the elastic term absorbs the
/// violation at this price and the iterates work it off over the next
/// steps.
const C_PENALTY: f64 = 1000.0;
/// Quadratic penalty on the elastic variable.
const D_PENALTY: f64 = 1.0;
/// Dual complementarity / feasibility tolerance.
const KKT_TOL: f64 = 1e-10;

/// Optimizer memory carried across iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmaState {
    pub iter: usize,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
}

/// Result of one update.
#[derive(Debug, Clone)]
pub struct MmaStep {
    pub x: Vec<f64>,
    /// Multiplier of the inequality constraint at the subproblem optimum.
    pub lambda: f64,
    /// KKT residual of the dual solve (complementarity and feasibility).
    pub kkt: f64,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        MmaState {
            iter: 0,
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            low: vec![0.0; n],
            upp: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.xold1.len()
    }

    /// One MMA step for `min f(x)` subject to `g(x) <= 0` and
    /// `xmin <= x <= xmax`, given current values and gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        x: &[f64],
        dfdx: &[f64],
        g: f64,
        dgdx: &[f64],
        xmin: &[f64],
        xmax: &[f64],
        cfg: &MmaConfig,
    ) -> Result<MmaStep> {
        let n = x.len();
        if [dfdx.len(), dgdx.len(), xmin.len(), xmax.len(), self.xold1.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::Config("design vector length mismatch in optimizer".into()));
        }
        cfg.validate()?;
        if !g.is_finite()
            || dfdx.iter().chain(dgdx).chain(x).any(|v| !v.is_finite())
            || xmin.iter().zip(xmax).any(|(a, b)| !(a < b))
        {
            return Err(Error::Config(
                "optimizer inputs must be finite with xmin < xmax per variable".into(),
            ));
        }

        // Asymptotes.
        if self.iter < 2 {
            for j in 0..n {
                let range = xmax[j] - xmin[j];
                self.low[j] = x[j] - cfg.asy_init * range;
                self.upp[j] = x[j] + cfg.asy_init * range;
            }
        } else {
            for j in 0..n {
                let range = xmax[j] - xmin[j];
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let gamma = if zzz > 0.0 {
                    cfg.asy_incr
                } else if zzz < 0.0 {
                    cfg.asy_decr
                } else {
                    1.0
                };
                let mut low = x[j] - gamma * (self.xold1[j] - self.low[j]);
                let mut upp = x[j] + gamma * (self.upp[j] - self.xold1[j]);
                low = low.max(x[j] - ASY_MAX_FRAC * range).min(x[j] - ASY_MIN_FRAC * range);
                upp = upp.min(x[j] + ASY_MAX_FRAC * range).max(x[j] + ASY_MIN_FRAC * range);
                self.low[j] = low;
                self.upp[j] = upp;
            }
        }

        // Feasible box: asymptote margin and move limit.
        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            let range = xmax[j] - xmin[j];
            alfa[j] = xmin[j]
                .max(self.low[j] + ALBEFA * (x[j] - self.low[j]))
                .max(x[j] - cfg.move_limit * range);
            beta[j] = xmax[j]
                .min(self.upp[j] - ALBEFA * (self.upp[j] - x[j]))
                .min(x[j] + cfg.move_limit * range);
            if beta[j] < alfa[j] {
                beta[j] = alfa[j];
            }
        }

        // Separable approximation coefficients.
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pc = vec![0.0; n];
        let mut qc = vec![0.0; n];
        let mut r_g = g;
        for j in 0..n {
            let range = (xmax[j] - xmin[j]).max(1e-5);
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let (fp, fm) = (dfdx[j].max(0.0), (-dfdx[j]).max(0.0));
            let mix_f = 0.001 * (fp + fm) + RAA0 / range;
            p0[j] = ux * ux * (fp + mix_f);
            q0[j] = xl * xl * (fm + mix_f);
            let (gp, gm) = (dgdx[j].max(0.0), (-dgdx[j]).max(0.0));
            let mix_g = 0.001 * (gp + gm) + RAA0 / range;
            pc[j] = ux * ux * (gp + mix_g);
            qc[j] = xl * xl * (gm + mix_g);
            r_g -= pc[j] / ux + qc[j] / xl;
        }
        let b = -r_g;

        // Primal minimizer for a fixed multiplier.
        let primal = |lam: f64, out: &mut [f64]| {
            for j in 0..n {
                let p = p0[j] + lam * pc[j];
                let q = q0[j] + lam * qc[j];
                let sp = p.sqrt();
                let sq = q.sqrt();
                let xj = (self.low[j] * sp + self.upp[j] * sq) / (sp + sq);
                out[j] = xj.clamp(alfa[j], beta[j]);
            }
        };
        // Subproblem constraint value at the primal point.
        let gsub = |xs: &[f64]| -> f64 {
            let mut v = -b;
            for j in 0..n {
                v += pc[j] / (self.upp[j] - xs[j]) + qc[j] / (xs[j] - self.low[j]);
            }
            v
        };

        // Elastic slack for a given multiplier.
        let elastic = |lam: f64| -> f64 { ((lam - C_PENALTY) / D_PENALTY).max(0.0) };

        let mut xs = vec![0.0; n];
        primal(0.0, &mut xs);
        let mut lambda = 0.0;
        if gsub(&xs) > KKT_TOL {
            // Bracket the root of the nonincreasing dual derivative
            // g_sub(x(lam)) - y(lam); the elastic term guarantees a sign
            // change.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            primal(hi, &mut xs);
            let mut ghi = gsub(&xs) - elastic(hi);
            let mut grew = 0;
            while ghi > 0.0 {
                lo = hi;
                hi *= 2.0;
                primal(hi, &mut xs);
                ghi = gsub(&xs) - elastic(hi);
                grew += 1;
                assert!(grew < 200, "dual bracket failed to close");
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                primal(mid, &mut xs);
                if gsub(&xs) - elastic(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.max(1.0) {
                    break;
                }
            }
            lambda = hi;
            primal(lambda, &mut xs);
            if lambda > C_PENALTY {
                // Elastic branch: g_sub(x(lam)) is nearly constant (the
                // primal sits on its move limits), so Newton on
                // g_sub - (lam - c)/d collapses to a fixed point that
                // lands in one or two steps.
                for _ in 0..3 {
                    lambda = (C_PENALTY + D_PENALTY * gsub(&xs)).max(C_PENALTY);
                    primal(lambda, &mut xs);
                }
            }
        }

        let gs = gsub(&xs) - elastic(lambda);
        // Scale-free complementarity plus subproblem feasibility.
        let kkt = ((lambda * gs).abs() / (1.0 + lambda)).max(gs.max(0.0));
        if kkt > KKT_TOL {
            return Err(Error::Solver(format!(
                "dual solve left KKT residual {kkt:.3e} (multiplier {lambda:.3e})"
            )));
        }

        self.xold2.copy_from_slice(&self.xold1);
        self.xold1.copy_from_slice(x);
        self.iter += 1;
        Ok(MmaStep { x: xs, lambda, kkt })
    }
}
