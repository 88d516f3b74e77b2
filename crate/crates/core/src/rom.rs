//! On-the-fly reduced-basis reuse of equilibrium solutions.
//!
//! Each load case keeps its own small orthonormal basis harvested from
//! past full solves. When the basis explains the current problem well
//! enough (relative residual of the Galerkin solution below a gate
//! tolerance for every case), the expensive full solve is skipped for
//! that iteration. Raw snapshots are retained so the basis can be
//! rebuilt from scratch if orthonormality drifts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::CsrMatrix;

/// Tuning knobs for the reuse scheme.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RomConfig {
    /// Maximum basis vectors kept per load case.
    pub capacity: usize,
    /// Gate: every case's relative residual must stay below this for the
    /// reduced solution to be accepted.
    pub tol: f64,
    /// Iterations at the start of a run that always use full solves.
    pub warmup: usize,
}

impl Default for RomConfig {
    fn default() -> Self {
        let capacity = 12;
        RomConfig { capacity, tol: 0.01, warmup: capacity }
    }
}

impl RomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("reduced-basis capacity must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!(
                "reduced-solve gate tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Remainder below this fraction of the input norm is considered already
/// represented and not added.
pub const ENRICH_REJECT_REL: f64 = 1e-10;
/// Orthonormality drift that triggers a rebuild from raw snapshots. Twice
/// projected Gram-Schmidt keeps the Gram matrix within a few ulps of the
/// identity, so tripping this is rare.
pub const REORTH_DRIFT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrichOutcome {
    Added,
    AddedWithEviction,
    Rejected,
}

/// Orthonormal snapshot basis for one load case (FIFO by insertion age).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedBasis {
    n: usize,
    capacity: usize,
    columns: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl ReducedBasis {
    pub fn new(n: usize, capacity: usize) -> Self {
        ReducedBasis { n, capacity, columns: Vec::new(), raw: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn raw_snapshots(&self) -> &[Vec<f64>] {
        &self.raw
    }

    /// Twice-projected modified Gram-Schmidt remainder of `v`.
    fn remainder(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        for _ in 0..2 {
            for col in &self.columns {
                let c = dot(col, &w);
                for (wi, ci) in w.iter_mut().zip(col) {
                    *wi -= c * ci;
                }
            }
        }
        w
    }

    /// Adds a full solution snapshot, evicting the oldest entry when at
    /// capacity. Vectors already represented in the span are rejected
    /// (without disturbing the existing queue).
    pub fn enrich(&mut self, chi: &[f64]) -> EnrichOutcome {
        assert_eq!(chi.len(), self.n, "snapshot length mismatch");
        let nv = norm(chi);
        if nv == 0.0 {
            return EnrichOutcome::Rejected;
        }
        if norm(&self.remainder(chi)) <= ENRICH_REJECT_REL * nv {
            return EnrichOutcome::Rejected;
        }
        let mut evicted = false;
        if self.columns.len() == self.capacity {
            self.columns.remove(0);
            self.raw.remove(0);
            evicted = true;
        }
        // Shrinking the span can only grow the remainder, so the novelty
        // decision above still holds after eviction.
        let mut w = self.remainder(chi);
        let nw = norm(&w);
        for x in w.iter_mut() {
            *x /= nw;
        }
        self.columns.push(w);
        self.raw.push(chi.to_vec());
        if self.orthonormality_drift() > REORTH_DRIFT {
            self.rebuild();
        }
        if evicted {
            EnrichOutcome::AddedWithEviction
        } else {
            EnrichOutcome::Added
        }
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        let m = self.columns.len();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in i..m {
                let g = dot(&self.columns[i], &self.columns[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Re-orthonormalizes from the raw snapshot queue.
    fn rebuild(&mut self) {
        let raw = std::mem::take(&mut self.raw);
        self.columns.clear();
        for chi in &raw {
            let nv = norm(chi);
            if nv == 0.0 {
                continue;
            }
            let mut w = self.remainder(chi);
            let nw = norm(&w);
            if nw > ENRICH_REJECT_REL * nv {
                for x in w.iter_mut() {
                    *x /= nw;
                }
                self.columns.push(w);
            }
        }
        // Keep raw aligned with what survived; dropped snapshots carried
        // no new information.
        self.raw = raw;
    }
}

/// Running counters for reporting and the acceptance checks.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RomTelemetry {
    pub full_solves: usize,
    pub reduced_solves: usize,
    pub gate_rejections: usize,
    pub enrichments: usize,
    pub enrich_rejections: usize,
    pub evictions: usize,
}

/// Per-case reduced bases plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RomAccelerator {
    pub config: RomConfig,
    bases: Vec<ReducedBasis>,
    pub telemetry: RomTelemetry,
}

impl RomAccelerator {
    pub fn new(config: RomConfig, n: usize, ncases: usize) -> Result<Self> {
        config.validate()?;
        let bases = (0..ncases).map(|_| ReducedBasis::new(n, config.capacity)).collect();
        Ok(RomAccelerator { config, bases, telemetry: RomTelemetry::default() })
    }

    pub fn n_cases(&self) -> usize {
        self.bases.len()
    }

    pub fn basis(&self, case: usize) -> &ReducedBasis {
        &self.bases[case]
    }

    /// True once past warm-up with a usable basis for every case.
    pub fn eligible(&self, iteration: usize) -> bool {
        iteration >= self.config.warmup && self.bases.iter().all(|b| !b.is_empty())
    }

    /// Folds one round of full solutions into the bases (one column per
    /// case).
    pub fn absorb(&mut self, solutions: &DMatrix<f64>) {
        assert_eq!(solutions.ncols(), self.bases.len());
        for (case, basis) in self.bases.iter_mut().enumerate() {
            let chi: Vec<f64> = solutions.column(case).iter().cloned().collect();
            match basis.enrich(&chi) {
                EnrichOutcome::Added => self.telemetry.enrichments += 1,
                EnrichOutcome::AddedWithEviction => {
                    self.telemetry.enrichments += 1;
                    self.telemetry.evictions += 1;
                }
                EnrichOutcome::Rejected => self.telemetry.enrich_rejections += 1,
            }
        }
    }

    /// Builds per-case Galerkin operators for the current stiffness.
    /// Returns `None` when any case has an empty basis or a reduced
    /// operator that fails to factor.
    pub fn context<'a>(&'a self, k: &CsrMatrix) -> Option<RomContext<'a>> {
        if self.bases.iter().any(|b| b.is_empty()) {
            return None;
        }
        let mut cases = Vec::with_capacity(self.bases.len());
        for basis in &self.bases {
            let m = basis.len();
            let mut kphi = Vec::with_capacity(m);
            for col in basis.columns() {
                let mut out = vec![0.0; k.n];
                k.matvec(col, &mut out);
                kphi.push(out);
            }
            let mut kt = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    kt[(i, j)] = dot(&basis.columns()[i], &kphi[j]);
                }
            }
            // Symmetrize roundoff before factoring.
            let kt = 0.5 * (&kt + kt.transpose());
            let chol = Cholesky::new(kt)?;
            cases.push(CaseContext { basis, chol });
        }
        Some(RomContext { cases })
    }
}

struct CaseContext<'a> {
    basis: &'a ReducedBasis,
    chol: Cholesky<f64, Dyn>,
}

/// Factored Galerkin operators for one stiffness matrix.
pub struct RomContext<'a> {
    cases: Vec<CaseContext<'a>>,
}

/// One case's reduced solution and its quality.
#[derive(Debug, Clone)]
pub struct CaseSolution {
    pub x: Vec<f64>,
    pub rel_residual: f64,
}

impl<'a> RomContext<'a> {
    /// Galerkin projection `Phi (Phi^T K Phi)^{-1} Phi^T v` for one case.
    pub fn project(&self, case: usize, v: &[f64]) -> Vec<f64> {
        let ctx = &self.cases[case];
        let m = ctx.basis.len();
        let mut rhs = DVector::zeros(m);
        for (i, col) in ctx.basis.columns().iter().enumerate() {
            rhs[i] = dot(col, v);
        }
        let coef = ctx.chol.solve(&rhs);
        let n = v.len();
        let mut out = vec![0.0; n];
        for (i, col) in ctx.basis.columns().iter().enumerate() {
            let c = coef[i];
            for (o, phi) in out.iter_mut().zip(col) {
                *o += c * phi;
            }
        }
        out
    }

    /// Reduced solve of `K x = f` for one case, with the relative
    /// residual measured in the full space.
    pub fn solve_case(&self, case: usize, k: &CsrMatrix, f: &[f64]) -> CaseSolution {
        let x = self.project(case, f);
        let mut ax = vec![0.0; k.n];
        k.matvec(&x, &mut ax);
        let mut rn = 0.0;
        let mut fn2 = 0.0;
        for i in 0..k.n {
            rn += (ax[i] - f[i]).powi(2);
            fn2 += f[i].powi(2);
        }
        let rel_residual = (rn / fn2.max(1e-300)).sqrt();
        CaseSolution { x, rel_residual }
    }

    /// Solves every case; `gate_tol` decides acceptance.
    pub fn solve_all(&self, k: &CsrMatrix, loads: &DMatrix<f64>, gate_tol: f64) -> RomSolveReport {
        let ncases = self.cases.len();
        let mut solutions = DMatrix::zeros(k.n, ncases);
        let mut residuals = Vec::with_capacity(ncases);
        for case in 0..ncases {
            let f: Vec<f64> = loads.column(case).iter().cloned().collect();
            let sol = self.solve_case(case, k, &f);
            solutions.column_mut(case).copy_from_slice(&sol.x);
            residuals.push(sol.rel_residual);
        }
        let accepted = residuals.iter().all(|&r| r < gate_tol);
        RomSolveReport { solutions, residuals, accepted }
    }
}

/// Outcome of a gated reduced solve over all cases.
pub struct RomSolveReport {
    pub solutions: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub accepted: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 1D Laplacian plus identity: SPD, easy to reason about.
    fn spd_matrix(n: usize) -> CsrMatrix {
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            rows[i].push(i as u32);
            if i > 0 {
                rows[i].push((i - 1) as u32);
            }
            if i + 1 < n {
                rows[i].push((i + 1) as u32);
            }
        }
        let mut a = CsrMatrix::from_pattern(rows);
        for i in 0..n {
            let p = a.find(i, i).unwrap();
            a.values[p] = 3.0;
            if i > 0 {
                let p = a.find(i, i - 1).unwrap();
                a.values[p] = -1.0;
            }
            if i + 1 < n {
                let p = a.find(i, i + 1).unwrap();
                a.values[p] = -1.0;
            }
        }
        a
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn orthonormality_survives_fifty_enrich_evict_cycles() {
        let n = 40;
        let mut basis = ReducedBasis::new(n, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for step in 0..50 {
            basis.enrich(&random_vec(&mut rng, n));
            let drift = basis.orthonormality_drift();
            assert!(drift <= 1e-10, "step {step}: drift {drift:.3e}");
        }
        assert_eq!(basis.len(), 5);
        assert_eq!(basis.raw_snapshots().len(), 5);
        println!("final drift {:.3e}", basis.orthonormality_drift());
    }

    #[test]
    fn span_duplicates_are_rejected() {
        let n = 20;
        let mut basis = ReducedBasis::new(n, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(&mut rng, n);
        let b = random_vec(&mut rng, n);
        assert_eq!(basis.enrich(&a), EnrichOutcome::Added);
        assert_eq!(basis.enrich(&b), EnrichOutcome::Added);
        // A linear combination of existing snapshots adds nothing.
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        assert_eq!(basis.enrich(&combo), EnrichOutcome::Rejected);
        assert_eq!(basis.len(), 2);
        let zero = vec![0.0; n];
        assert_eq!(basis.enrich(&zero), EnrichOutcome::Rejected);
    }

    #[test]
    fn eviction_is_first_in_first_out() {
        let n = 10;
        let mut basis = ReducedBasis::new(n, 3);
        let mut inputs = Vec::new();
        for i in 0..5 {
            let mut v = vec![0.0; n];
            v[i] = 1.0 + i as f64;
            v[(i + 3) % n] = -0.5;
            inputs.push(v);
        }
        for v in &inputs {
            basis.enrich(v);
        }
        assert_eq!(basis.len(), 3);
        for (kept, original) in basis.raw_snapshots().iter().zip(&inputs[2..]) {
            assert_eq!(kept, original, "raw queue should hold the newest snapshots");
        }
    }

    #[test]
    fn reduced_solve_matches_dense_projection_oracle() {
        let n = 30;
        let k = spd_matrix(n);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut basis = ReducedBasis::new(n, 6);
        for _ in 0..4 {
            basis.enrich(&random_vec(&mut rng, n));
        }
        let f = random_vec(&mut rng, n);

        let rom = RomAccelerator {
            config: RomConfig::default(),
            bases: vec![basis.clone()],
            telemetry: RomTelemetry::default(),
        };
        let ctx = rom.context(&k).unwrap();
        let sol = ctx.solve_case(0, &k, &f);

        // Dense oracle: same projection assembled with dense algebra.
        let kd = k.to_dense();
        let m = basis.len();
        let mut phi = DMatrix::zeros(n, m);
        for (j, col) in basis.columns().iter().enumerate() {
            for i in 0..n {
                phi[(i, j)] = col[i];
            }
        }
        let kt = phi.transpose() * &kd * &phi;
        let ft = phi.transpose() * DVector::from_column_slice(&f);
        let coef = kt.lu().solve(&ft).unwrap();
        let oracle = &phi * coef;
        for i in 0..n {
            assert!(
                (sol.x[i] - oracle[i]).abs() <= 1e-12,
                "entry {i}: {} vs {}",
                sol.x[i],
                oracle[i]
            );
        }

        // Galerkin orthogonality of the residual.
        let mut ax = vec![0.0; n];
        k.matvec(&sol.x, &mut ax);
        let fnorm = norm(&f);
        for (j, col) in basis.columns().iter().enumerate() {
            let g: f64 = col.iter().zip(ax.iter().zip(&f)).map(|(p, (a, b))| p * (a - b)).sum();
            assert!(g.abs() <= 1e-10 * fnorm, "column {j}: residual projection {g:.3e}");
        }
    }

    #[test]
    fn exact_snapshot_gives_machine_precision_reduced_solve() {
        let n = 25;
        let k = spd_matrix(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_vec(&mut rng, n);
        // Solve directly for the snapshot.
        let exact = crate::solver::LdltFactor::factor(&k).unwrap().solve(&f);
        let mut rom = RomAccelerator::new(RomConfig::default(), n, 1).unwrap();
        rom.absorb(&DMatrix::from_column_slice(n, 1, &random_vec(&mut rng, n)));
        rom.absorb(&DMatrix::from_column_slice(n, 1, &exact));
        let ctx = rom.context(&k).unwrap();
        let loads = DMatrix::from_column_slice(n, 1, &f);
        let report = ctx.solve_all(&k, &loads, 0.01);
        assert!(report.accepted);
        assert!(
            report.residuals[0] <= 1e-10,
            "residual {} with exact snapshot in span",
            report.residuals[0]
        );
        for i in 0..n {
            assert!((report.solutions[(i, 0)] - exact[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn gate_accepts_and_rejects_on_tolerance() {
        let n = 25;
        let k = spd_matrix(n);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_vec(&mut rng, n);
        let exact = crate::solver::LdltFactor::factor(&k).unwrap().solve(&f);
        let mut rom = RomAccelerator::new(RomConfig::default(), n, 1).unwrap();
        rom.absorb(&DMatrix::from_column_slice(n, 1, &exact));
        let ctx = rom.context(&k).unwrap();
        let loads = DMatrix::from_column_slice(n, 1, &f);
        assert!(ctx.solve_all(&k, &loads, 0.01).accepted);

        // A right-hand side with no overlap with the basis span's image
        // leaves the full residual: the gate must reject it.
        let mut ortho = random_vec(&mut rng, n);
        // Remove the component along K*exact so the basis cannot help.
        let kx: Vec<f64> = {
            let mut out = vec![0.0; n];
            k.matvec(&exact, &mut out);
            out
        };
        let c = dot(&ortho, &kx) / dot(&kx, &kx);
        for (o, v) in ortho.iter_mut().zip(&kx) {
            *o -= c * v;
        }
        let loads2 = DMatrix::from_column_slice(n, 1, &ortho);
        let report = ctx.solve_all(&k, &loads2, 0.01);
        assert!(!report.accepted, "residual {:.3e} should fail the gate", report.residuals[0]);
        assert!(report.residuals[0] > 0.9);
    }

    #[test]
    fn eligibility_requires_warmup_and_nonempty_bases() {
        let n = 10;
        let mut rom = RomAccelerator::new(RomConfig { capacity: 3, tol: 0.01, warmup: 4 }, n, 2)
            .unwrap();
        assert!(!rom.eligible(0));
        assert!(!rom.eligible(10), "empty bases must block eligibility");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let snaps = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        rom.absorb(&snaps);
        assert!(!rom.eligible(3), "still inside warm-up");
        assert!(rom.eligible(4));
        assert_eq!(rom.telemetry.enrichments, 2);
    }

    #[test]
    fn projection_matches_dense_formula() {
        let n = 18;
        let k = spd_matrix(n);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rom = RomAccelerator::new(RomConfig::default(), n, 1).unwrap();
        for _ in 0..3 {
            rom.absorb(&DMatrix::from_column_slice(n, 1, &random_vec(&mut rng, n)));
        }
        let v = random_vec(&mut rng, n);
        let ctx = rom.context(&k).unwrap();
        let w = ctx.project(0, &v);

        let kd = k.to_dense();
        let m = rom.basis(0).len();
        let mut phi = DMatrix::zeros(n, m);
        for (j, col) in rom.basis(0).columns().iter().enumerate() {
            for i in 0..n {
                phi[(i, j)] = col[i];
            }
        }
        let kt = phi.transpose() * &kd * &phi;
        let rhs = phi.transpose() * DVector::from_column_slice(&v);
        let oracle = &phi * kt.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((w[i] - oracle[i]).abs() <= 1e-12);
        }
    }
}
