//! Run configuration: a versioned TOML schema covering the mesh, material,
//! design parameterization, objective, constraint, optimizer, reduced-basis
//! settings, loop control, solver selection, and output policy.
//!
//! Unknown keys are rejected so typos fail loudly, and serialization round
//! trips losslessly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{n_cases, MaterialModel, SolveBackend};
use crate::levelset::HoleSeedConfig;
use crate::mma::MmaConfig;
use crate::rom::RomConfig;
use crate::sensitivity::{ObjectiveSpec, ObjectiveTerm};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    pub design: DesignConfig,
    pub objective: ObjectiveConfig,
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub rom: RomSection,
    #[serde(default, rename = "loop")]
    pub run_loop: LoopConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub dim: usize,
    pub elements: Vec<usize>,
    pub degree: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub youngs: f64,
    pub poisson: f64,
    #[serde(default = "default_true")]
    pub plane_stress: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub seeds: HoleSeedConfig,
    /// Interface band half-width as a multiple of the largest element
    /// width.
    #[serde(default = "default_band_factor")]
    pub band_factor: f64,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    /// Reduce the design space to reflection-symmetric fields.
    #[serde(default = "default_true")]
    pub symmetry: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub terms: Vec<ObjectiveTerm>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub volume_fraction: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let m = MmaConfig::default();
        OptimizerConfig {
            move_limit: m.move_limit,
            asy_init: m.asy_init,
            asy_incr: m.asy_incr,
            asy_decr: m.asy_decr,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RomSection {
    pub enabled: bool,
    pub capacity: usize,
    pub tol: f64,
    /// Full-solve iterations before gating starts; defaults to `capacity`.
    pub warmup: Option<usize>,
    /// Include the frozen-basis correction in gradients on reduced
    /// iterations (otherwise the equilibrium expression is reused as-is).
    pub exact_gradient: bool,
}

impl Default for RomSection {
    fn default() -> Self {
        let r = RomConfig::default();
        RomSection {
            enabled: true,
            capacity: r.capacity,
            tol: r.tol,
            warmup: None,
            exact_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { max_iterations: 300, convergence_window: 10, convergence_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    /// Direct factorization in 2D, conjugate gradients in 3D.
    Auto,
    Direct,
    Pcg,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub backend: BackendChoice,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { backend: BackendChoice::Auto, pcg_tol: 1e-9, pcg_max_iter: 40_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Write field exports every N iterations (0 = final only).
    pub vtk_every: usize,
    pub checkpoint_every: usize,
    /// Keep logs bitwise reproducible: timing columns are written as zero
    /// and all parallel reductions run in a fixed order.
    pub deterministic: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            vtk_every: 0,
            checkpoint_every: 10,
            deterministic: true,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_band_factor() -> f64 {
    1.5
}

fn default_rho_min() -> f64 {
    crate::levelset::DEFAULT_RHO_MIN
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.mesh.dim != 2 && self.mesh.dim != 3 {
            return Err(Error::Config(format!("mesh dimension must be 2 or 3, got {}", self.mesh.dim)));
        }
        if self.mesh.elements.len() != self.mesh.dim {
            return Err(Error::Config(format!(
                "expected {} element counts, got {}",
                self.mesh.dim,
                self.mesh.elements.len()
            )));
        }
        self.material()?;
        if !(self.design.band_factor > 0.0) {
            return Err(Error::Config("band factor must be positive".into()));
        }
        if !(self.design.rho_min > 0.0 && self.design.rho_min < 1.0) {
            return Err(Error::Config("density floor must lie in (0, 1)".into()));
        }
        self.objective_spec().validate(n_cases(self.mesh.dim))?;
        if !(self.constraint.volume_fraction > 0.0 && self.constraint.volume_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "volume fraction must lie in (0, 1], got {}",
                self.constraint.volume_fraction
            )));
        }
        self.mma_config().validate()?;
        self.rom_config().validate()?;
        if self.run_loop.max_iterations == 0 || self.run_loop.convergence_window == 0 {
            return Err(Error::Config("loop iteration counts must be positive".into()));
        }
        if !(self.solver.pcg_tol > 0.0) || self.solver.pcg_max_iter == 0 {
            return Err(Error::Config("iterative solver settings must be positive".into()));
        }
        Ok(())
    }

    pub fn material(&self) -> Result<MaterialModel> {
        MaterialModel::new(
            self.material.youngs,
            self.material.poisson,
            self.material.plane_stress,
        )
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        ObjectiveSpec { terms: self.objective.terms.clone() }
    }

    pub fn mma_config(&self) -> MmaConfig {
        MmaConfig {
            asy_init: self.optimizer.asy_init,
            asy_incr: self.optimizer.asy_incr,
            asy_decr: self.optimizer.asy_decr,
            move_limit: self.optimizer.move_limit,
        }
    }

    pub fn rom_config(&self) -> RomConfig {
        RomConfig {
            capacity: self.rom.capacity,
            tol: self.rom.tol,
            warmup: self.rom.warmup.unwrap_or(self.rom.capacity),
        }
    }

    pub fn solve_backend(&self) -> SolveBackend {
        match self.solver.backend {
            BackendChoice::Auto => SolveBackend::default_for_dim(self.mesh.dim),
            BackendChoice::Direct => SolveBackend::Direct,
            BackendChoice::Pcg => SolveBackend::Pcg {
                tol: self.solver.pcg_tol,
                max_iter: self.solver.pcg_max_iter,
            },
        }
    }

    /// Uniformly shrinks the mesh, e.g. to turn a production 3D setting
    /// into a desk-scale smoke test.
    pub fn apply_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0) {
            return Err(Error::Config(format!("scale must be positive, got {scale}")));
        }
        for e in self.mesh.elements.iter_mut() {
            let scaled = ((*e as f64) * scale).round() as usize;
            *e = scaled.max(2);
        }
        Ok(())
    }
}
