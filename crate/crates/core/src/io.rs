//! File artifacts: VTK field exports, the CSV iteration log, and JSON
//! checkpoints.
//!
//! Floating-point values are written with the shortest representation
//! that parses back to the identical bits, so exports and logs are both
//! human-readable and lossless. Checkpoints are written atomically
//! (temporary file then rename) so an interrupted run never clobbers the
//! previous good state.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::DesignField;
use crate::mesh::ControlMesh;
use crate::mma::MmaState;
use crate::rom::RomAccelerator;

/// Level-set and density fields sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFields {
    /// Grid points per direction (z = 1 for 2D).
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub phi: Vec<f64>,
    pub density: Vec<f64>,
}

/// Samples `phi` and `H(phi)` at twice the quadrature resolution per
/// direction: `2 (p + 1) n_e + 1` points including both cell faces.
pub fn sample_fields(mesh: &ControlMesh, field: &DesignField) -> Result<SampledFields> {
    let dim = mesh.dim;
    let counts = mesh.ext.elem_counts();
    let mut dims = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    for d in 0..dim {
        dims[d] = 2 * (mesh.degree + 1) * counts[d] + 1;
        spacing[d] = 1.0 / (dims[d] - 1) as f64;
    }
    let total = dims[0] * dims[1] * dims[2];
    let mut phi = Vec::with_capacity(total);
    let mut density = Vec::with_capacity(total);
    for kz in 0..dims[2] {
        for ky in 0..dims[1] {
            for kx in 0..dims[0] {
                let x = [
                    kx as f64 * spacing[0],
                    ky as f64 * spacing[1],
                    kz as f64 * spacing[2],
                ];
                let (e, xi) = mesh.locate(&x);
                let (p, _) = field.eval_phi(mesh, e, &xi[..dim])?;
                phi.push(p);
                density.push(field.heaviside(p));
            }
        }
    }
    Ok(SampledFields { dims, spacing, phi, density })
}

/// Writes the sampled fields as a legacy ASCII structured-points file
/// with point scalars `phi` and `density`.
pub fn write_vtk(path: &Path, fields: &SampledFields) -> Result<()> {
    let mut text = String::new();
    text.push_str("# vtk DataFile Version 3.0\n");
    text.push_str("level-set unit cell fields\n");
    text.push_str("ASCII\n");
    text.push_str("DATASET STRUCTURED_POINTS\n");
    let _ = writeln!(text, "DIMENSIONS {} {} {}", fields.dims[0], fields.dims[1], fields.dims[2]);
    text.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(text, "SPACING {} {} {}", fields.spacing[0], fields.spacing[1], fields.spacing[2]);
    let _ = writeln!(text, "POINT_DATA {}", fields.phi.len());
    for (name, data) in [("phi", &fields.phi), ("density", &fields.density)] {
        let _ = writeln!(text, "SCALARS {name} double 1");
        text.push_str("LOOKUP_TABLE default\n");
        for v in data {
            let _ = writeln!(text, "{v}");
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads back a file produced by [`write_vtk`]; the float parse is exact,
/// so the result compares bit-equal with the written fields.
pub fn read_vtk(path: &Path) -> Result<SampledFields> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    let mut dims = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    let mut n_points = 0usize;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("DIMENSIONS ") {
            let parts: Vec<_> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad("malformed DIMENSIONS"));
            }
            for d in 0..3 {
                dims[d] = parts[d].parse().map_err(|_| bad("bad dimension value"))?;
            }
        } else if let Some(rest) = line.strip_prefix("SPACING ") {
            let parts: Vec<_> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad("malformed SPACING"));
            }
            for d in 0..3 {
                spacing[d] = parts[d].parse().map_err(|_| bad("bad spacing value"))?;
            }
        } else if let Some(rest) = line.strip_prefix("POINT_DATA ") {
            n_points = rest.trim().parse().map_err(|_| bad("bad point count"))?;
            break;
        }
    }
    if n_points == 0 || dims[0] * dims[1] * dims[2] != n_points {
        return Err(bad("inconsistent grid size"));
    }
    let mut phi = Vec::new();
    let mut density = Vec::new();
    let mut current: Option<&str> = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("SCALARS ") {
            current = rest.split_whitespace().next().and_then(|n| match n {
                "phi" => Some("phi"),
                "density" => Some("density"),
                _ => None,
            });
            continue;
        }
        if line.starts_with("LOOKUP_TABLE") || line.trim().is_empty() {
            continue;
        }
        let v: f64 = line.trim().parse().map_err(|_| bad("bad scalar value"))?;
        match current {
            Some("phi") => phi.push(v),
            Some("density") => density.push(v),
            _ => return Err(bad("scalar data outside a known array")),
        }
    }
    if phi.len() != n_points || density.len() != n_points {
        return Err(bad("scalar array length mismatch"));
    }
    Ok(SampledFields { dims, spacing, phi, density })
}

/// One row of the iteration log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j1: f64,
    pub volume: f64,
    /// Upper triangle of the effective tensor, row-major.
    pub tensor: Vec<f64>,
    /// Directional contraction ratios, `(i, j)` pairs in a fixed order:
    /// 2D `nu_xy, nu_yx`; 3D `nu_xy, nu_yx, nu_xz, nu_zx, nu_yz, nu_zy`.
    pub poisson: Vec<f64>,
    pub rom_used: bool,
    /// Relative residual per load case from the reduced solve (zeros on
    /// full iterations).
    pub rom_errors: Vec<f64>,
    /// Linear-solve seconds this iteration (written as 0 when the
    /// deterministic output contract is active).
    pub solve_seconds: f64,
    pub cumulative_full_solves: usize,
}

fn tensor_labels(dim: usize) -> Vec<String> {
    let nc = crate::fem::n_cases(dim);
    let mut out = Vec::new();
    for a in 0..nc {
        for b in a..nc {
            out.push(format!("c{a}{b}"));
        }
    }
    out
}

fn poisson_labels(dim: usize) -> Vec<&'static str> {
    if dim == 2 {
        vec!["nu_xy", "nu_yx"]
    } else {
        vec!["nu_xy", "nu_yx", "nu_xz", "nu_zx", "nu_yz", "nu_zy"]
    }
}

/// Append-only CSV writer with a fixed, dimension-dependent column order.
pub struct CsvLog {
    file: std::fs::File,
    dim: usize,
}

impl CsvLog {
    fn header(dim: usize) -> String {
        let mut cols = vec!["iteration".to_string(), "j1".into(), "volume".into()];
        cols.extend(tensor_labels(dim));
        cols.extend(poisson_labels(dim).into_iter().map(String::from));
        cols.push("rom_used".into());
        let ncases = crate::fem::n_cases(dim);
        for c in 0..ncases {
            cols.push(format!("rom_err_{c}"));
        }
        cols.push("solve_seconds".into());
        cols.push("full_solves".into());
        cols.join(",")
    }

    /// Creates the file and writes the header row.
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        writeln!(file, "{}", Self::header(dim))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(CsvLog { file, dim })
    }

    /// Continues an existing log so a resumed run extends the same file an
    /// uninterrupted run would have written. Rows past `upto` (written after
    /// the checkpoint being resumed) are dropped; a missing file or one with
    /// a foreign header is recreated from scratch.
    pub fn continue_at(path: &Path, dim: usize, upto: usize) -> Result<Self> {
        let header = Self::header(dim);
        let Ok(existing) = std::fs::read_to_string(path) else {
            return Self::create(path, dim);
        };
        let mut lines = existing.lines();
        if lines.next() != Some(header.as_str()) {
            return Self::create(path, dim);
        }
        let mut kept = header;
        kept.push('\n');
        for line in lines {
            match line.split(',').next().and_then(|f| f.parse::<usize>().ok()) {
                Some(it) if it <= upto => {
                    kept.push_str(line);
                    kept.push('\n');
                }
                _ => break,
            }
        }
        std::fs::write(path, kept).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(CsvLog { file, dim })
    }

    pub fn append(&mut self, r: &IterationRecord) -> Result<()> {
        let mut row = String::new();
        let _ = write!(row, "{},{},{}", r.iteration, r.j1, r.volume);
        for v in &r.tensor {
            let _ = write!(row, ",{v}");
        }
        for v in &r.poisson {
            let _ = write!(row, ",{v}");
        }
        let _ = write!(row, ",{}", if r.rom_used { 1 } else { 0 });
        let ncases = crate::fem::n_cases(self.dim);
        for c in 0..ncases {
            let v = r.rom_errors.get(c).copied().unwrap_or(0.0);
            let _ = write!(row, ",{v}");
        }
        let _ = write!(row, ",{},{}", r.solve_seconds, r.cumulative_full_solves);
        writeln!(self.file, "{row}").map_err(|e| Error::io("iteration log".to_string(), e))
    }
}

pub const CHECKPOINT_MAGIC: &str = "unit-cell-design-checkpoint";
pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Complete optimizer state needed to continue a run and reproduce the
/// remaining iteration records exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub schema_version: u32,
    /// Iterations completed so far.
    pub iteration: usize,
    pub field: DesignField,
    pub optimizer: MmaState,
    pub rom: Option<RomAccelerator>,
    /// Reduced warm-start solutions per load case (iterative backend).
    pub warm_start: Option<Vec<Vec<f64>>>,
    /// Objective values of all completed iterations.
    pub j_history: Vec<f64>,
    pub volume: f64,
    /// Volume bound the run was using; a differing value on resume is
    /// logged as a config change.
    pub volume_fraction: f64,
    pub cumulative_full_solves: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("encode: {e}")))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint file (magic {:?})",
                path.display(),
                ckpt.magic
            )));
        }
        if ckpt.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "{}: schema version {} unsupported (expected {CHECKPOINT_SCHEMA})",
                path.display(),
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }
}
