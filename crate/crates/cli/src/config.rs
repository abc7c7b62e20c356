//! Experiment configuration.
//!
//! Every key has a default, so an empty file describes the flat torus
//! `V = 0`, `P = 0` on 256 points. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use kamlab::schroedinger::EigenOptions;
use kamlab::semiclassical::{SweepConfig, TestSet};
use kamlab::torus::{check_compatible, ClosedForm, Potential, TorusGrid};
use kamlab::transport::CostVariant;
use kamlab::weak_kam::{default_time_step, SolverOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub form: FormSection,
    pub weakkam: WeakKamSection,
    pub eigen: EigenSection,
    pub sweep: SweepSection,
    pub wkernel: KernelSection,
    pub mc: McSection,
    pub transport: TransportSection,
    pub tolerances: Tolerances,
    pub output: OutputSection,
}

/// `dim = 1`, `n = 256`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dim: 1, n: 256 }
    }
}

/// Fourier terms as `[k1, k2, coefficient]`; both lists default to empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub cos: Vec<(i64, i64, f64)>,
    pub sin: Vec<(i64, i64, f64)>,
}

/// `p = [0, 0]`, `x0 = [0, 0]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormSection {
    pub p: [f64; 2],
    pub x0: [f64; 2],
}

/// `h` from [`default_time_step`] when absent, `v_max = 4`, `tol = 1e-10`, `max_iters = 200000`,
/// `relaxation = 0.5`, `aubry_rel_tol = 1e-3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakKamSection {
    pub h: Option<f64>,
    pub v_max: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub relaxation: f64,
    pub aubry_rel_tol: f64,
}

impl Default for WeakKamSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        Self { h: None, v_max: 4.0, tol: s.tol, max_iters: s.max_iters, relaxation: s.relaxation, aubry_rel_tol: 1e-3 }
    }
}

/// `betas = [20]`, `n` = grid.n, `tol = 1e-11`, `max_iters = 2000000`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenSection {
    pub betas: Vec<f64>,
    pub n: Option<usize>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EigenSection {
    fn default() -> Self {
        let e = EigenOptions::default();
        Self { betas: vec![20.0], n: None, tol: e.tol, max_iters: e.max_iters }
    }
}

/// `betas = [10, 20, 40, 80]`, `grid_factor = 8`, `ldp_intervals = [[0.4, 0.6]]`,
/// `varadhan = [[1, 0, 0.3]]` (cosine terms of the test function).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub betas: Vec<f64>,
    pub grid_factor: f64,
    pub ldp_intervals: Vec<[f64; 2]>,
    pub varadhan: Vec<(i64, i64, f64)>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            betas: vec![10.0, 20.0, 40.0, 80.0],
            grid_factor: 8.0,
            ldp_intervals: vec![[0.4, 0.6]],
            varadhan: vec![(1, 0, 0.3)],
        }
    }
}

/// `slices = 16`, `v_max = 4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub slices: usize,
    pub v_max: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { slices: 16, v_max: 4.0 }
    }
}

/// `samples = 5000`, `steps = 64`, `seed = 2024`, `beta = 20`, `t = 1`,
/// `pairs = [[0, 0]]` (node indices `y`, `x`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    pub beta: f64,
    pub t: f64,
    pub pairs: Vec<[usize; 2]>,
}

impl Default for McSection {
    fn default() -> Self {
        Self { samples: 5000, steps: 64, seed: 2024, beta: 20.0, t: 1.0, pairs: vec![[0, 0]] }
    }
}

/// `variant = "plain"`, `tol = 5e-2` (admissibility, gap and slackness).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub variant: CostVariant,
    pub tol: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self { variant: CostVariant::Plain, tol: 5e-2 }
    }
}

/// Certificate tolerances. `projection` is in units of the grid spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub critical_value: f64,
    pub hj_residual: f64,
    pub collinearity: f64,
    pub ldp: f64,
    pub varadhan: f64,
    pub kernel_representation: f64,
    pub mc: f64,
    pub projection: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            critical_value: 5e-2,
            hj_residual: 1e-2,
            collinearity: 1e-6,
            ldp: 0.1,
            varadhan: 0.1,
            kernel_representation: 5e-2,
            mc: 5e-2,
            projection: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// `directory = "kamlab-out"`, `formats = ["csv", "json"]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("kamlab-out"), formats: vec![Format::Csv, Format::Json] }
    }
}

fn terms(list: &[(i64, i64, f64)], base: Potential, sin: bool) -> Potential {
    list.iter().fold(base, |v, &(a, b, c)| if sin { v.with_sin([a, b], c) } else { v.with_cos([a, b], c) })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn grid(&self) -> Result<TorusGrid, CliError> {
        Ok(TorusGrid::new(self.grid.dim, self.grid.n)?)
    }

    pub fn eigen_grid(&self) -> Result<TorusGrid, CliError> {
        Ok(TorusGrid::new(self.grid.dim, self.eigen.n.unwrap_or(self.grid.n))?)
    }

    /// Configured time step, or the grid-dependent default.
    pub fn step(&self, grid: &TorusGrid) -> f64 {
        self.weakkam.h.unwrap_or_else(|| default_time_step(grid, &self.potential()))
    }

    pub fn potential(&self) -> Potential {
        let v = terms(&self.potential.cos, Potential::zero(), false);
        terms(&self.potential.sin, v, true)
    }

    pub fn form(&self) -> ClosedForm {
        ClosedForm::new(self.form.p).with_base(self.form.x0)
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.weakkam.tol, max_iters: self.weakkam.max_iters, relaxation: self.weakkam.relaxation }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions { tol: self.eigen.tol, max_iters: self.eigen.max_iters }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            dim: self.grid.dim,
            grid_factor: self.sweep.grid_factor,
            potential: self.potential(),
            form: self.form(),
            step: self.weakkam.h,
            v_max: self.weakkam.v_max,
            solver: self.solver(),
            aubry_rel_tol: self.weakkam.aubry_rel_tol,
            eigen: self.eigen_options(),
            ldp_sets: self.sweep.ldp_intervals.iter().map(|&[lo, hi]| TestSet::interval(lo, hi)).collect(),
            varadhan: terms(&self.sweep.varadhan, Potential::zero(), false),
        }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }

    /// Reject anything a stage would refuse, before any stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid()?;
        let eigen_grid = self.eigen_grid()?;
        check_compatible(&grid, &self.potential(), &self.form())?;
        check_compatible(&eigen_grid, &self.potential(), &self.form())?;
        let positive = [
            ("weakkam.v_max", self.weakkam.v_max),
            ("weakkam.tol", self.weakkam.tol),
            ("eigen.tol", self.eigen.tol),
            ("sweep.grid_factor", self.sweep.grid_factor),
            ("wkernel.v_max", self.wkernel.v_max),
            ("mc.beta", self.mc.beta),
            ("mc.t", self.mc.t),
            ("transport.tol", self.transport.tol),
            ("tolerances.critical_value", self.tolerances.critical_value),
            ("tolerances.hj_residual", self.tolerances.hj_residual),
            ("tolerances.collinearity", self.tolerances.collinearity),
            ("tolerances.ldp", self.tolerances.ldp),
            ("tolerances.varadhan", self.tolerances.varadhan),
            ("tolerances.kernel_representation", self.tolerances.kernel_representation),
            ("tolerances.mc", self.tolerances.mc),
            ("tolerances.projection", self.tolerances.projection),
        ];
        for (key, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Config(format!("{key} must be positive and finite, got {value}")));
            }
        }
        if let Some(h) = self.weakkam.h {
            if !(h > 0.0 && h <= 1.0) {
                return Err(CliError::Config(format!("weakkam.h must lie in (0, 1], got {h}")));
            }
        }
        if !(self.weakkam.relaxation > 0.0 && self.weakkam.relaxation <= 1.0) {
            return Err(CliError::Config(format!("weakkam.relaxation must lie in (0, 1], got {}", self.weakkam.relaxation)));
        }
        for (key, betas) in [("eigen.betas", &self.eigen.betas), ("sweep.betas", &self.sweep.betas)] {
            if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return Err(CliError::Config(format!("{key} must be a nonempty list of positive values")));
            }
        }
        if self.sweep.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("sweep.betas must be strictly increasing".into()));
        }
        for &beta in &self.sweep.betas {
            TorusGrid::new(self.grid.dim, (self.sweep.grid_factor * beta).round() as usize)?;
        }
        if self.sweep.ldp_intervals.iter().any(|[lo, hi]| lo.is_nan() || hi.is_nan() || lo > hi) {
            return Err(CliError::Config("sweep.ldp_intervals need lo <= hi".into()));
        }
        if self.wkernel.slices < kamlab::action_kernel::MIN_SLICES {
            return Err(CliError::Config(format!(
                "wkernel.slices must be at least {}, got {}",
                kamlab::action_kernel::MIN_SLICES,
                self.wkernel.slices
            )));
        }
        if self.mc.samples < 2 || self.mc.steps == 0 {
            return Err(CliError::Config("mc needs at least 2 samples and 1 step".into()));
        }
        if let Some(&[y, x]) = self.mc.pairs.iter().find(|p| p.iter().any(|&i| i >= grid.len())) {
            return Err(CliError::Config(format!("mc pair ({y}, {x}) lies outside a grid of {} nodes", grid.len())));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::Config("output.formats must list csv and/or json".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, output section excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection::default();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
