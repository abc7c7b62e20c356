//! The large-beta program: `u_beta = -log(psi_beta) / beta`, viscous
//! Hamilton-Jacobi residuals, and the large-deviation and Varadhan checks of
//! `nu_beta` against the rate function `I`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_kernel::KernelMatrix;
use crate::error::{Error, Result};
use crate::schroedinger::{assemble_twisted_generator, quantum_measure, EigenOptions, EigenPair};
use crate::torus::{eval_potential, ClosedForm, GridField, GridMeasure, NodeId, Potential, TorusGrid, Vector};
use crate::weak_kam::{default_time_step, OneStepCost, Sign, SolverOptions, WeakKamSolution};

/// `(-log psi / beta, -log psi* / beta)`, each re-gauged to `min = 0`.
pub fn normalized_log(pair: &EigenPair) -> (GridField, GridField) {
    let beta = pair.beta;
    let u = pair.psi.map(|p| -p.ln() / beta).min_normalized();
    let u_star = pair.psi_star.map(|p| -p.ln() / beta).min_normalized();
    (u, u_star)
}

/// `sup_x |-lap u / (2 beta) + |grad u + s P|^2 / 2 + V + E|` with central
/// differences. `s = +1` checks `u_beta`; `s = -1` checks `u*_beta`.
#[allow(clippy::too_many_arguments)]
pub fn viscous_hj_residual(
    u: &GridField,
    grid: &TorusGrid,
    potential: &Potential,
    form: &ClosedForm,
    beta: f64,
    energy: f64,
    sign: Sign,
) -> Result<f64> {
    if u.len() != grid.len() {
        return Err(Error::Incomparable("field does not live on the grid".into()));
    }
    let v = eval_potential(potential, grid)?;
    let dx = grid.spacing();
    let s = sign.value();
    let residual = grid
        .nodes()
        .map(|x| {
            let mut lap = 0.0;
            let mut kinetic = 0.0;
            for j in 0..grid.dim() {
                let (up, down) = (u[grid.shift(x, j, 1)], u[grid.shift(x, j, -1)]);
                lap += (up - 2.0 * u[x] + down) / (dx * dx);
                let p = (up - down) / (2.0 * dx) + s * form.momentum[j];
                kinetic += 0.5 * p * p;
            }
            (-lap / (2.0 * beta) + kinetic + v[x] + energy).abs()
        })
        .fold(0.0, f64::max);
    Ok(residual)
}

/// One grid-and-beta instance of the semiclassical comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRun {
    pub beta: f64,
    pub grid: TorusGrid,
    pub measure: GridMeasure,
    pub rate: GridField,
}

/// Region on which `nu_beta` is compared with `exp(-beta min I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSet {
    /// Closed coordinate box on the cover, e.g. `[0.4, 0.6]`.
    Box { name: String, lo: Vector, hi: Vector },
    /// `{I >= level}`
    RateAbove { name: String, level: f64 },
    /// `{I <= level}`
    RateBelow { name: String, level: f64 },
}

impl TestSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        TestSet::Box { name: format!("[{lo}, {hi}]"), lo: [lo, 0.0], hi: [hi, 0.0] }
    }

    pub fn name(&self) -> &str {
        match self {
            TestSet::Box { name, .. } | TestSet::RateAbove { name, .. } | TestSet::RateBelow { name, .. } => name,
        }
    }

    pub fn nodes(&self, grid: &TorusGrid, rate: &GridField) -> Vec<NodeId> {
        match self {
            TestSet::Box { lo, hi, .. } => grid.nodes_in_box(&lo[..grid.dim()], &hi[..grid.dim()]),
            TestSet::RateAbove { level, .. } => grid.nodes().filter(|&x| rate[x] >= *level).collect(),
            TestSet::RateBelow { level, .. } => grid.nodes().filter(|&x| rate[x] <= *level).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub set: String,
    pub beta: f64,
    /// `(1/beta) log nu_beta(A)`
    pub log_mass: f64,
    /// `min_A I`
    pub min_rate: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub name: String,
    pub errors: Vec<f64>,
    /// Error at the largest beta below the error at the smallest.
    pub endpoint_decrease: bool,
    /// Strictly decreasing along the whole sweep.
    pub monotone: bool,
}

impl Trend {
    fn new(name: String, errors: Vec<f64>) -> Self {
        let endpoint_decrease = match (errors.first(), errors.last()) {
            (Some(a), Some(b)) => b < a,
            _ => false,
        };
        let monotone = errors.windows(2).all(|w| w[1] < w[0]);
        Self { name, errors, endpoint_decrease, monotone }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpTable {
    pub rows: Vec<LdpRow>,
    pub trends: Vec<Trend>,
}

/// `|(1/beta) log nu_beta(A) + min_A I|` per set and run; runs are taken in
/// increasing beta.
pub fn ldp_check(runs: &[BetaRun], sets: &[TestSet]) -> Result<LdpTable> {
    let runs = sorted_runs(runs)?;
    let mut rows = Vec::new();
    let mut trends = Vec::new();
    for set in sets {
        let mut errors = Vec::new();
        for run in &runs {
            let nodes = set.nodes(&run.grid, &run.rate);
            if nodes.is_empty() {
                return Err(Error::invalid(format!("test set {} is empty on N = {}", set.name(), run.grid.points_per_dim())));
            }
            let mass = run.measure.mass_of(&nodes);
            if !(mass > 0.0) {
                return Err(Error::Numerical(format!("nu_beta({}) underflowed at beta = {}", set.name(), run.beta)));
            }
            let log_mass = mass.ln() / run.beta;
            let min_rate = nodes.iter().map(|&x| run.rate[x]).fold(f64::INFINITY, f64::min);
            let error = (log_mass + min_rate).abs();
            errors.push(error);
            rows.push(LdpRow { set: set.name().to_owned(), beta: run.beta, log_mass, min_rate, error });
        }
        trends.push(Trend::new(set.name().to_owned(), errors));
    }
    Ok(LdpTable { rows, trends })
}

fn sorted_runs(runs: &[BetaRun]) -> Result<Vec<&BetaRun>> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs supplied"));
    }
    for r in runs {
        if r.measure.len() != r.grid.len() || r.rate.len() != r.grid.len() {
            return Err(Error::Incomparable(format!("run at beta = {} mixes grids", r.beta)));
        }
    }
    let mut sorted: Vec<&BetaRun> = runs.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    Ok(sorted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanRow {
    pub beta: f64,
    /// `(1/beta) log sum exp(beta F) nu_beta`
    pub lhs: f64,
    /// `max (F - I)`
    pub rhs: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanTable {
    pub rows: Vec<VaradhanRow>,
    pub trend: Trend,
}

/// `(1/beta) log sum_x exp(beta F(x)) nu_beta(x)`, by log-sum-exp.
pub fn log_exponential_moment(measure: &GridMeasure, f: &GridField, beta: f64) -> f64 {
    let terms: Vec<f64> = measure
        .weights()
        .iter()
        .zip(f.values())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, fx)| beta * fx + w.ln())
        .collect();
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (peak + terms.iter().map(|t| (t - peak).exp()).sum::<f64>().ln()) / beta
}

pub fn varadhan_check(runs: &[BetaRun], f: &Potential) -> Result<VaradhanTable> {
    let runs = sorted_runs(runs)?;
    let mut rows = Vec::new();
    for run in runs {
        let field = eval_potential(f, &run.grid)?;
        let lhs = log_exponential_moment(&run.measure, &field, run.beta);
        let rhs = field.zip_with(&run.rate, |a, b| a - b).max();
        rows.push(VaradhanRow { beta: run.beta, lhs, rhs, error: (lhs - rhs).abs() });
    }
    let trend = Trend::new("varadhan".into(), rows.iter().map(|r| r.error).collect());
    Ok(VaradhanTable { rows, trend })
}

/// `sup_x |u(x) - min_z (-W(z, x) + u*(z))|` after the best additive
/// alignment.
pub fn kernel_representation_check(u: &GridField, u_star: &GridField, kernel: &KernelMatrix) -> Result<f64> {
    let n = kernel.len();
    if u.len() != n || u_star.len() != n {
        return Err(Error::Incomparable("fields and kernel differ in size".into()));
    }
    let rhs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|x| (0..n).map(|z| -kernel.get(z, x) + u_star[z]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(u.sup_distance_modulo_constant(&GridField::new(rhs)?))
}

/// Settings for a beta sweep; the grid is refined as `N = grid_factor * beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dim: usize,
    pub grid_factor: f64,
    pub potential: Potential,
    pub form: ClosedForm,
    /// Lax-Oleinik step; the default rule when absent.
    pub step: Option<f64>,
    pub v_max: f64,
    pub solver: SolverOptions,
    pub aubry_rel_tol: f64,
    pub eigen: EigenOptions,
    pub ldp_sets: Vec<TestSet>,
    /// Test function for the Varadhan check.
    pub varadhan: Potential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub points_per_dim: usize,
    pub energy_beta: f64,
    pub energy: f64,
    pub sup_dist_u: f64,
    pub sup_dist_ustar: f64,
    pub hj_residual: f64,
    pub hj_residual_backward: f64,
    pub ldp_errors: Vec<f64>,
    pub varadhan_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub records: Vec<SweepRecord>,
    pub runs: Vec<BetaRun>,
    pub ldp: LdpTable,
    pub varadhan: VaradhanTable,
    pub u_trend: Trend,
}

/// Everything the sweep computes at one beta.
#[derive(Clone, Debug)]
pub struct BetaPipeline {
    pub grid: TorusGrid,
    pub weak_kam: WeakKamSolution,
    pub pair: EigenPair,
    pub u_beta: GridField,
    pub u_star_beta: GridField,
    pub run: BetaRun,
}

pub fn run_beta(config: &SweepConfig, beta: f64) -> Result<BetaPipeline> {
    let n = (config.grid_factor * beta).round() as usize;
    let grid = TorusGrid::new(config.dim, n)?;
    let step = config.step.unwrap_or_else(|| default_time_step(&grid, &config.potential));
    let cost = OneStepCost::new(&grid, &config.potential, &config.form, Sign::Minus, step, config.v_max)?;
    let weak_kam = WeakKamSolution::solve(&cost, &config.solver, config.aubry_rel_tol)?;
    let generator = assemble_twisted_generator(&grid, &config.potential, &config.form, beta, Sign::Plus)?;
    let pair = EigenPair::compute(&generator, &config.eigen)?;
    let (u_beta, u_star_beta) = normalized_log(&pair);
    let run = BetaRun { beta, grid, measure: quantum_measure(&pair, &grid)?, rate: weak_kam.rate.clone() };
    Ok(BetaPipeline { grid, weak_kam, pair, u_beta, u_star_beta, run })
}

/// Independent pipelines per beta, run concurrently, then compared.
pub fn run_sweep(config: &SweepConfig, betas: &[f64]) -> Result<Sweep> {
    if betas.is_empty() || betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("betas must be nonempty and strictly increasing"));
    }
    let pipelines: Vec<BetaPipeline> = betas.par_iter().map(|&b| run_beta(config, b)).collect::<Result<_>>()?;
    let runs: Vec<BetaRun> = pipelines.iter().map(|p| p.run.clone()).collect();
    let ldp = ldp_check(&runs, &config.ldp_sets)?;
    let varadhan = varadhan_check(&runs, &config.varadhan)?;
    let mut records = Vec::with_capacity(pipelines.len());
    for (k, p) in pipelines.iter().enumerate() {
        let beta = p.pair.beta;
        records.push(SweepRecord {
            beta,
            points_per_dim: p.grid.points_per_dim(),
            energy_beta: p.pair.energy,
            energy: p.weak_kam.energy,
            sup_dist_u: p.u_beta.sup_distance_modulo_constant(&p.weak_kam.u),
            sup_dist_ustar: p.u_star_beta.sup_distance_modulo_constant(&p.weak_kam.u_star),
            hj_residual: viscous_hj_residual(&p.u_beta, &p.grid, &config.potential, &config.form, beta, p.pair.energy, Sign::Plus)?,
            hj_residual_backward: viscous_hj_residual(
                &p.u_star_beta,
                &p.grid,
                &config.potential,
                &config.form,
                beta,
                p.pair.energy,
                Sign::Minus,
            )?,
            ldp_errors: ldp.trends.iter().map(|t| t.errors[k]).collect(),
            varadhan_error: varadhan.rows[k].error,
        });
    }
    let u_trend = Trend::new("sup |u_beta - u|".into(), records.iter().map(|r| r.sup_dist_u).collect());
    Ok(Sweep { records, runs, ldp, varadhan, u_trend })
}
