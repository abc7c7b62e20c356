//! Stage orchestration.
//!
//! Stages run in the fixed order of [`Stage::ALL`]. A stage whose
//! prerequisites did not finish is skipped, and the manifest records every
//! stage either way.

use std::path::Path;
use std::time::Instant;

use kamlab::action_kernel::{
    compute_w_kernel, eigen_kernel_collinearity, feynman_kac_mc, mc_kernel_difference, KernelMatrix, McParams,
};
use kamlab::mather::{build_action_graph, compare_critical_values, min_mean_cycle, projection_distance, MatherResult};
use kamlab::schroedinger::{assemble_twisted_generator, markov_stationarity_check, quantum_measure, EigenPair};
use kamlab::semiclassical::{kernel_representation_check, normalized_log, run_sweep, viscous_hj_residual, Trend};
use kamlab::torus::{eval_potential, ClosedForm, NodeId, Potential, TorusGrid};
use kamlab::transport::{build_problem, duality_gap, slackness_check, solve_kantorovich, DualPair};
use kamlab::weak_kam::{OneStepCost, Sign, WeakKamSolution};
use serde::Serialize;

use crate::config::{ExperimentConfig, Format};
use crate::output::{coordinate_header, coordinates, field_table, Artifacts, Certificate, RunManifest, StageRecord, StageStatus, Table};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    WeakKam,
    Mather,
    Eigen,
    Sweep,
    WKernel,
    FkMc,
    Transport,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::WeakKam, Stage::Mather, Stage::Eigen, Stage::Sweep, Stage::WKernel, Stage::FkMc, Stage::Transport];

    pub fn name(self) -> &'static str {
        match self {
            Stage::WeakKam => "weakkam",
            Stage::Mather => "mather",
            Stage::Eigen => "eigen",
            Stage::Sweep => "sweep",
            Stage::WKernel => "wkernel",
            Stage::FkMc => "fk-mc",
            Stage::Transport => "transport",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::WeakKam | Stage::Eigen | Stage::Sweep => &[],
            Stage::Mather | Stage::WKernel => &[Stage::WeakKam],
            Stage::FkMc => &[Stage::WKernel],
            Stage::Transport => &[Stage::WeakKam, Stage::Mather, Stage::WKernel],
        }
    }
}

/// Requested stages plus everything they depend on, in run order.
pub fn with_dependencies(requested: &[Stage]) -> Vec<Stage> {
    let mut needed: Vec<Stage> = requested.to_vec();
    let mut k = 0;
    while k < needed.len() {
        for &d in needed[k].deps() {
            if !needed.contains(&d) {
                needed.push(d);
            }
        }
        k += 1;
    }
    Stage::ALL.into_iter().filter(|s| needed.contains(s)).collect()
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    grid: TorusGrid,
    potential: Potential,
    form: ClosedForm,
    minus_cost: Option<OneStepCost>,
    weak_kam: Option<WeakKamSolution>,
    mather: Option<(MatherResult, MatherResult)>,
    kernel: Option<KernelMatrix>,
    notes: Vec<String>,
}

fn cert(name: String, value: f64, tolerance: f64, passed: bool, detail: String) -> Certificate {
    Certificate { name, value, tolerance, passed, detail }
}

fn trend_cert(name: String, trend: &Trend, tol: f64) -> Certificate {
    let last = *trend.errors.last().expect("nonempty sweep");
    let passed = trend.monotone && last <= tol;
    cert(name, last, tol, passed, format!("errors {:?}, monotone {}", trend.errors, trend.monotone))
}

fn write_csv(ctx: &Context, out: &mut Artifacts, name: &str, table: impl FnOnce() -> Table) -> Result<(), CliError> {
    if ctx.config.wants(Format::Csv) {
        out.csv(name, &table())?;
    }
    Ok(())
}

fn write_json<T: Serialize>(ctx: &Context, out: &mut Artifacts, name: &str, value: &T) -> Result<(), CliError> {
    if ctx.config.wants(Format::Json) {
        out.json(name, value)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WeakKamSummary {
    points_per_dim: usize,
    step: f64,
    energy: f64,
    energy_backward: f64,
    residual: f64,
    iterations: usize,
    aubry_nodes: usize,
}

fn weakkam(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let cost = OneStepCost::new(&ctx.grid, &ctx.potential, &ctx.form, Sign::Minus, c.step(&ctx.grid), c.weakkam.v_max)?;
    let sol = WeakKamSolution::solve(&cost, &c.solver(), c.weakkam.aubry_rel_tol)?;
    let v = eval_potential(&ctx.potential, &ctx.grid)?;
    write_csv(ctx, out, "weakkam.csv", || {
        field_table(
            &ctx.grid,
            &[("u", sol.u.values()), ("u_star", sol.u_star.values()), ("rate", sol.rate.values()), ("potential", v.values())],
        )
    })?;
    let summary = WeakKamSummary {
        points_per_dim: ctx.grid.points_per_dim(),
        step: cost.step(),
        energy: sol.energy,
        energy_backward: sol.energy_backward,
        residual: sol.residual,
        iterations: sol.iterations,
        aubry_nodes: sol.aubry.len(),
    };
    write_json(ctx, out, "weakkam.json", &summary)?;
    ctx.minus_cost = Some(cost);
    ctx.weak_kam = Some(sol);
    Ok(Vec::new())
}

#[derive(Serialize)]
struct CycleSummary {
    mean_cost: f64,
    energy_estimate: f64,
    cycle: Vec<NodeId>,
    tied_nodes: usize,
}

impl From<&MatherResult> for CycleSummary {
    fn from(m: &MatherResult) -> Self {
        Self { mean_cost: m.mean_cost, energy_estimate: m.energy_estimate, cycle: m.cycle.clone(), tied_nodes: m.tied_nodes }
    }
}

#[derive(Serialize)]
struct MatherSummary {
    minus: CycleSummary,
    plus: CycleSummary,
    weak_kam_energy: f64,
    difference: f64,
    comparable: bool,
}

fn mather(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let minus_cost = ctx.minus_cost.as_ref().expect("weakkam ran");
    let plus_cost = OneStepCost::new(&ctx.grid, &ctx.potential, &ctx.form, Sign::Plus, minus_cost.step(), c.weakkam.v_max)?;
    let minus = min_mean_cycle(&build_action_graph(minus_cost))?;
    let plus = min_mean_cycle(&build_action_graph(&plus_cost))?;
    let energy = ctx.weak_kam.as_ref().expect("weakkam ran").energy;
    let report = compare_critical_values(energy, &ctx.grid, minus_cost.step(), &minus, c.tolerances.critical_value);
    write_csv(ctx, out, "mather.csv", || {
        field_table(&ctx.grid, &[("mu_minus", minus.measure.weights()), ("mu_plus", plus.measure.weights())])
    })?;
    let summary = MatherSummary {
        minus: (&minus).into(),
        plus: (&plus).into(),
        weak_kam_energy: energy,
        difference: report.difference,
        comparable: report.comparable,
    };
    write_json(ctx, out, "mather.json", &summary)?;
    let certs = vec![cert(
        "mather.critical_value".into(),
        report.difference,
        report.tolerance,
        report.passed,
        format!("weak KAM {:.12}, min-mean cycle {:.12}", report.weak_kam, report.mather),
    )];
    ctx.mather = Some((plus, minus));
    Ok(certs)
}

#[derive(Serialize)]
struct EigenSummary {
    beta: f64,
    points_per_dim: usize,
    energy: f64,
    lambda: f64,
    residual_right: f64,
    residual_left: f64,
    iterations: usize,
    spectral_gap_estimate: f64,
    hj_residual: f64,
    collinearity: f64,
    stationarity: f64,
}

fn eigen(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let grid = c.eigen_grid()?;
    let mut certs = Vec::new();
    let mut summaries = Vec::new();
    for &beta in &c.eigen.betas {
        let generator = assemble_twisted_generator(&grid, &ctx.potential, &ctx.form, beta, Sign::Plus)?;
        let pair = EigenPair::compute(&generator, &c.eigen_options())?;
        let (u, u_star) = normalized_log(&pair);
        let hj = viscous_hj_residual(&u, &grid, &ctx.potential, &ctx.form, beta, pair.energy, Sign::Plus)?;
        let collinearity = eigen_kernel_collinearity(&pair, &generator, 1.0 / beta)?;
        let stationarity = markov_stationarity_check(&pair, &generator).max();
        let nu = quantum_measure(&pair, &grid)?;
        write_csv(ctx, out, &format!("eigen_beta{beta}.csv"), || {
            field_table(
                &grid,
                &[
                    ("psi", pair.psi.values()),
                    ("psi_star", pair.psi_star.values()),
                    ("u_beta", u.values()),
                    ("u_star_beta", u_star.values()),
                    ("nu_beta", nu.weights()),
                ],
            )
        })?;
        certs.push(cert(
            format!("eigen.hj_residual[beta={beta}]"),
            hj,
            c.tolerances.hj_residual,
            hj <= c.tolerances.hj_residual,
            format!("N = {}, E_beta = {:.12}", grid.points_per_dim(), pair.energy),
        ));
        certs.push(cert(
            format!("eigen.collinearity[beta={beta}]"),
            collinearity,
            c.tolerances.collinearity,
            collinearity <= c.tolerances.collinearity,
            format!("1 - cos at t = 1/beta = {}", 1.0 / beta),
        ));
        summaries.push(EigenSummary {
            beta,
            points_per_dim: grid.points_per_dim(),
            energy: pair.energy,
            lambda: pair.lambda,
            residual_right: pair.residual_right,
            residual_left: pair.residual_left,
            iterations: pair.iterations,
            spectral_gap_estimate: pair.spectral_gap_estimate,
            hj_residual: hj,
            collinearity,
            stationarity,
        });
    }
    write_json(ctx, out, "eigen.json", &summaries)?;
    Ok(certs)
}

fn sweep(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let config = c.sweep_config();
    let sweep = run_sweep(&config, &c.sweep.betas)?;
    write_csv(ctx, out, "sweep.csv", || {
        let mut header: Vec<String> = [
            "beta",
            "points_per_dim",
            "energy_beta",
            "energy",
            "sup_dist_u",
            "sup_dist_ustar",
            "hj_residual",
            "hj_residual_backward",
            "varadhan_error",
        ]
        .map(String::from)
        .to_vec();
        header.extend((0..config.ldp_sets.len()).map(|k| format!("ldp_error_{k}")));
        let mut t = Table::new(&header);
        for r in &sweep.records {
            let mut row = vec![
                r.beta,
                r.points_per_dim as f64,
                r.energy_beta,
                r.energy,
                r.sup_dist_u,
                r.sup_dist_ustar,
                r.hj_residual,
                r.hj_residual_backward,
                r.varadhan_error,
            ];
            row.extend(&r.ldp_errors);
            t.row(&row);
        }
        t
    })?;
    #[derive(Serialize)]
    struct SweepSummary<'a> {
        records: &'a [kamlab::SweepRecord],
        ldp: &'a kamlab::semiclassical::LdpTable,
        varadhan: &'a kamlab::semiclassical::VaradhanTable,
        u_trend: &'a Trend,
    }
    let summary = SweepSummary { records: &sweep.records, ldp: &sweep.ldp, varadhan: &sweep.varadhan, u_trend: &sweep.u_trend };
    write_json(ctx, out, "sweep.json", &summary)?;
    let mut certs: Vec<Certificate> =
        sweep.ldp.trends.iter().map(|t| trend_cert(format!("sweep.ldp[{}]", t.name), t, c.tolerances.ldp)).collect();
    certs.push(trend_cert("sweep.varadhan".into(), &sweep.varadhan.trend, c.tolerances.varadhan));
    Ok(certs)
}

#[derive(Serialize)]
struct KernelSummary {
    slices: usize,
    horizon: f64,
    lipschitz: f64,
    lipschitz_bound: f64,
    representation_error: f64,
}

fn wkernel(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let kernel = compute_w_kernel(&ctx.grid, &ctx.potential, &ctx.form, c.wkernel.slices, c.wkernel.v_max)?;
    let wk = ctx.weak_kam.as_ref().expect("weakkam ran");
    let err = kernel_representation_check(&wk.u, &wk.u_star, &kernel)?;
    write_csv(ctx, out, "wkernel.csv", || {
        let mut header = coordinate_header(&ctx.grid, "y");
        header.extend(coordinate_header(&ctx.grid, "x"));
        header.push("w".into());
        let mut t = Table::new(&header);
        for y in ctx.grid.nodes() {
            for x in ctx.grid.nodes() {
                let mut row = coordinates(&ctx.grid, y);
                row.extend(coordinates(&ctx.grid, x));
                row.push(kernel.get(y, x));
                t.row(&row);
            }
        }
        t
    })?;
    let summary = KernelSummary {
        slices: kernel.slices,
        horizon: kernel.horizon,
        lipschitz: kernel.lipschitz,
        lipschitz_bound: kernel.lipschitz_bound,
        representation_error: err,
    };
    write_json(ctx, out, "wkernel.json", &summary)?;
    let tol = c.tolerances.kernel_representation;
    let certs = vec![cert("wkernel.representation".into(), err, tol, err <= tol, "sup_x |u - min_z (-W + u*)|".into())];
    ctx.kernel = Some(kernel);
    Ok(certs)
}

#[derive(Serialize)]
struct McRow {
    estimate: kamlab::McEstimate,
    kernel: f64,
    difference: f64,
}

fn fk_mc(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let kernel = ctx.kernel.as_ref().expect("wkernel ran");
    let mut rows = Vec::new();
    let mut certs = Vec::new();
    for &[y, x] in &c.mc.pairs {
        let params = McParams { y, x, t: c.mc.t, beta: c.mc.beta, samples: c.mc.samples, steps: c.mc.steps, seed: c.mc.seed };
        let estimate = feynman_kac_mc(&ctx.grid, &ctx.potential, &ctx.form, &params)?;
        let difference = mc_kernel_difference(&estimate, kernel)?;
        let tol = 3.0 * estimate.std_error + c.tolerances.mc;
        if estimate.lift_disagrees {
            ctx.notes.push(format!("pair ({y}, {x}) not certified: the kernel minimizer winds around the torus"));
        } else {
            certs.push(cert(
            format!("fk_mc[{y},{x}]"),
            difference.abs(),
            tol,
            difference.abs() <= tol,
            format!("estimate {:.9}, standard error {:.3e}", estimate.estimate, estimate.std_error),
            ));
        }
        rows.push(McRow { kernel: kernel.get(y, x), difference, estimate });
    }
    write_csv(ctx, out, "fk_mc.csv", || {
        let mut header = coordinate_header(&ctx.grid, "y");
        header.extend(coordinate_header(&ctx.grid, "x"));
        header.extend(["estimate", "std_error", "w", "difference"].map(String::from));
        let mut t = Table::new(&header);
        for r in &rows {
            let mut row = coordinates(&ctx.grid, r.estimate.y);
            row.extend(coordinates(&ctx.grid, r.estimate.x));
            row.extend([r.estimate.estimate, r.estimate.std_error, r.kernel, r.difference]);
            t.row(&row);
        }
        t
    })?;
    write_json(ctx, out, "fk_mc.json", &rows)?;
    Ok(certs)
}

#[derive(Serialize)]
struct TransportSummary {
    variant: kamlab::CostVariant,
    plan_value: f64,
    dual_value: f64,
    gap: f64,
    admissibility_support: f64,
    admissibility_grid: f64,
    slackness_violations: Vec<(NodeId, NodeId, f64)>,
    max_slackness_residual: f64,
    marginal_error: f64,
    pivots: usize,
    projection_distance: f64,
}

fn transport(ctx: &mut Context, out: &mut Artifacts) -> Result<Vec<Certificate>, CliError> {
    let c = ctx.config;
    let wk = ctx.weak_kam.as_ref().expect("weakkam ran");
    let (mu_plus, mu_minus) = ctx.mather.as_ref().map(|(p, m)| (&p.measure, &m.measure)).expect("mather ran");
    let kernel = ctx.kernel.as_ref().expect("wkernel ran");
    let problem = build_problem(mu_plus, mu_minus, kernel, wk.energy, &wk.rate, c.transport.variant)?;
    let plan = solve_kantorovich(&problem)?;
    let pair = DualPair::evaluate(wk.u.clone(), wk.u_star.clone(), &problem)?;
    let gap = duality_gap(&plan, &pair);
    let tol = c.transport.tol;
    let violations = slackness_check(&plan, &pair, &problem, tol);
    let max_residual = plan
        .entries
        .iter()
        .map(|&(x, y, _)| (pair.f[x] - pair.g[y] - problem.cost_at(x, y)).abs())
        .fold(0.0, f64::max);
    let projection = projection_distance(mu_plus, mu_minus, &ctx.grid)?;
    let admissibility = pair.violation.support.max(pair.violation.grid);

    write_csv(ctx, out, "transport_plan.csv", || {
        let mut header = coordinate_header(&ctx.grid, "x");
        header.extend(coordinate_header(&ctx.grid, "y"));
        header.push("mass".into());
        let mut t = Table::new(&header);
        for &(x, y, mass) in &plan.entries {
            let mut row = coordinates(&ctx.grid, x);
            row.extend(coordinates(&ctx.grid, y));
            row.push(mass);
            t.row(&row);
        }
        t
    })?;
    write_csv(ctx, out, "transport_duals.csv", || field_table(&ctx.grid, &[("f", pair.f.values()), ("g", pair.g.values())]))?;
    let summary = TransportSummary {
        variant: c.transport.variant,
        plan_value: plan.value,
        dual_value: pair.value,
        gap,
        admissibility_support: pair.violation.support,
        admissibility_grid: pair.violation.grid,
        slackness_violations: violations.clone(),
        max_slackness_residual: max_residual,
        marginal_error: plan.marginal_error(&problem),
        pivots: plan.pivots,
        projection_distance: projection,
    };
    write_json(ctx, out, "transport.json", &summary)?;
    let projection_tol = c.tolerances.projection * ctx.grid.spacing();
    Ok(vec![
        cert(
            "transport.admissibility".into(),
            admissibility,
            tol,
            admissibility <= tol,
            format!("support {:.3e}, grid {:.3e}", pair.violation.support, pair.violation.grid),
        ),
        cert("transport.gap".into(), gap.abs(), tol, gap.abs() <= tol, format!("primal {:.12}, dual {:.12}", plan.value, pair.value)),
        cert(
            "transport.slackness".into(),
            max_residual,
            tol,
            violations.is_empty(),
            format!("{} violating pairs of {}", violations.len(), plan.entries.len()),
        ),
        cert(
            "transport.projection".into(),
            projection,
            projection_tol,
            projection <= projection_tol,
            "W1(pi mu+, pi mu-)".into(),
        ),
    ])
}

/// Outcome of a pipeline run; the manifest is already on disk.
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Error of the first failed stage.
    pub stage_failure: Option<CliError>,
}

pub fn run_pipeline(config: &ExperimentConfig, requested: &[Stage], dir: &Path) -> Result<RunOutcome, CliError> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ctx = Context {
        config,
        grid: config.grid()?,
        potential: config.potential(),
        form: config.form(),
        minus_cost: None,
        weak_kam: None,
        mather: None,
        kernel: None,
        notes: Vec::new(),
    };
    let mut stages = Vec::new();
    let mut certificates = Vec::new();
    let mut completed = Vec::new();
    let mut stage_failure = None;
    for stage in with_dependencies(requested) {
        let mut out = Artifacts::new(dir);
        if let Some(missing) = stage.deps().iter().find(|d| !completed.contains(*d)) {
            stages.push(StageRecord {
                name: stage.name().into(),
                status: StageStatus::Skipped,
                wall_time_s: 0.0,
                outputs: Vec::new(),
                message: Some(format!("prerequisite {} did not complete", missing.name())),
            });
            continue;
        }
        let start = Instant::now();
        let result = match stage {
            Stage::WeakKam => weakkam(&mut ctx, &mut out),
            Stage::Mather => mather(&mut ctx, &mut out),
            Stage::Eigen => eigen(&mut ctx, &mut out),
            Stage::Sweep => sweep(&mut ctx, &mut out),
            Stage::WKernel => wkernel(&mut ctx, &mut out),
            Stage::FkMc => fk_mc(&mut ctx, &mut out),
            Stage::Transport => transport(&mut ctx, &mut out),
        };
        let wall_time_s = start.elapsed().as_secs_f64();
        let (status, message) = match result {
            Ok(certs) => {
                certificates.extend(certs);
                completed.push(stage);
                let notes = std::mem::take(&mut ctx.notes);
                (StageStatus::Ok, (!notes.is_empty()).then(|| notes.join("; ")))
            }
            Err(e @ CliError::Io { .. }) => return Err(e),
            Err(e) => {
                let message = e.to_string();
                if stage_failure.is_none() {
                    stage_failure = Some(e);
                }
                (StageStatus::Failed, Some(message))
            }
        };
        stages.push(StageRecord { name: stage.name().into(), status, wall_time_s, outputs: out.files, message });
    }
    let manifest = RunManifest {
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        stages,
        certificates,
    };
    manifest.write_atomic(dir)?;
    Ok(RunOutcome { manifest, stage_failure })
}
