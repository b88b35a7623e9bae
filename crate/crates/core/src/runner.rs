//! Binds an [`ExperimentConfig`] to the solver pipelines, writes artifacts and
//! evaluates the acceptance checks the config enables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell_problems, CorrectorSet};
use crate::config::{constant_scalar, CheckId, ExperimentConfig, ExperimentKind, SolveData};
use crate::effective::{check_duality, check_effective_ellipticity, compute_effective};
use crate::error::{Error, Result};
use crate::estimates::{
    liouville_family_report, spec_hash, write_rows, EstimateRow, BOUNDARY_HOLDER, INTERIOR_LIPSCHITZ, PRESSURE_OSCILLATION,
    W1P_NORM,
};
use crate::grid::{Grid, GridVelocity};
use crate::stokes::{rescale_solution, Coefficients, DirichletSolver, StokesProblem, StokesSolution};
use crate::sweep::{run_sweep, run_two_scale, SweepResult, SWEEP_ESTIMATES};
use crate::tensor::CoefficientField;

pub const RUN_SCHEMA: &str = "stokes-homog/run/1";

/// Corrector residual and mean/divergence defects allowed by `corrector-residual`.
pub const CORRECTOR_TOL: f64 = 1e-10;
/// Tolerance of `trivial-correctors`.
pub const TRIVIAL_TOL: f64 = 1e-12;
pub const DUALITY_TOL: f64 = 1e-8;
pub const ELLIPTICITY_TOL: f64 = 1e-8;
/// Accepted `L²` error ratio under mesh halving.
pub const MANUFACTURED_RATIO: (f64, f64) = (3.3, 4.7);
/// Rescaled residuals may exceed the solver tolerance by this factor.
pub const RESCALE_FACTOR: f64 = 10.0;
/// Allowed relative variation of `‖∇u‖_{L^q} + ‖p − avg‖_{L^q}` across `ε`.
pub const W1P_VARIATION: f64 = 0.2;
/// Liouville members may exceed the corrector residual by this factor.
pub const LIOUVILLE_FACTOR: f64 = 10.0;
pub const LIOUVILLE_DIV_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: CheckId,
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(id: CheckId, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass,
            detail: detail.into(),
        }
    }

    /// `PASS <id>: <detail>` or `FAIL <id>: <detail>`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub kind: ExperimentKind,
    pub checks: Vec<CheckOutcome>,
    /// Files written, relative to the output directory, sorted.
    pub artifacts: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'a str,
    kind: ExperimentKind,
    config_hash: String,
    seed: u64,
    artifacts: &'a [String],
    checks: &'a [CheckOutcome],
}

/// Hash of the config with its output directory blanked, so relocating a
/// run leaves it unchanged.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut c = config.clone();
    c.out = PathBuf::new();
    Ok(spec_hash(serde_json::to_string(&c)?.as_bytes()))
}

/// Runs `config`, writing every artifact under `out`. Parallel work uses the
/// current rayon pool.
pub fn run(config: &ExperimentConfig, base_dir: Option<&Path>, out: &Path) -> Result<RunOutcome> {
    let diags = config.validate(base_dir);
    if let Some(d) = diags.first() {
        return Err(Error::Config {
            path: d.path.clone(),
            message: d.message.clone(),
        });
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let field = config.field(base_dir)?;
    let hash = config_hash(config)?;
    let mut ctx = Context {
        config,
        out,
        artifacts: Vec::new(),
        checks: Vec::new(),
    };
    match config.kind {
        ExperimentKind::Cell => run_cell(&mut ctx, &field)?,
        ExperimentKind::Effective => run_effective(&mut ctx, &field)?,
        ExperimentKind::Solve => run_solve(&mut ctx, &field)?,
        ExperimentKind::EstimateSweep => run_estimate_sweep(&mut ctx, &hash)?,
        ExperimentKind::Liouville => run_liouville(&mut ctx, &field)?,
        ExperimentKind::TwoScale => run_two_scale_kind(&mut ctx, &hash)?,
    }
    // keep the config's check order regardless of evaluation order
    let mut checks = Vec::new();
    for id in &config.checks {
        if let Some(c) = ctx.checks.iter().find(|c| c.id == *id) {
            checks.push(c.clone());
        }
    }
    ctx.artifacts.push("manifest.json".into());
    ctx.artifacts.sort();
    ctx.artifacts.dedup();
    let manifest = Manifest {
        schema: RUN_SCHEMA,
        kind: config.kind,
        config_hash: hash,
        seed: config.seed,
        artifacts: &ctx.artifacts,
        checks: &checks,
    };
    write_text(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(RunOutcome {
        kind: config.kind,
        checks,
        artifacts: ctx.artifacts,
    })
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    out: &'a Path,
    artifacts: Vec<String>,
    checks: Vec<CheckOutcome>,
}

impl Context<'_> {
    fn wants(&self, id: CheckId) -> bool {
        self.config.checks.contains(&id)
    }

    fn check(&mut self, id: CheckId, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome::new(id, pass, detail));
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_text(&self.out.join(name), &(serde_json::to_string_pretty(value)? + "\n"))?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn record_dir(&mut self, sub: &str) -> Result<()> {
        let dir = self.out.join(sub);
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| format!("{sub}/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        self.artifacts.extend(names);
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn cell_grid(config: &ExperimentConfig) -> Result<Grid> {
    let n = config.grid.cell.ok_or_else(|| Error::Config {
        path: "grid.cell".into(),
        message: "required for this experiment kind".into(),
    })?;
    Grid::periodic(config.dim, n)
}

fn write_correctors(ctx: &mut Context, set: &CorrectorSet) -> Result<()> {
    set.write(&ctx.out.join("correctors"))?;
    ctx.record_dir("correctors")?;
    let d = set.grid.dim;
    let rows: Vec<Vec<String>> = set
        .norms
        .iter()
        .enumerate()
        .map(|(q, n)| {
            vec![
                (q / d + 1).to_string(),
                (q % d + 1).to_string(),
                num(n.chi_h1),
                num(n.pi_l2),
                num(n.residual),
                num(n.mean_defect),
                num(n.pressure_mean_defect),
                num(n.div_defect),
            ]
        })
        .collect();
    // 1-based, matching the corrector file names
    ctx.table(
        "correctors.csv",
        &["j", "beta", "chi_h1", "pi_l2", "residual", "mean_defect", "pressure_mean_defect", "div_defect"],
        &rows,
    )
}

fn corrector_checks(ctx: &mut Context, field: &CoefficientField, set: &CorrectorSet) -> Result<()> {
    if ctx.wants(CheckId::CorrectorResidual) {
        let res = set.max_residual();
        let mean = set.norms.iter().map(|n| n.mean_defect.max(n.pressure_mean_defect)).fold(0.0, f64::max);
        let div = set.norms.iter().map(|n| n.div_defect).fold(0.0, f64::max);
        let pass = res <= CORRECTOR_TOL && mean <= CORRECTOR_TOL && div <= CORRECTOR_TOL;
        ctx.check(
            CheckId::CorrectorResidual,
            pass,
            format!("max residual {res:.3e}, mean defect {mean:.3e}, divergence defect {div:.3e} (limit {CORRECTOR_TOL:e})"),
        );
    }
    if ctx.wants(CheckId::TrivialCorrectors) {
        let chi = set.norms.iter().map(|n| n.chi_h1).fold(0.0, f64::max);
        let pi = set.norms.iter().map(|n| n.pi_l2).fold(0.0, f64::max);
        let eff = compute_effective(field, set)?;
        let a = field.evaluate(&vec![0.0; field.dimension()]);
        let diff = eff.tensor.max_abs_diff(&a);
        let pass = chi <= TRIVIAL_TOL && pi <= TRIVIAL_TOL && diff <= TRIVIAL_TOL;
        ctx.check(
            CheckId::TrivialCorrectors,
            pass,
            format!("max ‖χ‖ {chi:.3e}, max ‖π‖ {pi:.3e}, max |Â − A| {diff:.3e} (limit {TRIVIAL_TOL:e})"),
        );
    }
    Ok(())
}

fn run_cell(ctx: &mut Context, field: &CoefficientField) -> Result<()> {
    let set = solve_cell_problems(field, cell_grid(ctx.config)?, &ctx.config.solver)?;
    write_correctors(ctx, &set)?;
    corrector_checks(ctx, field, &set)
}

fn run_effective(ctx: &mut Context, field: &CoefficientField) -> Result<()> {
    let grid = cell_grid(ctx.config)?;
    let set = solve_cell_problems(field, grid, &ctx.config.solver)?;
    let eff = compute_effective(field, &set)?;
    eff.write_json(&ctx.out.join("effective.json"))?;
    ctx.artifacts.push("effective.json".into());
    write_correctors(ctx, &set)?;
    corrector_checks(ctx, field, &set)?;
    if ctx.wants(CheckId::Duality) {
        let rep = check_duality(field, grid, &ctx.config.solver)?;
        ctx.json("duality.json", &rep)?;
        ctx.check(
            CheckId::Duality,
            rep.discrepancy <= DUALITY_TOL,
            format!("max |(Â)* − (A*)^| = {:.3e} (limit {DUALITY_TOL:e})", rep.discrepancy),
        );
    }
    if ctx.wants(CheckId::EffectiveEllipticity) {
        let mu = field.mu();
        let chk = check_effective_ellipticity(&eff, mu, ELLIPTICITY_TOL);
        ctx.json("ellipticity.json", &chk)?;
        ctx.check(
            CheckId::EffectiveEllipticity,
            chk.pass,
            format!("μ(Â) = {:.6e} against μ(A) = {mu:.6e} − {ELLIPTICITY_TOL:e}", chk.mu_eff_lower),
        );
    }
    Ok(())
}

/// Velocity of the manufactured solution: `u = (∂₂ψ, −∂₁ψ)` with
/// `ψ = sin²(πx₁) sin²(πx₂)/π`.
pub fn manufactured_velocity(x: &[f64]) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let (s1, s2) = ((pi * x[0]).sin(), (pi * x[1]).sin());
    vec![s1 * s1 * (2.0 * pi * x[1]).sin(), -(2.0 * pi * x[0]).sin() * s2 * s2]
}

pub fn manufactured_pressure(x: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * x[0]).cos() * (pi * x[1]).cos()
}

/// `−a Δu + ∇p` for the manufactured pair.
pub fn manufactured_force(a: f64, x: &[f64]) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let tp = 2.0 * pi;
    let lap0 = 2.0 * pi * pi * (tp * x[1]).sin() * (2.0 * (tp * x[0]).cos() - 1.0);
    let lap1 = -2.0 * pi * pi * (tp * x[0]).sin() * (2.0 * (tp * x[1]).cos() - 1.0);
    vec![
        -a * lap0 - pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
        -a * lap1 - pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
    ]
}

fn run_solve(ctx: &mut Context, field: &CoefficientField) -> Result<()> {
    let cfg = ctx.config;
    let eps_list = if cfg.eps.is_empty() { vec![1.0] } else { cfg.eps.clone() };
    let manufactured = cfg.data == Some(SolveData::Manufactured);
    let scalar = constant_scalar(field);
    let mut rows = Vec::new();
    let mut errors: Vec<(usize, f64, f64)> = Vec::new();
    let mut worst_residual: f64 = 0.0;
    let mut worst_rescale: f64 = 0.0;
    let mut last: Option<StokesSolution> = None;
    for &n in &cfg.grid.boxes {
        let grid = Grid::boxed(cfg.dim, n, cfg.grid.length)?;
        for &eps in &eps_list {
            let coefficients = Coefficients::oscillating(field, eps)?;
            let problem = StokesProblem::new(grid, coefficients.clone())?;
            let problem = match (manufactured, scalar, &cfg.force) {
                (true, Some(a), _) => problem.with_force(|x| manufactured_force(a, x)),
                (false, _, Some(f)) => problem.with_force(|x| f.evaluate(x)),
                _ => {
                    return Err(Error::Config {
                        path: "data".into(),
                        message: "no usable right-hand side".into(),
                    })
                }
            };
            let solver = DirichletSolver::new(grid, &coefficients, &cfg.solver)?;
            let sol = solver.solve(&problem)?;
            worst_residual = worst_residual.max(sol.relative_residual);
            let error = if manufactured {
                let mut diff = sol.velocity.clone();
                diff.axpy(-1.0, &GridVelocity::sample(grid, manufactured_velocity));
                let e = diff.l2_norm();
                errors.push((n, eps, e));
                num(e)
            } else {
                String::new()
            };
            let rescale = if cfg.checks.contains(&CheckId::Rescaling) {
                let r = rescale_solution(&problem, &sol, 2.0)?.residual(&problem.coefficients)?;
                worst_rescale = worst_rescale.max(r);
                num(r)
            } else {
                String::new()
            };
            rows.push(vec![
                n.to_string(),
                num(eps),
                num(sol.relative_residual),
                num(sol.div_residual),
                num(sol.velocity.l2_norm()),
                num(sol.pressure.l2_norm()),
                error,
                rescale,
            ]);
            last = Some(sol);
        }
    }
    ctx.table(
        "solve.csv",
        &["n", "eps", "residual", "div_residual", "velocity_l2", "pressure_l2", "l2_error", "rescale_residual"],
        &rows,
    )?;
    if let Some(sol) = last {
        let dir = ctx.out.join("fields");
        sol.velocity.write(&dir, "velocity")?;
        sol.pressure.write(&dir, "pressure")?;
        ctx.record_dir("fields")?;
    }
    if ctx.wants(CheckId::SolverResidual) {
        let tol = cfg.solver.tol;
        ctx.check(
            CheckId::SolverResidual,
            worst_residual <= tol,
            format!("max relative residual {worst_residual:.3e} (tolerance {tol:e})"),
        );
    }
    if ctx.wants(CheckId::ManufacturedOrder) {
        let (lo, hi) = MANUFACTURED_RATIO;
        let mut ratios = Vec::new();
        for &eps in &eps_list {
            let e: Vec<&(usize, f64, f64)> = errors.iter().filter(|t| t.1 == eps).collect();
            for w in e.windows(2) {
                ratios.push((w[0].0, w[1].0, w[0].2 / w[1].2));
            }
        }
        let pass = !ratios.is_empty() && ratios.iter().all(|r| r.2 >= lo && r.2 <= hi);
        let text: Vec<String> = ratios.iter().map(|(a, b, r)| format!("N={a}→{b}: {r:.4}")).collect();
        ctx.check(CheckId::ManufacturedOrder, pass, format!("L² error ratios {} (band [{lo}, {hi}])", text.join(", ")));
    }
    if ctx.wants(CheckId::Rescaling) {
        let limit = RESCALE_FACTOR * cfg.solver.tol;
        ctx.check(
            CheckId::Rescaling,
            worst_rescale <= limit,
            format!("max residual of the r = 2 dilation {worst_rescale:.3e} (limit {limit:.1e})"),
        );
    }
    Ok(())
}

/// `(strictly decreasing, offending steps)` for `values` listed along a
/// decreasing `ε` sequence.
pub fn strict_decrease(label: &str, eps: &[f64], values: &[f64]) -> Vec<String> {
    let mut bad = Vec::new();
    for k in 1..values.len() {
        if !(values[k] < values[k - 1]) {
            bad.push(format!("{label} {:.3e} → {:.3e} at ε = {} → {}", values[k - 1], values[k], eps[k - 1], eps[k]));
        }
    }
    bad
}

/// Offending steps of the two-scale trend over a sweep: the `L²` error and
/// every flux-pairing defect must strictly decrease.
pub fn two_scale_trend(result: &SweepResult) -> Vec<String> {
    let eps: Vec<f64> = result.points.iter().map(|p| p.eps).collect();
    let l2: Vec<f64> = result.points.iter().map(|p| p.two_scale.l2).collect();
    let mut bad = strict_decrease("‖u_ε − u₀‖", &eps, &l2);
    let panel = result.points.first().map_or(0, |p| p.two_scale.flux_defects.len());
    for k in 0..panel {
        let v: Vec<f64> = result.points.iter().map(|p| p.two_scale.flux_defects[k]).collect();
        bad.extend(strict_decrease(&format!("flux[{k}]"), &eps, &v));
    }
    bad
}

fn sweep_outputs(ctx: &mut Context, result: &SweepResult) -> Result<()> {
    let panel = result.points.first().map_or(0, |p| p.two_scale.flux_defects.len());
    let mut header: Vec<String> = ["eps", "l2", "h1", "corrected_h1", "pressure_pairing"].iter().map(|s| s.to_string()).collect();
    header.extend((0..panel).map(|k| format!("flux_{k}")));
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .map(|p| {
            let t = &p.two_scale;
            let mut row = vec![num(p.eps), num(t.l2), num(t.h1), num(t.corrected_h1), num(t.pressure_pairing)];
            row.extend(t.flux_defects.iter().map(|v| num(*v)));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    ctx.table("two_scale.csv", &header, &rows)?;
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.eps),
                num(p.solution.relative_residual),
                num(p.flux_solution.relative_residual),
                num(p.energy.ratio),
                num(p.rescale_residual),
                num(p.nested_effective.mu_lower),
            ]
        })
        .collect();
    ctx.table(
        "points.csv",
        &["eps", "residual", "flux_residual", "energy_ratio", "rescale_residual", "nested_mu_lower"],
        &rows,
    )?;
    result.effective.write_json(&ctx.out.join("effective.json"))?;
    ctx.artifacts.push("effective.json".into());

    let cfg = ctx.config;
    if ctx.wants(CheckId::SolverResidual) {
        let worst = result
            .points
            .iter()
            .map(|p| p.solution.relative_residual.max(p.flux_solution.relative_residual))
            .fold(0.0, f64::max);
        let tol = cfg.solver.tol;
        ctx.check(CheckId::SolverResidual, worst <= tol, format!("max relative residual {worst:.3e} (tolerance {tol:e})"));
    }
    if ctx.wants(CheckId::Rescaling) {
        let worst = result.points.iter().map(|p| p.rescale_residual).fold(0.0, f64::max);
        let limit = RESCALE_FACTOR * cfg.solver.tol;
        ctx.check(
            CheckId::Rescaling,
            worst <= limit,
            format!("max residual of the r = 2 dilation {worst:.3e} (limit {limit:.1e})"),
        );
    }
    if ctx.wants(CheckId::TwoScaleTrend) {
        let bad = two_scale_trend(result);
        let detail = if bad.is_empty() {
            format!("‖u_ε − u₀‖ and {panel} flux pairings strictly decrease over {} values of ε", result.points.len())
        } else {
            format!("not strictly decreasing: {}", bad.join("; "))
        };
        ctx.check(CheckId::TwoScaleTrend, bad.is_empty(), detail);
    }
    Ok(())
}

fn run_two_scale_kind(ctx: &mut Context, hash: &str) -> Result<()> {
    let spec = ctx.config.sweep_spec()?;
    let result = run_two_scale(&spec, hash)?;
    sweep_outputs(ctx, &result)
}

fn run_estimate_sweep(ctx: &mut Context, hash: &str) -> Result<()> {
    let spec = ctx.config.sweep_spec()?;
    let result = run_sweep(&spec, hash)?;
    sweep_outputs(ctx, &result)?;
    let mut all: Vec<EstimateRow> = Vec::new();
    for id in SWEEP_ESTIMATES {
        if let Some(rep) = result.report(id) {
            rep.write(&ctx.out.join("estimates"), id)?;
            all.extend(rep.rows.iter().cloned());
        }
    }
    ctx.record_dir("estimates")?;
    write_rows(&ctx.out.join("estimates.csv"), &all)?;
    ctx.artifacts.push("estimates.csv".into());

    let band = spec.estimates.band;
    for (check, id) in [
        (CheckId::InteriorLipschitz, INTERIOR_LIPSCHITZ),
        (CheckId::PressureOscillation, PRESSURE_OSCILLATION),
        (CheckId::BoundaryHolder, BOUNDARY_HOLDER),
    ] {
        if !ctx.wants(check) {
            continue;
        }
        match result.report(id).filter(|r| !r.rows.is_empty()) {
            Some(rep) => {
                let s = rep.summary();
                let per: Vec<String> = s.per_eps.iter().map(|e| format!("ε={}: {:.4}", e.eps, e.max_ratio)).collect();
                ctx.check(
                    check,
                    s.band <= band,
                    format!("{id}: band {:.4} (limit {band}), max ratios {}", s.band, per.join(", ")),
                );
            }
            None => ctx.check(check, false, format!("{id}: no windows were measured")),
        }
    }
    if ctx.wants(CheckId::W1pNorm) {
        let q = spec.estimates.w1p_exponents.iter().copied().fold(f64::NAN, f64::max);
        match result.report(W1P_NORM).and_then(|r| r.lhs_variation(q)) {
            Some(v) => ctx.check(
                CheckId::W1pNorm,
                v <= W1P_VARIATION,
                format!("{W1P_NORM}: ‖∇u‖ + ‖p − avg‖ in L^{q} varies by {v:.4} (limit {W1P_VARIATION})"),
            ),
            None => ctx.check(CheckId::W1pNorm, false, format!("{W1P_NORM}: no rows with q = {q}")),
        }
    }
    Ok(())
}

fn run_liouville(ctx: &mut Context, field: &CoefficientField) -> Result<()> {
    let set = solve_cell_problems(field, cell_grid(ctx.config)?, &ctx.config.solver)?;
    let rep = liouville_family_report(field, &set)?;
    ctx.json("liouville.json", &rep)?;
    let rows: Vec<Vec<String>> = rep
        .members
        .iter()
        .map(|m| vec![m.label.clone(), num(m.momentum_residual), num(m.div_defect)])
        .collect();
    ctx.table("liouville.csv", &["member", "momentum_residual", "div_defect"], &rows)?;
    if ctx.wants(CheckId::LiouvilleRank) {
        ctx.check(
            CheckId::LiouvilleRank,
            rep.rank == rep.expected_rank,
            format!("numerical rank {} of {} members, expected d² + d + 1 = {}", rep.rank, rep.members.len(), rep.expected_rank),
        );
    }
    if ctx.wants(CheckId::LiouvilleResidual) {
        let worst = rep.max_momentum_residual();
        let limit = LIOUVILLE_FACTOR * rep.corrector_residual;
        ctx.check(
            CheckId::LiouvilleResidual,
            worst <= limit,
            format!("max member residual {worst:.3e}, corrector residual {:.3e} (limit {limit:.3e})", rep.corrector_residual),
        );
    }
    if ctx.wants(CheckId::LiouvilleDivergence) {
        let worst = rep.max_div_defect();
        ctx.check(
            CheckId::LiouvilleDivergence,
            worst <= LIOUVILLE_DIV_TOL,
            format!("max |div u − trace E| {worst:.3e} (limit {LIOUVILLE_DIV_TOL:e})"),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manufactured_pair_is_consistent() {
        // divergence, wall trace and force by central differences
        let h = 1e-4;
        let x = [0.3, 0.7];
        let u = |x: &[f64]| manufactured_velocity(x);
        let div = (u(&[x[0] + h, x[1]])[0] - u(&[x[0] - h, x[1]])[0] + u(&[x[0], x[1] + h])[1] - u(&[x[0], x[1] - h])[1]) / (2.0 * h);
        assert!(div.abs() < 1e-7);
        for t in [0.0, 0.25, 1.0] {
            assert!(u(&[0.0, t]).iter().chain(u(&[t, 1.0]).iter()).all(|v| v.abs() < 1e-15));
        }
        let f = manufactured_force(2.0, &x);
        for c in 0..2 {
            let lap = (u(&[x[0] + h, x[1]])[c] + u(&[x[0] - h, x[1]])[c] + u(&[x[0], x[1] + h])[c] + u(&[x[0], x[1] - h])[c]
                - 4.0 * u(&x)[c])
                / (h * h);
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let dp = (manufactured_pressure(&xp) - manufactured_pressure(&xm)) / (2.0 * h);
            assert!((f[c] - (-2.0 * lap + dp)).abs() < 1e-5, "{c}: {} vs {}", f[c], -2.0 * lap + dp);
        }
    }

    #[test]
    fn strict_decrease_reports_steps() {
        assert!(strict_decrease("x", &[0.5, 0.25], &[2.0, 1.0]).is_empty());
        let bad = strict_decrease("x", &[0.5, 0.25, 0.125], &[2.0, 1.0, 1.0]);
        assert_eq!(bad.len(), 1);
        assert!(bad[0].contains("0.25 → 0.125"));
    }
}
