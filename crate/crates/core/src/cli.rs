//! Command-line front end.
//!
//! Machine-readable results go to stdout or `--output`; diagnostics go to
//! stderr through `log`. Floats are written with 17 significant digits so
//! that emitted CSV parses back to the same `f64` values.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{FluidError, Result};
use crate::model::{censor, partition_phases, CensoredGenerator, FluidModel, PhasePartition, Regime};
use crate::numerics::{expm, stationary_of};
use crate::passage::{escape, transform_at, EscapeMode};
use crate::riccati::{self, wiener_hopf_residuals, Algorithm, RiccatiSolution, SolverOptions};
use crate::simulator::{self, SimulationEstimate};
use crate::stationary::stationary_distribution;

#[derive(Debug, Parser)]
#[command(name = "fluidq", version, about = "Markov-modulated fluid queue analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drift, regime, phase partition and eigenvalue separation.
    Info(CommonArgs),
    /// First-return matrices and their companions.
    Psi(CommonArgs),
    /// Stationary CDF of the regulated level on a grid.
    Stationary {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "x-max", default_value_t = 10.0)]
        x_max: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Phase distribution at first exit from (-a, b).
    Escape {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(short = 'a')]
        a: f64,
        #[arg(short = 'b')]
        b: f64,
    },
    /// Cycle transforms on a grid of s values.
    Transform {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated values or `start:step:end`.
        #[arg(long = "s-grid", default_value = "0:0.1:2")]
        s_grid: String,
    },
    /// Monte Carlo estimates with 95% half-widths.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1e6)]
        horizon: f64,
        #[arg(long, default_value_t = 100_000)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "x-max", default_value_t = 2.0)]
        x_max: f64,
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(short = 'a')]
        a: Option<f64>,
        #[arg(short = 'b')]
        b: Option<f64>,
    },
    /// Runs every invariant check on the model.
    Verify(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Model document (JSON).
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Newton)]
    pub algorithm: AlgorithmArg,
    #[arg(long, default_value_t = riccati::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Functional,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl CommonArgs {
    fn options(&self) -> Result<SolverOptions> {
        let algorithm = match self.algorithm {
            AlgorithmArg::Functional => Algorithm::Functional,
            AlgorithmArg::Newton => Algorithm::Newton,
        };
        let mut options = SolverOptions::new(algorithm).with_tol(self.tol);
        if let Some(n) = self.max_iter {
            options = options.with_max_iter(n);
        }
        if !(options.tol > 0.0) || options.max_iter == 0 {
            return Err(FluidError::InvalidArgument("--tol and --max-iter must be positive".into()));
        }
        Ok(options)
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command; `Ok` carries the exit code (nonzero only for failed `verify` checks).
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Info(c) => {
            let ctx = Context::load(c)?;
            emit(c, &info_doc(&ctx)?)?;
        }
        Command::Psi(c) => {
            let ctx = Context::load(c)?;
            let sol = ctx.solve()?;
            emit(c, &psi_doc(&ctx, &sol))?;
        }
        Command::Stationary { common, x_max, points } => {
            let grid = linear_grid(*x_max, *points)?;
            let ctx = Context::load(common)?;
            let sol = ctx.solve()?;
            emit(common, &stationary_doc(&ctx, &sol, &grid)?)?;
        }
        Command::Escape { common, a, b } => {
            let ctx = Context::load(common)?;
            let sol = ctx.solve()?;
            let e = escape(&ctx.censored, &sol, *a, *b)?;
            emit(common, &escape_doc(&ctx, &e))?;
        }
        Command::Transform { common, s_grid } => {
            let grid = parse_grid(s_grid)?;
            let ctx = Context::load(common)?;
            emit(common, &transform_doc(&ctx, &grid)?)?;
        }
        Command::Simulate { common, horizon, replications, seed, x_max, points, a, b } => {
            let ctx = Context::load(common)?;
            let grid = linear_grid(*x_max, *points)?;
            let req = SimulateRequest {
                horizon: *horizon,
                replications: *replications,
                seed: *seed,
                grid,
                interval: (*a).zip(*b),
            };
            if a.is_some() != b.is_some() {
                return Err(FluidError::InvalidArgument("-a and -b must be given together".into()));
            }
            emit(common, &simulate_doc(&ctx, &req)?)?;
        }
        Command::Verify(c) => {
            let ctx = Context::load(c)?;
            let checks = verify_model(&ctx.model, &c.options()?)?;
            let failed = checks.iter().filter(|k| !k.passed).count();
            emit(c, &verify_doc(&checks))?;
            info!("{} checks, {} failed", checks.len(), failed);
            return Ok(if failed == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}

struct Context {
    model: FluidModel,
    partition: PhasePartition,
    censored: CensoredGenerator,
    options: SolverOptions,
}

impl Context {
    fn load(c: &CommonArgs) -> Result<Self> {
        let options = c.options()?;
        let model = FluidModel::from_path(&c.model)?;
        let partition = partition_phases(&model);
        let censored = censor(&model, &partition)?;
        info!("loaded {} phases, drift {:e}", model.dim(), censored.drift());
        Ok(Context { model, partition, censored, options })
    }

    fn solve(&self) -> Result<RiccatiSolution> {
        let sol = riccati::solve(&self.censored, &self.options)?;
        info!(
            "{} iteration: {} steps (dual {}), residual {:e}{}",
            sol.algorithm.name(),
            sol.iterations,
            sol.dual_iterations,
            sol.residual.max(sol.dual_residual),
            if sol.slow_mode { ", slow mode (zero drift)" } else { "" }
        );
        Ok(sol)
    }

    fn labels(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.model.label(i)).collect()
    }
}

/// A result ready for either output format.
struct Document {
    json: Value,
    csv: String,
}

fn emit(c: &CommonArgs, doc: &Document) -> Result<()> {
    let text = match c.format {
        Format::Csv => doc.csv.clone(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&doc.json).map_err(|e| FluidError::Parse(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    write_output(c.output.as_deref(), &text)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_json(a: &DMatrix<f64>) -> Value {
    Value::from(a.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn vector_json(v: &DVector<f64>) -> Value {
    Value::from(v.iter().copied().collect::<Vec<f64>>())
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::PositiveRecurrent => "PositiveRecurrent",
        Regime::NullRecurrent => "NullRecurrent",
        Regime::Transient => "Transient",
    }
}

fn linear_grid(x_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(x_max > 0.0) || !x_max.is_finite() || points < 2 {
        return Err(FluidError::InvalidArgument(format!(
            "grid needs x_max > 0 and at least 2 points, got {x_max} and {points}"
        )));
    }
    Ok((0..points).map(|k| x_max * k as f64 / (points - 1) as f64).collect())
}

/// Parses `v1,v2,...` or `start:step:end`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || FluidError::InvalidArgument(format!("cannot parse grid '{spec}'"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + step * k as f64).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() || grid.iter().any(|s| !(*s >= 0.0)) {
        return Err(FluidError::InvalidArgument(format!("grid '{spec}' must hold values >= 0")));
    }
    Ok(grid)
}

fn csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn info_doc(ctx: &Context) -> Result<Document> {
    let regime =
        riccati::solve(&ctx.censored, &ctx.options).map(|sol| (sol.regime, wiener_hopf_residuals(&sol, &ctx.censored)));
    let (regime, wh) = match regime {
        Ok((r, wh)) => (r, Some(wh)),
        Err(_) => (crate::model::classify(&ctx.censored), None),
    };
    let up = ctx.labels(&ctx.partition.up);
    let down = ctx.labels(&ctx.partition.down);
    let zero = ctx.labels(&ctx.partition.zero);
    let mut json = json!({
        "phases": ctx.model.dim(),
        "drift": ctx.censored.drift(),
        "regime": regime_name(regime),
        "alpha": vector_json(ctx.censored.alpha()),
        "up": up,
        "down": down,
        "zero": zero,
    });
    let mut csv = String::from("key,value\n");
    csv_row(&mut csv, &["phases".into(), ctx.model.dim().to_string()]);
    csv_row(&mut csv, &["drift".into(), fmt_f64(ctx.censored.drift())]);
    csv_row(&mut csv, &["regime".into(), regime_name(regime).into()]);
    csv_row(&mut csv, &["up".into(), up.join(";")]);
    csv_row(&mut csv, &["down".into(), down.join(";")]);
    csv_row(&mut csv, &["zero".into(), zero.join(";")]);
    if let Some(wh) = wh {
        json["separation_ok"] = json!(wh.separation_ok);
        json["lambda_low"] = json!([wh.lambda_low.re, wh.lambda_low.im]);
        json["lambda_high"] = json!([wh.lambda_high.re, wh.lambda_high.im]);
        json["eigenvalues"] = Value::from(wh.eigenvalues.iter().map(|z| vec![z.re, z.im]).collect::<Vec<_>>());
        csv_row(&mut csv, &["separation_ok".into(), wh.separation_ok.to_string()]);
        csv_row(&mut csv, &["lambda_low".into(), fmt_f64(wh.lambda_low.re)]);
        csv_row(&mut csv, &["lambda_high".into(), fmt_f64(wh.lambda_high.re)]);
    }
    Ok(Document { json, csv })
}

/// Name, matrix, row labels, column labels.
type LabelledMatrix<'a> = (&'a str, &'a DMatrix<f64>, &'a [String], &'a [String]);

fn psi_doc(ctx: &Context, sol: &RiccatiSolution) -> Document {
    let up = ctx.labels(&ctx.partition.up);
    let down = ctx.labels(&ctx.partition.down);
    let wh = wiener_hopf_residuals(sol, &ctx.censored);
    let mats: [LabelledMatrix; 7] = [
        ("psi", &sol.psi, &up, &down),
        ("psi_hat", &sol.psi_hat, &down, &up),
        ("U", &sol.u, &down, &down),
        ("U_hat", &sol.u_hat, &up, &up),
        ("K", &sol.k, &up, &up),
        ("K_hat", &sol.k_hat, &down, &down),
        ("phi", &sol.phi, &down, &up),
    ];
    let mut csv = String::from("matrix,row,col,value\n");
    let mut json = json!({
        "algorithm": sol.algorithm.name(),
        "iterations": sol.iterations,
        "dual_iterations": sol.dual_iterations,
        "residual": sol.residual,
        "dual_residual": sol.dual_residual,
        "slow_mode": sol.slow_mode,
        "regime": regime_name(sol.regime),
        "wiener_hopf": { "res_u": wh.res_u, "res_k": wh.res_k, "separation_ok": wh.separation_ok, "similarity_res": wh.similarity_res },
        "up": up,
        "down": down,
    });
    for (name, m, rows, cols) in mats {
        json[name] = matrix_json(m);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                csv_row(&mut csv, &[name.into(), rows[i].clone(), cols[j].clone(), fmt_f64(m[(i, j)])]);
            }
        }
    }
    for (k, v) in [
        ("iterations", sol.iterations as f64),
        ("dual_iterations", sol.dual_iterations as f64),
        ("residual", sol.residual),
        ("dual_residual", sol.dual_residual),
        ("res_U", wh.res_u),
        ("res_K", wh.res_k),
    ] {
        csv_row(&mut csv, &["diagnostic".into(), k.into(), String::new(), fmt_f64(v)]);
    }
    Document { json, csv }
}

fn stationary_doc(ctx: &Context, sol: &RiccatiSolution, grid: &[f64]) -> Result<Document> {
    let dist = stationary_distribution(&ctx.censored, sol)?;
    let labels: Vec<String> = (0..ctx.model.dim()).map(|i| ctx.model.label(i)).collect();
    let mut csv = String::new();
    csv_row(&mut csv, &std::iter::once("x".to_string()).chain(labels.iter().cloned()).collect::<Vec<_>>());
    let mut cdf_rows = Vec::with_capacity(grid.len());
    let mut density_rows = Vec::with_capacity(grid.len());
    for &x in grid {
        let g = dist.cdf(x)?;
        let mut row = vec![fmt_f64(x)];
        row.extend(g.iter().map(|&v| fmt_f64(v)));
        csv_row(&mut csv, &row);
        cdf_rows.push(g.iter().copied().collect::<Vec<f64>>());
        density_rows.push(if x > 0.0 { Some(dist.density(x)?.iter().copied().collect::<Vec<f64>>()) } else { None });
    }
    let json = json!({
        "labels": labels,
        "x": grid,
        "cdf": cdf_rows,
        "density": density_rows,
        "boundary_mass": vector_json(&dist.boundary_mass),
        "rho": vector_json(&dist.rho),
        "mean_cycle": vector_json(&dist.mean_cycle),
        "norm_c": dist.norm_c,
    });
    Ok(Document { json, csv })
}

fn escape_doc(ctx: &Context, e: &crate::passage::EscapeResult) -> Document {
    let up = ctx.labels(&ctx.partition.up);
    let down = ctx.labels(&ctx.partition.down);
    let mut header = vec!["start".to_string()];
    header.extend(up.iter().map(|l| format!("upper_{l}")));
    header.extend(down.iter().map(|l| format!("lower_{l}")));
    let mut csv = String::new();
    csv_row(&mut csv, &header);
    let all = e.combined();
    for i in 0..all.nrows() {
        let mut row = vec![ctx.model.label(i)];
        row.extend(all.row(i).iter().map(|&v| fmt_f64(v)));
        csv_row(&mut csv, &row);
    }
    let mut json = json!({
        "a": e.a,
        "b": e.b,
        "mode": match e.mode { EscapeMode::Regular => "regular", EscapeMode::NullRecurrent => "null_recurrent" },
        "up": up,
        "down": down,
        "upper": matrix_json(&e.upper),
        "lower": matrix_json(&e.lower),
    });
    if let Some(aux) = &e.aux {
        json["aux"] = json!({
            "eta": vector_json(&aux.eta),
            "beta": vector_json(&aux.beta),
            "w": vector_json(&aux.w),
            "h": vector_json(&aux.h_full),
        });
    }
    Document { json, csv }
}

fn transform_doc(ctx: &Context, grid: &[f64]) -> Result<Document> {
    let md = ctx.partition.m_down();
    let mut header = vec!["s".to_string()];
    for i in 0..md {
        for j in 0..md {
            header.push(format!("H_{}_{}", i + 1, j + 1));
        }
    }
    let mut csv = String::new();
    csv_row(&mut csv, &header);
    let mut points = Vec::new();
    for &s in grid {
        let t = transform_at(&ctx.censored, s, &ctx.options)?;
        let mut row = vec![fmt_f64(s)];
        for i in 0..md {
            for j in 0..md {
                row.push(fmt_f64(t.h_s[(i, j)]));
            }
        }
        csv_row(&mut csv, &row);
        points.push(
            json!({ "s": s, "H": matrix_json(&t.h_s), "phi": matrix_json(&t.phi_s), "psi": matrix_json(&t.psi_s) }),
        );
    }
    Ok(Document { json: json!({ "down": ctx.labels(&ctx.partition.down), "points": points }), csv })
}

struct SimulateRequest {
    horizon: f64,
    replications: usize,
    seed: u64,
    grid: Vec<f64>,
    interval: Option<(f64, f64)>,
}

fn simulate_doc(ctx: &Context, req: &SimulateRequest) -> Result<Document> {
    let up = ctx.labels(&ctx.partition.up);
    let down = ctx.labels(&ctx.partition.down);
    let labels: Vec<String> = (0..ctx.model.dim()).map(|i| ctx.model.label(i)).collect();
    let mut csv = String::from("target,row,col,value,half_width\n");
    let mut json = json!({ "seed": req.seed, "replications": req.replications, "horizon": req.horizon });

    let mut add = |name: &str, est: &SimulationEstimate, rows: &[String], cols: &[String], csv: &mut String| {
        for (i, row) in rows.iter().enumerate() {
            for (j, col) in cols.iter().enumerate() {
                csv_row(
                    csv,
                    &[
                        name.into(),
                        row.clone(),
                        col.clone(),
                        fmt_f64(est.value[(i, j)]),
                        fmt_f64(est.half_width[(i, j)]),
                    ],
                );
            }
        }
        json[name] = json!({
            "value": matrix_json(&est.value),
            "half_width": matrix_json(&est.half_width),
            "samples": est.samples,
            "censored": est.censored,
        });
    };

    let psi = simulator::estimate_psi(&ctx.model, req.replications, req.seed, simulator::DEFAULT_LEVEL_CAP)?;
    add("psi", &psi, &up, &down, &mut csv);
    let path = simulator::simulate_path(&ctx.model, req.horizon, req.seed, &req.grid)?;
    let grid_labels: Vec<String> = req.grid.iter().map(|&x| fmt_f64(x)).collect();
    add("boundary_mass", &path.boundary_mass, &["level_0".to_string()], &labels, &mut csv);
    add("phase_fraction", &path.phase_fraction, &["all_levels".to_string()], &labels, &mut csv);
    add("cdf", &path.cdf, &grid_labels, &labels, &mut csv);
    if let Some((a, b)) = req.interval {
        let e = simulator::estimate_escape(&ctx.model, a, b, req.replications, req.seed)?;
        let cols: Vec<String> =
            up.iter().map(|l| format!("upper_{l}")).chain(down.iter().map(|l| format!("lower_{l}"))).collect();
        add("escape", &e, &labels, &cols, &mut csv);
    }
    Ok(Document { json, csv })
}

/// Outcome of one self-check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(out: &mut Vec<CheckOutcome>, name: &str, passed: bool, detail: String) {
    out.push(CheckOutcome { name: name.to_string(), passed, detail });
}

fn row_sum_gap(a: &DMatrix<f64>, target: f64) -> f64 {
    a.row_iter().map(|r| (r.sum() - target).abs()).fold(0.0, f64::max)
}

fn max_row_sum(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.sum()).fold(f64::NEG_INFINITY, f64::max)
}

fn off_diagonal_min(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut m = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m = m.min(a[(i, j)]);
            }
        }
    }
    m
}

/// The invariant suite behind `fluidq verify`.
pub fn verify_model(model: &FluidModel, options: &SolverOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let partition = partition_phases(model);
    let cg = censor(model, &partition)?;
    let q = model.generator();

    let alpha = stationary_of(q)?;
    let alpha_res = (alpha.transpose() * q).amax();
    check(
        &mut out,
        "alpha",
        alpha_res <= 1e-10 && (alpha.sum() - 1.0).abs() <= 1e-12,
        format!("|alpha^T Q| = {alpha_res:.2e}"),
    );

    let t = cg.t();
    let t_rows = row_sum_gap(t, 0.0);
    check(
        &mut out,
        "censored_generator",
        t_rows <= 1e-10 && off_diagonal_min(t) >= 0.0,
        format!("row sums {t_rows:.2e}"),
    );

    let sol = riccati::solve(&cg, options)?;
    let regime = sol.regime;
    check(
        &mut out,
        "riccati_residual",
        sol.residual <= 1e-10 && sol.dual_residual <= 1e-10,
        format!(
            "{:.2e} / {:.2e} ({} + {} steps)",
            sol.residual, sol.dual_residual, sol.iterations, sol.dual_iterations
        ),
    );
    check(
        &mut out,
        "psi_positive",
        sol.psi.min() > 0.0 && sol.psi_hat.min() > 0.0,
        format!("min {:.3e} / {:.3e}", sol.psi.min(), sol.psi_hat.min()),
    );

    let (psi_ok, psi_detail) = match regime {
        Regime::Transient => (max_row_sum(&sol.psi) < 1.0 - 1e-6, format!("max row sum {:.12}", max_row_sum(&sol.psi))),
        _ => {
            let g = row_sum_gap(&sol.psi, 1.0);
            (g <= 1e-8, format!("|psi 1 - 1| = {g:.2e}"))
        }
    };
    check(&mut out, "psi_row_sums", psi_ok, psi_detail);
    let (hat_ok, hat_detail) = match regime {
        Regime::PositiveRecurrent => {
            (max_row_sum(&sol.psi_hat) < 1.0 - 1e-6, format!("max row sum {:.12}", max_row_sum(&sol.psi_hat)))
        }
        _ => {
            let g = row_sum_gap(&sol.psi_hat, 1.0);
            (g <= 1e-8, format!("|psi_hat 1 - 1| = {g:.2e}"))
        }
    };
    check(&mut out, "psi_hat_row_sums", hat_ok, hat_detail);

    let u_sum = max_row_sum(&sol.u);
    // Zero off-diagonal entries and conservative rows are possible when a
    // down phase has no direct way up.
    let u_ok = off_diagonal_min(&sol.u) >= -1e-12 || sol.u.nrows() == 1;
    let u_law = if regime == Regime::Transient {
        u_sum <= 1e-10 && sol.u.row_iter().any(|r| r.sum() < -1e-8)
    } else {
        row_sum_gap(&sol.u, 0.0) <= 1e-8
    };
    check(&mut out, "u_generator", u_ok && u_law, format!("max row sum {u_sum:.3e}"));

    let wh = wiener_hopf_residuals(&sol, &cg);
    check(
        &mut out,
        "wiener_hopf",
        wh.res_u <= 1e-8 && wh.res_k <= 1e-8,
        format!("res_U {:.2e}, res_K {:.2e}", wh.res_u, wh.res_k),
    );
    check(&mut out, "spectrum", wh.spectrum_gap <= 1e-6, format!("gap {:.2e}", wh.spectrum_gap));
    check(
        &mut out,
        "eigenvalue_separation",
        wh.separation_ok,
        format!("lambda = {:.3e}, {:.3e}", wh.lambda_low.re, wh.lambda_high.re),
    );
    if let Some(s) = wh.similarity_res {
        check(&mut out, "similarity", s <= 1e-8, format!("{s:.2e}"));
    }
    let crossings = [0.1, 1.0, 10.0].iter().map(|&x| expm(&(&sol.k * x)).min()).fold(f64::INFINITY, f64::min);
    check(&mut out, "crossings_nonnegative", crossings >= -1e-12, format!("min entry {crossings:.2e}"));

    if regime == Regime::PositiveRecurrent {
        let dist = stationary_distribution(&cg, &sol)?;
        let lim = (dist.limit() - cg.alpha()).amax();
        check(&mut out, "stationary_total_mass", lim <= 1e-8, format!("|G(inf) - alpha| = {lim:.2e}"));
        let h = sol.h();
        let fixed = (dist.rho.transpose() * &h - dist.rho.transpose()).amax();
        check(&mut out, "rho_fixed_point", fixed <= 1e-10, format!("{fixed:.2e}"));
        let norm = (dist.rho.dot(&dist.mean_cycle) * dist.norm_c - 1.0).abs();
        check(&mut out, "normalisation", norm <= 1e-10 && dist.mean_cycle.min() > 0.0, format!("{norm:.2e}"));
        let up_mass = partition.up.iter().map(|&i| dist.boundary_mass[i].abs()).fold(0.0, f64::max);
        check(
            &mut out,
            "no_up_mass_at_zero",
            up_mass == 0.0 && dist.boundary_mass.min() >= 0.0,
            format!("{up_mass:.2e}"),
        );
        let scale = 1.0 / -sol.k.symmetric_eigenvalues().max().min(-1e-3);
        let mut prev = dist.cdf(0.0)?;
        let mut mono = true;
        for k in 1..50 {
            let g = dist.cdf(scale * 10.0 * k as f64 / 49.0)?;
            mono &= (&g - &prev).min() >= -1e-12;
            prev = g;
        }
        check(&mut out, "cdf_monotone", mono, "50-point grid".into());
    }

    let e = escape(&cg, &sol, 1.0, 1.0)?;
    let comb = e.combined();
    let gap = row_sum_gap(&comb, 1.0);
    check(&mut out, "escape_rows", gap <= 1e-8 && comb.min() >= -1e-12, format!("row sums {gap:.2e}"));
    if let Some(aux) = &e.aux {
        let ah = cg.alpha().dot(&aux.h_full).abs();
        check(&mut out, "escape_null_eta", aux.eta_residual <= 1e-9, format!("{:.2e}", aux.eta_residual));
        check(&mut out, "deviation_orthogonal", ah <= 1e-9, format!("|alpha^T h| = {ah:.2e}"));
    }

    let t0 = transform_at(&cg, 0.0, options)?;
    let h0 = (&t0.h_s - sol.h()).amax();
    check(&mut out, "transform_at_zero", h0 <= 1e-9, format!("{h0:.2e}"));
    let mut prev = t0.h_s;
    let mut mono = true;
    for s in [0.5, 1.0, 2.0] {
        let t = transform_at(&cg, s, options)?;
        mono &= (&prev - &t.h_s).min() >= -1e-12;
        prev = t.h_s;
    }
    check(&mut out, "transform_monotone", mono, "s in {0, 0.5, 1, 2}".into());
    Ok(out)
}

fn verify_doc(checks: &[CheckOutcome]) -> Document {
    let mut csv = String::from("check,status,detail\n");
    for c in checks {
        let _ = writeln!(csv, "{},{},{}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail.replace(',', ";"));
    }
    let json = Value::from(
        checks.iter().map(|c| json!({ "check": c.name, "passed": c.passed, "detail": c.detail })).collect::<Vec<_>>(),
    );
    Document { json, csv }
}
