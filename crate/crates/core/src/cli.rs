//! Command-line front end. `run_command` parses arguments, runs one
//! subcommand and maps the outcome to an exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analytic::solve_linear_seir;
use crate::calibrate::{
    fit_fermi_dirac, fit_gradient_descent, fermi_dirac_eval, FitModel, FitProblem, GdOptions, Objective, SeirFit,
    SirFit,
};
use crate::data::{self, Cell, Format, Table};
use crate::error::{Error, Result};
use crate::model::{derived_stats, r_eff_series, ModelKind, Simulation};
use crate::plot::LinePlot;
use crate::scenario::{self, GillespieScenario, Scenario, SpatialScenario};
use crate::schema::SchemaKind;
use crate::spatial::{integrate_totals, SpatialParams};
use crate::stability::{self, Branch};
use crate::stochastic::{self, LangevinFields, NoiseMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "epikit", version, about = "Epidemic models: compartment, spatial, stochastic, and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a compartment model (SEIR, SIR, linearized SEIR, quarantine SIR).
    Simulate(SimulateArgs),
    /// Evaluate the closed-form linearized SEIR solution on a time grid.
    LinearSeir(LinearSeirArgs),
    /// Integrate the reaction-diffusion density model.
    Spatial(SpatialArgs),
    /// Dispersion relation and Turing analysis around a steady state.
    Stability(StabilityArgs),
    /// Gillespie simulation on a lattice of cells.
    Gillespie(GillespieArgs),
    /// Complex Langevin simulation of the density model.
    Langevin(LangevinArgs),
    /// Fit SIR or SEIR rates to cumulative case data.
    Fit(FitArgs),
    /// Fit a closed-form curve to cumulative case data.
    FitCurve(FitCurveArgs),
    /// Case-data utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Print a shipped JSON schema.
    Schema {
        #[arg(value_enum)]
        kind: SchemaArg,
    },
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Validate a `date,cases,deaths` file and echo it normalized.
    Ingest(DataArgs),
    /// Daily new cases and deaths.
    Diff(DataArgs),
    /// Trailing moving average.
    Ma(MaArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemaArg {
    Scenario,
    Spatial,
    Gillespie,
    Table,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; defaults to the extension of --out, else CSV.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Also write an SVG line plot.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::SCENARIO_PRESETS), conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario JSON document.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output spacing in days; 0 keeps every step.
    #[arg(long, default_value_t = 1.0)]
    sample_every: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct LinearSeirArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::SCENARIO_PRESETS), conflicts_with = "scenario")]
    preset: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides such as `beta0=0.5,sigma=0.0417,gamma=0.0714,f=0.25`.
    #[arg(long)]
    params: Option<String>,
    /// Initial values such as `s=1000,e=0,i=10` (`s` is the deviation F).
    #[arg(long)]
    init: Option<String>,
    /// `start:stop:step` in days.
    #[arg(long)]
    eval_grid: Option<String>,
    /// Add RK4 (dt = 1e-3) columns and their maximum relative deviation.
    #[arg(long)]
    compare: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SpatialArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::SPATIAL_PRESETS), conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Snapshot cadence in days.
    #[arg(long)]
    snapshot_every: Option<f64>,
    /// Write field snapshots (t, x, phi_S, phi_I, phi_R, phi_D, phi_C).
    #[arg(long)]
    fields: Option<PathBuf>,
    /// Write the space-time phi_I matrix, one row per snapshot.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long, value_parser = ["fig10b"])]
    preset: Option<String>,
    /// Overrides of lambda, mu, nu, f_source, g, d_s, d_i (`key=value,...`).
    #[arg(long)]
    params: Option<String>,
    #[arg(long, default_value = "red", value_parser = ["red", "blue"])]
    branch: String,
    #[arg(long, default_value_t = 1.0)]
    k_max: f64,
    #[arg(long, default_value_t = 1001)]
    k_steps: usize,
    /// Emit the red and blue Turing curves in the (mu, nu) plane instead.
    #[arg(long)]
    turing_sweep: bool,
    /// Upper end of the mu range for the sweep (default 2 lambda).
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long, default_value_t = 400)]
    sweep_steps: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct GillespieArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::GILLESPIE_PRESETS), conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, env = "EPIKIT_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    t_end: Option<f64>,
    /// Write the event log of a single replicate instead of ensemble moments.
    #[arg(long)]
    events: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Complex,
    Real,
    Off,
}

#[derive(Args, Debug)]
struct LangevinArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::SPATIAL_PRESETS), conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "complex")]
    noise: NoiseArg,
    #[arg(long, env = "EPIKIT_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output spacing in days.
    #[arg(long, default_value_t = 1.0)]
    sample_every: f64,
    /// Individuals per unit density. Densities are multiplied by this factor,
    /// lambda divided and f multiplied, leaving the deterministic dynamics
    /// unchanged while the relative noise shrinks as 1/sqrt(scale).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum FitSpace {
    Linear,
    Log,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, value_parser = ["sir", "seir"])]
    model: String,
    /// `date,cases,deaths` file; relative paths also search $EPIKIT_DATA_DIR.
    #[arg(long)]
    data: PathBuf,
    /// Starting rates: `beta,gamma` (sir) or `beta,sigma,gamma` (seir).
    #[arg(long, value_delimiter = ',', required = true)]
    p0: Vec<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    fit_space: FitSpace,
    /// Population size.
    #[arg(long)]
    n: f64,
    /// Initial infected (defaults to the first cumulative count).
    #[arg(long)]
    i0: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitCurveArgs {
    #[arg(long, default_value = "fermi-dirac", value_parser = ["fermi-dirac"])]
    ansatz: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cases", value_parser = ["cases", "deaths"])]
    column: String,
    #[arg(long, value_enum, default_value = "linear")]
    fit_space: FitSpace,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    file: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum MaOf {
    Daily,
    Cumulative,
}

#[derive(Args, Debug)]
struct MaArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// Average the daily differences or the cumulative counts.
    #[arg(long, value_enum, default_value = "daily")]
    of: MaOf,
    #[command(flatten)]
    output: OutputArgs,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::LinearSeir(a) => linear_seir(a),
        Command::Spatial(a) => spatial(a),
        Command::Stability(a) => stability_cmd(a),
        Command::Gillespie(a) => gillespie(a),
        Command::Langevin(a) => langevin(a),
        Command::Fit(a) => fit(a),
        Command::FitCurve(a) => fit_curve(a),
        Command::Data { command } => match command {
            DataCommand::Ingest(a) => data_ingest(a),
            DataCommand::Diff(a) => data_diff(a),
            DataCommand::Ma(a) => data_ma(a),
        },
        Command::Schema { kind } => {
            let k = match kind {
                SchemaArg::Scenario => SchemaKind::Scenario,
                SchemaArg::Spatial => SchemaKind::SpatialScenario,
                SchemaArg::Gillespie => SchemaKind::GillespieScenario,
                SchemaArg::Table => SchemaKind::Table,
            };
            write_stdout(k.text());
            Ok(())
        }
    }
}

fn write_stdout(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes());
    let _ = out.flush();
}

fn emit(table: &Table, o: &OutputArgs, plot: impl FnOnce() -> LinePlot) -> Result<()> {
    let format = match (o.format, &o.out) {
        (Some(FormatArg::Csv), _) => Format::Csv,
        (Some(FormatArg::Json), _) => Format::Json,
        (None, Some(p)) => Format::from_path(p),
        (None, None) => Format::Csv,
    };
    match &o.out {
        Some(p) => data::write_outputs(table, format, p)?,
        None => write_stdout(&data::render(table, format)),
    }
    if let Some(p) = &o.plot {
        fs::write(p, plot().to_svg())?;
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text)?,
        None => write_stdout(&text),
    }
    Ok(())
}

fn plot_columns(table: &Table, title: &str, x: &str, ys: &[&str]) -> LinePlot {
    let mut p = LinePlot::new(title, x, table.column(x).unwrap_or_default());
    for y in ys {
        if let Some(col) = table.column(y) {
            p = p.add(*y, col);
        }
    }
    p
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn schema_hint(e: Error, kind: &str) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{m}\n(`epikit schema {kind}` prints the expected document)")),
        Error::Json(j) => Error::InvalidInput(format!("{j}\n(`epikit schema {kind}` prints the expected document)")),
        other => other,
    }
}

fn parse_kv(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value, got {p:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{k}: not a number: {v:?}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Indices kept when thinning `len` samples spaced `dt` to every `every` days.
fn thin(len: usize, dt: f64, every: f64) -> Result<Vec<usize>> {
    if !(every >= 0.0) {
        return Err(Error::InvalidInput(format!("sample spacing must be >= 0, got {every}")));
    }
    let stride = if every == 0.0 { 1 } else { ((every / dt).round() as usize).max(1) };
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    Ok(idx)
}

fn load_scenario(preset: &Option<String>, file: &Option<PathBuf>) -> Result<Scenario> {
    match (preset, file) {
        (_, Some(path)) => Scenario::from_json(&read_text(path)?).map_err(|e| schema_hint(e, "scenario")),
        (Some(name), None) => scenario::preset(name).ok_or_else(|| Error::InvalidInput(format!("unknown preset {name}"))),
        (None, None) => Err(Error::InvalidInput("give --preset or --scenario".into())),
    }
}

fn load_spatial(preset: &Option<String>, file: &Option<PathBuf>) -> Result<SpatialScenario> {
    match (preset, file) {
        (_, Some(path)) => SpatialScenario::from_json(&read_text(path)?).map_err(|e| schema_hint(e, "spatial")),
        (Some(name), None) => {
            scenario::spatial_preset(name).ok_or_else(|| Error::InvalidInput(format!("unknown preset {name}")))
        }
        (None, None) => Err(Error::InvalidInput("give --preset or --scenario".into())),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut sc = load_scenario(&a.preset, &a.scenario)?;
    if let Some(t) = a.t_end {
        sc.t_end = t;
    }
    if let Some(dt) = a.dt {
        sc.dt = dt;
    }
    let ts = sc.run()?;
    let schedule = sc.schedule();
    let stats = derived_stats(&sc.params, &schedule);
    let mut table = Table::new(["t", "S", "E", "I", "R", "D", "C", "new_cases", "new_deaths"])
        .with_meta("model", sc.model.name())
        .with_meta("preset", a.preset.clone().unwrap_or_default())
        .with_meta("R0", stats.r0)
        .with_meta("half_life_transmission", stats.half_life_transmission)
        .with_meta("half_life_incubation", stats.half_life_incubation)
        .with_meta("half_life_infectious", stats.half_life_infectious)
        .with_meta("control_response_time", stats.control_response_time);
    match sc.model {
        ModelKind::SeirLinear => table = table.with_meta("note", "S holds the deviation F = S - N"),
        ModelKind::SirQuarantine => table = table.with_meta("note", "D holds the quarantined population T"),
        ModelKind::Seir | ModelKind::Sir => {
            let reff = r_eff_series(&ts, &sc.params, &schedule);
            table = table.with_meta("r_eff_crossing", reff.crossing.unwrap_or(f64::NAN));
        }
    }
    if let Some(last) = ts.last() {
        table = table.with_meta("final_deaths", last.d).with_meta("final_cumulative_cases", last.c);
    }
    for j in thin(ts.len(), sc.dt, a.sample_every)? {
        let s = &ts.samples[j];
        table.push(
            [s.t, s.s, s.e, s.i, s.r, s.d, s.c, ts.new_cases[j], ts.new_deaths[j]]
                .map(Cell::Num)
                .to_vec(),
        );
    }
    let title = format!("{} ({})", a.preset.as_deref().unwrap_or("scenario"), sc.model.name());
    emit(&table, &a.output, || plot_columns(&table, &title, "t", &["S", "E", "I", "R", "D"]))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("bad grid {s:?}, expected start:stop:step")))?;
    let [start, stop, step] = nums[..] else {
        return Err(Error::InvalidInput(format!("bad grid {s:?}, expected start:stop:step")));
    };
    if !(step > 0.0) || stop < start {
        return Err(Error::InvalidInput(format!("bad grid {s:?}: need step > 0 and stop >= start")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn linear_seir(a: LinearSeirArgs) -> Result<()> {
    let preset = if a.preset.is_none() && a.scenario.is_none() {
        Some("fig3".to_string())
    } else {
        a.preset.clone()
    };
    let sc = load_scenario(&preset, &a.scenario)?;
    let mut params = sc.params;
    let mut init = sc.init.to_state();
    if let Some(s) = &a.params {
        for (k, v) in parse_kv(s)? {
            match k.as_str() {
                "beta0" | "beta" => params.beta0 = v,
                "sigma" => params.sigma = v,
                "gamma" => params.gamma = v,
                "f" => params.f = v,
                "n" => params.n = v,
                _ => return Err(Error::InvalidInput(format!("unknown parameter {k}"))),
            }
        }
    }
    if let Some(s) = &a.init {
        for (k, v) in parse_kv(s)? {
            match k.as_str() {
                "s" | "f" => init.s = v,
                "e" => init.e = v,
                "i" => init.i = v,
                "r" => init.r = v,
                "d" => init.d = v,
                "c" => init.c = v,
                _ => return Err(Error::InvalidInput(format!("unknown initial value {k}"))),
            }
        }
    }
    params.validate(true)?;
    let grid = match &a.eval_grid {
        Some(g) => parse_grid(g)?,
        None => parse_grid(&format!("0:{}:1", sc.t_end))?,
    };
    let sol = solve_linear_seir(&params, &init)?;
    let mut cols = vec!["t", "F", "E", "I", "R", "D", "C"];
    if a.compare {
        cols.extend(["rk4_E", "rk4_I"]);
    }
    let ev = &sol.eigen;
    let mut table = Table::new(cols)
        .with_meta("lambda_plus_re", ev.lambda_plus.re)
        .with_meta("lambda_plus_im", ev.lambda_plus.im)
        .with_meta("lambda_minus_re", ev.lambda_minus.re)
        .with_meta("lambda_minus_im", ev.lambda_minus.im)
        .with_meta("c1", sol.c1)
        .with_meta("d1", sol.d1);
    let rk4 = if a.compare {
        let sim = Simulation::new(
            ModelKind::SeirLinear,
            params,
            crate::model::ControlSchedule::constant(params.beta0),
        );
        let t_end = grid.last().copied().unwrap_or(0.0);
        Some(sim.run(&init, t_end, 1e-3)?)
    } else {
        None
    };
    let mut max_rel = 0.0f64;
    for &t in &grid {
        let s = sol.state_at(t);
        let mut row = vec![t, s.s, s.e, s.i, s.r, s.d, s.c];
        if let Some(ts) = &rk4 {
            let n = ts.at(t).ok_or_else(|| Error::InvalidInput(format!("t = {t} outside the RK4 run")))?;
            for (num, ana) in [(n.e, s.e), (n.i, s.i)] {
                max_rel = max_rel.max((num - ana).abs() / ana.abs().max(1e-300));
            }
            row.extend([n.e, n.i]);
        }
        table.push(row.into_iter().map(Cell::Num).collect());
    }
    if a.compare {
        table = table.with_meta("max_rel_error_vs_rk4", max_rel);
    }
    emit(&table, &a.output, || {
        plot_columns(&table, "linearized SEIR (closed form)", "t", &["E", "I", "R", "D"])
    })
}

fn spatial(a: SpatialArgs) -> Result<()> {
    let mut sc = load_spatial(&a.preset, &a.scenario)?;
    if let Some(t) = a.t_end {
        sc.t_end = t;
    }
    if let Some(dt) = a.dt {
        sc.dt = dt;
    }
    if a.snapshot_every.is_some() {
        sc.snapshot_every = a.snapshot_every;
    }
    let grid = sc.grid()?;
    let series = sc.run()?;
    let mut table = Table::new(["t", "S", "I", "R", "D", "C", "mean_phi_S", "mean_phi_I"])
        .with_meta("preset", a.preset.clone().unwrap_or_default())
        .with_meta("n", grid.n as i64)
        .with_meta("length", sc.length)
        .with_meta("dt", sc.dt)
        .with_meta("max_imag_residue", series.max_imag_residue);
    if let Ok([red, blue]) = stability::steady_states(&sc.params) {
        table = table
            .with_meta("red_phi_S", red.phi_s)
            .with_meta("blue_phi_S", blue.phi_s)
            .with_meta("blue_phi_I", blue.phi_i);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for f in &series.snapshots {
        let tot = integrate_totals(f, &grid);
        table.push(
            [f.t, tot.s, tot.i, tot.r, tot.d, tot.c, mean(&f.phi_s), mean(&f.phi_i)]
                .map(Cell::Num)
                .to_vec(),
        );
    }
    if let Some(path) = &a.fields {
        let mut ft = Table::new(["t", "x", "phi_S", "phi_I", "phi_R", "phi_D", "phi_C"]);
        for f in &series.snapshots {
            for j in 0..grid.n {
                ft.push(
                    [f.t, grid.x[j], f.phi_s[j], f.phi_i[j], f.phi_r[j], f.phi_d[j], f.phi_c[j]]
                        .map(Cell::Num)
                        .to_vec(),
                );
            }
        }
        data::write_outputs(&ft, Format::from_path(path), path)?;
    }
    if let Some(path) = &a.heatmap {
        let mut cols = vec!["t".to_string()];
        cols.extend(grid.x.iter().map(|x| data::fmt_f64(*x)));
        let mut ht = Table::new(cols).with_meta("field", "phi_I");
        for f in &series.snapshots {
            let mut row = vec![Cell::Num(f.t)];
            row.extend(f.phi_i.iter().map(|v| Cell::Num(*v)));
            ht.push(row);
        }
        data::write_outputs(&ht, Format::from_path(path), path)?;
    }
    emit(&table, &a.output, || {
        plot_columns(&table, "integrated densities", "t", &["S", "I", "R", "D"])
    })
}

/// `λ = 1`, `μ = 1.1`, `ν = f = 1`, `DS = 10`, `DI = 1`: red state on its Turing line.
fn fig10b_params() -> SpatialParams {
    SpatialParams {
        lambda: 1.0,
        mu: 1.1,
        nu: 1.0,
        f_source: 1.0,
        g: 0.0,
        d_s: 10.0,
        d_i: 1.0,
    }
}

fn stability_cmd(a: StabilityArgs) -> Result<()> {
    let mut p = fig10b_params();
    if let Some(s) = &a.params {
        for (k, v) in parse_kv(s)? {
            match k.as_str() {
                "lambda" => p.lambda = v,
                "mu" => p.mu = v,
                "nu" => p.nu = v,
                "f" | "f_source" => p.f_source = v,
                "g" => p.g = v,
                "d_s" => p.d_s = v,
                "d_i" => p.d_i = v,
                _ => return Err(Error::InvalidInput(format!("unknown parameter {k}"))),
            }
        }
    }
    p.validate()?;
    if a.turing_sweep {
        if !(p.d_s > 0.0) {
            return Err(Error::InvalidInput("the sweep needs d_s > 0".into()));
        }
        let ratio = p.d_i / p.d_s;
        let mu_max = a.mu_max.unwrap_or(2.0 * p.lambda);
        let mut table = Table::new(["curve", "mu", "nu"])
            .with_meta("lambda", p.lambda)
            .with_meta("ratio_DI_DS", ratio);
        for pt in stability::turing_sweep(p.lambda, ratio, mu_max, a.sweep_steps) {
            let name = match pt.curve {
                Branch::Red => "red",
                Branch::Blue => "blue",
            };
            table.push(vec![Cell::from(name), Cell::Num(pt.mu), Cell::Num(pt.nu)]);
        }
        return emit(&table, &a.output, || {
            let nu = table.column("nu").unwrap_or_default();
            let curve: Vec<&Cell> = table.rows.iter().map(|r| &r[0]).collect();
            let pick = |want: &str| {
                nu.iter()
                    .zip(&curve)
                    .map(|(v, c)| if matches!(c, Cell::Text(s) if s == want) { *v } else { f64::NAN })
                    .collect::<Vec<_>>()
            };
            LinePlot::new("Turing curves", "mu", table.column("mu").unwrap_or_default())
                .add("red", pick("red"))
                .add("blue", pick("blue"))
        });
    }
    let branch: Branch = a.branch.parse()?;
    let st = stability::steady_state(&p, branch)?;
    let hopf = stability::hopf_check(&p, &st);
    let mut table = Table::new(["k", "B_k", "C_k", "re_omega_plus", "im_omega_plus", "re_omega_minus", "im_omega_minus"])
        .with_meta("branch", a.branch.as_str())
        .with_meta("phi_S", st.phi_s)
        .with_meta("phi_I", st.phi_i)
        .with_meta("feasible", if st.feasible { "true" } else { "false" })
        .with_meta("B0", hopf.b0)
        .with_meta("C0", hopf.c0)
        .with_meta("oscillatory", if hopf.oscillatory { "true" } else { "false" });
    match stability::turing_analysis(&p, &st) {
        Ok(tr) => {
            table = table
                .with_meta("turing_line_residual", tr.line_residual)
                .with_meta("turing_on_line", if tr.on_line { "true" } else { "false" })
                .with_meta("k_c", tr.k_c)
                .with_meta("vertex_k2", tr.vertex_k2)
                .with_meta("min_C_k", tr.min_c_k);
        }
        Err(e) => table = table.with_meta("turing", e.to_string()),
    }
    for d in stability::dispersion_scan(&p, &st, a.k_max, a.k_steps) {
        table.push(
            [d.k, d.b_k, d.c_k, d.omega_plus.re, d.omega_plus.im, d.omega_minus.re, d.omega_minus.im]
                .map(Cell::Num)
                .to_vec(),
        );
    }
    emit(&table, &a.output, || {
        plot_columns(&table, "dispersion relation", "k", &["im_omega_plus", "im_omega_minus", "C_k"])
    })
}

fn gillespie(a: GillespieArgs) -> Result<()> {
    let mut sc = match (&a.preset, &a.scenario) {
        (_, Some(path)) => GillespieScenario::from_json(&read_text(path)?).map_err(|e| schema_hint(e, "gillespie"))?,
        (Some(name), None) => {
            scenario::gillespie_preset(name).ok_or_else(|| Error::InvalidInput(format!("unknown preset {name}")))?
        }
        (None, None) => return Err(Error::InvalidInput("give --preset or --scenario".into())),
    };
    if let Some(t) = a.t_end {
        sc.t_end = t;
    }
    sc.validate()?;
    let system = stochastic::build_sir_reactions(&sc.params, sc.cells, sc.cell_volume)?;
    let init = sc.initial_state();
    if a.events {
        let run = stochastic::gillespie_run(&system, init, sc.t_end, a.seed)?;
        let term = match run.termination {
            stochastic::Termination::Horizon => "horizon",
            stochastic::Termination::Extinction => "extinction",
        };
        let mut table = Table::new(["t", "reaction_label", "cell", "S_total", "I_total", "R_total", "D_total"])
            .with_meta("seed", a.seed as i64)
            .with_meta("termination", term);
        let tot = run.initial;
        table.push(vec![
            Cell::Num(tot.t),
            Cell::from("initial"),
            Cell::Int(-1),
            Cell::Int(tot.s as i64),
            Cell::Int(tot.i as i64),
            Cell::Int(tot.r as i64),
            Cell::Int(tot.d as i64),
        ]);
        for ev in &run.events {
            let tot = ev.totals;
            table.push(vec![
                Cell::Num(ev.t),
                Cell::from(ev.label.as_str()),
                Cell::Int(ev.cell as i64),
                Cell::Int(tot.s as i64),
                Cell::Int(tot.i as i64),
                Cell::Int(tot.r as i64),
                Cell::Int(tot.d as i64),
            ]);
        }
        return emit(&table, &a.output, || {
            plot_columns(&table, "Gillespie replicate", "t", &["S_total", "I_total", "R_total", "D_total"])
        });
    }
    if a.runs < 2 {
        return Err(Error::InvalidInput("ensemble moments need --runs >= 2 (use --events for one run)".into()));
    }
    let times = sc.sample_times();
    let runs = stochastic::run_ensemble(&system, &init, &times, a.runs, a.seed)?;
    let stats = stochastic::ensemble_stats(&runs)?;
    let mut table = Table::new([
        "t", "mean_S", "se_S", "mean_I", "se_I", "mean_R", "se_R", "mean_D", "se_D", "mean_C", "se_C",
    ])
    .with_meta("runs", a.runs as i64)
    .with_meta("seed", a.seed as i64)
    .with_meta("cells", sc.cells as i64);
    for (k, t) in stats.t.iter().enumerate() {
        let mut row = vec![Cell::Num(*t)];
        for q in 0..5 {
            row.push(Cell::Num(stats.mean[k][q]));
            row.push(Cell::Num(stats.std_error[k][q]));
        }
        table.push(row);
    }
    emit(&table, &a.output, || {
        plot_columns(&table, "Gillespie ensemble mean", "t", &["mean_S", "mean_I", "mean_R", "mean_D"])
    })
}

fn langevin(a: LangevinArgs) -> Result<()> {
    let mut sc = load_spatial(&a.preset, &a.scenario)?;
    if let Some(t) = a.t_end {
        sc.t_end = t;
    }
    if let Some(dt) = a.dt {
        sc.dt = dt;
    }
    let c = a.scale;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidInput(format!("--scale must be > 0, got {c}")));
    }
    sc.params.lambda /= c;
    sc.params.f_source *= c;
    let grid = sc.grid()?;
    let init = sc.initial_fields(&grid);
    let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
    let fields = LangevinFields::from_real(&scaled(&init.phi_s), &scaled(&init.phi_i));
    let mode = match a.noise {
        NoiseArg::Complex => NoiseMode::Complex,
        NoiseArg::Real => NoiseMode::Real,
        NoiseArg::Off => NoiseMode::Off,
    };
    let every = ((a.sample_every / sc.dt).round() as usize).max(1);
    let run = stochastic::langevin_run(&fields, &sc.params, &grid, sc.t_end, sc.dt, mode, a.seed, every)?;
    let mut table = Table::new(["t", "S", "I"])
        .with_meta("noise", format!("{:?}", a.noise).to_lowercase())
        .with_meta("seed", a.seed as i64)
        .with_meta("dt", sc.dt)
        .with_meta("scale", c);
    for tot in &run.totals {
        table.push([tot.t, tot.s / c, tot.i / c].map(Cell::Num).to_vec());
    }
    emit(&table, &a.output, || plot_columns(&table, "Langevin totals (real part)", "t", &["S", "I"]))
}

#[derive(Serialize)]
struct FitReport {
    model: String,
    fit_space: &'static str,
    param_names: Vec<&'static str>,
    p0: Vec<f64>,
    p: Vec<f64>,
    loss: f64,
    iters: usize,
    converged: bool,
    /// Max deviation of the analytic gradient from central differences at `p0`,
    /// relative to the largest component.
    grad_check: f64,
    points: usize,
}

fn central_difference<O: Objective + ?Sized>(obj: &O, p: &[f64]) -> Result<Vec<f64>> {
    (0..p.len())
        .map(|k| {
            let h = 1e-6 * p[k].abs().max(1e-3);
            let mut up = p.to_vec();
            let mut dn = p.to_vec();
            up[k] += h;
            dn[k] -= h;
            Ok((obj.value(&up)? - obj.value(&dn)?) / (2.0 * h))
        })
        .collect()
}

fn grad_check<O: Objective + ?Sized>(obj: &O, p: &[f64]) -> Result<f64> {
    let (_, g) = obj.value_and_gradient(p)?;
    let fd = central_difference(obj, p)?;
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    Ok(g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale)
}

fn fit(a: FitArgs) -> Result<()> {
    let series = data::read_case_csv(&data::resolve_data_path(&a.data))?;
    for w in &series.warnings {
        eprintln!("warning: {w}");
    }
    let times = series.day_offsets();
    let cases: Vec<f64> = series.cases.iter().map(|c| *c as f64).collect();
    let i0 = a.i0.unwrap_or_else(|| cases.first().copied().unwrap_or(1.0).max(1.0));
    let log_space = a.fit_space == FitSpace::Log;
    let (model, observed, data): (Box<dyn FitModel>, Vec<usize>, Vec<Vec<f64>>) = match a.model.as_str() {
        // Cumulative cases observe N - S.
        "sir" => (
            Box::new(SirFit { n: a.n, i0 }),
            vec![1],
            cases.iter().map(|c| vec![a.n - c]).collect(),
        ),
        _ => (Box::new(SeirFit { n: a.n, i0 }), vec![3], cases.iter().map(|c| vec![*c]).collect()),
    };
    if a.p0.len() != model.n_params() {
        return Err(Error::InvalidInput(format!(
            "--p0 needs {} values ({})",
            model.n_params(),
            model.param_names().join(",")
        )));
    }
    let names = model.param_names();
    let problem = FitProblem::new(model, times.clone(), data, observed.clone(), log_space)?;
    let check = grad_check(&problem, &a.p0)?;
    let opts = GdOptions {
        max_iters: a.max_iters,
        ..GdOptions::default()
    };
    let res = fit_gradient_descent(&problem, &a.p0, &opts)?;
    let report = FitReport {
        model: a.model.clone(),
        fit_space: if log_space { "log" } else { "linear" },
        param_names: names,
        p0: a.p0.clone(),
        p: res.p.clone(),
        loss: res.loss,
        iters: res.iterations,
        converged: res.converged,
        grad_check: check,
        points: times.len(),
    };
    write_json(&report, a.out.as_deref())?;
    if let Some(path) = &a.plot {
        let fitted = FitProblem::synthesize(problem.model.as_ref(), &res.p, &times, &observed, problem.dt)?;
        let model_cases: Vec<f64> = fitted
            .iter()
            .map(|row| if a.model == "sir" { a.n - row[0] } else { row[0] })
            .collect();
        let plot = LinePlot::new(format!("{} fit", a.model), "day", times)
            .add("cases", cases)
            .add("model", model_cases);
        fs::write(path, plot.to_svg())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveReport {
    ansatz: String,
    column: String,
    fit_space: &'static str,
    a: f64,
    t0: f64,
    gamma: f64,
    asymptote: f64,
    loss: f64,
    iters: usize,
    converged: bool,
    points: usize,
    first_date: String,
}

fn fit_curve(a: FitCurveArgs) -> Result<()> {
    let series = data::read_case_csv(&data::resolve_data_path(&a.data))?;
    for w in &series.warnings {
        eprintln!("warning: {w}");
    }
    let counts = if a.column == "deaths" { &series.deaths } else { &series.cases };
    let offsets = series.day_offsets();
    // Leading zeros carry no information on a log scale.
    let (times, values): (Vec<f64>, Vec<f64>) = offsets
        .iter()
        .zip(counts)
        .filter(|(_, c)| **c > 0)
        .map(|(t, c)| (*t, *c as f64))
        .unzip();
    let log_space = a.fit_space == FitSpace::Log;
    let opts = GdOptions {
        max_iters: a.max_iters,
        ..GdOptions::default()
    };
    let fit = fit_fermi_dirac(&times, &values, log_space, &opts)?;
    let report = CurveReport {
        ansatz: a.ansatz.clone(),
        column: a.column.clone(),
        fit_space: if log_space { "log" } else { "linear" },
        a: fit.params.a,
        t0: fit.params.t0,
        gamma: fit.params.gamma_fd,
        asymptote: fit.params.asymptote(),
        loss: fit.result.loss,
        iters: fit.result.iterations,
        converged: fit.result.converged,
        points: times.len(),
        first_date: series.dates.first().map(|d| d.to_string()).unwrap_or_default(),
    };
    write_json(&report, a.out.as_deref())?;
    if let Some(path) = &a.plot {
        let model: Vec<f64> = times.iter().map(|t| fermi_dirac_eval(&fit.params, *t)).collect();
        let mut plot = LinePlot::new("Fermi-Dirac fit", "day", times)
            .add(a.column.as_str(), values)
            .add("fit", model);
        plot.log_y = log_space;
        fs::write(path, plot.to_svg())?;
    }
    Ok(())
}

fn read_series(path: &Path) -> Result<data::CaseSeries> {
    let series = data::read_case_csv(&data::resolve_data_path(path))?;
    for w in &series.warnings {
        eprintln!("warning: {w}");
    }
    Ok(series)
}

fn data_ingest(a: DataArgs) -> Result<()> {
    let s = read_series(&a.file)?;
    let mut table = Table::new(["date", "cases", "deaths"]).with_meta("warnings", s.warnings.len() as i64);
    for k in 0..s.len() {
        table.push(vec![
            Cell::from(s.dates[k].to_string()),
            Cell::Int(s.cases[k] as i64),
            Cell::Int(s.deaths[k] as i64),
        ]);
    }
    emit(&table, &a.output, || {
        plot_columns(&table, "cumulative counts", "day", &["cases", "deaths"])
            .with_index_x(s.len())
    })
}

fn data_diff(a: DataArgs) -> Result<()> {
    let s = read_series(&a.file)?;
    let cases = data::daily_new(&s.cases)?;
    let deaths = data::daily_new(&s.deaths)?;
    let mut table = Table::new(["date", "new_cases", "new_deaths", "negative"]);
    for k in 0..cases.values.len() {
        let neg = cases.negative_at.contains(&k) || deaths.negative_at.contains(&k);
        table.push(vec![
            Cell::from(s.dates[k + 1].to_string()),
            Cell::Int(cases.values[k]),
            Cell::Int(deaths.values[k]),
            Cell::Int(neg as i64),
        ]);
    }
    let n = table.rows.len();
    emit(&table, &a.output, || {
        plot_columns(&table, "daily new counts", "day", &["new_cases", "new_deaths"]).with_index_x(n)
    })
}

fn data_ma(a: MaArgs) -> Result<()> {
    let s = read_series(&a.file)?;
    let (dates, cases, deaths): (Vec<_>, Vec<f64>, Vec<f64>) = match a.of {
        MaOf::Cumulative => (
            s.dates.clone(),
            s.cases.iter().map(|v| *v as f64).collect(),
            s.deaths.iter().map(|v| *v as f64).collect(),
        ),
        MaOf::Daily => (
            s.dates[1.min(s.len())..].to_vec(),
            data::daily_new(&s.cases)?.values.iter().map(|v| *v as f64).collect(),
            data::daily_new(&s.deaths)?.values.iter().map(|v| *v as f64).collect(),
        ),
    };
    let cases = data::moving_average(&cases, a.window)?;
    let deaths = data::moving_average(&deaths, a.window)?;
    let mut table = Table::new(["date", "cases_ma", "deaths_ma"]).with_meta("window", a.window as i64);
    for k in 0..dates.len() {
        table.push(vec![Cell::from(dates[k].to_string()), Cell::Num(cases[k]), Cell::Num(deaths[k])]);
    }
    let n = table.rows.len();
    emit(&table, &a.output, || {
        plot_columns(&table, "moving average", "day", &["cases_ma", "deaths_ma"]).with_index_x(n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_keeps_endpoints() {
        assert_eq!(thin(11, 0.5, 1.0).unwrap(), vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(thin(10, 0.5, 1.0).unwrap(), vec![0, 2, 4, 6, 8, 9]);
        assert_eq!(thin(3, 0.5, 0.0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:2:0.5").unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(parse_grid("0:2").is_err());
        assert!(parse_grid("2:0:1").is_err());
    }

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("mu=1.1, nu=1").unwrap();
        assert_eq!(kv, vec![("mu".to_string(), 1.1), ("nu".to_string(), 1.0)]);
        assert!(parse_kv("mu").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_command(["epikit", "simulate", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_command(["epikit", "nope"]), EXIT_USAGE);
        assert_eq!(run_command(["epikit", "simulate", "--preset", "fig99"]), EXIT_USAGE);
    }
}
