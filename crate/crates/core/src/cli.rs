//! The `trapcool` command-line front end.
//!
//! Every flag has a config-file equivalent (`--config PATH`, TOML
//! `key = value` lines, keys spelled with underscores or dashes). Flags win
//! over file values.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::phase::{ControlBounds, ControlKind, PhaseState};
use crate::schrodinger::{
    eigenstate, fidelity, propagate_observed, scaling_solution, SpatialGrid, WaveState,
};
use crate::synthesis::{
    max_turns, synthesize, time_n_turns, time_zero_turns, Schedule, SynthesisSolution,
};
use crate::verify::{check_schedule, check_solution, Thresholds, VerificationReport};

/// Version of every JSON document written by the CLI.
pub const SCHEMA: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const VERIFICATION: i32 = 2;
    pub const IO: i32 = 3;
}

pub const DEFAULT_U1: f64 = 1.0;
pub const DEFAULT_U2: f64 = 8.0;
pub const DEFAULT_GAMMA_MIN: f64 = 1.01;
pub const DEFAULT_GAMMA_MAX: f64 = 10.0;
pub const DEFAULT_GAMMA_STEP: f64 = 0.01;
pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_GRID_POINTS: usize = 4096;
pub const DEFAULT_SNAPSHOT_COUNT: usize = 11;

/// Turn counts tabulated by `sweep` even where they cannot be optimal.
pub const SWEEP_MIN_TURNS: usize = 3;

const MAX_SWEEP_POINTS: usize = 1_000_000;
const FIDELITY_TARGET: f64 = 0.999;
const FIDELITY_ANSATZ: f64 = 1.0 - 1e-4;
const NORM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Validation(_) => exit::VALIDATION,
            Self::Verification(_) => exit::VERIFICATION,
            Self::Io(_) => exit::IO,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BoundaryLeak { .. } => Self::Verification(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "trapcool",
    version,
    about = "Minimum-time frictionless expansion of a harmonic trap"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal schedule for a single γ (JSON by default).
    #[command(allow_negative_numbers = true)]
    Synth(CommonArgs),
    /// Candidate times over a γ range, with the crossovers of the optimal turn count.
    #[command(allow_negative_numbers = true)]
    Sweep(SweepArgs),
    /// Switching points of the optimal trajectories over a γ range.
    #[command(allow_negative_numbers = true)]
    Curves(CommonArgs),
    /// RK4 re-integration and structural checks of a schedule.
    #[command(allow_negative_numbers = true)]
    Verify(VerifyArgs),
    /// Split-operator propagation of an oscillator eigenstate through the optimal schedule.
    #[command(allow_negative_numbers = true)]
    Wavefn(WavefnArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Expulsive bound, u ≥ −u1 [default: 1]
    #[arg(long)]
    pub u1: Option<f64>,
    /// Confining bound, u ≤ u2 [default: 8]
    #[arg(long)]
    pub u2: Option<f64>,
    /// Expansion factor γ = (ω₀/ω_T)^{1/2} > 1
    #[arg(long)]
    pub gamma: Option<f64>,
    /// [default: 1.01]
    #[arg(long)]
    pub gamma_min: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    pub gamma_max: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    pub gamma_step: Option<f64>,
    /// Integration step in rescaled time [default: 1e-4]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Power of two [default: 4096]
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Full width of the spatial grid [default: 16γ]
    #[arg(long)]
    pub grid_span: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file of key = value defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write the crossovers as CSV to this file
    #[arg(long)]
    pub crossovers: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Schedule interchange file to verify instead of synthesizing one
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WavefnArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Oscillator level of the initial state [default: 0]
    #[arg(long)]
    pub level: Option<usize>,
    /// Write |ψ|² snapshots as CSV to this file
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Number of evenly spaced snapshots, including t = 0 and t = T [default: 11]
    #[arg(long)]
    pub snapshot_count: Option<usize>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(alias = "gamma-min")]
    pub gamma_min: Option<f64>,
    #[serde(alias = "gamma-max")]
    pub gamma_max: Option<f64>,
    #[serde(alias = "gamma-step")]
    pub gamma_step: Option<f64>,
    pub dt: Option<f64>,
    #[serde(alias = "grid-points")]
    pub grid_points: Option<usize>,
    #[serde(alias = "grid-span")]
    pub grid_span: Option<f64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub crossovers: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub level: Option<usize>,
    pub snapshots: Option<PathBuf>,
    #[serde(alias = "snapshot-count")]
    pub snapshot_count: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
            .map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Flags merged over the config file; accessors validate on use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub u1: f64,
    pub u2: f64,
    pub gamma: Option<f64>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
    pub dt: f64,
    pub grid_points: usize,
    pub grid_span: Option<f64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs, file: &FileConfig) -> Self {
        Self {
            u1: args.u1.or(file.u1).unwrap_or(DEFAULT_U1),
            u2: args.u2.or(file.u2).unwrap_or(DEFAULT_U2),
            gamma: args.gamma.or(file.gamma),
            gamma_min: args
                .gamma_min
                .or(file.gamma_min)
                .unwrap_or(DEFAULT_GAMMA_MIN),
            gamma_max: args
                .gamma_max
                .or(file.gamma_max)
                .unwrap_or(DEFAULT_GAMMA_MAX),
            gamma_step: args
                .gamma_step
                .or(file.gamma_step)
                .unwrap_or(DEFAULT_GAMMA_STEP),
            dt: args.dt.or(file.dt).unwrap_or(DEFAULT_DT),
            grid_points: args
                .grid_points
                .or(file.grid_points)
                .unwrap_or(DEFAULT_GRID_POINTS),
            grid_span: args.grid_span.or(file.grid_span),
            format: args.format.or(file.format),
            out: args.out.clone().or_else(|| file.out.clone()),
        }
    }

    pub fn bounds(&self) -> CliResult<ControlBounds> {
        Ok(ControlBounds::new(self.u1, self.u2)?)
    }

    pub fn gamma(&self) -> CliResult<f64> {
        let g = self
            .gamma
            .ok_or_else(|| CliError::Validation("--gamma is required".into()))?;
        check_gamma(g)?;
        Ok(g)
    }

    /// `γ_min, γ_min + step, …` up to `γ_max`.
    pub fn gammas(&self) -> CliResult<Vec<f64>> {
        let (lo, hi, step) = (self.gamma_min, self.gamma_max, self.gamma_step);
        check_gamma(lo)?;
        if !(hi.is_finite() && hi >= lo) {
            return Err(CliError::Validation(format!(
                "gamma_max {hi} must be >= gamma_min {lo}"
            )));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(CliError::Validation(format!(
                "gamma_step must be positive, got {step}"
            )));
        }
        let count = ((hi - lo) / step + 1e-9).floor() + 1.0;
        if count > MAX_SWEEP_POINTS as f64 {
            return Err(CliError::Validation(format!(
                "{count} sweep points exceed {MAX_SWEEP_POINTS}"
            )));
        }
        Ok((0..count as usize)
            .map(|k| (lo + k as f64 * step).min(hi))
            .collect())
    }

    pub fn dt(&self) -> CliResult<f64> {
        if self.dt.is_finite() && self.dt > 0.0 {
            Ok(self.dt)
        } else {
            Err(CliError::Validation(format!(
                "dt must be positive, got {}",
                self.dt
            )))
        }
    }

    pub fn grid(&self, gamma: f64) -> CliResult<SpatialGrid> {
        Ok(SpatialGrid::new(
            self.grid_points,
            self.grid_span.unwrap_or(16.0 * gamma),
        )?)
    }
}

fn check_gamma(g: f64) -> CliResult<()> {
    if g.is_finite() && g > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(g).into())
    }
}

/// Fixed 17-significant-digit CSV float.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn to_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}"))),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::VALIDATION
            } else {
                exit::OK
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    let common = match command {
        Command::Synth(c) | Command::Curves(c) => c,
        Command::Sweep(a) => &a.common,
        Command::Verify(a) => &a.common,
        Command::Wavefn(a) => &a.common,
    };
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(common, &file);
    match command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Sweep(a) => cmd_sweep(&cfg, a.crossovers.clone().or(file.crossovers)),
        Command::Curves(_) => cmd_curves(&cfg),
        Command::Verify(a) => cmd_verify(&cfg, a.schedule.clone().or(file.schedule)),
        Command::Wavefn(a) => cmd_wavefn(
            &cfg,
            a.level.or(file.level).unwrap_or(0),
            a.snapshots.clone().or(file.snapshots),
            a.snapshot_count
                .or(file.snapshot_count)
                .unwrap_or(DEFAULT_SNAPSHOT_COUNT),
        ),
    }
}

// ---------------------------------------------------------------- synth

/// `{kind, u, duration}` entry of the schedule interchange file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub kind: ControlKind,
    pub u: f64,
    pub duration: f64,
}

/// Schedule interchange file. `synth` writes a superset of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub u1: f64,
    pub u2: f64,
    pub gamma: f64,
    pub segments: Vec<SegmentSpec>,
    pub boundary_u_initial: f64,
    pub boundary_u_final: f64,
}

impl ScheduleFile {
    pub fn from_schedule(bounds: &ControlBounds, gamma: f64, schedule: &Schedule) -> Self {
        Self {
            u1: bounds.u1(),
            u2: bounds.u2(),
            gamma,
            segments: schedule
                .segments
                .iter()
                .map(|s| SegmentSpec {
                    kind: s.control.kind,
                    u: s.control.value,
                    duration: s.duration,
                })
                .collect(),
            boundary_u_initial: schedule.boundary_u_initial,
            boundary_u_final: schedule.boundary_u_final,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad schedule file {}: {e}", path.display())))
    }

    /// Rebuilds the schedule, checking every `u` against the bounds.
    pub fn to_schedule(&self) -> CliResult<(ControlBounds, Schedule)> {
        let bounds = ControlBounds::new(self.u1, self.u2)?;
        check_gamma(self.gamma)?;
        for (j, seg) in self.segments.iter().enumerate() {
            let expected = bounds.control(seg.kind).value;
            if (seg.u - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(CliError::Validation(format!(
                    "segment {j}: u = {} does not match {} = {expected}",
                    seg.u, seg.kind
                )));
            }
        }
        let schedule = Schedule::from_arcs(
            &bounds,
            self.gamma,
            self.segments.iter().map(|s| (s.kind, s.duration)),
        )?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if !close(self.boundary_u_initial, schedule.boundary_u_initial)
            || !close(self.boundary_u_final, schedule.boundary_u_final)
        {
            return Err(CliError::Validation(format!(
                "boundary controls ({}, {}) must be (1, gamma^-4) = ({}, {})",
                self.boundary_u_initial,
                self.boundary_u_final,
                schedule.boundary_u_initial,
                schedule.boundary_u_final
            )));
        }
        Ok((bounds, schedule))
    }
}

pub fn synth_json(sol: &SynthesisSolution) -> Value {
    let file = ScheduleFile::from_schedule(&sol.bounds, sol.gamma, &sol.schedule);
    let segments: Vec<Value> = sol
        .schedule
        .segments
        .iter()
        .map(|s| {
            json!({
                "kind": s.control.kind,
                "u": s.control.value,
                "duration": s.duration,
                "start": s.start,
                "end": s.end,
            })
        })
        .collect();
    json!({
        "schema": SCHEMA,
        "u1": file.u1,
        "u2": file.u2,
        "gamma": file.gamma,
        "n_turns": sol.n_turns,
        "s": sol.s,
        "total_time": sol.total_time(),
        "time_breakdown": sol.time_breakdown,
        "switching_points": sol.switching_points,
        "segments": segments,
        "boundary_u_initial": file.boundary_u_initial,
        "boundary_u_final": file.boundary_u_final,
        "candidates": sol.candidates,
        "y_constants": sol.y_constants,
    })
}

fn synth_csv(sol: &SynthesisSolution) -> String {
    let mut out = String::from("j,kind,u,duration,t_start,x1_start,x2_start,x1_end,x2_end\n");
    let mut t = 0.0;
    for (j, s) in sol.schedule.segments.iter().enumerate() {
        out.push_str(&format!(
            "{j},{},{},{},{},{},{},{},{}\n",
            s.control.kind,
            fmt_float(s.control.value),
            fmt_float(s.duration),
            fmt_float(t),
            fmt_float(s.start.x1),
            fmt_float(s.start.x2),
            fmt_float(s.end.x1),
            fmt_float(s.end.x2)
        ));
        t += s.duration;
    }
    out
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let sol = synthesize(&cfg.bounds()?, cfg.gamma()?)?;
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&synth_json(&sol)),
        Format::Csv => synth_csv(&sol),
    };
    emit(cfg.out.as_deref(), &text)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    /// `T0, T1, …`; `None` where the spiral is infeasible.
    pub times: Vec<Option<f64>>,
    pub optimal_n: usize,
    pub optimal_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossover {
    pub gamma: f64,
    pub from_n: usize,
    pub to_n: usize,
    /// Common time at the crossover (the smaller of the two).
    pub time: f64,
    /// `|T_from − T_to|`, absent if one side is infeasible there.
    pub gap: Option<f64>,
}

/// `Tₙ(γ)`, with infeasible spirals at `+∞`.
pub fn candidate_time(bounds: &ControlBounds, gamma: f64, n: usize) -> crate::Result<f64> {
    if n == 0 {
        return Ok(time_zero_turns(bounds, gamma)?.total);
    }
    Ok(time_n_turns(bounds, gamma, n)?.map_or(f64::INFINITY, |t| t.total))
}

pub fn sweep_row(bounds: &ControlBounds, gamma: f64, n_max: usize) -> crate::Result<SweepRow> {
    let mut times = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let t = candidate_time(bounds, gamma, n)?;
        times.push(t.is_finite().then_some(t));
    }
    let (mut optimal_n, mut optimal_t) = (0, f64::INFINITY);
    for (n, t) in times.iter().enumerate() {
        if let Some(t) = *t {
            if t < optimal_t {
                (optimal_n, optimal_t) = (n, t);
            }
        }
    }
    Ok(SweepRow {
        gamma,
        times,
        optimal_n,
        optimal_t,
    })
}

/// Rows for every γ (computed in parallel, returned in γ order) and the
/// number of tabulated turn counts.
pub fn sweep(bounds: &ControlBounds, gammas: &[f64]) -> crate::Result<(Vec<SweepRow>, usize)> {
    let n_max = gammas
        .par_iter()
        .map(|&g| max_turns(bounds, g))
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))?
        .max(SWEEP_MIN_TURNS);
    let rows = gammas
        .par_iter()
        .map(|&g| sweep_row(bounds, g, n_max))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((rows, n_max))
}

/// Bisection on `T_from − T_to` over `[lo, hi]`, which must bracket the sign change.
pub fn refine_crossover(
    bounds: &ControlBounds,
    mut lo: f64,
    mut hi: f64,
    from_n: usize,
    to_n: usize,
) -> crate::Result<Crossover> {
    let diff = |g: f64| -> crate::Result<(f64, f64)> {
        Ok((
            candidate_time(bounds, g, from_n)?,
            candidate_time(bounds, g, to_n)?,
        ))
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (a, b) = diff(mid)?;
        if a <= b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let (a, b) = diff(gamma)?;
    let gap = (a.is_finite() && b.is_finite()).then(|| (a - b).abs());
    Ok(Crossover {
        gamma,
        from_n,
        to_n,
        time: a.min(b),
        gap,
    })
}

/// One refined crossover per change of `optimal_n` between adjacent rows.
pub fn crossovers(bounds: &ControlBounds, rows: &[SweepRow]) -> crate::Result<Vec<Crossover>> {
    rows.windows(2)
        .filter(|w| w[0].optimal_n != w[1].optimal_n)
        .map(|w| {
            refine_crossover(
                bounds,
                w[0].gamma,
                w[1].gamma,
                w[0].optimal_n,
                w[1].optimal_n,
            )
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], n_max: usize) -> String {
    let mut out = String::from("gamma");
    for n in 0..=n_max {
        out.push_str(&format!(",T{n}"));
    }
    out.push_str(",optimal_n,optimal_T\n");
    for r in rows {
        out.push_str(&fmt_float(r.gamma));
        for t in &r.times {
            out.push(',');
            out.push_str(&fmt_opt(*t));
        }
        out.push_str(&format!(",{},{}\n", r.optimal_n, fmt_float(r.optimal_t)));
    }
    out
}

pub fn crossovers_csv(cs: &[Crossover]) -> String {
    let mut out = String::from("gamma,from_n,to_n,time,gap\n");
    for c in cs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_float(c.gamma),
            c.from_n,
            c.to_n,
            fmt_float(c.time),
            fmt_opt(c.gap)
        ));
    }
    out
}

fn sweep_json(bounds: &ControlBounds, rows: &[SweepRow], n_max: usize, cs: &[Crossover]) -> Value {
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut m = serde_json::Map::new();
            m.insert("gamma".into(), json!(r.gamma));
            for (n, t) in r.times.iter().enumerate() {
                m.insert(format!("T{n}"), json!(t));
            }
            m.insert("optimal_n".into(), json!(r.optimal_n));
            m.insert("optimal_T".into(), json!(r.optimal_t));
            Value::Object(m)
        })
        .collect();
    json!({
        "schema": SCHEMA,
        "u1": bounds.u1(),
        "u2": bounds.u2(),
        "n_max": n_max,
        "rows": rows,
        "crossovers": cs,
    })
}

fn cmd_sweep(cfg: &RunConfig, crossover_path: Option<PathBuf>) -> CliResult<()> {
    let bounds = cfg.bounds()?;
    let gammas = cfg.gammas()?;
    let (rows, n_max) = sweep(&bounds, &gammas)?;
    let cs = crossovers(&bounds, &rows)?;
    for c in &cs {
        eprintln!(
            "crossover: gamma = {} ({} -> {} turns, T = {})",
            fmt_float(c.gamma),
            c.from_n,
            c.to_n,
            fmt_float(c.time)
        );
    }
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => sweep_csv(&rows, n_max),
        Format::Json => to_json(&sweep_json(&bounds, &rows, n_max, &cs)),
    };
    emit(cfg.out.as_deref(), &text)?;
    if let Some(path) = crossover_path {
        emit(Some(&path), &crossovers_csv(&cs))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- curves

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub gamma: f64,
    pub n_turns: usize,
    pub j: usize,
    /// Kind of the segment ending at this switching point.
    pub kind: ControlKind,
    pub x1: f64,
    pub x2: f64,
}

pub fn curve_points(bounds: &ControlBounds, gammas: &[f64]) -> crate::Result<Vec<CurvePoint>> {
    let per_gamma = gammas
        .par_iter()
        .map(|&gamma| {
            let sol = synthesize(bounds, gamma)?;
            Ok(sol
                .schedule
                .switching_points()
                .iter()
                .zip(&sol.schedule.segments)
                .enumerate()
                .map(|(j, (p, seg)): (usize, (&PhaseState, _))| CurvePoint {
                    gamma,
                    n_turns: sol.n_turns,
                    j,
                    kind: seg.control.kind,
                    x1: p.x1,
                    x2: p.x2,
                })
                .collect::<Vec<_>>())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(per_gamma.into_iter().flatten().collect())
}

fn cmd_curves(cfg: &RunConfig) -> CliResult<()> {
    let bounds = cfg.bounds()?;
    let points = curve_points(&bounds, &cfg.gammas()?)?;
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut out = String::from("gamma,n_turns,j,kind,x1,x2\n");
            for p in &points {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_float(p.gamma),
                    p.n_turns,
                    p.j,
                    p.kind,
                    fmt_float(p.x1),
                    fmt_float(p.x2)
                ));
            }
            out
        }
        Format::Json => to_json(&json!({
            "schema": SCHEMA,
            "u1": bounds.u1(),
            "u2": bounds.u2(),
            "points": points,
        })),
    };
    emit(cfg.out.as_deref(), &text)
}

// ---------------------------------------------------------------- verify

fn report_json(bounds: &ControlBounds, gamma: f64, dt: f64, report: &VerificationReport) -> Value {
    let mut v = json!({
        "schema": SCHEMA,
        "u1": bounds.u1(),
        "u2": bounds.u2(),
        "gamma": gamma,
        "dt": dt,
        "passed": report.passed(),
    });
    let extra = serde_json::to_value(report).expect("reports always serialize");
    if let (Value::Object(m), Value::Object(r)) = (&mut v, extra) {
        m.extend(r);
    }
    v
}

fn report_csv(report: &VerificationReport) -> String {
    format!(
        "passed,endpoint_error_x1,endpoint_error_x2,max_integral_drift,max_ermakov_residual,\
         max_ratio_deviation,ratio_check,structure_check,switchings,n_turns\n\
         {},{},{},{},{},{},{},{},{},{}\n",
        report.passed(),
        fmt_float(report.endpoint_error[0]),
        fmt_float(report.endpoint_error[1]),
        fmt_float(report.max_integral_drift),
        fmt_float(report.max_ermakov_residual),
        fmt_float(report.max_ratio_deviation),
        report.ratio_check,
        report.structure_check,
        report.switchings,
        report.n_turns.map(|n| n.to_string()).unwrap_or_default()
    )
}

fn cmd_verify(cfg: &RunConfig, schedule: Option<PathBuf>) -> CliResult<()> {
    let dt = cfg.dt()?;
    let (bounds, gamma, report) = match schedule {
        Some(path) => {
            let file = ScheduleFile::load(&path)?;
            let (bounds, schedule) = file.to_schedule()?;
            let report = check_schedule(&schedule, file.gamma, None, dt, Thresholds::default())?;
            (bounds, file.gamma, report)
        }
        None => {
            let sol = synthesize(&cfg.bounds()?, cfg.gamma()?)?;
            (sol.bounds, sol.gamma, check_solution(&sol, dt)?)
        }
    };
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&report_json(&bounds, gamma, dt, &report)),
        Format::Csv => report_csv(&report),
    };
    emit(cfg.out.as_deref(), &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Verification("verification failed".into()))
    }
}

// ---------------------------------------------------------------- wavefn

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WavefnReport {
    pub u1: f64,
    pub u2: f64,
    pub gamma: f64,
    pub level: usize,
    pub dt: f64,
    pub grid_points: usize,
    pub grid_span: f64,
    pub n_turns: usize,
    pub total_time: f64,
    /// `|⟨ψ(T)|n at 1/γ²⟩|²`.
    pub fidelity_target: f64,
    /// Against the scaling ansatz at `(b, ḃ) = (γ, 0)`; ground level only.
    pub fidelity_scaling: Option<f64>,
    pub max_norm_error: f64,
    pub passed: bool,
}

fn snapshot_rows(out: &mut String, psi: &WaveState) {
    let norm = psi.norm();
    for (x, a) in psi.grid.positions().zip(&psi.amplitudes) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(psi.t),
            fmt_float(x),
            fmt_float(a.norm_sqr()),
            fmt_float(norm)
        ));
    }
}

/// Propagates level `level` through the optimal schedule for `cfg`.
pub fn wavefn(
    cfg: &RunConfig,
    level: usize,
    snapshot_count: Option<usize>,
) -> CliResult<(WavefnReport, String)> {
    let bounds = cfg.bounds()?;
    let gamma = cfg.gamma()?;
    let dt = cfg.dt()?;
    let grid = cfg.grid(gamma)?;
    let sol = synthesize(&bounds, gamma)?;
    let psi0 = eigenstate(level, 1.0, &grid)?;
    let target = eigenstate(level, 1.0 / (gamma * gamma), &grid)?;

    let total_steps: usize = sol
        .schedule
        .segments
        .iter()
        .filter(|s| s.duration > 0.0)
        .map(|s| (s.duration / dt).ceil().max(1.0) as usize)
        .sum();
    let marks: Vec<usize> = match snapshot_count {
        Some(c) if c >= 2 => (1..c)
            .map(|j| (j * total_steps + (c - 1) / 2) / (c - 1))
            .collect(),
        _ => Vec::new(),
    };
    let mut snapshots = String::new();
    if snapshot_count.is_some() {
        snapshots.push_str("t,x,density,norm\n");
        snapshot_rows(&mut snapshots, &psi0);
    }
    let mut step = 0;
    let mut next = 0;
    let mut max_norm_error = (psi0.norm() - 1.0).abs();
    let out = propagate_observed(psi0, &sol.schedule, dt, |s| {
        step += 1;
        max_norm_error = max_norm_error.max((s.norm() - 1.0).abs());
        while next < marks.len() && marks[next] == step {
            snapshot_rows(&mut snapshots, s);
            next += 1;
        }
    })?;
    let fidelity_target = fidelity(&out, &target)?;
    let fidelity_scaling = if level == 0 {
        Some(fidelity(&out, &scaling_solution(gamma, 0.0, &grid)?)?)
    } else {
        None
    };
    let passed = fidelity_target >= FIDELITY_TARGET
        && fidelity_scaling.is_none_or(|f| f >= FIDELITY_ANSATZ)
        && max_norm_error < NORM_TOLERANCE;
    let report = WavefnReport {
        u1: bounds.u1(),
        u2: bounds.u2(),
        gamma,
        level,
        dt,
        grid_points: grid.n_points,
        grid_span: grid.span(),
        n_turns: sol.n_turns,
        total_time: sol.total_time(),
        fidelity_target,
        fidelity_scaling,
        max_norm_error,
        passed,
    };
    Ok((report, snapshots))
}

fn cmd_wavefn(
    cfg: &RunConfig,
    level: usize,
    snapshots: Option<PathBuf>,
    snapshot_count: usize,
) -> CliResult<()> {
    if snapshots.is_some() && snapshot_count < 2 {
        return Err(CliError::Validation(
            "snapshot_count must be at least 2".into(),
        ));
    }
    let (report, snap) = wavefn(cfg, level, snapshots.as_ref().map(|_| snapshot_count))?;
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut v = json!({ "schema": SCHEMA });
            if let (Value::Object(m), Value::Object(r)) =
                (&mut v, serde_json::to_value(&report).expect("reports always serialize"))
            {
                m.extend(r);
            }
            to_json(&v)
        }
        Format::Csv => format!(
            "gamma,level,n_turns,total_time,fidelity_target,fidelity_scaling,max_norm_error,passed\n\
             {},{},{},{},{},{},{},{}\n",
            fmt_float(report.gamma),
            report.level,
            report.n_turns,
            fmt_float(report.total_time),
            fmt_float(report.fidelity_target),
            fmt_opt(report.fidelity_scaling),
            fmt_float(report.max_norm_error),
            report.passed
        ),
    };
    emit(cfg.out.as_deref(), &text)?;
    if let Some(path) = snapshots {
        emit(Some(&path), &snap)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "fidelity {} below {FIDELITY_TARGET}",
            report.fidelity_target
        )))
    }
}
