//! Command-line front end.
//!
//! Exit codes: 0 success, 1 no certificate (infeasible SOS program, failed
//! bound or synthesis), 2 usage, input or I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bound::{bound, BoundCertificate, BoundError, BoundProgram, BoundSpec, Direction};
use crate::controller::Controller;
use crate::poly::{Polynomial, VarNames};
use crate::sdp::{export_sdpa, SolveOptions};
use crate::sim::{epsilon_sweep, SweepConfig, SweepResult, DEFAULT_DT};
use crate::sos::{compile, parse_program, GramCertificate, PolyExpr, SosError, SosProgram};
use crate::synthesis::{
    synthesize, Degrees, MultiplierShape, SynthesisError, SynthesisMethod, SynthesisOptions, SynthesisResult,
};
use crate::system::PolySystem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_CERTIFICATE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Environment variable overriding the solver gap tolerance.
pub const SOLVER_TOL_ENV: &str = "LTAC_SOLVER_TOL";

#[derive(Parser, Debug)]
#[command(name = "ltac", version, about = "Bounds on long-time averages and controller synthesis for polynomial ODEs")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check whether a polynomial is SOS, or solve an SOS program file.
    CheckSos(CheckSosArgs),
    /// Bound the long-time average of phi0 for the uncontrolled system.
    Bound(BoundArgs),
    /// Synthesize a first-order controller.
    Synthesize(SynthesizeArgs),
    /// Simulate a controller over a grid of eps values.
    Sweep(SweepArgs),
    /// Run bound, synthesize and sweep from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct CheckSosArgs {
    /// Polynomial in x1, x2, ... or a path to an SOS program file.
    #[arg(allow_hyphen_values = true)]
    pub input: String,
    /// Number of variables (default: highest index used).
    #[arg(long)]
    pub vars: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct BoundOpts {
    /// Degree of the tunable function V.
    #[arg(long, default_value_t = 4)]
    pub dv: u32,
    /// Degree of the ball multiplier.
    #[arg(long, default_value_t = 4)]
    pub ds: u32,
    /// Restrict to the ball xᵀx <= 2 beta; without a value, use the system's ball.
    #[arg(long, num_args = 0..=1, value_name = "BETA")]
    pub ball: Option<Option<f64>>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    pub system: PathBuf,
    #[command(flatten)]
    pub bound: BoundOpts,
    /// Lower bound instead of upper.
    #[arg(long)]
    pub lower: bool,
    /// Write the SDP in SDPA sparse format.
    #[arg(long, value_name = "FILE")]
    pub export_sdpa: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeArg {
    #[default]
    Isotropic,
    Full,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    #[default]
    Auto,
    SProcedure,
    DualSensitivity,
}

#[derive(Args, Debug, Clone)]
pub struct SynthOpts {
    #[arg(long, default_value_t = 1)]
    pub du1: u32,
    #[arg(long, default_value_t = 4)]
    pub dv1: u32,
    /// Degree of the ball multiplier.
    #[arg(long, default_value_t = 4)]
    pub ds0: u32,
    /// Degree of the multiplier on the zero-order residual.
    #[arg(long, default_value_t = 2)]
    pub ds1: u32,
    #[arg(long, value_enum, default_value_t = ShapeArg::Isotropic)]
    pub shape: ShapeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Allow a constant term in u1.
    #[arg(long)]
    pub u1_constant: bool,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    pub system: PathBuf,
    #[command(flatten)]
    pub bound: BoundOpts,
    #[command(flatten)]
    pub synth: SynthOpts,
    /// Controller file to write.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub system: PathBuf,
    pub controller: PathBuf,
    /// Comma-separated ascending eps values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps_grid: Vec<f64>,
    /// Integration time.
    #[arg(long = "T", default_value_t = 200.0)]
    pub t_end: f64,
    /// Comma-separated initial state (default: 1 in every coordinate).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Uncontrolled run before the sweep to settle onto the attractor.
    #[arg(long, value_name = "T")]
    pub pre_run: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub discard: f64,
    /// Worker threads for the sweep.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV output file.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// TOML config.
    pub config: PathBuf,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ERROR,
            message: message.into(),
        }
    }

    fn no_certificate(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NO_CERTIFICATE,
            message: message.into(),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::NoCertificate { .. } | BoundError::Unbounded { .. } | BoundError::NotBounded { .. } => {
                CliError::no_certificate(e.to_string())
            }
            BoundError::Sos(SosError::Infeasible { .. } | SosError::SolverFailed { .. }) => {
                CliError::no_certificate(e.to_string())
            }
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Bound(b) => b.into(),
            SynthesisError::Infeasible(_)
            | SynthesisError::Unbounded
            | SynthesisError::Solver(_)
            | SynthesisError::SingularClosedLoop => CliError::no_certificate(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn solver_options() -> CliResult<SolveOptions> {
    let mut opts = SolveOptions::default();
    if let Ok(v) = std::env::var(SOLVER_TOL_ENV) {
        opts.gap_tol = v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|t| *t > 0.0)
            .ok_or_else(|| CliError::usage(format!("{SOLVER_TOL_ENV} must be a positive number, got `{v}`")))?;
    }
    Ok(opts)
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_system(path: &Path) -> CliResult<PolySystem> {
    PolySystem::parse(&read(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn ball_beta(sys: &PolySystem, opts: &BoundOpts) -> CliResult<Option<f64>> {
    match opts.ball {
        None => Ok(None),
        Some(Some(b)) => Ok(Some(b)),
        Some(None) => sys
            .ball
            .map(Some)
            .ok_or_else(|| CliError::usage("--ball without a value needs a `ball:` line in the system file")),
    }
}

fn bound_spec(sys: &PolySystem, opts: &BoundOpts, lower: bool) -> CliResult<BoundSpec> {
    let mut spec = if lower {
        BoundSpec::lower(opts.dv)
    } else {
        BoundSpec::upper(opts.dv)
    };
    if let Some(beta) = ball_beta(sys, opts)? {
        spec = spec.in_ball(beta, opts.ds);
    }
    Ok(spec)
}

fn synthesis_options(o: &SynthOpts) -> SynthesisOptions {
    SynthesisOptions {
        degrees: Degrees {
            u1: o.du1,
            v1: o.dv1,
            s0: o.ds0,
            s1: o.ds1,
        },
        shape: match o.shape {
            ShapeArg::Isotropic => MultiplierShape::Isotropic,
            ShapeArg::Full => MultiplierShape::Full,
        },
        u1_constant: o.u1_constant,
        method: match o.method {
            MethodArg::Auto => SynthesisMethod::Auto,
            MethodArg::SProcedure => SynthesisMethod::SProcedure,
            MethodArg::DualSensitivity => SynthesisMethod::DualSensitivity,
        },
    }
}

#[derive(Serialize)]
struct GramReport {
    basis: Vec<String>,
    gram: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CheckSosReport {
    sos: bool,
    message: Option<String>,
    residual: Option<f64>,
    min_eig: Option<f64>,
    values: Vec<(String, f64)>,
    blocks: Vec<GramReport>,
}

fn gram_reports(g: &GramCertificate, names: &VarNames) -> Vec<GramReport> {
    g.blocks
        .iter()
        .map(|b| GramReport {
            basis: b
                .basis
                .iter()
                .map(|m| Polynomial::term(m.clone(), 1.0).display_with(names).to_string())
                .collect(),
            gram: (0..b.q.nrows()).map(|i| b.q.row(i).iter().copied().collect()).collect(),
        })
        .collect()
}

fn infer_nvars(text: &str) -> usize {
    let bytes = text.as_bytes();
    let mut n = 0;
    for i in 0..bytes.len() {
        let boundary = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        if bytes[i] == b'x' && boundary {
            let digits: String = text[i + 1..].chars().take_while(char::is_ascii_digit).collect();
            if let Ok(k) = digits.parse::<usize>() {
                n = n.max(k);
            }
        }
    }
    n.max(1)
}

fn check_sos(args: &CheckSosArgs, json: bool, out: &mut dyn Write) -> CliResult<i32> {
    let path = Path::new(&args.input);
    let prog = if path.is_file() {
        parse_program(&read(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
    } else {
        let n = args.vars.unwrap_or_else(|| infer_nvars(&args.input));
        let p = Polynomial::parse(&args.input, n).map_err(|e| CliError::usage(e.to_string()))?;
        let mut prog = SosProgram::new(n);
        prog.add_sos("p", PolyExpr::from_poly(&p))
            .map_err(|e| CliError::usage(e.to_string()))?;
        prog
    };
    let opts = solver_options()?;
    let (report, code) = match prog.solve(&opts) {
        Ok(cert) => {
            let names = prog.names();
            let report = CheckSosReport {
                sos: true,
                message: None,
                residual: Some(cert.max_residual()),
                min_eig: Some(cert.grams.iter().map(|g| g.min_eig).fold(f64::INFINITY, f64::min)),
                values: (0..cert.values.len())
                    .map(|k| (prog.unknown_name(k).to_string(), cert.values[k]))
                    .collect(),
                blocks: cert.grams.iter().flat_map(|g| gram_reports(g, names)).collect(),
            };
            (report, EXIT_OK)
        }
        Err(e @ (SosError::Infeasible { .. } | SosError::SolverFailed { .. } | SosError::Unbounded { .. })) => (
            CheckSosReport {
                sos: false,
                message: Some(e.to_string()),
                residual: None,
                min_eig: None,
                values: Vec::new(),
                blocks: Vec::new(),
            },
            EXIT_NO_CERTIFICATE,
        ),
        Err(e) => return Err(CliError::usage(e.to_string())),
    };
    if json {
        emit_json(out, &report)?;
    } else if report.sos {
        let mut s = String::from("SOS: yes\n");
        s += &format!("residual {:.3e}, min eigenvalue {:.3e}\n", report.residual.unwrap(), report.min_eig.unwrap());
        for (name, v) in &report.values {
            s += &format!("{name} = {v}\n");
        }
        for (i, b) in report.blocks.iter().enumerate() {
            s += &format!("block {} basis [{}]\n", i + 1, b.basis.join(", "));
            for row in &b.gram {
                let r: Vec<String> = row.iter().map(|v| format!("{v:12.6}")).collect();
                s += &format!("  {}\n", r.join(" "));
            }
        }
        emit(out, &s)?;
    } else {
        emit(out, &format!("SOS: no ({})\n", report.message.as_deref().unwrap_or("")))?;
    }
    Ok(code)
}

#[derive(Serialize)]
struct BoundReport {
    direction: Direction,
    c: f64,
    dv: u32,
    ball: Option<f64>,
    v: String,
    multipliers: Vec<(String, String)>,
    gram_residual: f64,
    min_eig: f64,
    sdp_residuals: crate::sdp::Residuals,
    iterations: usize,
    sdpa: Option<String>,
}

fn bound_report(cert: &BoundCertificate, sdpa: Option<String>) -> BoundReport {
    BoundReport {
        direction: cert.direction,
        c: cert.c,
        dv: cert.dv,
        ball: cert.ball.map(|b| b.beta),
        v: cert.v.to_string(),
        multipliers: cert.multipliers.iter().map(|(k, p)| (k.clone(), p.to_string())).collect(),
        gram_residual: cert.grams.iter().map(|g| g.residual).fold(0.0, f64::max),
        min_eig: cert.grams.iter().map(|g| g.min_eig).fold(f64::INFINITY, f64::min),
        sdp_residuals: cert.residuals,
        iterations: cert.iterations,
        sdpa,
    }
}

fn bound_text(r: &BoundReport) -> String {
    let mut s = format!("{} bound C = {:.6}\n", r.direction_word(), r.c);
    s += &format!("V (degree {}) = {}\n", r.dv, r.v);
    if let Some(b) = r.ball {
        s += &format!("ball: xᵀx <= {}\n", 2.0 * b);
    }
    for (k, p) in &r.multipliers {
        s += &format!("{k} = {p}\n");
    }
    s += &format!(
        "gram residual {:.3e}, min eigenvalue {:.3e}, sdp residuals p {:.1e} d {:.1e} gap {:.1e}, {} iterations\n",
        r.gram_residual, r.min_eig, r.sdp_residuals.primal, r.sdp_residuals.dual, r.sdp_residuals.gap, r.iterations
    );
    if let Some(p) = &r.sdpa {
        s += &format!("SDP written to {p}\n");
    }
    s
}

impl BoundReport {
    fn direction_word(&self) -> &'static str {
        match self.direction {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        }
    }
}

fn cmd_bound(args: &BoundArgs, json: bool, out: &mut dyn Write) -> CliResult<i32> {
    let sys = load_system(&args.system)?;
    let spec = bound_spec(&sys, &args.bound, args.lower)?;
    let opts = solver_options()?;
    let mut sdpa = None;
    if let Some(path) = &args.export_sdpa {
        if !sys.phi0.is_constant() {
            let prog = BoundProgram::new(&sys.f, &sys.phi0, spec)?;
            let compiled = compile(&prog.program).map_err(|e| CliError::usage(e.to_string()))?;
            write(path, &export_sdpa(&compiled.sdp))?;
            sdpa = Some(path.display().to_string());
        }
    }
    let cert = bound(&sys, spec, &opts)?;
    let report = bound_report(&cert, sdpa);
    if json {
        emit_json(out, &report)?;
    } else {
        emit(out, &bound_text(&report))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SynthesisReport {
    c0: f64,
    c1: f64,
    method: SynthesisMethod,
    degrees: Degrees,
    ball: Option<f64>,
    u1: Vec<String>,
    v1: String,
    fallback: bool,
    lifted_residual: Option<f64>,
    controller_file: Option<String>,
}

fn synthesis_report(res: &SynthesisResult, file: Option<String>) -> SynthesisReport {
    SynthesisReport {
        c0: res.c0,
        c1: res.c1,
        method: res.method,
        degrees: res.degrees,
        ball: res.ball,
        u1: res.u1.iter().map(|p| p.to_string()).collect(),
        v1: res.v1.to_string(),
        fallback: res.fallback,
        lifted_residual: res.grams.first().map(|g| g.residual),
        controller_file: file,
    }
}

fn synthesis_text(r: &SynthesisReport) -> String {
    let mut s = format!("C0 = {:.6}\nC1 = {:.6} ({})\n", r.c0, r.c1, r.method);
    for (j, u) in r.u1.iter().enumerate() {
        s += &format!("u1[{}] = {u}\n", j + 1);
    }
    if r.fallback {
        s += "solver optimum had C1 > 0; returning the zero controller\n";
    }
    if let Some(f) = &r.controller_file {
        s += &format!("controller written to {f}\n");
    }
    s
}

fn run_synthesis(sys: &PolySystem, bopts: &BoundOpts, sopts: &SynthOpts) -> CliResult<SynthesisResult> {
    let solver = solver_options()?;
    let spec = bound_spec(sys, bopts, false)?;
    let cert = bound(sys, spec, &solver)?;
    Ok(synthesize(sys, &cert, &synthesis_options(sopts), &solver)?)
}

fn controller_of(res: &SynthesisResult) -> Controller {
    let mut c = Controller::from_polys(&res.u1);
    c.c0 = Some(res.c0);
    c.c1 = Some(res.c1);
    c
}

fn cmd_synthesize(args: &SynthesizeArgs, json: bool, out: &mut dyn Write) -> CliResult<i32> {
    let sys = load_system(&args.system)?;
    if sys.m() == 0 {
        return Err(CliError::usage("system has no control inputs"));
    }
    let res = run_synthesis(&sys, &args.bound, &args.synth)?;
    let file = match &args.output {
        Some(p) => {
            write(p, &controller_of(&res).to_text())?;
            Some(p.display().to_string())
        }
        None => None,
    };
    let report = synthesis_report(&res, file);
    if json {
        emit_json(out, &report)?;
    } else {
        emit(out, &synthesis_text(&report))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SweepReport<'a> {
    sweep: &'a SweepResult,
    best_eps: Option<f64>,
    best_phi: Option<f64>,
    diverged: Vec<f64>,
    csv: Option<String>,
}

fn sweep_text(r: &SweepReport) -> String {
    let mut s = format!("{:>10} {:>12} {:>12} {:>12}  note\n", "eps", "phi", "phi0", "C0+eps*C1");
    for row in &r.sweep.rows {
        let note = if row.diverged {
            row.note.clone().unwrap_or_else(|| "diverged".into())
        } else {
            String::new()
        };
        s += &format!(
            "{:>10.4e} {:>12.6} {:>12.6} {:>12.6}  {note}\n",
            row.eps, row.phi, row.phi0, row.bound_line
        );
    }
    match (r.best_eps, r.best_phi) {
        (Some(e), Some(p)) => s += &format!("minimum phi = {p:.6} at eps = {e}\n"),
        _ => s += "every run diverged\n",
    }
    if let Some(c) = &r.csv {
        s += &format!("CSV written to {c}\n");
    }
    s
}

fn sweep_report<'a>(res: &'a SweepResult, csv: Option<String>) -> SweepReport<'a> {
    let best = res.best();
    SweepReport {
        sweep: res,
        best_eps: best.map(|r| r.eps),
        best_phi: best.map(|r| r.phi),
        diverged: res.rows.iter().filter(|r| r.diverged).map(|r| r.eps).collect(),
        csv,
    }
}

fn cmd_sweep(args: &SweepArgs, json: bool, out: &mut dyn Write) -> CliResult<i32> {
    let sys = load_system(&args.system)?;
    let ctl = Controller::parse(&read(&args.controller)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.controller.display())))?;
    if ctl.nvars() != sys.n() || ctl.m() != sys.m() {
        return Err(CliError::usage(format!(
            "controller is for {} states and {} inputs, system has {} and {}",
            ctl.nvars(),
            ctl.m(),
            sys.n(),
            sys.m()
        )));
    }
    let u1 = ctl.to_polys().map_err(|e| CliError::usage(e.to_string()))?;
    let mut cfg = SweepConfig::new(args.x0.clone().unwrap_or_else(|| vec![1.0; sys.n()]), args.t_end);
    cfg.dt = args.dt;
    cfg.discard = args.discard;
    cfg.pre_run = args.pre_run;
    cfg.jobs = args.jobs;
    let res = epsilon_sweep(
        &sys,
        &u1,
        ctl.c0.unwrap_or(f64::NAN),
        ctl.c1.unwrap_or(f64::NAN),
        &args.eps_grid,
        &cfg,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let csv = match &args.csv {
        Some(p) => {
            write(p, &res.to_csv())?;
            Some(p.display().to_string())
        }
        None => None,
    };
    let report = sweep_report(&res, csv);
    if json {
        emit_json(out, &report)?;
    } else {
        emit(out, &sweep_text(&report))?;
    }
    Ok(EXIT_OK)
}

/// Pipeline config.
///
/// ```toml
/// system = "van_der_pol.sys"   # relative to the config file
/// output = "out"
///
/// [bound]
/// dv = 6
/// ds = 4
/// ball = true                  # or a beta value
///
/// [synthesis]
/// du1 = 1
///
/// [sweep]
/// eps_grid = [0.001, 0.01, 0.1]
/// T = 200
/// x0 = [2.0, 0.0]
/// pre_run = 100
/// ```
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub system: PathBuf,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub bound: PipelineBound,
    #[serde(default)]
    pub synthesis: PipelineSynthesis,
    pub sweep: PipelineSweep,
}

#[derive(Deserialize, Debug)]
#[serde(untagged)]
pub enum BallSetting {
    Flag(bool),
    Beta(f64),
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineBound {
    pub dv: u32,
    pub ds: u32,
    pub ball: Option<BallSetting>,
}

impl Default for PipelineBound {
    fn default() -> Self {
        PipelineBound {
            dv: 4,
            ds: 4,
            ball: None,
        }
    }
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSynthesis {
    pub du1: u32,
    pub dv1: u32,
    pub ds0: u32,
    pub ds1: u32,
    pub shape: ShapeArg,
    pub method: MethodArg,
    pub u1_constant: bool,
}

impl Default for PipelineSynthesis {
    fn default() -> Self {
        let d = Degrees::default();
        PipelineSynthesis {
            du1: d.u1,
            dv1: d.v1,
            ds0: d.s0,
            ds1: d.s1,
            shape: ShapeArg::Isotropic,
            method: MethodArg::Auto,
            u1_constant: false,
        }
    }
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct PipelineSweep {
    pub eps_grid: Vec<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub x0: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub pre_run: Option<f64>,
    pub discard: Option<f64>,
    pub jobs: Option<usize>,
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    bound: BoundReport,
    synthesis: SynthesisReport,
    sweep: SweepReport<'a>,
}

fn cmd_pipeline(args: &PipelineArgs, json: bool, out: &mut dyn Write) -> CliResult<i32> {
    let text = read(&args.config)?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let sys = load_system(&base.join(&cfg.system))?;
    let bopts = BoundOpts {
        dv: cfg.bound.dv,
        ds: cfg.bound.ds,
        ball: match cfg.bound.ball {
            None | Some(BallSetting::Flag(false)) => None,
            Some(BallSetting::Flag(true)) => Some(None),
            Some(BallSetting::Beta(b)) => Some(Some(b)),
        },
    };
    let s = &cfg.synthesis;
    let sopts = SynthOpts {
        du1: s.du1,
        dv1: s.dv1,
        ds0: s.ds0,
        ds1: s.ds1,
        shape: s.shape,
        method: s.method,
        u1_constant: s.u1_constant,
    };
    let solver = solver_options()?;
    let spec = bound_spec(&sys, &bopts, false)?;
    let cert = bound(&sys, spec, &solver)?;
    let res = synthesize(&sys, &cert, &synthesis_options(&sopts), &solver)?;

    let sw = &cfg.sweep;
    let mut scfg = SweepConfig::new(sw.x0.clone().unwrap_or_else(|| vec![1.0; sys.n()]), sw.t_end);
    scfg.dt = sw.dt.unwrap_or(DEFAULT_DT);
    scfg.discard = sw.discard.unwrap_or(0.5);
    scfg.pre_run = sw.pre_run;
    scfg.jobs = sw.jobs;
    let sweep = epsilon_sweep(&sys, &res.u1, res.c0, res.c1, &sw.eps_grid, &scfg)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let (ctl_file, csv_file) = match &cfg.output {
        Some(dir) => {
            let dir = base.join(dir);
            let ctl = dir.join("controller.ctl");
            let csv = dir.join("sweep.csv");
            write(&ctl, &controller_of(&res).to_text())?;
            write(&csv, &sweep.to_csv())?;
            (Some(ctl.display().to_string()), Some(csv.display().to_string()))
        }
        None => (None, None),
    };
    let report = PipelineReport {
        bound: bound_report(&cert, None),
        synthesis: synthesis_report(&res, ctl_file),
        sweep: sweep_report(&sweep, csv_file),
    };
    if json {
        emit_json(out, &report)?;
    } else {
        let mut s = bound_text(&report.bound);
        s += &synthesis_text(&report.synthesis);
        s += &sweep_text(&report.sweep);
        emit(out, &s)?;
    }
    Ok(EXIT_OK)
}

fn emit(out: &mut dyn Write, s: &str) -> CliResult<()> {
    out.write_all(s.as_bytes())
        .map_err(|e| CliError::usage(format!("write failed: {e}")))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, v: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::usage(e.to_string()))?;
    s.push('\n');
    emit(out, &s)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::CheckSos(a) => check_sos(a, cli.json, out),
        Command::Bound(a) => cmd_bound(a, cli.json, out),
        Command::Synthesize(a) => cmd_synthesize(a, cli.json, out),
        Command::Sweep(a) => cmd_sweep(a, cli.json, out),
        Command::Pipeline(a) => cmd_pipeline(a, cli.json, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                let _ = writeln!(
                    out,
                    "{}",
                    serde_json::json!({ "error": e.message, "exit_code": e.code })
                );
            }
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("ltac").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn check_sos_codes() {
        assert_eq!(call(&["check-sos", "x1^2+2*x1+1"]).0, 0);
        assert_eq!(call(&["check-sos", "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1"]).0, 1);
        assert_eq!(call(&["check-sos", "x1^2 +* 1"]).0, 2);
        assert_eq!(call(&["frobnicate"]).0, 2);
        let (code, out, _) = call(&["--json", "check-sos", "-x1^2"]);
        assert_eq!(code, 1);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["sos"], false);
    }

    #[test]
    fn variable_count_from_text() {
        assert_eq!(infer_nvars("x1^2 + x12*x3"), 12);
        assert_eq!(infer_nvars("3"), 1);
        assert_eq!(infer_nvars("max1 + x2"), 2);
    }
}
