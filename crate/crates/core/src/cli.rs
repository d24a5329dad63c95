//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::check::{corpus_graph, run_check};
use crate::dirac_op::{assemble_dirac, assemble_laplacian_kirchhoff};
use crate::discretize::{fmt17, HalflineTreatment, Mesh};
use crate::error::{Error, Result};
use crate::graph::{parse_graph, MetricGraph};
use crate::limit::{make_schedule, nonzero_floor, run_sweep, LimitConvention};
use crate::newton::NewtonOptions;
use crate::nld::{criticality_probe, lift_from_nls, solve_newton, virial_check, NldProblem};
use crate::nls::{default_guess, solve_newton_nls, NlsProblem};
use crate::spectrum::{discrete_spectrum, SpectralWindow};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  i/o error (unreadable graph file, unwritable output)
  2  validation error (parameter out of range, missing half-line,
     malformed command line)
  3  parse error in a graph file
  4  solver failure (Newton, eigensolver or continuation)
  5  invariant violation (including failed `check` rows)

Failures print one line `error,<kind>,<message>` on stderr.
Graphs are read from a file, or from the bundled corpus with
`builtin:<name>` (segment, three_star, tadpole, cycles).";

#[derive(Debug, Parser)]
#[command(name = "diracgraph", version, about = "Dirac and NLS bound states on metric graphs", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues of the discrete Dirac operator or Kirchhoff Laplacian
    #[command(after_help = EXIT_CODES)]
    Spectrum(SpectrumArgs),
    /// Bound state of the nonlinear Dirac equation, started from the NLS lift
    #[command(name = "solve-nld", after_help = EXIT_CODES)]
    SolveNld(NldArgs),
    /// Bound state of the NLS equation with core nonlinearity
    #[command(name = "solve-nls", after_help = EXIT_CODES)]
    SolveNls(NlsArgs),
    /// NLD states along a c schedule compared with the NLS limit
    #[command(name = "limit-sweep", after_help = EXIT_CODES)]
    LimitSweep(SweepArgs),
    /// Invariant suite over the bundled corpus
    #[command(after_help = EXIT_CODES)]
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output file (standard output when omitted)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Seed of the random probe directions
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OperatorChoice {
    Dirac,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionChoice {
    /// ω = mc² + λ/(2m)
    Half,
    /// ω = mc² + λ/m
    Paper,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Graph file or builtin:<name>
    #[arg(long)]
    pub graph: String,
    #[arg(long, value_enum, default_value_t = OperatorChoice::Dirac)]
    pub operator: OperatorChoice,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Target mesh width
    #[arg(long)]
    pub h: f64,
    /// Truncation length of half-lines (ψ¹ = 0 at the tip)
    #[arg(long = "l-inf", default_value_t = 20.0)]
    pub l_inf: f64,
    /// Comma-separated vertices with ψ¹ = 0 (u = 0 for the Laplacian)
    #[arg(long, value_delimiter = ',')]
    pub dirichlet: Vec<String>,
    /// Lower end of the spectral window
    #[arg(long, default_value_t = -1e12, allow_negative_numbers = true)]
    pub lo: f64,
    /// Upper end of the spectral window
    #[arg(long, default_value_t = 1e12, allow_negative_numbers = true)]
    pub hi: f64,
    /// Number of eigenvalues nearest the window centre
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Target mesh width
    #[arg(long)]
    pub h: f64,
    /// Newton tolerance on the weighted residual norm
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 50)]
    pub max_iter: usize,
    /// Plain Newton steps without backtracking
    #[arg(long = "no-damping")]
    pub no_damping: bool,
}

impl SolverArgs {
    fn options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: !self.no_damping,
        }
    }
}

#[derive(Debug, Args)]
pub struct NldArgs {
    /// Graph file or builtin:<name>
    #[arg(long)]
    pub graph: String,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long)]
    pub c: f64,
    /// Frequency, strictly inside (−mc², mc²)
    #[arg(long, allow_negative_numbers = true)]
    pub omega: f64,
    #[arg(long)]
    pub p: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct NlsArgs {
    /// Graph file or builtin:<name>
    #[arg(long)]
    pub graph: String,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    /// Frequency, negative
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long)]
    pub p: f64,
    /// Coupling (default 2m)
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Graph file or builtin:<name>
    #[arg(long)]
    pub graph: String,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long)]
    pub p: f64,
    /// Increasing comma-separated speeds of light
    #[arg(long = "c-list", value_delimiter = ',', default_value = "4,8,16,32,64")]
    pub c_list: Vec<f64>,
    #[arg(long = "limit-convention", value_enum, default_value_t = ConventionChoice::Half)]
    pub limit_convention: ConventionChoice,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Text produced by a run and the error that ended it, if any. Partial
/// output (a sweep that lost its branch) comes with an error.
#[derive(Debug)]
pub struct Outcome {
    pub output: String,
    pub error: Option<Error>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Spectrum(a) => &a.common,
            Command::SolveNld(a) => &a.common,
            Command::SolveNls(a) => &a.common,
            Command::LimitSweep(a) => &a.common,
            Command::Check(a) => &a.common,
        }
    }

    fn graph_source(&self) -> Option<&str> {
        match self {
            Command::Spectrum(a) => Some(&a.graph),
            Command::SolveNld(a) => Some(&a.graph),
            Command::SolveNls(a) => Some(&a.graph),
            Command::LimitSweep(a) => Some(&a.graph),
            Command::Check(_) => None,
        }
    }
}

/// Reads a graph file, or a corpus entry named `builtin:<name>`.
pub fn load_graph_text(source: &str) -> Result<String> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return corpus_graph(name)
            .map(str::to_string)
            .ok_or_else(|| Error::Io(format!("no bundled graph named `{name}`")));
    }
    std::fs::read_to_string(source).map_err(|e| Error::Io(format!("{source}: {e}")))
}

fn graph_label(source: &str) -> String {
    match source.strip_prefix("builtin:") {
        Some(name) => name.to_string(),
        None => Path::new(source)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| source.to_string()),
    }
}

/// Hash of the parsed command (output path excluded) and the graph text.
fn config_hash(command: &Command, graph_text: &str) -> String {
    let mut desc = format!("{command:?}");
    if let Some(out) = &command.common().output {
        // the destination does not change the result
        desc = desc.replace(&format!("output: Some({out:?})"), "output: None");
    }
    let mut hasher = Sha256::new();
    hasher.update(desc.as_bytes());
    hasher.update([0u8]);
    hasher.update(graph_text.as_bytes());
    hasher.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn run(cli: &Cli) -> Outcome {
    let command = &cli.command;
    let graph_text = match command.graph_source().map(load_graph_text).transpose() {
        Ok(t) => t,
        Err(e) => {
            return Outcome {
                output: String::new(),
                error: Some(e),
            }
        }
    };
    let text = graph_text.as_deref().unwrap_or("");
    let mut out = format!(
        "# tool_version={TOOL_VERSION},config_hash={},seed={}\n",
        config_hash(command, text),
        command.common().seed
    );
    let graph = match graph_text.as_deref().map(parse_graph).transpose() {
        Ok(g) => g,
        Err(e) => {
            return Outcome {
                output: out,
                error: Some(e),
            }
        }
    };
    let result = match command {
        Command::Spectrum(a) => spectrum(a, graph.as_ref().expect("graph"), &mut out),
        Command::SolveNld(a) => solve_nld(a, graph.as_ref().expect("graph"), &mut out),
        Command::SolveNls(a) => solve_nls(a, graph.as_ref().expect("graph"), &mut out),
        Command::LimitSweep(a) => limit_sweep(a, graph.as_ref().expect("graph"), &mut out),
        Command::Check(a) => check(a, &mut out),
    };
    Outcome {
        output: out,
        error: result.err(),
    }
}

fn spectrum(a: &SpectrumArgs, g: &MetricGraph, out: &mut String) -> Result<()> {
    let dirichlet = a
        .dirichlet
        .iter()
        .map(|n| g.vertex_id(n.trim()))
        .collect::<Result<Vec<_>>>()?;
    let mesh = Mesh::new(g, a.h, HalflineTreatment::Truncate { length: a.l_inf }, &dirichlet)?;
    let op = match a.operator {
        OperatorChoice::Dirac => assemble_dirac(&mesh, a.m, a.c)?,
        OperatorChoice::Laplacian => assemble_laplacian_kirchhoff(&mesh)?,
    };
    let res = discrete_spectrum(&op, &SpectralWindow::new(a.lo, a.hi, a.count)?, false)?;
    let label = graph_label(&a.graph);
    let l_inf = res.l_inf.map_or_else(|| "none".to_string(), fmt17);
    out.push_str("graph,m,c,h,L_inf,index,eigenvalue\n");
    for (i, ev) in res.eigenvalues.iter().enumerate() {
        let _ = writeln!(
            out,
            "{label},{},{},{},{l_inf},{i},{}",
            fmt17(a.m),
            fmt17(a.c),
            fmt17(res.h),
            fmt17(*ev)
        );
    }
    Ok(())
}

fn solve_nld(a: &NldArgs, g: &MetricGraph, out: &mut String) -> Result<()> {
    let opts = a.solver.options();
    let prob = NldProblem::new(g, a.m, a.c, a.omega, a.p, a.solver.h)?;
    // frequency of the NLS profile lifted as the starting point
    let lambda = 2.0 * a.m * (a.omega - a.m * a.c * a.c);
    let nls = NlsProblem::new(g, a.m, lambda, a.p, None, a.solver.h)?;
    let u = solve_newton_nls(&nls, &default_guess(&nls)?, &opts)?.u;
    let bs = solve_newton(&prob, &lift_from_nls(&u, &prob)?, &opts)?;
    out.push_str(&bs.psi.to_csv(g));
    let _ = writeln!(
        out,
        "# iterations={},virial_relative_error={},criticality={}",
        bs.stats.iterations,
        fmt17(virial_check(&bs)),
        fmt17(criticality_probe(&bs.psi, &prob, 50, a.common.seed)?)
    );
    out.push_str("omega,c,residual,action,core_mass\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        fmt17(bs.omega),
        fmt17(bs.c),
        fmt17(bs.residual_norm),
        fmt17(bs.action),
        fmt17(bs.core_mass)
    );
    Ok(())
}

fn solve_nls(a: &NlsArgs, g: &MetricGraph, out: &mut String) -> Result<()> {
    let prob = NlsProblem::new(g, a.m, a.lambda, a.p, a.alpha, a.solver.h)?;
    let bs = solve_newton_nls(&prob, &default_guess(&prob)?, &a.solver.options())?;
    out.push_str(&bs.u.to_csv(g));
    let _ = writeln!(
        out,
        "# iterations={},core_mass={}",
        bs.stats.iterations,
        fmt17(bs.core_mass)
    );
    out.push_str("lambda,residual,J\n");
    let _ = writeln!(
        out,
        "{},{},{}",
        fmt17(bs.lambda),
        fmt17(bs.residual_norm),
        fmt17(bs.j_value)
    );
    Ok(())
}

fn limit_sweep(a: &SweepArgs, g: &MetricGraph, out: &mut String) -> Result<()> {
    let convention = match a.limit_convention {
        ConventionChoice::Half => LimitConvention::Half,
        ConventionChoice::Paper => LimitConvention::Paper,
    };
    let schedule = make_schedule(a.m, a.lambda, &a.c_list, convention)?;
    let sweep = run_sweep(&schedule, g, a.p, a.solver.h, &a.solver.options(), a.common.seed)?;
    out.push_str("n,c,omega,a_n,b_n,residual,h1_psi2,h1_diff,h1_psi1,action,core_mass\n");
    for r in &sweep.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            fmt17(r.c),
            fmt17(r.omega),
            fmt17(r.a_n),
            fmt17(r.b_n),
            fmt17(r.residual),
            fmt17(r.h1_psi2),
            fmt17(r.h1_diff),
            fmt17(r.h1_psi1),
            fmt17(r.action),
            fmt17(r.core_mass)
        );
    }
    if !sweep.records.is_empty() {
        let _ = writeln!(
            out,
            "# nonzero_floor={},max_c_times_h1_psi2={},h1_diff_decreasing={},probe_sups={}",
            fmt17(nonzero_floor(&sweep.records)?),
            fmt17(sweep.scaled_psi2_bound()),
            sweep.diff_decreasing(),
            sweep
                .records
                .iter()
                .map(|r| fmt17(r.probe_sup))
                .collect::<Vec<_>>()
                .join(";")
        );
    }
    if let Some(c) = sweep.dropped {
        let _ = writeln!(out, "# dropped_from_fit_c={}", fmt17(c));
    }
    match sweep.slope {
        Some(s) => {
            let _ = writeln!(out, "slope,{}", fmt17(s));
        }
        None => out.push_str("slope,none\n"),
    }
    match sweep.failure {
        None => Ok(()),
        Some((index, e)) => Err(Error::BranchLost {
            index,
            reason: e.to_string(),
        }),
    }
}

fn check(a: &CheckArgs, out: &mut String) -> Result<()> {
    let report = run_check(a.common.seed)?;
    out.push_str(&report.to_csv());
    let _ = writeln!(out, "# rows={},failures={}", report.rows.len(), report.failures());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("{} check rows failed", report.failures())))
    }
}

/// Writes the outcome and returns the process exit status.
pub fn finish(cli: &Cli, outcome: Outcome) -> i32 {
    let written = match &cli.command.common().output {
        Some(path) => std::fs::write(path, &outcome.output).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(outcome.output.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Io(e.to_string()))
        }
    };
    let error = outcome.error.or(written.err());
    match error {
        None => 0,
        Some(e) => {
            eprintln!("error,{},{}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
