//! `gaussldt`: θ(s) curves, fluctuation-theorem sweeps, cumulants and
//! oracle comparisons for Gaussian oscillator networks.
//!
//! Exit codes: 0 ok, 1 other failure, 2 configuration or validation error,
//! 3 no stationary state, 4 empty or too narrow domain, 5 oracle resource
//! refusal.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gaussldt::config::{self, NetworkConfig};
use gaussldt::fock::{self, Truncation};
use gaussldt::ftcheck::{self, Verdict};
use gaussldt::ldf::{self, fmt_f64, ThetaCurve, ThetaEvaluator};
use gaussldt::presets::{self, Job, SweepParam};
use gaussldt::{exec, phasespace, CountingSpec, Error, ExecMode, NetworkSpec, Result};

#[derive(Parser, Debug)]
#[command(name = "gaussldt", version, about = "Large-deviation functions of heat exchange in Gaussian oscillator networks")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, env = "GAUSSLDT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// θ(s) on a grid, CSV `s,theta,solvable,closed_loop_margin`.
    Theta(ThetaArgs),
    /// Symmetry-point diagnostics along a parameter sweep.
    FtSweep(SweepArgs),
    /// Scaled cumulants κ₁..κₙ at s = 0, CSV `order,kappa`.
    Cumulants(CumulantArgs),
    /// θ from the Riccati reduction next to the truncated Fock generator.
    OracleCompare(OracleArgs),
    /// Check a network file and report violations and warnings.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Source {
    /// Network description (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Counted bath label; overrides `counting.bath` in the file.
    #[arg(long)]
    bath: Option<String>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, allow_hyphen_values = true, requires_all = ["s_max", "s_steps"], conflicts_with = "s_grid")]
    s_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires_all = ["s_min", "s_steps"])]
    s_max: Option<f64>,
    #[arg(long, requires_all = ["s_min", "s_max"])]
    s_steps: Option<usize>,
    /// Grid as `lo:hi:n`.
    #[arg(long, allow_hyphen_values = true)]
    s_grid: Option<String>,
}

impl GridArgs {
    fn explicit(&self) -> Result<Option<Vec<f64>>> {
        if let Some(spec) = &self.s_grid {
            let (lo, hi, n) = parse_range(spec)?;
            return Ok(Some(ldf::linspace(lo, hi, n)));
        }
        match (self.s_min, self.s_max, self.s_steps) {
            (Some(lo), Some(hi), Some(n)) => {
                check_range(lo, hi, n)?;
                Ok(Some(ldf::linspace(lo, hi, n)))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Args, Debug)]
struct ThetaArgs {
    #[command(flatten)]
    source: Source,
    /// Run the curve jobs of a named preset; `--out` is then a directory.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write drift, noise and the bias matrices at the upper grid end here.
    #[arg(long)]
    dump_matrices: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Run the sweep jobs of a named preset; `--out` is then a directory.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Swept chain parameter: T1, g or gamma.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values, or `lo:hi:n`.
    #[arg(long, allow_hyphen_values = true)]
    values: Option<String>,
    /// `Sym` below this counts as the symmetry holding.
    #[arg(long, default_value_t = ftcheck::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CumulantArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Base finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    grid: GridArgs,
    /// Fixed truncation per mode; otherwise truncate automatically.
    #[arg(long, conflicts_with = "tol")]
    n_max: Option<usize>,
    /// Convergence tolerance of the automatic truncation.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        Some(1) => ExecMode::Sequential,
        Some(t) => {
            exec::init_thread_pool(t);
            ExecMode::best()
        }
        None => ExecMode::best(),
    };
    let outcome = match &cli.command {
        Command::Theta(a) => cmd_theta(a, mode),
        Command::FtSweep(a) => cmd_ft_sweep(a, mode),
        Command::Cumulants(a) => cmd_cumulants(a),
        Command::OracleCompare(a) => cmd_oracle_compare(a, mode),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Json(_) => 2,
        Error::Unstable { .. } => 3,
        Error::DomainEmpty | Error::DomainTooNarrow { .. } => 4,
        Error::OracleResource { .. } => 5,
        _ => 1,
    }
}

fn parse_range(spec: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::Config(format!("expected `lo:hi:n`, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    check_range(lo, hi, n)?;
    Ok((lo, hi, n))
}

fn check_range(lo: f64, hi: f64, n: usize) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() || hi < lo || n == 0 || (n == 1 && hi != lo) {
        return Err(Error::Config(format!("bad grid {lo}:{hi}:{n}")));
    }
    Ok(())
}

fn parse_values(spec: &str) -> Result<Vec<f64>> {
    if spec.contains(':') {
        let (lo, hi, n) = parse_range(spec)?;
        return Ok(ldf::linspace(lo, hi, n));
    }
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sweep value `{v}`")))
        })
        .collect()
}

fn load(source: &Source) -> Result<(NetworkConfig, CountingSpec)> {
    let path = source
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("pass --config or --preset".into()))?;
    let cfg = config::load(path)?;
    let counting = cfg.counting_or(source.bath.as_deref())?;
    cfg.network.ensure_valid()?;
    Ok((cfg, counting))
}

/// Output sink: a file when given, stdout otherwise.
fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn preset_dir(out: Option<&Path>) -> Result<&Path> {
    let dir = out.ok_or_else(|| Error::Config("a preset needs --out DIR".into()))?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

/// `s_c` of the reference bath, `ln(Γ/Γ̄)/ω`, which is `1/T` for a thermal
/// bath. Falls back to 1 when undefined.
fn reference_scale(eval: &ThetaEvaluator) -> f64 {
    let bath = eval.reference_bath();
    let omega = eval.network().oscillators[bath.oscillator].omega;
    let s_c = (bath.gamma_down / bath.gamma_up).ln() / omega;
    if s_c.is_finite() && s_c != 0.0 {
        s_c.abs()
    } else {
        1.0
    }
}

fn cmd_theta(args: &ThetaArgs, mode: ExecMode) -> Result<()> {
    if let Some(name) = &args.preset {
        return theta_preset(name, args, mode);
    }
    let (cfg, counting) = load(&args.source)?;
    let eval = ThetaEvaluator::new(&cfg.network, &counting)?;
    let domain = eval.domain()?;
    let grid = match args.grid.explicit()? {
        Some(g) => g,
        None => {
            let s_c = cfg.chain.map_or_else(|| reference_scale(&eval), |c| c.s_c());
            ldf::default_grid(s_c, &domain)
        }
    };
    if let Some(dir) = &args.dump_matrices {
        let s = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = if s.is_finite() { s } else { 0.0 };
        phasespace::dump_matrices(dir, eval.system(), Some(&eval.bias(s)))?;
    }
    let curve = if cfg.network.is_driven() {
        driven_curve(&eval, &grid)?
    } else {
        ldf::theta_curve_on(&eval, &grid, mode)?
    };
    let mut w = sink(args.out.as_deref())?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Point-wise driven θ; the margin comes from the stationary covariance,
/// which the drive does not touch.
fn driven_curve(eval: &ThetaEvaluator, grid: &[f64]) -> Result<ThetaCurve> {
    let domain = eval.domain()?;
    let n = grid.len();
    let mut curve = ThetaCurve {
        s_grid: grid.to_vec(),
        theta: vec![f64::NAN; n],
        solvable: vec![false; n],
        closed_loop_margin: vec![f64::NAN; n],
        domain,
        reference_bath: eval.counting().bath.clone(),
    };
    for (i, &s) in grid.iter().enumerate() {
        if let (Ok(theta), Ok((_, margin, _))) = (eval.theta_driven(s, None), eval.theta_point(s, None)) {
            curve.theta[i] = theta;
            curve.solvable[i] = true;
            curve.closed_loop_margin[i] = margin;
        }
    }
    if n > 0 && !curve.solvable.iter().any(|&b| b) {
        return Err(Error::DomainEmpty);
    }
    Ok(curve)
}

fn theta_preset(name: &str, args: &ThetaArgs, mode: ExecMode) -> Result<()> {
    let preset = presets::preset(name)?;
    let dir = preset_dir(args.out.as_deref())?;
    let mut ran = 0;
    for output in &preset.outputs {
        let Job::Curve { template, bath, lo, hi, points } = &output.job else {
            continue;
        };
        let (net, counting) = presets::instance(template, bath)?;
        let eval = ThetaEvaluator::new(&net, &counting)?;
        let s_c = template.s_c();
        let curve = ldf::theta_curve_on(&eval, &ldf::linspace(lo * s_c, hi * s_c, *points), mode)?;
        let mut w = sink(Some(&dir.join(&output.file)))?;
        curve.write_csv(&mut w)?;
        w.flush()?;
        eprintln!("{}: wrote {}", preset.name, output.file);
        ran += 1;
    }
    if ran == 0 {
        return Err(Error::Config(format!("preset `{name}` has no θ curves; try ft-sweep")));
    }
    Ok(())
}

fn cmd_ft_sweep(args: &SweepArgs, mode: ExecMode) -> Result<()> {
    if let Some(name) = &args.preset {
        return sweep_preset(name, args, mode);
    }
    let (cfg, counting) = load(&args.source)?;
    let template = cfg
        .chain
        .ok_or_else(|| Error::Config("ft-sweep needs a `chain` network file or --preset".into()))?;
    let param: SweepParam = args
        .param
        .as_deref()
        .ok_or_else(|| Error::Config("pass --param (T1, g or gamma)".into()))?
        .parse()?;
    let values = parse_values(
        args.values
            .as_deref()
            .ok_or_else(|| Error::Config("pass --values".into()))?,
    )?;
    let rows = ftcheck::ft_sweep(&values, mode, args.threshold, |v| {
        presets::instance(&template.with(param, v), &counting.bath)
    });
    report_failures(&rows);
    let mut w = sink(args.out.as_deref())?;
    ftcheck::write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn report_failures(rows: &[ftcheck::SweepRow]) {
    for row in rows {
        match &row.report {
            Err(e) => eprintln!("  {}: {e}", row.param_value),
            Ok(r) if r.verdict != Verdict::Holds && r.verdict != Verdict::Broken => {
                eprintln!("  {}: {}", row.param_value, r.verdict)
            }
            Ok(_) => {}
        }
    }
}

fn sweep_preset(name: &str, args: &SweepArgs, mode: ExecMode) -> Result<()> {
    let preset = presets::preset(name)?;
    let dir = preset_dir(args.out.as_deref())?;
    let mut ran = 0;
    for output in &preset.outputs {
        let Job::Sweep { template, bath, param, values } = &output.job else {
            continue;
        };
        let rows = ftcheck::ft_sweep(values, mode, args.threshold, |v| presets::instance(&template.with(*param, v), bath));
        report_failures(&rows);
        let mut w = sink(Some(&dir.join(&output.file)))?;
        ftcheck::write_sweep_csv(&rows, &mut w)?;
        w.flush()?;
        eprintln!("{}: wrote {}", preset.name, output.file);
        ran += 1;
    }
    if ran == 0 {
        return Err(Error::Config(format!("preset `{name}` has no sweeps; try theta")));
    }
    Ok(())
}

fn cmd_cumulants(args: &CumulantArgs) -> Result<()> {
    if args.order == 0 {
        return Err(Error::Config("--order must be at least 1".into()));
    }
    let (cfg, counting) = load(&args.source)?;
    let eval = ThetaEvaluator::new(&cfg.network, &counting)?;
    let set = ldf::cumulants_with(&eval, args.order, args.h)?;
    let mut w = sink(args.out.as_deref())?;
    writeln!(w, "order,kappa")?;
    for (k, kappa) in set.kappa.iter().enumerate() {
        writeln!(w, "{},{}", k + 1, fmt_f64(*kappa))?;
    }
    w.flush()?;
    Ok(())
}

/// 21 points over the middle 80% of the domain.
fn oracle_grid(eval: &ThetaEvaluator) -> Result<Vec<f64>> {
    let d = eval.domain()?;
    let pad = 0.1 * d.width();
    Ok(ldf::linspace(d.lo + pad, d.hi - pad, 21))
}

fn cmd_oracle_compare(args: &OracleArgs, mode: ExecMode) -> Result<()> {
    let (cfg, counting) = load(&args.source)?;
    let net: &NetworkSpec = &cfg.network;
    let eval = ThetaEvaluator::new(net, &counting)?;
    let grid = match args.grid.explicit()? {
        Some(g) => g,
        None => oracle_grid(&eval)?,
    };
    let truncation = match args.n_max {
        Some(n) => Truncation::Fixed(n),
        None => Truncation::Auto { tol: args.tol },
    };
    let rows = fock::oracle_compare(&eval, &grid, truncation, mode)?;
    let worst = rows.iter().map(|r| r.abs_diff).filter(|d| d.is_finite()).fold(0.0, f64::max);
    eprintln!("max |theta_gauss - theta_fock| = {worst:.3e}");
    let mut w = sink(args.out.as_deref())?;
    fock::write_oracle_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let cfg = config::load(&args.config)?;
    let report = gaussldt::model::validate(&cfg.network);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if !report.is_valid() {
        return Err(Error::Validation(gaussldt::error::ValidationErrors(
            report.violations.iter().map(|v| v.to_string()).collect(),
        )));
    }
    let system = phasespace::assemble(&cfg.network)?;
    let margin = system.stability_margin()?;
    println!(
        "{} oscillators, {} couplings, {} baths; drift margin {margin:.6e}",
        cfg.network.len(),
        cfg.network.couplings.len(),
        cfg.network.baths.len()
    );
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    println!("ok");
    Ok(())
}
