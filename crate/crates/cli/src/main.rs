use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomgw::exactlaw::{LawFamily, TreeLaw};
use geomgw::lab::{
    log_grid, run_regime, run_theta_continuity, sample_lines, svg_line_chart, threads_from_env,
    with_workers, write_convergence_csv, write_law_csv, write_law_json, write_theta_csv, ARule,
    ExperimentConfig, LawHeader, OutputPaths, Regime, RegimeSpec, SampleFamily, Series,
};
use geomgw::oracle::run_suite;
use geomgw::{GwError, OffspringParams, Result};

#[derive(Parser)]
#[command(
    name = "geomgw",
    version,
    about = "Exact laws and samplers for conditioned geometric Galton-Watson trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the enumerated law of a truncated tree.
    Law(LawArgs),
    /// Draw trees and print one per line.
    Sample(SampleArgs),
    /// Run the brute-force equivalence suite.
    Oracle(OracleArgs),
    /// Measure total variation along an n grid or a theta grid.
    Converge(ConvergeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gw,
    Conditioned,
    Kesten,
    Poisson,
    Condensation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Inhomogeneous,
    TwoType,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    q: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<OffspringParams> {
        OffspringParams::new(self.eta, self.q)
    }
}

#[derive(Args)]
struct LawArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum)]
    regime: Family,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    a: Option<u64>,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    k0: Option<u32>,
    #[arg(long, default_value_t = 6)]
    degree_cap: u32,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum)]
    regime: Family,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    a: Option<u64>,
    #[arg(long)]
    height: usize,
    /// Root cap of the condensation tree.
    #[arg(long)]
    k0: Option<u32>,
    #[arg(long, value_enum, default_value_t = Generator::Inhomogeneous)]
    generator: Generator,
    #[arg(long, default_value_t = 1)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ConvergeArgs {
    /// JSON experiment config; flags below are ignored when given.
    #[arg(long, conflicts_with = "bundled")]
    config: Option<PathBuf>,
    /// One of the bundled experiments: kesten, poisson, condensation.
    #[arg(long)]
    bundled: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated n grid.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
    /// Constant a_n; the regime default is used when absent.
    #[arg(long)]
    a: Option<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    k0: Option<u32>,
    #[arg(long)]
    degree_cap: Option<u32>,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Sweep theta over `LO:HI:POINTS` (log-spaced) instead of an n grid.
    #[arg(long)]
    theta_grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    samples: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a static SVG chart here.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Append the runtime_ms column.
    #[arg(long)]
    timings: bool,
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn need<T>(v: Option<T>, flag: &str, what: &str) -> Result<T> {
    v.ok_or_else(|| GwError::InvalidParameter(format!("{what} needs --{flag}")))
}

fn law_family(f: Family, theta: Option<f64>, n: Option<u64>, a: Option<u64>) -> Result<LawFamily> {
    Ok(match f {
        Family::Gw => LawFamily::Gw,
        Family::Conditioned => LawFamily::Conditioned {
            n: need(n, "n", "the conditioned law")?,
            a: need(a, "a", "the conditioned law")?,
        },
        Family::Kesten => LawFamily::Kesten,
        Family::Poisson => LawFamily::Poisson {
            theta: need(theta, "theta", "the Poisson law")?,
        },
        Family::Condensation => LawFamily::Condensation,
    })
}

fn cmd_law(args: LawArgs) -> Result<()> {
    let p = args.params.params()?;
    let family = law_family(args.regime, args.theta, args.n, args.a)?;
    if matches!(family, LawFamily::Condensation) && args.k0.is_none() {
        return Err(GwError::InvalidParameter(
            "the condensation law is defined on r_(h,k0) views; set --k0".into(),
        ));
    }
    let law = TreeLaw::new(p, family, args.height, args.k0)?;
    let truncated = law.truncated_law(args.degree_cap)?;
    let header = LawHeader::for_law(&law, &truncated);
    let mut out = open_out(&args.out)?;
    match args.format {
        Format::Csv => write_law_csv(&mut out, &header, &truncated)?,
        Format::Json => {
            write_law_json(&mut out, &header, &truncated)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let p = args.params.params()?;
    let family = match args.regime {
        Family::Gw => SampleFamily::Gw,
        Family::Conditioned => {
            let n = need(args.n, "n", "conditioned sampling")?;
            if args.height as u64 > n {
                return Err(GwError::InvalidParameter(format!(
                    "--height {} exceeds --n {n}",
                    args.height
                )));
            }
            SampleFamily::Conditioned {
                n,
                a: need(args.a, "a", "conditioned sampling")?,
            }
        }
        Family::Kesten => SampleFamily::Kesten,
        Family::Poisson => SampleFamily::Poisson {
            theta: need(args.theta, "theta", "Poisson sampling")?,
        },
        Family::Condensation => SampleFamily::Condensation {
            k0: need(args.k0, "k0", "condensation sampling")?,
            two_type: matches!(args.generator, Generator::TwoType),
        },
    };
    let threads = threads_from_env()?;
    let lines = with_workers(threads, || {
        sample_lines(&p, family, args.height, args.samples, args.seed)
    })??;
    let mut out = open_out(&args.out)?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let results = run_suite();
    let mut out = open_out(&None)?;
    match args.format {
        Format::Csv => {
            for r in &results {
                writeln!(out, "{r}")?;
            }
        }
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&results)?)?,
    }
    out.flush()?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.id.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(GwError::Certification(format!(
            "criteria {} failed",
            failed.join(", ")
        )))
    }
}

fn converge_config(args: &ConvergeArgs) -> Result<ExperimentConfig> {
    if let Some(path) = &args.config {
        return ExperimentConfig::from_json(&std::fs::read_to_string(path)?);
    }
    if let Some(name) = &args.bundled {
        return ExperimentConfig::bundled()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| {
                GwError::InvalidParameter(format!("no bundled experiment named {name:?}"))
            });
    }
    let params = OffspringParams::new(
        need(args.eta, "eta", "converge")?,
        need(args.q, "q", "converge")?,
    )?;
    let regime = need(args.regime, "regime", "converge")?;
    let a_rule = match args.a {
        Some(value) => ARule::Constant { value },
        None => ARule::Default,
    };
    let cfg = ExperimentConfig {
        params,
        regime: RegimeSpec {
            regime,
            theta: args.theta,
            a_rule,
        },
        h: need(args.height, "height", "converge")?,
        k0: args.k0,
        degree_cap: need(args.degree_cap, "degree-cap", "converge")?,
        n_grid: args.n.clone(),
        samples: args.samples,
        seed: args.seed,
        tolerance: args.tolerance,
        output: OutputPaths {
            csv: args.out.as_ref().map(|p| p.display().to_string()),
            svg: args.svg.as_ref().map(|p| p.display().to_string()),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_theta_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || GwError::Parse(format!("--theta-grid expects LO:HI:POINTS, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let points: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && points >= 1) {
        return Err(GwError::InvalidParameter(format!(
            "invalid theta grid {s:?}"
        )));
    }
    Ok(log_grid(lo, hi, points))
}

fn write_svg(path: &Option<PathBuf>, svg: impl FnOnce() -> String) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, svg())?;
    }
    Ok(())
}

fn cmd_converge(args: ConvergeArgs) -> Result<()> {
    let threads = threads_from_env()?;
    if let Some(grid) = &args.theta_grid {
        let thetas = parse_theta_grid(grid)?;
        let p = OffspringParams::new(
            need(args.eta, "eta", "a theta sweep")?,
            need(args.q, "q", "a theta sweep")?,
        )?;
        let h = need(args.height, "height", "a theta sweep")?;
        let k0 = args.k0.unwrap_or(1);
        let d = need(args.degree_cap, "degree-cap", "a theta sweep")?;
        let rows = with_workers(threads, || run_theta_continuity(p, h, k0, d, &thetas))??;
        let mut out = open_out(&args.out)?;
        match args.format {
            Format::Csv => write_theta_csv(&mut out, &rows, args.tolerance, args.timings)?,
            Format::Json => writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&strip_theta_timings(rows.clone(), args.timings))?
            )?,
        }
        out.flush()?;
        write_svg(&args.svg, || {
            let kesten: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| r.kesten_tv.map(|v| (r.theta, v)))
                .collect();
            let cond: Vec<(f64, f64)> = rows.iter().map(|r| (r.theta, r.condensation_tv)).collect();
            svg_line_chart(
                "theta continuity",
                "theta",
                "total variation",
                &[
                    Series {
                        name: "vs Kesten",
                        points: kesten,
                    },
                    Series {
                        name: "vs condensation",
                        points: cond,
                    },
                ],
                true,
            )
        })?;
        let uncertified = rows
            .iter()
            .filter(|r| {
                r.condensation_residual_bound >= args.tolerance
                    || r.kesten_residual_bound.is_some_and(|b| b >= args.tolerance)
            })
            .count();
        return certification(uncertified);
    }
    let cfg = converge_config(&args)?;
    let mut rows = with_workers(threads, || run_regime(&cfg))??;
    if !args.timings {
        for r in &mut rows {
            r.runtime_ms = None;
        }
    }
    let out_path = args
        .out
        .clone()
        .or_else(|| cfg.output.csv.as_ref().map(PathBuf::from));
    let mut out = open_out(&out_path)?;
    match args.format {
        Format::Csv => write_convergence_csv(&mut out, &rows, args.timings)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?,
    }
    out.flush()?;
    let svg_path = args
        .svg
        .clone()
        .or_else(|| cfg.output.svg.as_ref().map(PathBuf::from));
    write_svg(&svg_path, || {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.tv_exact.map(|v| (r.n as f64, v)))
            .collect();
        let name = format!("{:?} regime", cfg.regime.regime).to_lowercase();
        svg_line_chart(
            &name,
            "n",
            "total variation",
            &[Series {
                name: &name,
                points: pts,
            }],
            false,
        )
    })?;
    certification(rows.iter().filter(|r| !r.certified()).count())
}

fn strip_theta_timings(
    mut rows: Vec<geomgw::lab::ThetaRow>,
    keep: bool,
) -> Vec<geomgw::lab::ThetaRow> {
    if !keep {
        for r in &mut rows {
            r.runtime_ms = None;
        }
    }
    rows
}

fn certification(uncertified: usize) -> Result<()> {
    if uncertified == 0 {
        Ok(())
    } else {
        Err(GwError::Certification(format!(
            "{uncertified} row(s) have a residual bound above the tolerance"
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Law(a) => cmd_law(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Converge(a) => cmd_converge(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
