use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bonesoup::analytic::{example21, verify_theorem, IsotropicPair};
use bonesoup::harness::{
    emit_outputs, fronts_csv, load_fronts, metrics_csv, metrics_for_fronts, run_sweep,
    select_beta_for_config, summary, ExperimentConfig,
};
use bonesoup::{
    build_circulant, random_catalog, CombinationMatrix, Error, ErrorClass, ParamVector,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "bonesoup",
    version,
    about = "Bone-soup model merging experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; sweeps write there, other commands add one file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the config thread count.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over the preference grid.
    Sweep { config: PathBuf },
    /// Reproduce the two-reward worked example.
    Example21,
    /// Check the bone-versus-soup interval on an isotropic pair.
    VerifyTheorem {
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        k1: f64,
        #[arg(long, default_value_t = 2.0)]
        k2: f64,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long, default_value = "1,1", allow_hyphen_values = true)]
        theta1: String,
        #[arg(long, default_value = "3,-1", allow_hyphen_values = true)]
        theta2: String,
    },
    /// Print a circulant or catalog combination matrix with its rule checks.
    GenMatrix {
        #[arg(long, requires = "beta", conflicts_with = "catalog")]
        n: Option<usize>,
        #[arg(long, requires = "n")]
        beta: Option<f64>,
        #[arg(long, required_unless_present = "n")]
        catalog: Option<usize>,
    },
    /// Metrics for a fronts CSV written by `sweep`.
    Metrics {
        fronts: PathBuf,
        /// Comma-separated reference point; automatic when absent.
        #[arg(long = "ref", allow_hyphen_values = true)]
        reference: Option<String>,
    },
    /// Pick β by short-budget training.
    SelectBeta { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Library errors already render their source; anyhow context does not.
            match err.downcast_ref::<Error>() {
                Some(e) => eprintln!("error: {e}"),
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        };
    }
    if err.downcast_ref::<Failed>().is_some() {
        return 3;
    }
    2
}

/// A check ran to completion and reported a violation.
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Sweep { config } => sweep(g, &config),
        Command::Example21 => {
            let report = example21()?;
            let text = match g.format {
                Format::Json => to_json(&report)?,
                Format::Csv => key_values(&report)?,
            };
            publish(g, "example21", &text)
        }
        Command::VerifyTheorem {
            beta,
            k1,
            k2,
            grid,
            theta1,
            theta2,
        } => {
            let theta1 = ParamVector::new(parse_vector(&theta1)?).map_err(Error::from)?;
            let theta2 = ParamVector::new(parse_vector(&theta2)?).map_err(Error::from)?;
            let pair = IsotropicPair::new(k1, k2, theta1, theta2, [0.0, 0.0])?;
            let report = verify_theorem(&pair, beta, grid)?;
            let text = match g.format {
                Format::Json => to_json(&report)?,
                Format::Csv => key_values(&report)?,
            };
            publish(g, "verify_theorem", &text)?;
            if !report.passed() {
                return Err(Failed(format!(
                    "{} grid points violate the interval claim",
                    report.violations
                ))
                .into());
            }
            Ok(())
        }
        Command::GenMatrix { n, beta, catalog } => {
            let matrix = match (n, beta, catalog) {
                (Some(n), Some(beta), None) => build_circulant(n, beta).map_err(Error::from)?,
                (None, None, Some(id)) => random_catalog(id).map_err(Error::from)?,
                _ => bail!("give either --n with --beta or --catalog"),
            };
            let text = match g.format {
                Format::Json => to_json(&MatrixOut::new(&matrix))?,
                Format::Csv => matrix_csv(&matrix),
            };
            publish(g, "matrix", &text)
        }
        Command::Metrics { fronts, reference } => {
            let fronts = load_fronts(&fronts)?;
            let reference = reference.as_deref().map(parse_vector).transpose()?;
            let (reference, reports) = metrics_for_fronts(&fronts, reference.as_deref())?;
            let text = match g.format {
                Format::Json => {
                    to_json(&serde_json::json!({ "hv_reference": reference, "reports": reports }))?
                }
                Format::Csv => String::from_utf8(metrics_csv(&reports)?)?,
            };
            publish(g, "metrics", &text)
        }
        Command::SelectBeta { config } => {
            let config = load_config(g, &config)?;
            let selection = select_beta_for_config(&config)?;
            let text = match g.format {
                Format::Json => to_json(&selection)?,
                Format::Csv => {
                    let mut s = String::from("beta,hypervolume,selected\n");
                    for c in &selection.scores {
                        let _ = writeln!(
                            s,
                            "{},{:.16e},{}",
                            c.value,
                            c.hypervolume,
                            c.value == selection.beta
                        );
                    }
                    s
                }
            };
            publish(g, "select_beta", &text)
        }
    }
}

fn sweep(g: &Global, path: &Path) -> anyhow::Result<()> {
    let mut config = load_config(g, path)?;
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    let result = run_sweep(&config)?;
    let written = emit_outputs(&result, &config.output_dir)?;
    match g.format {
        Format::Json => print!("{}", to_json(&result)?),
        Format::Csv => print!("{}", String::from_utf8(fronts_csv(&result)?)?),
    }
    eprint!("{}", summary(&result));
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn load_config(g: &Global, path: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if g.workers.is_some() {
        config.workers = g.workers;
    }
    config.validate()?;
    Ok(config)
}

/// Prints `text` and, with `--out`, also writes it to `<out>/<stem>.<ext>`.
fn publish(g: &Global, stem: &str, text: &str) -> anyhow::Result<()> {
    print!("{text}");
    if let Some(dir) = &g.out {
        let ext = match g.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{stem}.{ext}"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn parse_vector(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| {
                anyhow::Error::new(Error::InvalidConfig(format!("not a number: {t:?}")))
            })
        })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value).context("serializing output")?;
    s.push('\n');
    Ok(s)
}

/// Flattens a JSON object into `key,value` rows; nested values stay JSON.
fn key_values<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let serde_json::Value::Object(map) = serde_json::to_value(value)? else {
        bail!("report is not an object");
    };
    let mut s = String::from("field,value\n");
    for (k, v) in map {
        let v = match v {
            serde_json::Value::String(t) => t,
            other => other.to_string(),
        };
        if v.contains(',') {
            let _ = writeln!(s, "{k},\"{}\"", v.replace('"', "\"\""));
        } else {
            let _ = writeln!(s, "{k},{v}");
        }
    }
    Ok(s)
}

#[derive(Serialize)]
struct MatrixOut {
    rows: Vec<Vec<f64>>,
    rules: bonesoup::matrix::RuleReport,
}

impl MatrixOut {
    fn new(m: &CombinationMatrix) -> Self {
        MatrixOut {
            rows: m.rows(),
            rules: m.rules(),
        }
    }
}

fn matrix_csv(m: &CombinationMatrix) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
