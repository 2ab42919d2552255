use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rebalance::diagnostics::{self, Suite};
use rebalance::distributions::{sample_observed, sample_target, target_conditional};
use rebalance::erm::evaluate_risk;
use rebalance::experiment::{run_experiment, ExperimentConfig, RunOptions};
use rebalance::pipelines::{train, PipelineConfig};
use rebalance::{Dataset, Error, GeneratorSpec, LogisticModel, MixtureSpec, Result, TargetSpec};

#[derive(Parser)]
#[command(
    name = "rebalance",
    version,
    about = "Label-shift estimators and the SMOTE-vs-bootstrap harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled dataset as CSV.
    Generate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample from a target with this class-0 prior instead of the source.
        #[arg(long)]
        target_pi0: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fit one pipeline on a dataset CSV and write the model as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Pipeline config JSON, e.g. {"method":"rebalance","generator":"smote:k=5"}.
        #[arg(long, conflicts_with = "generator")]
        pipeline: Option<PathBuf>,
        /// Shorthand for a rebalancing pipeline with this generator.
        #[arg(long)]
        generator: Option<GeneratorSpec>,
        /// Mixture spec JSON; lets the plug-in use the known prior.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write the run manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Monte Carlo risk report of a model JSON against the exact target conditional.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0.5)]
        target_pi0: f64,
        #[arg(long, default_value_t = 100_000)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a configured sweep, writing results.csv and summary.csv.
    Experiment {
        /// Experiment config JSON; the built-in SMOTE-vs-bootstrap sweep if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Print the effective config as JSON and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run diagnostic suites or emit data tables as CSV.
    Diag {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        /// Emit a data table instead of pass/fail rows.
        #[arg(long, value_enum)]
        table: Option<Table>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// Mixture spec JSON {"pi0","mu0","mu1","sigma"}.
    #[arg(long, conflicts_with = "dim")]
    spec: Option<PathBuf>,
    /// Use mu0 = 0, mu1 = ones/sqrt(d), sigma = 1 in this dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pi0: f64,
}

impl SpecArgs {
    fn build(&self) -> Result<MixtureSpec> {
        match (&self.spec, self.dim) {
            (Some(p), _) => read_json(p),
            (None, Some(d)) => MixtureSpec::scaled_ones(self.pi0, d, 1.0),
            (None, None) => Err(Error::config("either --spec or --dim is required")),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    All,
    Formulas,
    Coupling,
    Geometry,
    PluginBound,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Divergence,
    Indegree,
    RkSweep,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Option<PathBuf>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

enum Outcome {
    Done,
    DiagFailed(usize),
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate {
            spec,
            n,
            seed,
            target_pi0,
            out,
        } => {
            let spec = spec.build()?;
            let data = match target_pi0 {
                Some(p) => sample_target(&spec, &TargetSpec::new(p)?, n, seed)?,
                None => sample_observed(&spec, n, seed)?,
            };
            let mut w = output(&out)?;
            data.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Train {
            data,
            pipeline,
            generator,
            spec,
            seed,
            out,
            manifest,
        } => {
            let cfg = match (pipeline, generator) {
                (Some(p), _) => read_json::<PipelineConfig>(&p)?,
                (None, Some(g)) => PipelineConfig::rebalance(g),
                (None, None) => {
                    return Err(Error::config(
                        "either --pipeline or --generator is required",
                    ))
                }
            };
            let data = Dataset::read_csv(File::open(&data)?)?;
            let spec: Option<MixtureSpec> = spec.as_deref().map(read_json).transpose()?;
            let trained = train(&data, &cfg, spec.as_ref(), seed)?;
            write_json(&trained.model, &out)?;
            if let Some(p) = manifest {
                write_json(&trained.manifest, &Some(p))?;
            }
        }
        Command::Evaluate {
            model,
            spec,
            target_pi0,
            n_eval,
            seed,
        } => {
            let model: LogisticModel = read_json(&model)?;
            let spec = spec.build()?;
            if model.dim() != spec.dim() {
                return Err(Error::config(format!(
                    "model has dimension {}, spec has {}",
                    model.dim(),
                    spec.dim()
                )));
            }
            let target = TargetSpec::new(target_pi0)?;
            let fstar = target_conditional(&spec, &target);
            let report = evaluate_risk(&model, &fstar, &spec, &target, n_eval, seed)?;
            write_json(&report, &None)?;
        }
        Command::Experiment {
            config,
            output_dir,
            resume,
            workers,
            print_config,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_json_file(&p)?,
                None => ExperimentConfig::smote_vs_bootstrap(),
            };
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if print_config {
                write_json(&cfg, &None)?;
                return Ok(Outcome::Done);
            }
            let results = run_experiment(&cfg, &RunOptions { resume, workers })?;
            let failed = results.iter().filter(|r| !r.is_ok()).count();
            eprintln!(
                "{} cells written to {} ({failed} with error status)",
                results.len(),
                cfg.output_dir.display()
            );
        }
        Command::Diag {
            suite,
            table,
            seed,
            out,
        } => {
            let mut w = output(&out)?;
            if let Some(table) = table {
                match table {
                    Table::Divergence => diagnostics::write_table(
                        &diagnostics::DIVERGENCE_HEADER,
                        &diagnostics::divergence_table(seed, 20, 100_000)?,
                        &mut w,
                    )?,
                    Table::Indegree => diagnostics::write_table(
                        &diagnostics::HISTOGRAM_HEADER,
                        &diagnostics::histogram_table(seed, &[1, 2, 3], 1, 1000)?,
                        &mut w,
                    )?,
                    Table::RkSweep => diagnostics::write_table(
                        &diagnostics::RK_HEADER,
                        &diagnostics::rk_table(seed, &[1, 2, 4], 1)?,
                        &mut w,
                    )?,
                }
                w.flush()?;
                return Ok(Outcome::Done);
            }
            let suites: Vec<Suite> = match suite {
                SuiteArg::All => Suite::ALL.to_vec(),
                SuiteArg::Formulas => vec![Suite::Formulas],
                SuiteArg::Coupling => vec![Suite::Coupling],
                SuiteArg::Geometry => vec![Suite::Geometry],
                SuiteArg::PluginBound => vec![Suite::PluginBound],
            };
            let mut rows = Vec::new();
            for s in suites {
                rows.extend(diagnostics::run_diagnostics(s, seed)?);
            }
            diagnostics::write_rows(&rows, &mut w)?;
            w.flush()?;
            let failing: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
            for r in &failing {
                eprintln!(
                    "FAIL {} {}: measured {} reference {} bound {}",
                    r.suite, r.check, r.measured, r.reference, r.bound
                );
            }
            if !failing.is_empty() {
                return Ok(Outcome::DiagFailed(failing.len()));
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // usage errors share the configuration exit code
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::DiagFailed(n)) => {
            eprintln!("{n} diagnostic checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.root().tag());
            ExitCode::from(1)
        }
    }
}
