use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covtransport::curves::Tone;
use covtransport::simulate::{synthetic_corpus, CorpusSpec};
use covtransport_cli::config::PipelineConfig;
use covtransport_cli::error::{CliError, Result};
use covtransport_cli::ingest::{ingest, IngestOptions};
use covtransport_cli::output::{write_curves, write_long};
use covtransport_cli::pipeline::{run, Stages};
use covtransport_cli::scenario::{write_harness_result, ScenarioFile};

#[derive(Parser)]
#[command(
    name = "covtransport",
    version,
    about = "Optimal-transport analysis of f0 contour covariances"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample long-format f0 tracks onto a common grid and write wide curves.
    Ingest {
        #[command(flatten)]
        config: ConfigArgs,
        /// Wide-format CSV to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the per-family mean models and write residual curves.
    FitMean(ConfigArgs),
    /// CL0 versus CL6 permutation tests per tone combination.
    Test {
        #[command(flatten)]
        config: ConfigArgs,
        /// Test the input curves directly instead of mean-model residuals.
        #[arg(long)]
        raw: bool,
    },
    /// Tangent PCA of cell covariances per family.
    Tpca {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        raw: bool,
    },
    /// Mean model, tests and tangent PCA for every selected family.
    Pipeline(ConfigArgs),
    /// Synthetic data.
    #[command(subcommand)]
    Simulate(Simulate),
}

#[derive(Subcommand)]
enum Simulate {
    /// Repeat a two-sample scenario and summarize its p-values.
    Harness {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Write a long-format synthetic corpus.
    Corpus {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        speakers: usize,
        #[arg(long, default_value_t = 4)]
        repetitions: u32,
        /// Tone combinations whose CL6 covariance is inflated, e.g. T1T1,T1T2.
        #[arg(long, value_delimiter = ',')]
        affected: Vec<String>,
        #[arg(long, default_value_t = 3.0)]
        load_scale: f64,
    },
}

/// Pipeline settings. Flags override defaults; `--config` is applied last.
#[derive(Args, Default)]
struct ConfigArgs {
    /// INI file of settings, such as a previous run's manifest.ini.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// "all" or a list such as T1x,Tx3.
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    grid_size: Option<String>,
    /// hz or log_hz.
    #[arg(long)]
    value_scale: Option<String>,
    /// Moving-average span as a fraction of the token, or none.
    #[arg(long)]
    smoothing_span: Option<String>,
    #[arg(long)]
    basis_size: Option<String>,
    #[arg(long)]
    penalty_order: Option<String>,
    /// gcv or a fixed smoothing parameter.
    #[arg(long)]
    lambda: Option<String>,
    /// shared or per_smooth.
    #[arg(long)]
    lambda_sharing: Option<String>,
    /// auto or a fixed AR(1) coefficient.
    #[arg(long)]
    ar1: Option<String>,
    #[arg(long)]
    permutations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// none or speaker.
    #[arg(long)]
    strata: Option<String>,
    /// single or harness.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    harness_reps: Option<String>,
    #[arg(long)]
    harness_n: Option<String>,
    /// cell or speaker_cell.
    #[arg(long)]
    grouping: Option<String>,
    #[arg(long)]
    components: Option<String>,
    #[arg(long)]
    centered: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        let flags = [
            ("input", "path", &self.input),
            ("output", "dir", &self.output_dir),
            ("pipeline", "families", &self.families),
            ("input", "grid_size", &self.grid_size),
            ("input", "value_scale", &self.value_scale),
            ("input", "smoothing_span", &self.smoothing_span),
            ("model", "basis_size", &self.basis_size),
            ("model", "penalty_order", &self.penalty_order),
            ("model", "lambda", &self.lambda),
            ("model", "lambda_sharing", &self.lambda_sharing),
            ("model", "ar1", &self.ar1),
            ("test", "permutations", &self.permutations),
            ("test", "seed", &self.seed),
            ("test", "strata", &self.strata),
            ("test", "mode", &self.mode),
            ("test", "harness_reps", &self.harness_reps),
            ("test", "harness_n", &self.harness_n),
            ("pca", "grouping", &self.grouping),
            ("pca", "components", &self.components),
            ("pca", "centered", &self.centered),
        ];
        for (section, key, value) in flags {
            if let Some(v) = value {
                cfg.set(section, key, v)?;
            }
        }
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if cfg.input.as_os_str().is_empty() {
            return Err(CliError::Config("no input file given (--input or [input] path)".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_stages(args: &ConfigArgs, stages: Stages) -> Result<ExitCode> {
    let cfg = args.resolve()?;
    let report = run(&cfg, stages)?;
    let failed = report.failures();
    println!(
        "{} families analysed, {failed} failed; results in {}",
        report.families.len(),
        cfg.output_dir.display()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parse_combination(s: &str) -> Result<(Tone, Tone)> {
    let s = s.trim();
    let bad = || CliError::Config(format!("'{s}' is not a tone combination such as T1T2"));
    let split = s
        .get(1..)
        .and_then(|r| r.find(['T', 't']))
        .map(|i| i + 1)
        .ok_or_else(bad)?;
    let (a, b) = s.split_at(split);
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest { config, output } => {
            let cfg = config.resolve()?;
            let ingested = ingest(&cfg.input, &IngestOptions::from_config(&cfg))?;
            write_curves(&output, &ingested.sample)?;
            println!(
                "{} curves written to {} ({} tokens dropped)",
                ingested.sample.len(),
                output.display(),
                ingested.dropped
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::FitMean(config) => run_stages(
            &config,
            Stages {
                fit: true,
                test: false,
                pca: false,
            },
        ),
        Command::Test { config, raw } => run_stages(
            &config,
            Stages {
                fit: !raw,
                test: true,
                pca: false,
            },
        ),
        Command::Tpca { config, raw } => run_stages(
            &config,
            Stages {
                fit: !raw,
                test: false,
                pca: true,
            },
        ),
        Command::Pipeline(config) => run_stages(&config, Stages::ALL),
        Command::Simulate(Simulate::Harness { scenario, output_dir }) => {
            let file = ScenarioFile::load(&scenario)?;
            let result = file.run()?;
            write_harness_result(&output_dir, &file, &result)?;
            println!(
                "{} replications, rejection rate at 0.05: {:.3}; results in {}",
                file.reps,
                result.rejection_rate(0.05),
                output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(Simulate::Corpus {
            output,
            seed,
            speakers,
            repetitions,
            affected,
            load_scale,
        }) => {
            let spec = CorpusSpec {
                speakers,
                repetitions,
                affected: affected.iter().map(|s| parse_combination(s)).collect::<Result<_>>()?,
                load_scale,
                seed,
                ..CorpusSpec::default()
            };
            let tokens = synthetic_corpus(&spec)?;
            write_long(&output, &tokens)?;
            println!("{} tokens written to {}", tokens.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
