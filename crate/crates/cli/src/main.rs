use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phe::config::{ExperimentConfig, ExperimentKind};
use phe::exact_demo::DemoConfig;
use phe::experiment;

#[derive(Parser)]
#[command(name = "phe", version, about = "Probabilistic hash embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, summary and checkpoint.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory; defaults to the config's `output_dir`, then `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print embedding parameter counts and the compression ratio.
    ParamCount {
        #[command(flatten)]
        common: Common,
    },
    /// Run the alternating two-item demo and write its error traces.
    Demo {
        /// Demo config; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/demo")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config without running it.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

/// `--seed` replaces the experiment seed and the demo seed.
fn override_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.seed = s;
        if let Some(d) = cfg.demo.as_mut() {
            d.seed = s;
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> phe::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(path)?;
    override_seed(&mut cfg, seed);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn run_and_report(cfg: &ExperimentConfig, base: &Path, out: &Path, quiet: bool) -> phe::Result<()> {
    let result = experiment::run(cfg, base, out)?;
    if !quiet {
        println!("{}", serde_json::to_string_pretty(&result.summary)?);
        eprintln!("wrote {} ({:.2}s)", out.display(), result.seconds);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> phe::Result<()> {
    match cli.command {
        Command::Run { common, out } => {
            let (cfg, base) = load(&common.config, common.seed)?;
            let out = out
                .or_else(|| cfg.output_dir.as_ref().map(|d| ExperimentConfig::resolve(&base, d)))
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            run_and_report(&cfg, &base, &out, common.quiet)
        }
        Command::ParamCount { common } => {
            let (cfg, base) = load(&common.config, common.seed)?;
            let report = experiment::param_report(&cfg, &base)?;
            if common.quiet {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!("phe_params\t{}", report.phe);
                println!("pee_params\t{}", report.pee);
                println!("vocab_size\t{}", report.vocab_size);
                println!("compression_ratio\t{:.2}", report.compression_ratio);
            }
            Ok(())
        }
        Command::Demo {
            config,
            out,
            seed,
            quiet,
        } => {
            let (mut cfg, base) = match config {
                Some(p) => load(&p, None)?,
                None => (
                    ExperimentConfig::from_json(r#"{"name": "alternating-demo", "kind": "demo"}"#)?,
                    PathBuf::new(),
                ),
            };
            if cfg.kind != ExperimentKind::Demo {
                return Err(phe::Error::Config {
                    field: "kind".into(),
                    message: "the demo subcommand needs kind `demo`".into(),
                });
            }
            if seed.is_some() && cfg.demo.is_none() {
                cfg.demo = Some(DemoConfig::default());
            }
            override_seed(&mut cfg, seed);
            run_and_report(&cfg, &base, &out, quiet)
        }
        Command::ValidateConfig { common } => {
            let (cfg, _) = load(&common.config, common.seed)?;
            if !common.quiet {
                println!("ok: {} ({:?}, model {})", cfg.name, cfg.kind, cfg.model);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
