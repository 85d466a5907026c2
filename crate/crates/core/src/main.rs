use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use robustrec::dataset::{dataset_stats, synth, write_jsonl};
use robustrec::evalkit::{read_rows, write_rows, ResultRow};
use robustrec::harness::cache::Cache;
use robustrec::harness::config::{parse_override_args, ExperimentConfig};
use robustrec::harness::pipeline::{
    attack_run, evaluate_configured, prepare_data, require_run, run_sweep, train_run, tuned_training, RunSpec,
};
use robustrec::harness::report::{render_table, summary_tables, write_report};
use robustrec::Result;

/// Robust explainable recommendation experiments.
#[derive(Parser)]
#[command(name = "robustrec", version)]
struct Cli {
    /// Cache root (overrides ROBUSTREC_CACHE).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dot-path overrides, e.g. `--defense.lambda 0.5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &parse_override_args(&self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic review corpus as JSON lines.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build and cache the split and aspect matrices.
    Ingest(ConfigArgs),
    /// Grid-search learning rate and weight decay for the configured model.
    Search(ConfigArgs),
    /// Train the configured model and defense.
    Train(ConfigArgs),
    /// Compute weight perturbations for every `attack.eps_a_list` budget.
    Attack(ConfigArgs),
    /// Evaluate a trained run, clean and under attack.
    Evaluate {
        /// CSV output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the full grid and write `results.csv`.
    Sweep {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Aggregate a results CSV into tables and F1-vs-attack curves.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn print_rows(rows: &[ResultRow], out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_rows(fs::File::create(path)?, rows)
        }
        None => write_rows(std::io::stdout().lock(), rows),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cache = cli.cache.map(Cache::new).unwrap_or_else(Cache::from_env);
    match cli.command {
        Command::Synth { out, cfg } => {
            let cfg = cfg.load()?;
            let records = synth::generate(&cfg.dataset.synth);
            write_jsonl(&out, &records)?;
            println!("wrote {} reviews to {}", records.len(), out.display());
        }
        Command::Ingest(args) => {
            let cfg = args.load()?;
            let data = prepare_data(&cache, &cfg.dataset)?;
            let stats = dataset_stats(&data.split);
            println!("{}", serde_json::to_string_pretty(&stats)?);
            println!("sparsity {}%  cached at {}", stats.sparsity_display(), data.dir.display());
        }
        Command::Search(args) => {
            let cfg = args.load()?;
            let data = prepare_data(&cache, &cfg.dataset)?;
            let best = tuned_training(&cache, &data, &cfg, cfg.model.algo)?;
            println!("{}", serde_json::to_string_pretty(&best)?);
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let data = prepare_data(&cache, &cfg.dataset)?;
            let model = cfg.model.build(cfg.model.algo);
            let spec = RunSpec::new(&cfg, cfg.model.algo, &cfg.training, cfg.defense);
            let run = train_run(&cache, &data, &model, &spec)?;
            println!("{} {}", run.run_id, run.dir.display());
        }
        Command::Attack(args) => {
            let cfg = args.load()?;
            let data = prepare_data(&cache, &cfg.dataset)?;
            let model = cfg.model.build(cfg.model.algo);
            let spec = RunSpec::new(&cfg, cfg.model.algo, &cfg.training, cfg.defense);
            let run = require_run(&cache, &data, &spec)?;
            for a in attack_run(&data, &model, &run, &spec, &cfg.attack.eps_a_list)? {
                println!("eps_a={} norm={} grad_norm={}", a.eps_a, a.norm, a.grad_norm);
            }
        }
        Command::Evaluate { out, cfg } => {
            let cfg = cfg.load()?;
            print_rows(&evaluate_configured(&cache, &cfg)?, out.as_ref())?;
        }
        Command::Sweep { out, cfg } => {
            let cfg = cfg.load()?;
            let rows = run_sweep(&cache, &cfg)?;
            fs::create_dir_all(&out)?;
            let path = out.join("results.csv");
            print_rows(&rows, Some(&path))?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
        Command::Report { input, out } => {
            let rows = read_rows(fs::File::open(&input)?)?;
            for ((algo, dataset), table) in summary_tables(&rows) {
                println!("{}", render_table(&algo, &dataset, &table));
            }
            for path in write_report(&rows, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
