use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use danser::cli::{
    cmd_bench, cmd_evaluate, cmd_export_attention, cmd_predict, cmd_train, RunConfig, MODEL_FILE,
};
use danser::Result;

/// Social recommendation with dual graph attention networks.
///
/// Settings come from built-in defaults, then the `--config` file, then
/// `--set` overrides in order, then the dedicated flags `--variant`,
/// `--seed` and `--output`.
#[derive(Parser)]
#[command(name = "danser", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Model variant (danser, dualemb, dualgcn, usergat, itemgat, danser-w,
    /// danser-m, danser-a, danser-c).
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Scoring {
    /// `user<TAB>item` lines.
    #[arg(long)]
    pairs: PathBuf,
    /// Defaults to `model.ckpt` in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output file; defaults to a file in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it on the held-out split.
    Train(Common),
    /// Evaluate a checkpoint on the held-out split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score user-item pairs.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scoring: Scoring,
    },
    /// Write per-pair attention weights and policy probabilities as JSON lines.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scoring: Scoring,
    },
    /// Time training steps over a grid of batch and sample sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config(Common),
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(&common.set)?;
    let mut flags = Vec::new();
    if let Some(v) = &common.variant {
        flags.push(format!("variant={v}"));
    }
    if let Some(s) = common.seed {
        flags.push(format!("seed={s}"));
    }
    if let Some(o) = &common.output {
        flags.push(format!("output_dir={}", o.display()));
    }
    config.apply_overrides(&flags)?;
    Ok(config)
}

fn checkpoint_or_default(config: &RunConfig, checkpoint: &Option<PathBuf>) -> PathBuf {
    checkpoint.clone().unwrap_or_else(|| config.output_dir.join(MODEL_FILE))
}

fn out_or_default(config: &RunConfig, out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| config.output_dir.join(name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let config = resolve(&common)?;
            let outcome = cmd_train(&config)?;
            print!("{}", outcome.eval);
        }
        Command::Evaluate { common, checkpoint } => {
            let config = resolve(&common)?;
            let report = cmd_evaluate(&config, &checkpoint_or_default(&config, &checkpoint))?;
            print!("{report}");
        }
        Command::Predict { common, scoring } => {
            let config = resolve(&common)?;
            let out = out_or_default(&config, &scoring.out, "predictions.tsv");
            ensure_parent(&out)?;
            let scores = cmd_predict(
                &config,
                &checkpoint_or_default(&config, &scoring.checkpoint),
                &scoring.pairs,
                &out,
            )?;
            log::info!("wrote {} scores to {}", scores.len(), out.display());
        }
        Command::ExportAttention { common, scoring } => {
            let config = resolve(&common)?;
            let out = out_or_default(&config, &scoring.out, "attention.jsonl");
            ensure_parent(&out)?;
            let records = cmd_export_attention(
                &config,
                &checkpoint_or_default(&config, &scoring.checkpoint),
                &scoring.pairs,
                &out,
            )?;
            log::info!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Bench { common, out } => {
            let config = resolve(&common)?;
            let out = out_or_default(&config, &out, "timing.csv");
            ensure_parent(&out)?;
            cmd_bench(&config, &out)?;
            print!("{}", std::fs::read_to_string(&out)?);
        }
        Command::Config(common) => {
            let config = resolve(&common)?;
            config.validate()?;
            print!("{}", config.dump());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
