use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medscale_cli::{cmd_baseline, cmd_finetune, cmd_generate, cmd_pretrain, cmd_report, cmd_sweep, CliError, Options, RunConfig};

#[derive(Parser)]
#[command(name = "medscale", version, about = "Scaling experiments for transformer encoders on claims data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Independent jobs to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic claims.
    Generate(Common),
    /// Pretrain every configured model size.
    Pretrain(Common),
    /// Fine-tune pretrained and from-scratch classifiers.
    Finetune(Common),
    /// Cross-validated gradient-boosted trees.
    Baseline(Common),
    /// Run generate, pretrain, finetune, baseline and report in order.
    Sweep(Common),
    /// Build report.csv, report.json and figures from an output directory.
    Report {
        /// Output directory of a run.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(c: &Common) -> Result<(RunConfig, Options), CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.generator.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok((cfg, Options { jobs: c.jobs.max(1) }))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, _) = load(&c)?;
            cmd_generate(&cfg)?;
            println!("wrote {}", cfg.out_dir.join("claims.jsonl").display());
        }
        Command::Pretrain(c) => {
            let (cfg, o) = load(&c)?;
            for s in cmd_pretrain(&cfg, o)? {
                println!(
                    "d={} params={} best_epoch={} val_loss={:.4} test_mlm_loss={:.4} wallclock_s={:.1}",
                    s.hidden_d, s.model_size_params, s.best_epoch, s.best_val_loss, s.test_mlm_loss, s.pretrain_wallclock_s
                );
            }
        }
        Command::Finetune(c) => {
            let (cfg, o) = load(&c)?;
            for r in cmd_finetune(&cfg, o)? {
                println!("d={} {} n={} seed={} {}: auroc={:.4} auprc={:.4}", r.hidden_d, r.task, r.label_count, r.dataset_seed, r.arm.as_str(), r.auroc, r.auprc);
            }
        }
        Command::Baseline(c) => {
            let (cfg, o) = load(&c)?;
            for r in cmd_baseline(&cfg, o)? {
                println!("{} n={} seed={} gbdt: auroc={:.4} auprc={:.4}", r.task, r.label_count, r.dataset_seed, r.auroc, r.auprc);
            }
        }
        Command::Sweep(c) => {
            let (cfg, o) = load(&c)?;
            let out = cmd_sweep(&cfg, o)?;
            println!("{} rows -> {}", out.rows.len(), out.csv.display());
        }
        Command::Report { dir } => {
            let out = cmd_report(&dir)?;
            println!("{} rows -> {}", out.rows.len(), out.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
