use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use clbr_core::pipeline::{load_config, run_pipeline, run_stage, Stage};
use clbr_core::Result;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Pretrain,
    Augment,
    Train,
    Eval,
    ExportEmb,
    SampleComplexity,
    /// pretrain, augment, train and eval in sequence
    All,
}

impl StageArg {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Augment => Stage::Augment,
            StageArg::Train => Stage::Train,
            StageArg::Eval => Stage::Eval,
            StageArg::ExportEmb => Stage::ExportEmb,
            StageArg::SampleComplexity => Stage::SampleComplexity,
            StageArg::All => return None,
        })
    }
}

/// Counterfactual bundle-recommendation pipeline.
///
/// Exit codes: 0 success, 1 I/O, 2 configuration, 3 data, 4 numeric failure.
#[derive(Parser, Debug)]
#[command(name = "clbr", version)]
struct Cli {
    stage: StageArg,
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding `threads` (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;

    let report = match cli.stage.stage() {
        None => Some(run_pipeline(&cfg)?),
        Some(stage) => {
            let outcome = run_stage(stage, &cfg)?;
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            if let Some(n) = outcome.sample_complexity {
                println!("{n}");
            }
            outcome.metrics
        }
    };
    if let Some(report) = report {
        for c in &report.cutoffs {
            println!(
                "recall@{}\t{:.6}\nndcg@{}\t{:.6}",
                c.k, c.recall, c.k, c.ndcg
            );
        }
        println!("users\t{}", report.n_users);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
