use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use leakguard::experiment::{self, ExperimentConfig, Overrides, RunManifest};
use leakguard::models::ModelKind;
use leakguard::report::Table;
use leakguard::Result;

#[derive(Parser)]
#[command(
    name = "leakguard",
    version,
    about = "Train, attack and audit attribute-protected clinical classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config, or a JSON run manifest to rerun.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Training seed; repeat for several runs. Overrides the config.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,

    /// Output directory. Overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict train and external to one model kind.
    #[arg(long, value_enum, global = true)]
    model_kind: Option<Kind>,

    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the TRAIN/TEST split and external holdouts.
    GenData,
    /// Cross-validate thresholds, fit and evaluate models per seed.
    Train,
    /// Run the attribute-inference attacks against saved models.
    Attack,
    /// Train on one demographic subgroup and test on its complement.
    Crosstest,
    /// Score saved models on the external holdouts at their training thresholds.
    External,
    /// Re-render report tables from saved manifests.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Base,
    Adv,
    AdvPer,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Base => ModelKind::Base,
            Kind::Adv => ModelKind::Adv,
            Kind::AdvPer => ModelKind::AdvPer,
        }
    }
}

fn print_tables(m: &RunManifest) {
    for (_, t) in experiment::tables(m) {
        println!("{}", Table::to_text(&t));
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seeds: cli.seeds,
        out_dir: cli.out,
        model_kind: cli.model_kind.map(Into::into),
        threads: cli.threads,
    });
    cfg.validate()?;
    experiment::init_threads(cfg.threads);
    match cli.command {
        Cmd::GenData => {
            let s = experiment::cmd_gen_data(&cfg)?;
            for f in &s.files {
                println!(
                    "{:<6} {:>6} rows  prevalence {:.4}  {}",
                    f.name,
                    f.rows,
                    f.prevalence,
                    f.path.display()
                );
            }
        }
        Cmd::Train => print_tables(&experiment::cmd_train(&cfg)?),
        Cmd::Attack => print_tables(&experiment::cmd_attack(&cfg)?),
        Cmd::Crosstest => print_tables(&experiment::cmd_crosstest(&cfg)?),
        Cmd::External => print_tables(&experiment::cmd_external(&cfg)?),
        Cmd::Report => {
            for p in experiment::cmd_report(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("leakguard: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
