use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msm_emu::config::RunConfig;
use msm_emu::pipeline;
use msm_emu::Error;

#[derive(Parser)]
#[command(name = "msm-emu", version, about = "MSM-informed generative emulation of toy molecular dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of inference runs to generate or evaluate.
    #[arg(long, global = true, default_value_t = 1)]
    runs: usize,

    /// Also score each replica against the others.
    #[arg(long, global = true)]
    oracle: bool,
}

#[derive(Subcommand)]
enum Command {
    Simulate,
    BuildMsm,
    Train,
    Sample,
    Evaluate,
    /// Renders markdown and SVG from report files (default: all under reports/).
    Report { files: Vec<PathBuf> },
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("MSM_EMU_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("MSM_EMU_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    match cli.command {
        Command::Simulate => {
            let m = pipeline::cmd_simulate(&cfg)?;
            println!("wrote {} replicas ({} frames each) to {}", m.files.len(), m.n_frames[0], pipeline::data_dir(&cfg).display());
        }
        Command::BuildMsm => {
            let msm = pipeline::cmd_build_msm(&cfg)?;
            println!(
                "msm: {} macrostates, populations {:?} -> {}",
                msm.n_macro,
                msm.diagnostics.macro_populations,
                pipeline::msm_path(&cfg).display()
            );
        }
        Command::Train => {
            for (mode, log) in pipeline::cmd_train(&cfg)? {
                let last = log.epochs.last();
                println!(
                    "{}: {} epochs, final loss {}",
                    mode.name(),
                    log.epochs.len(),
                    last.map_or("n/a".into(), |e| format!("{:.5}", e.loss))
                );
            }
        }
        Command::Sample => {
            for p in pipeline::cmd_sample(&cfg, cli.runs)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Evaluate => {
            for r in pipeline::cmd_evaluate(&cfg, cli.runs, cli.oracle)? {
                let get = |k: &str| r.mean.get(k).map_or("absent".into(), |v| format!("{v:.4}"));
                println!("{}: mmae {} msm_recovery_jsd {}", r.label, get("mmae"), get("msm_recovery_jsd"));
            }
        }
        Command::Report { files } => {
            let out = pipeline::cmd_report(&cfg, &files)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
