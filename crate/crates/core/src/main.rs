use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use locselect::exec::Exec;
use locselect::pipeline::{eval, report, simulate, train, ExperimentConfig, Layout, Stage, TrainOptions};
use locselect::Error;

#[derive(Parser)]
#[command(name = "locselect", version, about = "Reference-conditioned target speaker localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Mask,
    Doa,
    DoaUnmasked,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Mask => Stage::Mask,
            StageArg::Doa => Stage::Doa,
            StageArg::DoaUnmasked => Stage::DoaUnmasked,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus, scenes, mixtures and manifests.
    Simulate(Common),
    /// Train one network stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Stop after this epoch, leaving a resumable state file.
        #[arg(long)]
        stop_after_epoch: Option<usize>,
    },
    /// Run inference and baselines on the test split.
    Eval(Common),
    /// Build tables, JSON report and plots from eval outputs.
    Report(Common),
}

fn setup(c: &Common) -> Result<(ExperimentConfig, Layout, Exec), Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?.with_seed(c.seed);
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    let layout = Layout::new(&cfg.output_dir);
    let exec = if c.sequential { Exec::Sequential } else { Exec::Parallel };
    Ok((cfg, layout, exec))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, layout, exec) = setup(&c)?;
            let s = simulate::simulate(&cfg, &layout, exec)?;
            let clips: Vec<String> = s.clips.iter().map(|(k, v)| format!("{}={v}", k.name())).collect();
            println!(
                "simulate: {} utterances, clips {}, max SNR error {:.3e} dB",
                s.utterances,
                clips.join(" "),
                s.max_snr_error_db
            );
        }
        Command::Train {
            common,
            stage,
            stop_after_epoch,
        } => {
            let (cfg, layout, exec) = setup(&common)?;
            let opts = TrainOptions {
                stop_after_epoch,
                progress: true,
            };
            let s = train::train(&cfg, &layout, stage.into(), exec, &opts)?;
            match (s.checkpoint, s.best_epoch) {
                (Some(p), Some(e)) => println!("train {}: wrote {} (epoch {e})", s.stage.name(), p.display()),
                _ => println!("train {}: stopped, state saved", s.stage.name()),
            }
        }
        Command::Eval(c) => {
            let (cfg, layout, exec) = setup(&c)?;
            let s = eval::evaluate(&cfg, &layout, exec)?;
            println!(
                "eval: {} test clips, GCC-PHAT audit {}/{} within bound",
                s.test_clips, s.audit_within_bound, s.audit_clips
            );
        }
        Command::Report(c) => {
            let (cfg, layout, _) = setup(&c)?;
            let r = report::report(&cfg, &layout)?;
            println!("{}", std::fs::read_to_string(report::summary_file(&layout)).unwrap_or_default().trim_end());
            println!(
                "report: MAE better {:?}, ACC better {:?}, ACC gap {:.4} (low SNR) vs {:.4} (high SNR)",
                r.comparisons.mae_better, r.comparisons.acc_better, r.comparisons.acc_gap_low, r.comparisons.acc_gap_high
            );
        }
    }
    Ok(())
}

/// One JSON object on one line, for scripts.
fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
