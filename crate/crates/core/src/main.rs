use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use novas_core::harness::{inspect_checkpoint, RunConfig, Runner};

#[derive(Parser)]
#[command(name = "novas", version, about = "Gaussian stochastic search as a differentiable layer")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Everything the configured experiment produces: train then evaluate.
    Run(Train),
    /// Train an energy network (experiment = "spen").
    SpenTrain(Train),
    /// Test loss across inner-iteration counts for a trained energy network.
    SpenEvalSweep(Eval),
    /// Energy landscape and argmin trace of a trained energy network.
    SpenLandscape(Eval),
    /// Train the FBSDE controller (experiment = "cartpole" or "portfolio").
    FbsdeTrain(Train),
    /// Roll out a trained FBSDE controller on held-out noise.
    FbsdeEval(Eval),
    /// NOVAS, CEM and gradient descent on the test-function suite.
    Bench(Common),
    /// Print what a checkpoint holds.
    InspectCheckpoint {
        /// Checkpoint sidecar (`.json`).
        path: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set spen.epochs=10`. Repeatable;
    /// applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// No progress output.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    /// Continue from this checkpoint sidecar.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; defaults to the one in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn runner(c: &Common) -> Result<Runner> {
    let cfg = RunConfig::load(&c.config, &c.overrides).with_context(|| format!("loading {}", c.config.display()))?;
    Ok(Runner::new(cfg)?.verbose(!c.quiet))
}

fn checkpoint(r: &Runner, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| r.checkpoint_path())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.verb {
        Verb::Run(t) => runner(&t.common)?.run_all(t.resume.as_deref())?,
        Verb::SpenTrain(t) => {
            let out = runner(&t.common)?.spen_train(t.resume.as_deref())?;
            println!("test_loss {}", out.test_loss);
        }
        Verb::SpenEvalSweep(e) => {
            let r = runner(&e.common)?;
            for (n, loss) in r.spen_eval_sweep(&checkpoint(&r, &e.checkpoint))? {
                println!("{n} {loss}");
            }
        }
        Verb::SpenLandscape(e) => {
            let r = runner(&e.common)?;
            let out = r.spen_landscape(&checkpoint(&r, &e.checkpoint))?;
            println!("argmin_rmse {}", out.trace_rmse);
        }
        Verb::FbsdeTrain(t) => {
            runner(&t.common)?.fbsde_train(t.resume.as_deref())?;
        }
        Verb::FbsdeEval(e) => {
            let r = runner(&e.common)?;
            let report = r.fbsde_eval(&checkpoint(&r, &e.checkpoint))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Verb::Bench(c) => {
            let r = runner(&c)?;
            let rows = r.bench()?;
            for row in rows {
                println!(
                    "{:<11} {:<6} sigma0={:<4} {}/{}",
                    row.function, row.method, row.sigma0, row.successes, row.trials
                );
            }
        }
        Verb::InspectCheckpoint { path } => print!("{}", inspect_checkpoint(Path::new(&path))?),
    }
    Ok(())
}
