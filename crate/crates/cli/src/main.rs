use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hifi_cli::{exit_code, run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "hifi", version, about = "Detect and classify coexisting RF signals in spectrograms")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a scene dataset with a train/val/test manifest.
    Generate(Common),
    /// Train a detector on a generated dataset.
    Train(Common),
    /// Score a checkpoint (or stored predictions) on a split.
    Eval(Common),
    /// Write detections and annotated spectrograms.
    Infer(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace a non-empty dataset directory.
    #[arg(long)]
    overwrite: bool,
    /// Write only the manifest (for datasets too large to materialize).
    #[arg(long)]
    plan_only: bool,
    /// Continue training from `run_dir/last.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Train on a single scene.
    #[arg(long)]
    overfit: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, common) = match cli.command {
        Cmd::Generate(c) => (Command::Generate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Infer(c) => (Command::Infer, c),
    };
    let mut overrides = common.set;
    for (on, key) in [
        (common.overwrite, "overwrite"),
        (common.plan_only, "plan_only"),
        (common.resume, "resume"),
        (common.overfit, "overfit"),
    ] {
        if on {
            overrides.push(format!("{key}=true"));
        }
    }
    let result = RunConfig::resolve(command, common.config.as_deref(), &overrides)
        .and_then(|cfg| run(&cfg, &mut std::io::stdout()));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
