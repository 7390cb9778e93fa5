mod args;
mod manifest;
mod run;

use std::process::ExitCode;

use clap::Parser;
use latent_events::par::{init_workers, Exec};
use latent_events::{Error, Result};

use args::{Cli, Command};
use run::Context;

fn init_logging(level: Option<&str>) {
    let mut builder = match level {
        Some(l) => {
            let mut b = env_logger::Builder::new();
            b.parse_filters(l);
            b
        }
        None => env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")),
    };
    builder.format_timestamp(None).target(env_logger::Target::Stderr).init();
}

fn load_file(path: &std::path::Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = cli.global.config.as_deref().map(load_file).transpose()?;
    let from_file = |key: &str| file.as_ref().and_then(|f| f.get(key)).and_then(|v| v.as_u64());
    let seed = cli.global.seed.or_else(|| from_file("seed")).unwrap_or(0);
    let workers = cli.global.workers.or_else(|| from_file("workers").map(|w| w as usize)).unwrap_or(0);
    init_workers(workers);
    let ctx = Context {
        seed,
        out_dir: cli.global.out_dir.clone().unwrap_or_else(|| ".".into()),
        exec: if workers == 1 { Exec::Sequential } else { Exec::Parallel },
        file,
    };
    log::debug!("{} with seed {seed}, {workers} workers", cli.command.name());
    match &cli.command {
        Command::Gen(a) => run::gen(&ctx, a),
        Command::Train(a) => run::train(&ctx, a),
        Command::Eval(a) => run::eval(&ctx, a),
        Command::Klbound(a) => run::klbound(&ctx, a),
        Command::Graph(a) => run::graph(&ctx, a),
        Command::Stability(a) => run::stability(&ctx, a),
        Command::PlotData(a) => run::plot_data(&ctx, a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help
    let cli = Cli::parse();
    init_logging(cli.global.log_level.as_deref());
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}
