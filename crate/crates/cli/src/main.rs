use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soundmat_cli::train_eval::{self, TrainEvalOptions};
use soundmat_cli::{config, scenario, write_json, CliError};
use soundmat_server::ServerConfig;

/// Interactive sound-to-action classifier: server and offline tools.
#[derive(Parser)]
#[command(name = "soundmat", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the session server until interrupted.
    Serve {
        /// TCP address for length-prefixed device/UI connections.
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
        /// Address for the WebSocket endpoint (`/ws`).
        #[arg(long)]
        ws_bind: Option<SocketAddr>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a labelled WAV corpus and report holdout accuracy.
    TrainEval {
        /// Directory with one sub-directory of WAV files per action name.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        holdout_frac: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Drive the simulated device through a JSON script.
    Scenario {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOUNDMAT_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("soundmat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Serve { bind, ws_bind, config } => serve(ServerConfig {
            bind,
            ws_bind,
            hub: config::load(config.as_deref())?,
        }),
        Cmd::TrainEval {
            data_dir,
            seed,
            holdout_frac,
            out,
            model_out,
            config,
        } => {
            let output = train_eval::run(&TrainEvalOptions {
                data_dir,
                seed,
                holdout_frac,
                config: config::load(config.as_deref())?,
            })?;
            write_json(&out, &output.report)?;
            if let Some(path) = model_out {
                std::fs::write(&path, output.model.to_json())
                    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            }
            match output.report.accuracy {
                Some(acc) => println!("accuracy {acc:.4} on {} holdout clips", output.report.n_holdout),
                None => println!("no holdout clips; trained on {}", output.report.n_train),
            }
            Ok(())
        }
        Cmd::Scenario { script, out } => {
            let script = scenario::load(&script)?;
            match scenario::run(&script) {
                Ok(report) => {
                    write_json(&out, &report)?;
                    println!("{} steps, {} loops", report.steps.len(), report.loops.len());
                    Ok(())
                }
                Err((report, err)) => {
                    write_json(&out, &report)?;
                    Err(err)
                }
            }
        }
    }
}

fn serve(config: ServerConfig) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let handle = soundmat_server::serve(config).await.map_err(|e| match e {
            soundmat_server::ServerError::Config(e) => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        })?;
        println!("listening tcp={}", handle.tcp_addr);
        if let Some(ws) = handle.ws_addr {
            println!("listening ws=ws://{ws}/ws");
        }
        tokio::signal::ctrl_c().await.map_err(|e| CliError::Runtime(e.to_string()))?;
        log::info!("shutting down");
        handle.shutdown().await;
        Ok(())
    })
}
