use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use segma::checkpoint::load_checkpoint;
use segma_cli::args::{Cli, Command, ServeCmd};
use segma_cli::commands::{self, CliError};
use segma_cli::{service, thread_cap};

fn serve(cmd: &ServeCmd) -> Result<(), CliError> {
    let model = load_checkpoint(&cmd.checkpoint)?;
    model.check_dims(None, cmd.latent_dim)?;
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    builder.enable_all();
    if let Some(n) = thread_cap() {
        builder.worker_threads(n);
    }
    let runtime = builder.build().map_err(|e| CliError::Run(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(cmd.addr)
            .await
            .map_err(|e| CliError::Run(format!("bind {}: {e}", cmd.addr)))?;
        eprintln!(
            "serving {} (latent dim {}, {} classes) on http://{}",
            cmd.checkpoint.display(),
            model.latent_dim(),
            model.n_classes(),
            cmd.addr
        );
        axum::serve(listener, service::router(model))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Run(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Train(c) => commands::run_train(c),
        Command::Eval(c) => commands::run_eval(c),
        Command::Sample(c) => commands::run_sample(c),
        Command::Interpolate(c) => commands::run_interpolate(c),
        Command::Transfer(c) => commands::run_transfer(c),
        Command::Sweep(c) => commands::run_sweep(c),
        Command::Serve(c) => serve(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let _ = Cli::command().error(clap::error::ErrorKind::ValueValidation, msg).print();
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
