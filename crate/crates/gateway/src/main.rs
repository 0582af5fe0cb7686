use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use duplex_gateway::cli::{load_config, run_offline, Cli, CliError, Command};
use duplex_gateway::server::serve;

fn serve_blocking(config: Option<std::path::PathBuf>, bind: Option<String>) -> Result<(), CliError> {
    let config = load_config(config.as_deref(), bind)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .map_err(|e| CliError::Runtime(format!("binding {}: {e}", config.bind)))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, config, shutdown).await.map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, bind } => serve_blocking(config, bind).map(|()| String::new()),
        other => run_offline(other),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
