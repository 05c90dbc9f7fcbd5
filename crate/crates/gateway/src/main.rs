use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use oaas_core::platform::Platform;
use oaas_gateway::cli::{run_client, Cli, Command};
use oaas_gateway::GatewayConfig;
use tracing::info;

async fn run_server(config: Option<&std::path::Path>, bind: Option<std::net::SocketAddr>) -> anyhow::Result<()> {
    let mut cfg = GatewayConfig::load(config)?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .with_context(|| format!("binding {}", cfg.bind))?;
    let platform = Platform::open(cfg.platform_config())?;
    info!(addr = %cfg.bind, "gateway listening");
    oaas_gateway::serve(platform, listener, async {
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
    })
    .await
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Serve { config, bind } = &cli.command {
        tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
            )
            .init();
        return match run_server(config.as_deref(), *bind).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: ServerFailed: {e:#}");
                ExitCode::FAILURE
            }
        };
    }
    ExitCode::from(run_client(&cli).await as u8)
}
