use std::net::{Ipv4Addr, SocketAddr};

use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use circuit_hpo_service::{router, RunConfig};

fn report(summary: &circuit_hpo::session::RunSummary) {
    match &summary.incumbent {
        Some(inc) => println!(
            "{} trials; best score {} at iteration {}: {}",
            summary.trials,
            inc.score,
            inc.iteration,
            serde_json::to_string(&inc.config).unwrap_or_default()
        ),
        None => println!("{} trials; no successful evaluation", summary.trials),
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let config = RunConfig::parse();
    let session = config.session()?;

    let Some(port) = config.serve else {
        let (summary, _) = tokio::task::spawn_blocking(move || session.run()).await??;
        report(&summary);
        return Ok(());
    };

    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "serving control API");
    let app = router(session.monitor());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });

    let (summary, _) = tokio::task::spawn_blocking(move || session.run()).await??;
    report(&summary);
    tracing::info!("run completed; still serving status until interrupted");
    tokio::select! {
        r = server => r??,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}
