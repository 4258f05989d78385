use clap::Parser;
use vip_service::ServeArgs;

#[derive(Parser)]
#[command(name = "vip-service", version, about = "Interactive Information Pursuit session service")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_max_level(tracing::Level::INFO).init();
    let cli = Cli::parse();
    if let Err(e) = vip_service::serve(&cli.serve).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
