use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("QAC_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    std::process::exit(qac_cli::main_with_args(std::env::args_os()));
}
