use clap::Parser;
use feedsim::cli::{self, Cli, Command};
use feedsim::config::ServiceConfig;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => cli::run(&a),
        Command::AcquireTrain(a) => cli::acquire_train(&a),
        Command::Serve(a) => {
            let cfg = ServiceConfig::from_env()?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(cli::serve(&a, cfg))
        }
    }
}
