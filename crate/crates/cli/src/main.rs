use clap::Parser;
use rccl_cli::{exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match rccl_cli::run(&cli) {
        Ok(m) => {
            for w in &m.warnings {
                log::info!("{w}");
            }
        }
        Err(e) => {
            eprintln!("rccl {}: {e}", cli.command.name());
            std::process::exit(exit_code(&e));
        }
    }
}
