use std::process::ExitCode;

use clap::Parser;
use lvm_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LVM_LOG", "warn")).init();
    let result = Cli::parse()
        .resolve()
        .and_then(|config| run(&config, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
