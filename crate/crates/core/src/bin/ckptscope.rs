use std::process::ExitCode;

use clap::Parser;

use ckptscope::cli::{init_threads, run_cli, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| run_cli(&cli));
    match result {
        Ok(record) => {
            println!(
                "{}: wrote {} files (config {})",
                record.analysis,
                record.outputs.len(),
                &record.config_hash[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
