use std::process::ExitCode;

use clap::Parser;
use octa_cli::{init_logging, run, set_jobs, Cli};

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help / --version
    let cli = Cli::parse();
    init_logging(cli.log_level);
    let result = cli.jobs.map_or(Ok(()), set_jobs).and_then(|()| run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
