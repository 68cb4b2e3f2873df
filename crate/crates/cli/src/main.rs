use std::fs;
use std::process::ExitCode;

use clap::Parser;
use crownseg_cli::args::Cli;
use crownseg_cli::commands::{execute, exit_code, report_path};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error[E_ARG]: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let (report, err) = pool.install(|| execute(&cli.command));

    let json = report.to_json();
    match report_path(&cli.command) {
        Some(path) => {
            if let Err(e) = fs::write(path, &json) {
                eprintln!("error[E_IO]: cannot write report {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{json}"),
    }
    match err {
        Some(e) => {
            eprintln!("error[{}]: {e}", e.id());
            ExitCode::from(exit_code(&e))
        }
        None => ExitCode::SUCCESS,
    }
}
