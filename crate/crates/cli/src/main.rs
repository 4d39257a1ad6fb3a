use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = hetsgd_cli::Cli::parse();
    let env_out = std::env::var_os("HETSGD_OUT").map(Into::into);
    match hetsgd_cli::run(cli, env_out) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("hetsgd: {n} error(s), see the output files");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("hetsgd: {e:#}");
            ExitCode::FAILURE
        }
    }
}
