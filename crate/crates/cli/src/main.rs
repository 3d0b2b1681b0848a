use std::process::ExitCode;

use clap::Parser;
use msrnn_cli::{parse_config, run, Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::Usage(first_line(&e.to_string()).to_string())),
    };
    match parse_config(cli).and_then(|cfg| run(&cfg)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("").trim_start_matches("error: ")
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {}", e.one_line());
    ExitCode::from(2)
}
