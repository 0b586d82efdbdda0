use std::process::ExitCode;

use clap::Parser;

use cat_tool::app::{execute, Cli};

fn main() -> ExitCode {
    match execute(&Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
