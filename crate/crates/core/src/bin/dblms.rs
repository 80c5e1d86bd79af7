use std::process::ExitCode;

use clap::Parser;
use dblms::cli::{self, RunManifest};

fn main() -> ExitCode {
    let manifest = RunManifest::parse();
    match cli::run(&manifest) {
        Ok(paths) => {
            for path in paths {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
