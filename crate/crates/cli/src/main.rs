use std::process::ExitCode;

use clap::Parser;
use sdi_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("sdi: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
