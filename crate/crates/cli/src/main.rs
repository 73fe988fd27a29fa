use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use neuedit_cli::{run, Cli, CliError};

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    match err {
        CliError::Usage(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim().to_string())),
    };
    let args: Vec<String> = std::env::args().skip(2).collect();
    match run(&cli.command, args) {
        Ok(manifest) => {
            println!("{}", serde_json::json!({ "command": manifest.command, "output_hash": manifest.output_hash }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
