//! Binary entry point: parse arguments, dispatch, map errors to exit codes.

use clap::error::ErrorKind;
use clap::Parser;

use lurepot_cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = lurepot_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
