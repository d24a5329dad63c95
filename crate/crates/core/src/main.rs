use clap::error::ErrorKind;
use clap::Parser;
use diracgraph::cli::{finish, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error,validation,{}", first.trim_start_matches("error: "));
            std::process::exit(2);
        }
    };
    let outcome = run(&cli);
    std::process::exit(finish(&cli, outcome));
}
