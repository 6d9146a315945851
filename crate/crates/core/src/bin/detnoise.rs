use clap::Parser;

use detnoise::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        let msg = e.to_string().replace('\n', " ");
        eprintln!("detnoise: {msg}");
        std::process::exit(1);
    }
}
