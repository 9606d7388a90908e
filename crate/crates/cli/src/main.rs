use clap::Parser;

use belstable_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => print!("{msg}"),
        Err(e) => {
            eprintln!("belstable: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
