use clap::Parser;

use feudal_dm::cli::{run, Cli};

fn main() {
    // clap exits with code 2 on usage errors; runtime failures exit 1.
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
