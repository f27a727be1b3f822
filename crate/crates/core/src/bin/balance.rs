use clap::Parser;
use humanoid_balance::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("balance: {e}");
        std::process::exit(e.exit_code());
    }
}
