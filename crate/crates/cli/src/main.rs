use clap::Parser;
use haggle_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprint!("{e}");
        if !e.to_string().ends_with('\n') {
            eprintln!();
        }
        std::process::exit(e.exit_code());
    }
}
