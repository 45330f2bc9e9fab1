use clap::Parser;
use refband::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
