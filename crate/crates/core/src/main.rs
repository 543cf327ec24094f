use clap::Parser;
use ergodic_interval::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
