use clap::Parser;

fn main() {
    std::process::exit(isda_cli::run(isda_cli::Cli::parse()));
}
