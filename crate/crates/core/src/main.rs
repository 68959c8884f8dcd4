use clap::Parser;

fn main() {
    std::process::exit(halos::cli::main_with(halos::cli::Cli::parse()));
}
