use clap::Parser;

fn main() {
    let cli = definetti::cli::Cli::parse();
    std::process::exit(definetti::cli::run(cli));
}
