use clap::Parser;

fn main() {
    let cli = boxmotion::cli::Cli::parse();
    std::process::exit(boxmotion::cli::run(cli));
}
