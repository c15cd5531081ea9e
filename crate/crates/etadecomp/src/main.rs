use clap::Parser;

fn main() {
    let cli = etadecomp::cli::Cli::parse();
    std::process::exit(etadecomp::cli::run(cli));
}
