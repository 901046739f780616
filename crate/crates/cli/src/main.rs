use clap::Parser;

fn main() {
    let cli = stars_cli::commands::Cli::parse();
    if let Err(e) = stars_cli::commands::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
