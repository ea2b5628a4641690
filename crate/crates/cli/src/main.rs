use clap::Parser;

fn main() {
    let cli = bwr_cli::Cli::parse();
    if let Err(e) = bwr_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
