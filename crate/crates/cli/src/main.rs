use clap::Parser;

fn main() {
    let cli = adaabc_cli::Cli::parse();
    if let Err(e) = adaabc_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
