use clap::Parser;

fn main() {
    let cli = misc_cli::Cli::parse();
    if let Err(e) = misc_cli::execute(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
