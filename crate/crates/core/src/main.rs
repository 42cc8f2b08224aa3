use clap::Parser;

fn main() {
    let cli = voltrack::cli::Cli::parse();
    if let Err(e) = voltrack::cli::execute(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
