use clap::Parser;

fn main() {
    let cli = armacell_cli::Cli::parse();
    let result = armacell_cli::init_threads().and_then(|()| armacell_cli::run(&cli));
    if let Err(e) = result {
        eprintln!("armacell {}: {e}", cli.command.name());
        std::process::exit(e.exit_code());
    }
}
