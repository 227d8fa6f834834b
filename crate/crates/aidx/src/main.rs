use clap::Parser;

fn main() {
    let cli = aidx::cli::Cli::parse();
    match aidx::cli::run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_validation() { 2 } else { 3 });
        }
    }
}
