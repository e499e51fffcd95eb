use clap::Parser;
use petastore::cli::{main_with, Cli};

fn main() {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    match main_with(cli, &mut out) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
