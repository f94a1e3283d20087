use clap::Parser;
use kgtrade_cli::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("kgtrade: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
