use std::io::Write;

use clap::Parser;
use esbilr::cli::{run, Cli, EXIT_INTERNAL};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let mut out = String::new();
    let code = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli, &mut out))) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => EXIT_INTERNAL,
    };
    let _ = std::io::stdout().write_all(out.as_bytes());
    std::process::exit(code);
}
