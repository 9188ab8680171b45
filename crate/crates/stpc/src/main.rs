use std::io;

use clap::Parser;

use stpc::cli::{self, Cli};
use stpc::error::Error;

fn main() {
    cli::configure_threads();
    let parsed = Cli::parse();
    if let Err(err) = cli::run(parsed) {
        // A reader closing stdout early (`stpc ... | head`) is deliberate
        // truncation by the consumer, not a failure worth reporting.
        if let Error::Io(e) = &err {
            if e.kind() == io::ErrorKind::BrokenPipe {
                return;
            }
        }
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
