use clap::Parser;
use nephroseg::commands::{run, Cli};

fn main() {
    if let Some(n) = std::env::var("NEPHROSEG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not cap threads: {e}");
        }
    }
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error [{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}
