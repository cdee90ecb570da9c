//! `egnn` command-line tool. Exit codes: 0 success, 1 runtime or
//! verification failure, 2 usage error.

mod args;
mod run;

use clap::Parser;

use args::{Cli, Command};

// The training loop allocates many short-lived embedding matrices; glibc's
// mmap threshold makes each of them a fresh page-faulting mapping.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Train(a) => run::cmd_train(a),
        Command::Trace(a) => run::cmd_trace(a),
        Command::Verify(a) => run::cmd_verify(a),
        Command::Gradcheck(a) => run::cmd_gradcheck(a),
        Command::Synth(a) => run::cmd_synth(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
