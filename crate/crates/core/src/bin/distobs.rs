use clap::Parser;
use distobs::cli::{run, Cli};

fn main() {
    let code = run(Cli::parse());
    std::process::exit(code.code());
}
