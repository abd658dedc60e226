use clap::Parser;
use nrm_stream::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("nrm-stream: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
