use clap::Parser;
use mecm_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MECM_LOG", "warn")).init();
    let cli = Cli::parse();
    let invocation = std::env::args().collect::<Vec<_>>().join(" ");
    match run(&cli, &invocation) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
