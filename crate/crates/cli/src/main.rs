use clap::Parser;
use hrsglab::{run_cli, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(summary) => print!("{summary}"),
        Err(e) => {
            eprintln!("hrsglab: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
