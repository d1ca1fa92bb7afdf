use clap::Parser;
use countreg_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COUNTREG_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let (outcome, err) = run(&cli);
    if let Some(e) = err {
        eprintln!("{}", e.to_json());
    }
    println!("{}", outcome.status);
    std::process::exit(outcome.exit_code);
}
