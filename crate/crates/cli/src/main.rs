use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Single-threaded kernels keep reductions, and so every table, reproducible.
    tch::set_num_threads(1);
    let cli = oneshot_cli::Cli::parse();
    if let Err(e) = oneshot_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
