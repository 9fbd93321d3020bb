use clap::Parser;
use leafgen::cli::{error_json, run, Cli};
use leafgen::PipelineError;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            let err = PipelineError::Usage(e.kind().to_string());
            eprintln!("{}", error_json(&err));
            std::process::exit(err.exit_code());
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    if let Err(e) = run(&cli) {
        log::error!("{e}");
        eprintln!("{}", error_json(&e));
        std::process::exit(e.exit_code());
    }
}
