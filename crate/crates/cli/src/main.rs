use clap::Parser;
use encodermi::Error;
use encodermi_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        let code = match e {
            Error::InvalidParameter(_) | Error::ConfigMismatch(_) => 2,
            Error::MissingAsset(_) | Error::MissingCheckpoint(_) => 3,
            _ => 1,
        };
        std::process::exit(code);
    }
}
