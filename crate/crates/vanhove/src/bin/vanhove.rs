use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vanhove::cli::run() as u8)
}
