use std::process::ExitCode;

fn main() -> ExitCode {
    match drivecast::run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", drivecast::error_json(&e));
            ExitCode::from(1)
        }
    }
}
