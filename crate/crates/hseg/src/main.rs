use std::process::ExitCode;

fn main() -> ExitCode {
    let result = hseg::init_threads().and_then(|()| hseg::cli::run(std::env::args_os()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
