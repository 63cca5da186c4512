use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    match metatrain::cli::main_with(std::env::args_os()) {
        Ok((out, err)) => {
            if !out.is_empty() {
                let _ = writeln!(std::io::stdout(), "{out}");
            }
            if !err.is_empty() {
                eprintln!("{err}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code as u8)
        }
    }
}
