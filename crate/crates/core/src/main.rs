use std::panic;
use std::process::ExitCode;

use ccmamba::cli::{error_json, main_with_args, EXIT_INTERNAL};

fn main() -> ExitCode {
    panic::set_hook(Box::new(|info| {
        let message = match info.payload().downcast_ref::<&str>() {
            Some(s) => s.to_string(),
            None => info.payload().downcast_ref::<String>().cloned().unwrap_or_else(|| "panic".into()),
        };
        let at = info.location().map(|l| format!(" at {}:{}", l.file(), l.line())).unwrap_or_default();
        eprintln!("{}", error_json("internal", &format!("{message}{at}"), EXIT_INTERNAL));
    }));
    let code = panic::catch_unwind(|| main_with_args(std::env::args_os())).unwrap_or(EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
