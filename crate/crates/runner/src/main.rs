use std::process::ExitCode;

fn main() -> ExitCode {
    let code = eee_runner::app::run_cli(
        std::env::args_os(),
        |k| std::env::var(k).ok(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    ExitCode::from(code)
}
