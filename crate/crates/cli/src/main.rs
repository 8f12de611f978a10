use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match flygm_cli::run(std::env::args().collect()) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(h) = e.downcast_ref::<flygm_cli::cli::Help>() {
                print!("{h}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {e:#}");
            ExitCode::from(flygm_cli::exit::code(&e) as u8)
        }
    }
}
