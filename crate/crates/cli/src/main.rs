use clap::Parser;
use inspex_cli::commands::{run, Cli};
use inspex_cli::error::{CliError, EXIT_OK, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Err(e) = run(cli) {
        let mut shown = e.to_string();
        eprintln!("error: {shown}");
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            let text = s.to_string();
            // wrappers often repeat their source in their own message
            if !shown.contains(&text) {
                eprintln!("  caused by: {text}");
            }
            shown = text;
            src = s.source();
        }
        std::process::exit(CliError::exit_code(&e));
    }
}
