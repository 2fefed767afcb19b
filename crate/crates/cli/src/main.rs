use std::process::ExitCode;

use sketchlab_cli::commands::write_summary;
use sketchlab_cli::{parse_config, run, ParseFailure, EXIT_CHECKS_FAILED, EXIT_RUNTIME};

fn main() -> ExitCode {
    let config = match parse_config(std::env::args_os()) {
        Ok(c) => c,
        Err(ParseFailure::Usage(e)) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    println!("resolved config: {}", serde_json::to_string(&config).expect("config serializes"));

    let code = match run(&config) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            if let Err(e) = write_summary(&config, Some(&outcome), None) {
                eprintln!("error: cannot write summary: {e:#}");
                return ExitCode::from(EXIT_RUNTIME as u8);
            }
            if outcome.passed() { 0 } else { EXIT_CHECKS_FAILED }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let _ = write_summary(&config, None, Some(&format!("{e:#}")));
            EXIT_RUNTIME
        }
    };
    println!("output written to {}", config.output_dir.display());
    ExitCode::from(code as u8)
}
