use std::io::{IsTerminal, Read};

use serde_json::Value;

fn read_stdin_json() -> Result<Option<Value>, String> {
    let stdin = std::io::stdin();
    if stdin.is_terminal() {
        return Ok(None);
    }
    let mut text = String::new();
    stdin.lock().read_to_string(&mut text).map_err(|e| format!("reading stdin: {e}"))?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    serde_json::from_str(&text).map(Some).map_err(|e| format!("stdin is not JSON: {e}"))
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let stdin = read_stdin_json();
    let quiet = argv.iter().any(|a| a == "--quiet")
        || matches!(&stdin, Ok(Some(v)) if v.get("quiet") == Some(&Value::Bool(true)));
    let mut logger = env_logger::Builder::new();
    logger.target(env_logger::Target::Stderr);
    if quiet {
        logger.filter_level(log::LevelFilter::Off);
    } else {
        logger.filter_level(log::LevelFilter::Info);
        logger.parse_env(env_logger::Env::new().filter("CK_LOG"));
    }
    logger.init();

    let envelope = match stdin {
        Ok(input) => ck_cli::dispatch(&argv, input),
        Err(e) => serde_json::json!({"return": ck_cli::CODE_USAGE, "error": e}),
    };
    let text = ck_core::json::to_canonical_string(&envelope).expect("envelope serializes");
    print!("{text}");
    std::process::exit(ck_cli::exit_code(&envelope));
}
