//! Prints the fully resolved configuration as TOML on stdout and its
//! SHA-256 on stderr. With a path argument, the file is layered over the
//! built-in defaults first — handy for checking what a run would actually
//! use:
//!
//! ```text
//! cargo run --example show_config [-- path/to/config.toml]
//! ```

use std::path::PathBuf;

use poseforge::config::GlobalConfig;

fn main() -> poseforge::Result<()> {
    let cfg = match std::env::args_os().nth(1) {
        Some(path) => GlobalConfig::load(&PathBuf::from(path))?,
        None => GlobalConfig::default(),
    };
    cfg.validate()?;
    print!("{}", cfg.to_toml());
    eprintln!("config_sha256 = {}", cfg.sha256());
    Ok(())
}
