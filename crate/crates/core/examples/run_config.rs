//! Prints a run configuration preset as TOML.
//!
//! `cargo run --example run_config -- small > configs/small.toml`

use sentifuse::config::RunConfig;

fn main() {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "default".into());
    let cfg = match preset.as_str() {
        "small" => RunConfig::small(),
        "default" => RunConfig::default(),
        other => {
            eprintln!("unknown preset {other:?}; expected small or default");
            std::process::exit(2);
        }
    };
    print!("{}", cfg.to_toml());
}
