//! Every stage, from teacher training to plots, driven by the bundled
//! quick configuration.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use std::path::PathBuf;

use diffcascade::harness::config::RunConfig;
use diffcascade::harness::stages::{self, RunOptions, Stage};

fn main() -> diffcascade::Result<()> {
    let mut config = RunConfig::from_toml_str(include_str!("../configs/quick.toml"))?;
    config.out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("diffcascade_quick"));
    let out = config.out_dir.clone();
    let opts = RunOptions {
        stage_only: false,
        deterministic: true,
    };
    stages::run(config.clone(), Stage::Plot, opts)?;
    let manifest = stages::run(config, Stage::RunAdaptive, opts)?;
    for (stage, entry) in &manifest.stages {
        println!("{stage}");
        for (path, digest) in &entry.artifacts {
            println!("  {path}  {}", &digest[..12]);
        }
    }
    println!("outputs under {}", out.display());
    Ok(())
}
