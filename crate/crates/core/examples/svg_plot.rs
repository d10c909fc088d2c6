//! Write a two-series SVG chart.
//!
//! `cargo run --release --example svg_plot -- [out.svg]`

use std::path::PathBuf;

use diffcascade::harness::plot::{emit_plot, AxesSpec, Series};

fn main() -> diffcascade::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("diffcascade_demo.svg"));
    let xs: Vec<f64> = (1..=40).map(|i| i as f64).collect();
    let series = [
        Series {
            label: "1/n".into(),
            points: xs.iter().map(|n| (*n, 1.0 / n)).collect(),
            line: true,
        },
        Series {
            label: "1/n^2".into(),
            points: xs.iter().map(|n| (*n, 1.0 / (n * n))).collect(),
            line: false,
        },
    ];
    emit_plot(&series, &AxesSpec::new("Error decay", "steps", "error"), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
