//! Runs a bundled experiment config through the batch harness and prints
//! the summary. Pass a config path to run a different one.

use std::path::PathBuf;

use pgope::harness::{run_config, Suite};
use pgope::Result;

fn main() -> Result<()> {
    let config = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/experiments/deterministic-tree.json")
    });
    let out = std::env::temp_dir().join("pgope-example");
    let report = run_config(&config, Suite::All, &out, Some(1))?;
    print!("{}", std::fs::read_to_string(out.join("summary.txt")).unwrap_or_default());
    println!("reports written to {}", out.display());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
