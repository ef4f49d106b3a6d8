//! The whole pipeline through the library API: collect, train and select
//! into a temporary output directory, then print the report summary.
//!
//! ```text
//! cargo run --release --example run_pipeline [config.toml]
//! ```
//!
//! Without an argument a reduced planted-feature run is used so the example
//! finishes in seconds; pass a config file for a full run.

use genfs::dataset::SyntheticSpec;
use genfs::pipeline::{inspect, RunConfig, Workspace};

fn main() {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path).unwrap_or_else(|e| panic!("{e}")),
        None => {
            let mut cfg = RunConfig::default();
            cfg.data.synthetic = Some(SyntheticSpec::new(3, 12, 400, 0.1, 1));
            cfg.collect.epochs = 100;
            cfg.train.epochs = 4;
            cfg.train.n_shuffles = 5;
            cfg.search.top_k = 8;
            cfg.report.random_control = true;
            cfg
        }
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let ws = Workspace::new(cfg, dir.path()).and_then(|ws| Ok(ws.verbose(true)));
    let report = match ws.and_then(|ws| ws.pipeline()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };
    print!("{}", inspect(dir.path().join("report.json")).expect("report readable"));
    println!("stage seconds: {:?}", report.timings);
}
