//! Runs the pilot pipeline and prints the regression fixture the acceptance
//! suite reads its thresholds from.
//!
//! ```text
//! cargo run --release -p audapt-core --example pilot -- /tmp/pilot > crates/core/tests/fixtures/pilot_run.json
//! ```

use std::path::PathBuf;
use std::time::Instant;

use audapt_core::pipeline::{pilot_config, run_pipeline, PipelineDirs, PipelineSpec};
use serde_json::json;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("audapt-pilot"));
    let cfg = pilot_config();
    let spec = PipelineSpec::default();
    let t0 = Instant::now();
    let out = match run_pipeline(&cfg, &spec, &PipelineDirs::new(&dir)) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("pilot failed: {e}");
            std::process::exit(1);
        }
    };
    let seconds = t0.elapsed().as_secs_f64();
    eprint!("{}", out.comparison.render_text());
    let fixture = json!({
        "config": cfg,
        "spec": spec,
        "rows": out.comparison.rows,
        "thresholds": {
            "synth-environment": 10.0,
            "synth-genre": 10.0,
            "synth-keywords": -2.0,
        },
        "model_hash": out.model_hash,
        "runtime_s": (seconds * 10.0).round() / 10.0,
        "cpu_threads": rayon_threads(),
    });
    println!("{}", serde_json::to_string_pretty(&fixture).unwrap());
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
