//! Builds an evaluation report from per-sample records, shows the
//! self-audit, and renders the error-histogram / accuracy-curve figure
//! through the `plot` command. Output goes to
//! `target/example_out/evaluate_and_plot/`.
//!
//! ```text
//! cargo run --example evaluate_and_plot
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use poseforge::train::{EvalRecord, EvalReport};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example_out")
        .join(name);
    fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn main() -> poseforge::Result<()> {
    let out = out_dir("evaluate_and_plot");

    // Synthesize a plausible error distribution: most predictions close,
    // a tail of large misses, and a distance metric for each sample.
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let records: Vec<EvalRecord> = (0..200)
        .map(|i| {
            let error_deg = if rng.gen_bool(0.75) {
                rng.gen_range(0.0..25.0)
            } else {
                rng.gen_range(25.0..180.0)
            };
            EvalRecord {
                sample_id: format!("sample_{i:03}"),
                error_deg,
                add_frac: Some(error_deg / 180.0 * 0.3),
            }
        })
        .collect();

    let report = EvalReport::from_records("demo", records)?.with_config_sha256("example");
    report.audit()?;
    println!(
        "{} samples  acc@30deg {:.3}  median {:.2} deg  add@0.1d {:.3}",
        report.count,
        report.aggregate.acc_pi6,
        report.aggregate.mederr_deg,
        report.aggregate.add_accuracy.unwrap()
    );

    let report_path = out.join("report.json");
    report.save(&report_path)?;

    // Reports loaded from disk are re-audited; tampered aggregates fail.
    let loaded = EvalReport::load(&report_path)?;
    assert_eq!(loaded.aggregate, report.aggregate);

    let svg_path = out.join("report.svg");
    let code = poseforge::cli::run([
        "poseforge",
        "plot",
        "--report",
        report_path.to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "plot command failed");
    println!("figure written to {}", svg_path.display());
    Ok(())
}
