//! Cross-checks every analytic gradient in the autodiff engine against
//! central finite differences, one case per operator plus the fused losses,
//! and prints the worst relative error for each.
//!
//! ```text
//! cargo run --example gradcheck_all
//! ```

use poseforge::gradcheck::run_gradcheck;

fn main() -> poseforge::Result<()> {
    let report = run_gradcheck(0);
    println!(
        "epsilon {:.0e}  tolerance {:.0e}",
        report.epsilon, report.tolerance
    );
    println!("{:<28} {:>7} {:>12}  result", "case", "coords", "max rel err");
    for case in &report.cases {
        println!(
            "{:<28} {:>7} {:>12.3e}  {}",
            case.name,
            case.coords_checked,
            case.max_rel_err,
            if case.pass { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} cases, {} coordinates checked, all pass: {}",
        report.cases.len(),
        report.total_coords(),
        report.all_pass()
    );
    assert!(report.all_pass(), "gradient check failed");
    Ok(())
}
