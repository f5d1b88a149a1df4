//! Finite-difference gradient check of every layer and the fused micro
//! model, 100 seeded trials.

use std::time::Instant;

use sentifuse::config::GradCheckConfig;
use sentifuse::gradcheck::run_grad_check;

fn main() -> sentifuse::Result<()> {
    let cfg = GradCheckConfig::default();
    let t = Instant::now();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let summary = run_grad_check(&cfg, seed, &mut |trial, results| {
        for r in results.iter().filter(|r| !(r.max_error < cfg.tolerance)) {
            println!("trial {trial}: {} {:.2e} at {:?} {:?}", r.name, r.max_error, r.worst, r.worst_pair);
        }
    })?;
    for c in &summary.checks {
        println!("{:<20} worst {:.2e} over {} coordinates", c.name, c.max_error, c.coordinates);
        if std::env::var_os("SHOW_WORST").is_some() {
            println!("    at {:?}, analytic and numeric {:?}", c.worst, c.worst_pair);
        }
    }
    println!(
        "{} trials, {} failures, {:.1?}",
        summary.trials,
        summary.failures.len(),
        t.elapsed()
    );
    Ok(())
}
