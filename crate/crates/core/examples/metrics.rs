//! Accuracy, per-class precision / recall / F1 and macro-F1 from labels.

use sentifuse::train::{compute_metrics, f_beta, multi_run_average};

fn main() -> sentifuse::Result<()> {
    let golds = [1, 0, 0, 0, 2, 2, 1, 2];
    let preds = [1, 1, 0, 0, 2, 1, 1, 2];
    let r = compute_metrics(&preds, &golds, 3)?;
    println!("accuracy {:.4}, macro-F1 {:.4}", r.accuracy, r.macro_f1);
    for (k, c) in r.per_class.iter().enumerate() {
        println!(
            "class {k}: precision {:.3} recall {:.3} f1 {:.3} support {}",
            c.precision, c.recall, c.f1, c.support
        );
    }
    println!("confusion (rows gold, columns predicted): {:?}", r.confusion);

    println!("F2 at precision 0.5, recall 1.0: {:.4}", f_beta(0.5, 1.0, 2.0));
    let other = compute_metrics(&golds, &golds, 3)?;
    let avg = multi_run_average(&[r, other])?;
    println!("two-run mean accuracy {:.4}", avg.accuracy);
    Ok(())
}
