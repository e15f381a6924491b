//! Computes the precision-recall curve and its area under both
//! conventions for a small scored set.
//!
//! ```text
//! cargo run --example evaluate_prauc
//! ```

use adamel::eval::{self, Metrics, PrMethod};

fn main() -> adamel::Result<()> {
    let scores = [0.95, 0.9, 0.9, 0.7, 0.6, 0.4, 0.3, 0.1];
    let labels = [true, true, false, true, false, false, true, false];

    let curve = eval::prauc(&scores, &labels, PrMethod::AveragePrecision)?;
    eval::write_pr_curve(std::io::stdout(), &curve)?;

    let metrics = Metrics::compute(&scores, &labels, "example".into(), "-".into())?;
    println!("\naverage precision: {:.4}", metrics.prauc_average_precision);
    println!("trapezoid:         {:.4}", metrics.prauc_trapezoid);

    let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    let flat = eval::prauc(&[0.5; 8], &labels, PrMethod::AveragePrecision)?.prauc;
    println!("constant scores:   {flat:.4} (prevalence {prevalence:.4})");
    Ok(())
}
