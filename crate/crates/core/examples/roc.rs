//! ROC curve, trapezoidal AUROC and a full evaluation report for a handful
//! of binary scores, including ties.

use ictd::eval::{auroc, roc_curve, EvalReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.3, 0.2, 0.1];
    let labels = [true, true, false, true, false, true, false, false, true, false];

    for p in roc_curve(&scores, &labels)? {
        println!("threshold {:>5.2}  fpr {:.2}  tpr {:.2}", p.threshold, p.fpr, p.tpr);
    }
    println!("AUROC {:.4}", auroc(&scores, &labels)?);

    let truth: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let predicted: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.5)).collect();
    let per_class: Vec<Vec<f64>> = scores.iter().map(|&s| vec![1.0 - s, s]).collect();
    let report = EvalReport::new(&truth, &predicted, &per_class, Some(&scores), 2)?;
    println!("{}", report.to_json()?);
    Ok(())
}
