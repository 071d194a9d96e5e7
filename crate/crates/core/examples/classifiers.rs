//! Fits argmin, logistic, linear-SVM and MLP classifiers on synthetic
//! three-class distance vectors and compares test accuracy.

use ictd::classify::{argmin_model, class_weights, label_counts, Classifier, ClassifierConfig, ClassifierKind};
use ictd::eval::{confusion_matrix, overall_accuracy};
use rand::{Rng, SeedableRng};

/// Each row is small in its own class's column, with noise.
fn rows(n: usize, rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| if i % 5 == 0 { 2 } else { i % 2 }).collect();
    let rows = labels
        .iter()
        .map(|&l| (0..3).map(|j| if j == l { 0.06 } else { 0.12 } + rng.random_range(-0.05..0.05)).collect())
        .collect();
    (rows, labels)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (train, train_labels) = rows(300, &mut rng);
    let (test, test_labels) = rows(200, &mut rng);
    println!("class weights for counts {:?}: {:.3?}", label_counts(&train_labels, 3), class_weights(&label_counts(&train_labels, 3))?);

    let mut models = vec![("argmin".to_string(), argmin_model(3))];
    for kind in [ClassifierKind::Logistic, ClassifierKind::LinearSvm, ClassifierKind::Mlp] {
        let cfg = ClassifierConfig { kind, ..ClassifierConfig::default() };
        models.push((kind.as_str().to_string(), Classifier::fit(&cfg, &train, &train_labels, 3, 1)?));
    }
    for (name, model) in &models {
        let cm = confusion_matrix(&test_labels, &model.predict(&test)?, 3)?;
        println!("{name:>10}: accuracy {:.3}, confusion {cm:?}", overall_accuracy(&cm).unwrap_or(f64::NAN));
    }
    Ok(())
}
