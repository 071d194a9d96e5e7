//! Trains the supervised CNN baseline on a small three-class cell set with a
//! stratified validation split and early stopping.

use ictd::baseline::{stratified_split, train_baseline, BaselineConfig};
use ictd::eval::{confusion_matrix, overall_accuracy};
use ictd::synth::{generate_dataset, Sizes};
use ictd::recipes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::dataset("cells3")?;
    cfg.sizes = Sizes::PerClass(40);
    let data = generate_dataset(&cfg, 1)?;
    let bcfg = BaselineConfig { channels: vec![8, 16], epochs: 8, patience: 4, batch_size: 16, ..BaselineConfig::default() };
    let (train, val) = stratified_split(&data.train(), bcfg.val_fraction, 2);

    let (model, log) = train_baseline(&train, &val, data.n_classes, &bcfg, 3)?;
    for e in &log.epochs {
        println!("epoch {:2}: train loss {:.3}, val loss {:.3}, val acc {:.2}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    }
    println!("kept epoch {} (early stop: {})", log.best_epoch, log.early_stopped);

    let test = data.test();
    let truth: Vec<usize> = test.iter().map(|im| im.label).collect();
    let cm = confusion_matrix(&truth, &model.predict(&test)?, data.n_classes)?;
    println!("test accuracy {:.3}", overall_accuracy(&cm).unwrap_or(f64::NAN));
    Ok(())
}
