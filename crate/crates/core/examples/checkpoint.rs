//! Saves a GAN trainer mid-run, restores it, and shows the resumed run ends
//! bit-identical to an uninterrupted one.

use ictd::checkpoint::Checkpoint;
use ictd::synth::{generate_dataset, Sizes};
use ictd::train::{GanTrainer, TrainPool};
use ictd::recipes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::experiment("fruits2")?;
    cfg.dataset.sizes = Sizes::PerClass(6);
    cfg.dataset.image_size = 16;
    cfg.model.generator.base_channels = 4;
    cfg.model.discriminator.base_channels = 4;
    cfg.model.discriminator.n_downsamples = 2;
    let data = generate_dataset(&cfg.dataset, 1)?;
    let pool = TrainPool::new(data.train(), data.n_classes)?;
    let (init_seed, train_seed) = (10, 11);

    let mut straight = GanTrainer::new(cfg.model.clone(), data.n_classes, data.image_size, init_seed)?;
    for _ in 0..6 {
        straight.step(&pool, train_seed)?;
    }

    let mut first = GanTrainer::new(cfg.model.clone(), data.n_classes, data.image_size, init_seed)?;
    for _ in 0..3 {
        first.step(&pool, train_seed)?;
    }
    let path = std::env::temp_dir().join("ictd_checkpoint_example.ictd");
    first.to_checkpoint()?.save(&path)?;
    println!("saved {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let ck = Checkpoint::load(&path)?;
    let mut resumed = GanTrainer::from_checkpoint(cfg.model.clone(), data.n_classes, data.image_size, ck)?;
    while resumed.iteration < 6 {
        resumed.step(&pool, train_seed)?;
    }
    let same = resumed.to_checkpoint()?.to_bytes()? == straight.to_checkpoint()?.to_bytes()?;
    println!("resumed at iteration 3, continued to 6: identical to uninterrupted run = {same}");
    std::fs::remove_file(&path)?;
    Ok(())
}
