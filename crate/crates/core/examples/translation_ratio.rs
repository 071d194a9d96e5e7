//! Distances to the per-class translations and the two-class translation
//! ratio. The translator here is an untrained CycleGAN; see `pipeline` for
//! a trained one.

use ictd::synth::{generate_dataset, Sizes};
use ictd::train::GanTrainer;
use ictd::translate::{extract_features, translation_ratio};
use ictd::recipes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Worked example: an image 0.05 from its class-A translation and 0.15
    // from its class-B translation leans towards A.
    println!("TR(0.05, 0.15) = {:.3}", translation_ratio(0.05, 0.15)?);

    let mut cfg = recipes::dataset("fruits2")?;
    cfg.sizes = Sizes::PerClass(5);
    let data = generate_dataset(&cfg, 1)?;
    let model = recipes::experiment("fruits2")?.model;
    let trainer = GanTrainer::new(model, data.n_classes, data.image_size, 1)?;

    let images: Vec<_> = data.images.iter().collect();
    let m = extract_features(&images, trainer.translator())?;
    let ratios = m.translation_ratios()?;
    println!("id label  d(A)    d(B)    TR");
    for (i, tr) in ratios.iter().enumerate() {
        println!("{:2} {:5}  {:.4}  {:.4}  {tr:.3}", m.image_ids[i], m.labels[i], m.distances[i][0], m.distances[i][1]);
    }
    Ok(())
}
