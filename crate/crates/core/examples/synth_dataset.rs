//! Generates the confound-skewed fruit set, reports per-class artifact rates
//! and writes a few images as PNG.

use ictd::imageio::write_image_png;
use ictd::synth::{generate_dataset, vignette_metric, Sizes, Split};
use ictd::recipes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::dataset("fruits2-bias")?;
    cfg.sizes = Sizes::PerClass(60);
    let data = generate_dataset(&cfg, 1)?;
    println!("train counts {:?}, test counts {:?}", data.class_counts(Split::Train), data.class_counts(Split::Test));

    for class in 0..data.n_classes {
        let imgs: Vec<_> = data.images.iter().filter(|im| im.label == class).collect();
        let n = imgs.len() as f64;
        let vignetted = imgs.iter().filter(|im| im.artifacts.vignette.is_some()).count() as f64 / n;
        let scalebar = imgs.iter().filter(|im| im.artifacts.scalebar.is_some()).count() as f64 / n;
        let mut metric = 0.0;
        for im in &imgs {
            metric += vignette_metric(&im.pixels)?;
        }
        println!("class {class}: vignette {vignetted:.2}, scalebar {scalebar:.2}, mean vignette metric {:.3}", metric / n);
    }

    let out = std::env::temp_dir().join("ictd_synth_example");
    std::fs::create_dir_all(&out)?;
    for im in data.images.iter().take(4) {
        write_image_png(&out.join(format!("{:03}_class{}.png", im.id, im.label)), &im.pixels)?;
    }
    println!("wrote 4 images to {}", out.display());
    Ok(())
}
