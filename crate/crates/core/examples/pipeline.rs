//! The full workflow on a shrunken `fruits2`: generate data, train the
//! CycleGAN, extract translation distances, classify and evaluate.
//!
//! Pass an output directory as the first argument to keep the artifacts.

use ictd::experiment;
use ictd::recipes;
use ictd::synth::Sizes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::experiment("fruits2")?;
    cfg.dataset.sizes = Sizes::PerClass(40);
    cfg.model.iterations = 150;
    cfg.model.checkpoint_every = 0;
    cfg.model.generator.base_channels = 8;
    cfg.model.discriminator.base_channels = 8;

    let out = match std::env::args().nth(1) {
        Some(dir) => std::path::PathBuf::from(dir),
        None => std::env::temp_dir().join("ictd_pipeline_example"),
    };
    experiment::prepare_out(&out, true)?;
    let run = experiment::run_pipeline(&cfg, &out)?;

    let test = run.distances.filter(|id| run.data.images[id].split == ictd::synth::Split::Test);
    for class in 0..test.n_classes {
        let means: Vec<String> = (0..test.n_classes)
            .map(|j| format!("{:.4}", test.column_mean(j, class).unwrap_or(f64::NAN)))
            .collect();
        println!("true class {class}: mean distance to each class translation [{}]", means.join(", "));
    }
    let r = &run.classify.report;
    println!("test AUROC {:?}, accuracy {:?}, confusion {:?}", r.auroc, r.overall_accuracy, r.confusion_matrix);
    println!("artifacts in {}", out.display());
    Ok(())
}
