//! Trains a small CycleGAN between the two fruit classes for a few steps and
//! prints the loss record.

use ictd::gan::{build_cyclegan, train_step_cyclegan, CycleGanOptim, DiscriminatorConfig, GeneratorConfig, LossWeights, Reduction};
use ictd::synth::{generate_dataset, Dataset, Sizes};
use ictd::tensor::AdamConfig;
use ictd::{recipes, seed};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::dataset("fruits2")?;
    cfg.sizes = Sizes::PerClass(20);
    let data = generate_dataset(&cfg, 1)?;
    let train = data.train();
    let (a, b): (Vec<_>, Vec<_>) = train.iter().partition(|im| im.label == 0);

    let gcfg = GeneratorConfig { base_channels: 8, n_residual_blocks: 2, ..GeneratorConfig::default() };
    let dcfg = DiscriminatorConfig { base_channels: 8, ..DiscriminatorConfig::default() };
    let mut gan = build_cyclegan(gcfg, dcfg, 7)?;
    let mut opt = CycleGanOptim::new(AdamConfig::default());
    // Identity loss only, no cycle loss, errors averaged over pixels.
    let weights = LossWeights { lambda_cycle: 0.0, reduction: Reduction::Mean, ..LossWeights::cyclegan_default() };
    let mut rng = seed::rng(3);

    for step in 0..20 {
        let xa = Dataset::batch(&[a[step % a.len()]])?;
        let xb = Dataset::batch(&[b[step % b.len()]])?;
        let rec = train_step_cyclegan(&xa, &xb, &mut gan, &mut opt, &weights, &mut rng)?;
        if step % 5 == 4 {
            let parts: Vec<String> = rec.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
            println!("step {:2}: {}", step + 1, parts.join(" "));
        }
    }
    let y = gan.g_ab.infer(&Dataset::batch(&[a[0]])?)?;
    println!("translated apple into class B: shape {:?}", y.shape());
    Ok(())
}
