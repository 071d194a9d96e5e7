//! One conditioned StarGAN generator for three cell classes: label planes,
//! a few training steps, and a translation of one image into every class.

use ictd::gan::{build_stargan, condition, train_step_stargan, DiscriminatorConfig, GeneratorConfig, LossWeights, StarGanOptim};
use ictd::synth::{generate_dataset, Dataset, Sizes};
use ictd::tensor::AdamConfig;
use ictd::translate::l1_distance;
use ictd::{recipes, seed};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = recipes::dataset("cells3")?;
    cfg.sizes = Sizes::PerClass(12);
    let data = generate_dataset(&cfg, 2)?;
    let train = data.train();

    let k = data.n_classes;
    let gcfg = GeneratorConfig { base_channels: 8, n_residual_blocks: 2, n_classes: k, ..GeneratorConfig::default() };
    let dcfg = DiscriminatorConfig { base_channels: 8, with_class_head: true, n_classes: k, ..DiscriminatorConfig::default() };
    let mut gan = build_stargan(gcfg, dcfg, 5)?;
    println!("generator input channels: {}", gan.g.config.input_channels());
    let mut opt = StarGanOptim::new(AdamConfig::default());
    let weights = LossWeights::stargan_default();
    let mut rng = seed::rng(4);

    for step in 0..12 {
        let batch: Vec<_> = (0..4).map(|i| train[(4 * step + i) % train.len()]).collect();
        let x = Dataset::batch(&batch)?;
        let labels: Vec<usize> = batch.iter().map(|im| im.label).collect();
        let targets: Vec<usize> = labels.iter().map(|l| (l + 1) % k).collect();
        let rec = train_step_stargan(&x, &labels, &targets, &mut gan, &mut opt, &weights, &mut rng)?;
        if step % 4 == 3 {
            let parts: Vec<String> = rec.iter().map(|(n, v)| format!("{n}={v:.3}")).collect();
            println!("step {:2}: {}", step + 1, parts.join(" "));
        }
    }

    let im = train[0];
    let x = Dataset::batch(&[im])?;
    for target in 0..k {
        let y = gan.g.infer(&condition(&x, target, k)?)?;
        let y = y.reshape(im.pixels.shape().to_vec())?;
        let mark = if target == im.label { " (own class)" } else { "" };
        println!("into class {target}: L1 {:.4}{mark}", l1_distance(&im.pixels, &y)?);
    }
    Ok(())
}
