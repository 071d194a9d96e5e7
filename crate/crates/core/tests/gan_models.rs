use ictd::gan::{
    build_cyclegan, build_stargan, condition, train_step_cyclegan, train_step_stargan, CycleGanOptim,
    DiscriminatorConfig, GeneratorConfig, LossWeights, Reduction, StarGanOptim,
};
use ictd::recipes;
use ictd::seed;
use ictd::synth::{generate_dataset, Dataset, Sizes};
use ictd::tensor::{AdamConfig, Tape, Tensor};

fn gen_cfg(image_size: usize, base: usize, n_classes: usize) -> GeneratorConfig {
    GeneratorConfig {
        image_size,
        base_channels: base,
        n_residual_blocks: 1,
        n_classes,
        ..GeneratorConfig::default()
    }
}

fn disc_cfg(image_size: usize, base: usize, n_classes: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        image_size,
        base_channels: base,
        n_downsamples: 2,
        with_class_head: n_classes > 1,
        n_classes,
    }
}

fn images(n: usize, size: usize, salt: u32) -> Tensor {
    Tensor::from_fn([n, 3, size, size], |i| (((i as u32).wrapping_mul(2654435761) ^ salt) % 2001) as f32 / 1000.0 - 1.0)
}

#[test]
fn cyclegan_generator_preserves_shape_and_stays_in_open_interval() {
    let gan = build_cyclegan(GeneratorConfig::default(), DiscriminatorConfig::default(), 3).unwrap();
    let x = images(1, 32, 1);
    let y = gan.g_ab.infer(&x).unwrap();
    assert_eq!(y.shape(), &[1, 3, 32, 32]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn same_seed_builds_identical_networks() {
    let a = build_cyclegan(gen_cfg(16, 4, 1), disc_cfg(16, 4, 1), 7).unwrap();
    let b = build_cyclegan(gen_cfg(16, 4, 1), disc_cfg(16, 4, 1), 7).unwrap();
    let c = build_cyclegan(gen_cfg(16, 4, 1), disc_cfg(16, 4, 1), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a.g_ab, a.g_ba);

    let s = build_stargan(gen_cfg(16, 4, 3), disc_cfg(16, 4, 3), 7).unwrap();
    assert_eq!(s, build_stargan(gen_cfg(16, 4, 3), disc_cfg(16, 4, 3), 7).unwrap());
}

#[test]
fn discriminator_returns_a_patch_map() {
    let gan = build_cyclegan(GeneratorConfig::default(), DiscriminatorConfig::default(), 0).unwrap();
    assert_eq!(gan.d_a.config.patch_extent(), 4);
    let mut tape = Tape::new();
    let p = gan.d_a.params.bind(&mut tape, false).unwrap();
    let x = tape.constant(images(1, 32, 2)).unwrap();
    let j = gan.d_a.forward(&mut tape, &p, x).unwrap();
    assert_eq!(tape.value(j.patches).shape(), &[1, 1, 4, 4]);
    assert!(j.logits.is_none());
}

#[test]
fn stargan_conditions_on_label_planes() {
    let gan = build_stargan(gen_cfg(32, 8, 3), disc_cfg(32, 8, 3), 1).unwrap();
    assert_eq!(gan.g.config.input_channels(), 6);
    assert!(build_stargan(gen_cfg(32, 8, 6), disc_cfg(32, 8, 6), 1).is_ok());
    assert!(build_stargan(gen_cfg(32, 8, 1), disc_cfg(32, 8, 1), 1).is_err());

    let x = images(2, 32, 3);
    let c0 = condition(&x, 0, 3).unwrap();
    let c2 = condition(&x, 2, 3).unwrap();
    assert_eq!(c0.shape(), &[2, 6, 32, 32]);
    let plane = 32 * 32;
    for (i, (a, b)) in c0.data().iter().zip(c2.data()).enumerate() {
        // Image channels are copied unchanged; only the label planes differ.
        if i % (6 * plane) < 3 * plane {
            assert_eq!(a, b);
        }
    }
    assert_ne!(c0, c2);
    assert!(condition(&x, 3, 3).is_err());

    let y = gan.g.infer(&c2).unwrap();
    assert_eq!(y.shape(), &[2, 3, 32, 32]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
}

fn frozen() -> AdamConfig {
    AdamConfig { lr: 0.0, ..AdamConfig::default() }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut rng = seed::rng(0);
    let mut gan = build_cyclegan(gen_cfg(16, 4, 1), disc_cfg(16, 4, 1), 2).unwrap();
    let before = gan.clone();
    let mut opt = CycleGanOptim::new(frozen());
    let rec = train_step_cyclegan(&images(2, 16, 4), &images(2, 16, 5), &mut gan, &mut opt,
        &LossWeights::cyclegan_default(), &mut rng).unwrap();
    assert_eq!(gan, before);
    let names: Vec<_> = rec.names().collect();
    assert_eq!(names, ["g_adv_a", "g_adv_b", "g_cyc", "g_id", "g_total", "d_a", "d_b"]);
    assert!(rec.all_finite());

    let mut star = build_stargan(gen_cfg(16, 4, 3), disc_cfg(16, 4, 3), 2).unwrap();
    let before = star.clone();
    let mut opt = StarGanOptim::new(frozen());
    let rec = train_step_stargan(&images(3, 16, 6), &[0, 1, 2], &[1, 2, 0], &mut star, &mut opt,
        &LossWeights::stargan_default(), &mut rng).unwrap();
    assert_eq!(star, before);
    let names: Vec<_> = rec.names().collect();
    assert_eq!(names, ["d_adv", "d_cls", "g_adv", "g_cls", "g_cyc", "g_id"]);
    assert!(rec.all_finite());
}

#[test]
fn train_steps_reject_bad_labels_and_shapes() {
    let mut rng = seed::rng(0);
    let mut star = build_stargan(gen_cfg(16, 4, 3), disc_cfg(16, 4, 3), 2).unwrap();
    let mut opt = StarGanOptim::new(AdamConfig::default());
    let w = LossWeights::stargan_default();
    assert!(train_step_stargan(&images(2, 16, 1), &[0, 3], &[1, 1], &mut star, &mut opt, &w, &mut rng).is_err());
    assert!(train_step_stargan(&images(2, 16, 1), &[0], &[1], &mut star, &mut opt, &w, &mut rng).is_err());

    let mut gan = build_cyclegan(gen_cfg(16, 4, 1), disc_cfg(16, 4, 1), 2).unwrap();
    let mut opt = CycleGanOptim::new(AdamConfig::default());
    let wrong = images(1, 8, 1);
    assert!(train_step_cyclegan(&wrong, &images(1, 16, 1), &mut gan, &mut opt, &w, &mut rng).is_err());
}

/// A small version of the two-class fruit set at 16×16.
fn small_data(recipe: &str) -> Dataset {
    let mut cfg = recipes::dataset(recipe).unwrap();
    cfg.image_size = 16;
    cfg.sizes = Sizes::PerClass(40);
    generate_dataset(&cfg, 4).unwrap()
}

fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let w = &values[range];
    w.iter().sum::<f64>() / w.len() as f64
}

#[test]
fn identity_loss_falls_over_training() {
    let data = small_data("fruits2");
    let by_class: Vec<Vec<_>> = (0..2).map(|c| data.train().into_iter().filter(|im| im.label == c).collect()).collect();
    let weights = LossWeights {
        lambda_identity: 5.0,
        lambda_cycle: 0.0,
        reduction: Reduction::Mean,
        ..LossWeights::cyclegan_default()
    };
    let mut gan = build_cyclegan(gen_cfg(16, 8, 1), disc_cfg(16, 8, 1), 1).unwrap();
    let mut opt = CycleGanOptim::new(AdamConfig::default());
    let mut rng = seed::rng(11);
    let mut g_id = Vec::new();
    for step in 0..500 {
        let a = Dataset::batch(&[by_class[0][step % by_class[0].len()]]).unwrap();
        let b = Dataset::batch(&[by_class[1][(step * 7) % by_class[1].len()]]).unwrap();
        let rec = train_step_cyclegan(&a, &b, &mut gan, &mut opt, &weights, &mut rng).unwrap();
        assert!(rec.all_finite(), "step {step}: {rec:?}");
        g_id.push(rec.get("g_id").unwrap());
    }
    let (early, late) = (window_mean(&g_id, 0..50), window_mean(&g_id, 450..500));
    assert!(late < early, "identity loss {early} -> {late}");
}

#[test]
fn stargan_identity_loss_falls_over_training() {
    let data = small_data("cells3");
    let train = data.train();
    let mut gan = build_stargan(gen_cfg(16, 8, 3), disc_cfg(16, 8, 3), 1).unwrap();
    let mut opt = StarGanOptim::new(AdamConfig::default());
    let weights = LossWeights::stargan_default();
    let mut rng = seed::rng(12);
    let mut g_id = Vec::new();
    for step in 0..500 {
        let im = train[(step * 13) % train.len()];
        let batch = Dataset::batch(&[im]).unwrap();
        let target = (im.label + 1 + step % 2) % 3;
        let rec = train_step_stargan(&batch, &[im.label], &[target], &mut gan, &mut opt, &weights, &mut rng).unwrap();
        assert!(rec.all_finite(), "step {step}: {rec:?}");
        g_id.push(rec.get("g_id").unwrap());
    }
    let (early, late) = (window_mean(&g_id, 0..50), window_mean(&g_id, 450..500));
    assert!(late < early, "identity loss {early} -> {late}");
}
