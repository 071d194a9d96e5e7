use rand::RngCore;

use super::losses::{adversarial_loss, classification_loss, cycle_loss, identity_loss, LossWeights, Target};
use super::params::Bound;
use super::{check_batch, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LossRecord};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

/// Single conditioned generator plus a discriminator with a K-way class head.
#[derive(Clone, Debug, PartialEq)]
pub struct StarGan {
    pub g: Generator,
    pub d: Discriminator,
}

impl StarGan {
    pub fn n_classes(&self) -> usize {
        self.g.config.n_classes
    }
}

#[derive(Clone, Debug)]
pub struct StarGanOptim {
    pub g: AdamState,
    pub d: AdamState,
}

impl StarGanOptim {
    pub fn new(config: AdamConfig) -> Self {
        StarGanOptim {
            g: AdamState::new(config),
            d: AdamState::new(config),
        }
    }
}

pub fn build_stargan(gcfg: GeneratorConfig, dcfg: DiscriminatorConfig, seed: u64) -> Result<StarGan> {
    let k = gcfg.n_classes;
    if k < 2 {
        return Err(Error::Config(format!("StarGAN needs at least 2 classes, got {k}")));
    }
    if !dcfg.with_class_head || dcfg.n_classes != k {
        return Err(Error::Config(format!("StarGAN discriminator needs a {k}-way class head")));
    }
    if gcfg.image_size != dcfg.image_size {
        return Err(Error::Config("generator and discriminator image sizes differ".into()));
    }
    Ok(StarGan {
        g: Generator::new(gcfg, &mut seed::rng(seed::derive(seed, "g")))?,
        d: Discriminator::new(dcfg, &mut seed::rng(seed::derive(seed, "d")))?,
    })
}

/// Appends `k` constant label planes, one-hot at `target`, to every image.
pub fn condition(images: &Tensor, target: usize, k: usize) -> Result<Tensor> {
    let n = images.shape().first().copied().unwrap_or(0);
    condition_each(images, &vec![target; n], k)
}

/// Like [`condition`] with a separate target label per image.
pub fn condition_each(images: &Tensor, targets: &[usize], k: usize) -> Result<Tensor> {
    const OP: &str = "condition";
    let (n, c, h, w) = crate::tensor::dims4(OP, images.shape())?;
    if targets.len() != n {
        return Err(Error::shape(OP, format!("{} labels for a batch of {n}", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::domain(OP, format!("label {bad} out of range for {k} classes")));
    }
    let plane = h * w;
    let per = c * plane;
    let mut data = Vec::with_capacity(n * (c + k) * plane);
    for (s, &t) in targets.iter().enumerate() {
        data.extend_from_slice(&images.data()[s * per..(s + 1) * per]);
        for j in 0..k {
            let v = if j == t { 1.0 } else { 0.0 };
            data.extend(std::iter::repeat_n(v, plane));
        }
    }
    Tensor::new([n, c + k, h, w], data)
}

/// Label planes for `targets` concatenated onto a tape variable.
fn condition_var(tape: &mut Tape, x: Var, targets: &[usize], k: usize) -> Result<Var> {
    let (n, _, h, w) = crate::tensor::dims4("condition", tape.value(x).shape())?;
    let planes = condition_each(&Tensor::zeros([n, 0, h, w]), targets, k)?;
    let planes = tape.constant(planes)?;
    tape.concat_channels(&[x, planes])
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    f64::from(tape.value(v).data()[0])
}

/// One discriminator update (adversarial + classification on real images)
/// followed by one generator update (adversarial + classification on fakes,
/// reconstruction, identity with each image's own label).
///
/// Record keys: `d_adv`, `d_cls`, `g_adv`, `g_cls`, `g_cyc`, `g_id`. The
/// discriminator step is skipped (entries 0) when both `lambda_adv` and
/// `lambda_cls` are 0.
pub fn train_step_stargan(
    batch: &Tensor,
    true_labels: &[usize],
    target_labels: &[usize],
    models: &mut StarGan,
    opt: &mut StarGanOptim,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<LossRecord> {
    weights.validate()?;
    let k = models.n_classes();
    let n = check_batch("train_step_stargan", batch, models.g.config.image_size)?;
    if true_labels.len() != n || target_labels.len() != n {
        return Err(Error::shape("train_step_stargan", format!("labels do not match batch of {n}")));
    }
    if let Some(&bad) = true_labels.iter().chain(target_labels).find(|&&t| t >= k) {
        return Err(Error::domain("train_step_stargan", format!("label {bad} out of range for {k} classes")));
    }
    let mut record = LossRecord::default();

    // Discriminator step.
    let (mut d_adv, mut d_cls) = (0.0, 0.0);
    if weights.lambda_adv > 0.0 || weights.lambda_cls > 0.0 {
        let mut tape = Tape::new();
        let pd = models.d.params.bind(&mut tape, true)?;
        let real = tape.constant(batch.clone())?;
        let jr = models.d.forward(&mut tape, &pd, real)?;
        let cls = classification_loss(&mut tape, jr.logits.expect("class head"), true_labels)?;
        d_cls = scalar(&tape, cls);
        let mut total = tape.scalar_mul(cls, weights.lambda_cls)?;
        if weights.lambda_adv > 0.0 {
            let fake = {
                let pg = models.g.params.bind(&mut tape, false)?;
                let x = tape.constant(condition_each(batch, target_labels, k)?)?;
                let y = models.g.forward(&mut tape, &pg, x, Some(&mut *rng))?;
                tape.detach(y)?
            };
            let jf = models.d.forward(&mut tape, &pd, fake)?;
            let lr = adversarial_loss(&mut tape, jr.patches, Target::Real)?;
            let lf = adversarial_loss(&mut tape, jf.patches, Target::Fake)?;
            let adv = tape.add(lr, lf)?;
            d_adv = scalar(&tape, adv);
            let adv = tape.scalar_mul(adv, weights.lambda_adv)?;
            total = tape.add(total, adv)?;
        }
        tape.backward(total)?;
        models.d.params.adam_step(&tape, &pd, &mut opt.d, "d.")?;
    }
    record.push("d_adv", d_adv);
    record.push("d_cls", d_cls);

    // Generator step.
    let mut tape = Tape::new();
    let pg = models.g.params.bind(&mut tape, true)?;
    let real = tape.constant(batch.clone())?;
    let identity = weights.lambda_identity > 0.0;
    let (fake, own) = if identity {
        let both = Tensor::concat_batch(&[
            &condition_each(batch, target_labels, k)?,
            &condition_each(batch, true_labels, k)?,
        ])?;
        let x = tape.constant(both)?;
        let y = models.g.forward(&mut tape, &pg, x, Some(&mut *rng))?;
        (tape.slice_batch(y, 0, n)?, Some(tape.slice_batch(y, n, n)?))
    } else {
        let x = tape.constant(condition_each(batch, target_labels, k)?)?;
        (models.g.forward(&mut tape, &pg, x, Some(&mut *rng))?, None)
    };

    let mut total = tape.constant(Tensor::scalar(0.0))?;
    let (mut g_adv, mut g_cls) = (0.0, 0.0);
    if weights.lambda_adv > 0.0 || weights.lambda_cls > 0.0 {
        let pd = models.d.params.bind(&mut tape, false)?;
        let jf = models.d.forward(&mut tape, &pd, fake)?;
        let adv = adversarial_loss(&mut tape, jf.patches, Target::Real)?;
        let cls = classification_loss(&mut tape, jf.logits.expect("class head"), target_labels)?;
        g_adv = scalar(&tape, adv);
        g_cls = scalar(&tape, cls);
        let adv = tape.scalar_mul(adv, weights.lambda_adv)?;
        let cls = tape.scalar_mul(cls, weights.lambda_cls)?;
        total = tape.add(total, adv)?;
        total = tape.add(total, cls)?;
    }
    let g = &models.g;
    let cyc = cycle_loss(&mut tape, real, weights, |t| reconstruct(t, g, &pg, fake, true_labels, rng))?;
    total = tape.add(total, cyc)?;
    let mut g_id = 0.0;
    if let Some(own) = own {
        let id = identity_loss(&mut tape, real, own, weights)?;
        g_id = scalar(&tape, id);
        total = tape.add(total, id)?;
    }
    let g_cyc = scalar(&tape, cyc);
    tape.backward(total)?;
    models.g.params.adam_step(&tape, &pg, &mut opt.g, "g.")?;

    record.push("g_adv", g_adv);
    record.push("g_cls", g_cls);
    record.push("g_cyc", g_cyc);
    record.push("g_id", g_id);
    Ok(record)
}

fn reconstruct(
    tape: &mut Tape,
    g: &Generator,
    p: &Bound,
    fake: Var,
    labels: &[usize],
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let x = condition_var(tape, fake, labels, g.config.n_classes)?;
    g.forward(tape, p, x, Some(rng))
}
