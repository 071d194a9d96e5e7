use rand::RngCore;

use super::losses::{adversarial_loss, cycle_loss, identity_loss, LossWeights, Target};
use super::params::{Bound, ParamSet};
use super::{check_batch, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LossRecord};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

/// Two-domain CycleGAN. Class A is class 0 and class B is class 1;
/// `g_ab` translates into class B, `g_ba` into class A.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleGan {
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
}

/// One optimizer for both generators and one for both discriminators.
#[derive(Clone, Debug)]
pub struct CycleGanOptim {
    pub g: AdamState,
    pub d: AdamState,
}

impl CycleGanOptim {
    pub fn new(config: AdamConfig) -> Self {
        CycleGanOptim {
            g: AdamState::new(config),
            d: AdamState::new(config),
        }
    }
}

pub fn build_cyclegan(gcfg: GeneratorConfig, dcfg: DiscriminatorConfig, seed: u64) -> Result<CycleGan> {
    if gcfg.n_classes != 1 {
        return Err(Error::Config("CycleGAN generators are unconditioned (n_classes = 1)".into()));
    }
    if dcfg.with_class_head {
        return Err(Error::Config("CycleGAN discriminators have no class head".into()));
    }
    if gcfg.image_size != dcfg.image_size {
        return Err(Error::Config("generator and discriminator image sizes differ".into()));
    }
    let rng = |name: &str| seed::rng(seed::derive(seed, name));
    Ok(CycleGan {
        g_ab: Generator::new(gcfg, &mut rng("g_ab"))?,
        g_ba: Generator::new(gcfg, &mut rng("g_ba"))?,
        d_a: Discriminator::new(dcfg, &mut rng("d_a"))?,
        d_b: Discriminator::new(dcfg, &mut rng("d_b"))?,
    })
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    f64::from(tape.value(v).data()[0])
}

/// One generator update followed by one update of each discriminator.
///
/// Record keys: `g_adv_a`, `g_adv_b`, `g_cyc`, `g_id`, `g_total`, `d_a`,
/// `d_b`. With `lambda_adv = 0` the discriminators are neither evaluated nor
/// updated and their entries are 0.
pub fn train_step_cyclegan(
    batch_a: &Tensor,
    batch_b: &Tensor,
    models: &mut CycleGan,
    opt: &mut CycleGanOptim,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<LossRecord> {
    weights.validate()?;
    let size = models.g_ab.config.image_size;
    let na = check_batch("train_step_cyclegan", batch_a, size)?;
    let nb = check_batch("train_step_cyclegan", batch_b, size)?;
    let adversarial = weights.lambda_adv > 0.0;
    let identity = weights.lambda_identity > 0.0;

    // Generator step.
    let mut tape = Tape::new();
    let p_ab = models.g_ab.params.bind(&mut tape, true)?;
    let p_ba = models.g_ba.params.bind(&mut tape, true)?;
    let real_a = tape.constant(batch_a.clone())?;
    let real_b = tape.constant(batch_b.clone())?;

    // The identity pass shares a forward call with the translation pass;
    // instance norm is per sample so batching does not couple them.
    let (fake_b, idt_b) = if identity {
        let both = Tensor::concat_batch(&[batch_a, batch_b])?;
        let x = tape.constant(both)?;
        let y = models.g_ab.forward(&mut tape, &p_ab, x, Some(&mut *rng))?;
        (tape.slice_batch(y, 0, na)?, Some(tape.slice_batch(y, na, nb)?))
    } else {
        (models.g_ab.forward(&mut tape, &p_ab, real_a, Some(&mut *rng))?, None)
    };
    let (fake_a, idt_a) = if identity {
        let both = Tensor::concat_batch(&[batch_b, batch_a])?;
        let x = tape.constant(both)?;
        let y = models.g_ba.forward(&mut tape, &p_ba, x, Some(&mut *rng))?;
        (tape.slice_batch(y, 0, nb)?, Some(tape.slice_batch(y, nb, na)?))
    } else {
        (models.g_ba.forward(&mut tape, &p_ba, real_b, Some(&mut *rng))?, None)
    };

    let mut record = LossRecord::default();
    let mut total = tape.constant(Tensor::scalar(0.0))?;
    let (mut g_adv_a, mut g_adv_b) = (0.0, 0.0);
    if adversarial {
        let pd_a = models.d_a.params.bind(&mut tape, false)?;
        let pd_b = models.d_b.params.bind(&mut tape, false)?;
        let ja = models.d_a.forward(&mut tape, &pd_a, fake_a)?;
        let la = adversarial_loss(&mut tape, ja.patches, Target::Real)?;
        let jb = models.d_b.forward(&mut tape, &pd_b, fake_b)?;
        let lb = adversarial_loss(&mut tape, jb.patches, Target::Real)?;
        g_adv_a = scalar(&tape, la);
        g_adv_b = scalar(&tape, lb);
        let adv = tape.add(la, lb)?;
        let adv = tape.scalar_mul(adv, weights.lambda_adv)?;
        total = tape.add(total, adv)?;
    }

    let g_ab = &models.g_ab;
    let g_ba = &models.g_ba;
    let cyc_a = cycle_loss(&mut tape, real_a, weights, |t| g_ba.forward(t, &p_ba, fake_b, Some(&mut *rng)))?;
    let cyc_b = cycle_loss(&mut tape, real_b, weights, |t| g_ab.forward(t, &p_ab, fake_a, Some(&mut *rng)))?;
    let cyc = tape.add(cyc_a, cyc_b)?;
    total = tape.add(total, cyc)?;

    let mut g_id = 0.0;
    if let (Some(ia), Some(ib)) = (idt_a, idt_b) {
        let la = identity_loss(&mut tape, real_a, ia, weights)?;
        let lb = identity_loss(&mut tape, real_b, ib, weights)?;
        let id = tape.add(la, lb)?;
        g_id = scalar(&tape, id);
        total = tape.add(total, id)?;
    }

    let g_total = scalar(&tape, total);
    tape.backward(total)?;
    ParamSet::adam_step_joint(
        &mut [
            (&mut models.g_ab.params, &p_ab, "g_ab."),
            (&mut models.g_ba.params, &p_ba, "g_ba."),
        ],
        &tape,
        &mut opt.g,
    )?;
    record.push("g_adv_a", g_adv_a);
    record.push("g_adv_b", g_adv_b);
    record.push("g_cyc", scalar(&tape, cyc));
    record.push("g_id", g_id);
    record.push("g_total", g_total);

    // Discriminator step on the fakes produced above.
    let (mut d_a, mut d_b) = (0.0, 0.0);
    if adversarial {
        let fake_a = tape.value(fake_a).clone();
        let fake_b = tape.value(fake_b).clone();
        let mut dt = Tape::new();
        let pd_a = models.d_a.params.bind(&mut dt, true)?;
        let pd_b = models.d_b.params.bind(&mut dt, true)?;
        let la = discriminator_loss(&mut dt, &models.d_a, &pd_a, batch_a, &fake_a)?;
        let lb = discriminator_loss(&mut dt, &models.d_b, &pd_b, batch_b, &fake_b)?;
        d_a = scalar(&dt, la);
        d_b = scalar(&dt, lb);
        let both = dt.add(la, lb)?;
        let both = dt.scalar_mul(both, weights.lambda_adv)?;
        dt.backward(both)?;
        ParamSet::adam_step_joint(
            &mut [
                (&mut models.d_a.params, &pd_a, "d_a."),
                (&mut models.d_b.params, &pd_b, "d_b."),
            ],
            &dt,
            &mut opt.d,
        )?;
    }
    record.push("d_a", d_a);
    record.push("d_b", d_b);
    Ok(record)
}

/// `½ · (LS(D(real), 1) + LS(D(fake), 0))`.
fn discriminator_loss(
    tape: &mut Tape,
    d: &Discriminator,
    p: &Bound,
    real: &Tensor,
    fake: &Tensor,
) -> Result<Var> {
    let real = tape.constant(real.clone())?;
    let fake = tape.constant(fake.clone())?;
    let jr = d.forward(tape, p, real)?;
    let jf = d.forward(tape, p, fake)?;
    let lr = adversarial_loss(tape, jr.patches, Target::Real)?;
    let lf = adversarial_loss(tape, jf.patches, Target::Fake)?;
    let sum = tape.add(lr, lf)?;
    tape.scalar_mul(sum, 0.5)
}
