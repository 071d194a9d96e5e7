//! End-to-end CNN classifier used as the comparison baseline: a small
//! strided conv stack trained from scratch with weighted cross-entropy,
//! augmentation and early stopping on validation loss.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classify::{argmax, class_weights, label_counts};
use crate::error::{Error, Result};
use crate::gan::params::{conv, norm};
use crate::gan::{Bound, ParamSet};
use crate::seed;
use crate::synth::{augment, AugmentConfig, Dataset, LabeledImage};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::translate::INFERENCE_BATCH;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    pub epochs: usize,
    /// Stop after this many consecutive epochs without a new best
    /// validation loss.
    pub patience: usize,
    pub batch_size: usize,
    /// Stratified share of the training split held out for validation.
    pub val_fraction: f64,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    /// Weight the loss with [`class_weights`]; otherwise unweighted.
    pub class_weights: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            channels: vec![16, 32, 64],
            epochs: 60,
            patience: 20,
            batch_size: 32,
            val_fraction: 0.1,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            augment: AugmentConfig::default(),
            class_weights: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("baseline channels must be non-empty and positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("baseline epochs and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        self.augment.validate()
    }
}

/// Conv stack → global average pool → linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub channels: Vec<usize>,
    pub n_classes: usize,
    pub image_size: usize,
    pub params: ParamSet,
}

impl BaselineModel {
    pub fn new(channels: &[usize], n_classes: usize, image_size: usize, init_seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("baseline needs at least 2 classes, got {n_classes}")));
        }
        if channels.is_empty() || image_size >> channels.len() == 0 {
            return Err(Error::Config(format!(
                "{} stride-2 blocks do not fit a {image_size}px image",
                channels.len()
            )));
        }
        let mut rng = seed::rng(init_seed);
        let mut p = ParamSet::new();
        let mut cin = 3;
        for (i, &c) in channels.iter().enumerate() {
            p.add_conv(&format!("conv{i}"), [c, cin, 3, 3], false, &mut rng);
            p.add_norm(&format!("conv{i}.norm"), c);
            cin = c;
        }
        let mut head = ParamSet::new();
        head.add_conv("head", [n_classes, cin, 1, 1], true, &mut rng);
        p.insert("head.w", head.get("head.w").expect("added").clone().reshape([n_classes, cin])?);
        p.insert("head.b", Tensor::zeros([n_classes]));
        Ok(BaselineModel {
            channels: channels.to_vec(),
            n_classes,
            image_size,
            params: p,
        })
    }

    fn logits(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.channels.len() {
            h = conv(tape, p, &format!("conv{i}"), h, 2, 1)?;
            h = norm(tape, p, &format!("conv{i}.norm"), h)?;
            h = tape.relu(h)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        tape.linear(pooled, p.var("head.w")?, Some(p.var("head.b")?))
    }

    /// Softmax probabilities, one row per image.
    pub fn predict_proba(&self, images: &[&LabeledImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false)?;
            let x = tape.constant(Dataset::batch(chunk)?)?;
            let z = self.logits(&mut tape, &p, x)?;
            out.extend(tape.value(z).data().chunks(self.n_classes).map(softmax));
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[&LabeledImage]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(images)?.iter().map(|r| argmax(r)).collect())
    }

    pub fn fingerprint(&self) -> String {
        serde_json::json!({
            "artifact": "baseline",
            "channels": self.channels,
            "n_classes": self.n_classes,
            "image_size": self.image_size,
        })
        .to_string()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.fingerprint());
        for (name, t) in self.params.iter() {
            ck.insert(format!("net.{name}"), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Fp {
            artifact: String,
            channels: Vec<usize>,
            n_classes: usize,
            image_size: usize,
        }
        let fp: Fp = serde_json::from_str(&ck.fingerprint)
            .map_err(|e| Error::format("baseline model", "<stream>", format!("bad fingerprint: {e}")))?;
        if fp.artifact != "baseline" {
            return Err(Error::format("baseline model", "<stream>", format!("artifact is {:?}", fp.artifact)));
        }
        let mut model = BaselineModel::new(&fp.channels, fp.n_classes, fp.image_size, 0)?;
        let loaded = ParamSet::from_map(ck.take_prefixed("net."));
        model.params.check_layout(&loaded, "baseline model")?;
        model.params = loaded;
        Ok(model)
    }
}

fn softmax(z: &[f32]) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let e: Vec<f64> = z.iter().map(|&v| (f64::from(v) - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    /// True when training ended on patience rather than the epoch budget.
    pub early_stopped: bool,
}

impl TrainingLog {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let err = |e: csv::Error| Error::format("CSV", "<csv>", e.to_string());
        for r in &self.epochs {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Splits off `fraction` of every class (at least one image when a class
/// has two or more) as validation data. Order within each part follows the
/// input order.
pub fn stratified_split<'a>(
    images: &[&'a LabeledImage],
    fraction: f64,
    seed: u64,
) -> (Vec<&'a LabeledImage>, Vec<&'a LabeledImage>) {
    let k = images.iter().map(|im| im.label + 1).max().unwrap_or(0);
    let mut rng = seed::rng(seed);
    let mut is_val = vec![false; images.len()];
    for c in 0..k {
        let mut idx: Vec<usize> = (0..images.len()).filter(|&i| images[i].label == c).collect();
        if idx.len() < 2 || fraction <= 0.0 {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_val] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, &im) in images.iter().enumerate() {
        if is_val[i] {
            val.push(im)
        } else {
            train.push(im)
        }
    }
    (train, val)
}

/// Weighted loss and accuracy over `images` without augmentation.
fn evaluate(model: &BaselineModel, images: &[&LabeledImage], weights: &[f64]) -> Result<(f64, f64)> {
    let probs = model.predict_proba(images)?;
    let (mut loss, mut total, mut correct) = (0.0, 0.0, 0);
    for (p, im) in probs.iter().zip(images) {
        let w = weights[im.label];
        loss -= w * p[im.label].max(f64::MIN_POSITIVE).ln();
        total += w;
        correct += usize::from(argmax(p) == im.label);
    }
    Ok((loss / total, correct as f64 / images.len() as f64))
}

/// Trains from scratch, keeping the parameters of the epoch with the lowest
/// validation loss.
pub fn train_baseline(
    train: &[&LabeledImage],
    val: &[&LabeledImage],
    n_classes: usize,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<(BaselineModel, TrainingLog)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::domain("train_baseline", "training and validation splits must be non-empty"));
    }
    let image_size = train[0].pixels.shape()[1];
    let labels: Vec<usize> = train.iter().map(|im| im.label).collect();
    let weights = if cfg.class_weights {
        class_weights(&label_counts(&labels, n_classes))?
    } else {
        vec![1.0; n_classes]
    };
    let mut model = BaselineModel::new(&cfg.channels, n_classes, image_size, seed::derive(seed, "init"))?;
    let mut opt = AdamState::new(cfg.adam);
    let mut rng = seed::rng(seed::derive(seed, "train"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, model.params.clone(), 0);
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut early_stopped = false;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_seen) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let parts = idx
                .iter()
                .map(|&i| {
                    let mut shape = vec![1];
                    shape.extend_from_slice(train[i].pixels.shape());
                    augment(&train[i].pixels, &cfg.augment, &mut rng).reshape(shape)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let sample_w: Vec<f64> = batch_labels.iter().map(|&l| weights[l]).collect();
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true)?;
            let x = tape.constant(Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())?)?;
            let z = model.logits(&mut tape, &p, x)?;
            let loss = tape.softmax_cross_entropy(z, &batch_labels, Some(&sample_w))?;
            let value = f64::from(tape.value(loss).item()?);
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "train_baseline" });
            }
            tape.backward(loss)?;
            model.params.adam_step(&tape, &p, &mut opt, "")?;
            loss_sum += value * idx.len() as f64;
            n_seen += idx.len();
        }
        let (val_loss, val_accuracy) = evaluate(&model, val, &weights)?;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_seen as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }
    model.params = best.1;
    Ok((
        model,
        TrainingLog {
            epochs: log,
            best_epoch: best.2,
            early_stopped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ArtifactRecord, Split};

    fn toy(n: usize, size: usize) -> Vec<LabeledImage> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut rng = seed::rng(i as u64);
                let normal = rand_distr::Normal::new(0.0f32, 0.3).unwrap();
                use rand_distr::Distribution;
                // Class 0 is bright on the left half, class 1 on the top half.
                let pixels = Tensor::from_fn([3, size, size], |j| {
                    let (y, x) = ((j / size) % size, j % size);
                    let bright = if label == 0 { x < size / 2 } else { y < size / 2 };
                    let base = if bright { 0.5 } else { -0.5 };
                    (base + normal.sample(&mut rng)).clamp(-1.0, 1.0)
                });
                LabeledImage {
                    id: i,
                    label,
                    split: Split::Train,
                    pixels,
                    artifacts: ArtifactRecord::default(),
                }
            })
            .collect()
    }

    fn small_cfg() -> BaselineConfig {
        BaselineConfig {
            channels: vec![4, 8],
            epochs: 40,
            batch_size: 4,
            augment: AugmentConfig::none(),
            ..Default::default()
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_start_near_uniform() {
        let data = toy(6, 8);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let model = BaselineModel::new(&[16, 32, 64], 2, 8, 5).unwrap();
        for row in model.predict_proba(&refs).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| (p - 0.5).abs() < 0.2));
        }
    }

    #[test]
    fn memorizes_ten_images() {
        let data = toy(12, 8);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let (train, val) = (&refs[..10], &refs[10..]);
        let cfg = BaselineConfig {
            patience: 1000,
            epochs: 60,
            ..small_cfg()
        };
        let (model, log) = train_baseline(train, val, 2, &cfg, 1).unwrap();
        let pred = model.predict(train).unwrap();
        assert!(pred.iter().zip(train).all(|(&p, im)| p == im.label), "{log:?}");
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let data = toy(12, 8);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let cfg = BaselineConfig {
            patience: 0,
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            ..small_cfg()
        };
        // With a zero learning rate epoch 2 cannot improve on epoch 1.
        let (_, log) = train_baseline(&refs[..8], &refs[8..], 2, &cfg, 3).unwrap();
        assert_eq!(log.epochs.len(), 2);
        assert_eq!(log.best_epoch, 1);
        assert!(log.early_stopped);
    }

    #[test]
    fn kept_parameters_have_minimum_validation_loss() {
        let data = toy(16, 8);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let cfg = BaselineConfig { patience: 3, epochs: 15, ..small_cfg() };
        let (a, log) = train_baseline(&refs[..12], &refs[12..], 2, &cfg, 9).unwrap();
        let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(log.epochs[log.best_epoch - 1].val_loss, min);
        let w = class_weights(&[6, 6]).unwrap();
        assert_eq!(evaluate(&a, &refs[12..], &w).unwrap().0, min);
        let (b, log_b) = train_baseline(&refs[..12], &refs[12..], 2, &cfg, 9).unwrap();
        assert_eq!(log, log_b);
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_class_weights_match_unweighted_training() {
        let data = toy(16, 8);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let cfg = BaselineConfig { epochs: 3, ..small_cfg() };
        let unweighted = BaselineConfig {
            class_weights: false,
            ..cfg.clone()
        };
        let (a, _) = train_baseline(&refs[..12], &refs[12..], 2, &cfg, 4).unwrap();
        let (b, _) = train_baseline(&refs[..12], &refs[12..], 2, &unweighted, 4).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn stratified_split_takes_a_share_of_each_class() {
        let data = toy(40, 4);
        let refs: Vec<&LabeledImage> = data.iter().collect();
        let (train, val) = stratified_split(&refs, 0.1, 1);
        assert_eq!(val.len(), 4);
        assert_eq!(val.iter().filter(|im| im.label == 0).count(), 2);
        assert_eq!(train.len(), 36);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = BaselineModel::new(&[4, 8], 3, 8, 2).unwrap();
        let bytes = m.to_checkpoint().to_bytes().unwrap();
        let back = BaselineModel::from_checkpoint(Checkpoint::read(&bytes[..]).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
