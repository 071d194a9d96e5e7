//! Classifiers over translation-distance features, plus the class-imbalance
//! helpers (class weights and a class-balancing sampler).

use rand::Rng;
use rand_distr::{Distribution, Normal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor};

/// Index of the smallest distance; ties go to the lowest index.
pub fn argmin_classify(row: &[f64]) -> Result<usize> {
    if row.is_empty() {
        return Err(Error::domain("argmin_classify", "empty row"));
    }
    if row.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("argmin_classify", "NaN in distance row"));
    }
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `w_i = (1 / c_i) · (Σ_j c_j / 2)`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::domain("class_weights", format!("counts must be positive, got {counts:?}")));
    }
    let half = counts.iter().sum::<usize>() as f64 / 2.0;
    Ok(counts.iter().map(|&c| half / c as f64).collect())
}

/// Per-class image counts of `labels`.
pub fn label_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        if l < n_classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Samples item indices with replacement, each item weighted by the inverse
/// size of its class, so every class is drawn equally often.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    labels: Vec<usize>,
    index: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("weighted_sampler", "empty dataset"));
        }
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let counts = label_counts(labels, k);
        let weights: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::domain("weighted_sampler", e.to_string()))?;
        Ok(WeightedSampler {
            labels: labels.to_vec(),
            index,
        })
    }

    /// A dataset laid out class by class with the given counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::domain("weighted_sampler", format!("counts must be positive, got {counts:?}")));
        }
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        Self::from_labels(&labels)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.index.sample(rng)
    }

    pub fn label(&self, item: usize) -> usize {
        self.labels[item]
    }

    /// Endless stream of item indices.
    pub fn iter<'a, R: Rng>(&'a self, rng: &'a mut R) -> impl Iterator<Item = usize> + 'a {
        std::iter::repeat_with(move || self.sample(rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Argmin,
    LinearSvm,
    Logistic,
    Mlp,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Argmin => "argmin",
            ClassifierKind::LinearSvm => "linear_svm",
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

/// How class imbalance is compensated when fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imbalance {
    None,
    /// Inverse-frequency weights `1 / c_i`.
    SampleWeights,
    /// [`class_weights`].
    ClassWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// SVM regularisation: the L2 penalty has strength `1 / C`.
    pub c: f64,
    /// Full-batch optimisation steps.
    pub iterations: usize,
    /// Step size; unset picks a per-kind default (SVM 0.5, logistic 1.0,
    /// MLP Adam 0.01).
    pub learning_rate: Option<f64>,
    pub hidden: usize,
    pub imbalance: Imbalance,
    /// Optional per-class multipliers applied on top of the imbalance
    /// weights, e.g. `[1, 3]` for a 3× penalty on class 1.
    pub weight_multipliers: Vec<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Logistic,
            c: 1.0,
            iterations: 2000,
            learning_rate: None,
            hidden: 16,
            imbalance: Imbalance::ClassWeights,
            weight_multipliers: Vec::new(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("classifier c must be positive, got {}", self.c)));
        }
        if self.learning_rate.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("classifier learning_rate must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("classifier hidden size must be positive".into()));
        }
        if self.weight_multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config("weight_multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.kind {
            ClassifierKind::LinearSvm => 0.5,
            ClassifierKind::Mlp => 0.01,
            _ => 1.0,
        })
    }

    /// Per-class loss weights for the given training labels.
    pub fn weights_for(&self, labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
        let counts = label_counts(labels, n_classes);
        let mut w = match self.imbalance {
            Imbalance::None => vec![1.0; n_classes],
            Imbalance::ClassWeights => class_weights(&counts)?,
            Imbalance::SampleWeights => {
                if counts.contains(&0) {
                    return Err(Error::domain("class weights", format!("a class has no samples: {counts:?}")));
                }
                counts.iter().map(|&c| 1.0 / c as f64).collect()
            }
        };
        if !self.weight_multipliers.is_empty() {
            if self.weight_multipliers.len() != n_classes {
                return Err(Error::Config(format!(
                    "{} weight multipliers for {n_classes} classes",
                    self.weight_multipliers.len()
                )));
            }
            for (w, m) in w.iter_mut().zip(&self.weight_multipliers) {
                *w *= m;
            }
        }
        Ok(w)
    }
}

/// Per-column z-scoring with training statistics. Constant columns map to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Self {
        let f = features.first().map_or(0, Vec::len);
        let n = features.len().max(1) as f64;
        let mean: Vec<f64> = (0..f).map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..f)
            .map(|j| {
                let sd = (features.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                // A constant column can leave rounding residue in the mean.
                if sd > 1e-9 * mean[j].abs().max(1e-300) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }.rounded()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    /// Parameters are kept at `f32` precision so a saved model predicts
    /// exactly like the in-memory one.
    fn rounded(mut self) -> Self {
        round_all(&mut self.mean);
        round_all(&mut self.scale);
        self
    }
}

fn round_all(v: &mut [f64]) {
    for x in v {
        *x = f64::from(*x as f32);
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Params {
    None,
    /// `K × F` weights (row-major) and `K` biases.
    Linear { w: Vec<f64>, b: Vec<f64> },
    /// Hidden layer `H × F`, output layer `K × H`.
    Mlp { w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>, hidden: usize },
}

/// A fitted distance classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub kind: ClassifierKind,
    pub n_classes: usize,
    pub n_features: usize,
    pub class_weights: Vec<f64>,
    standardizer: Option<Standardizer>,
    params: Params,
}

fn check_training(op: &'static str, features: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::shape(op, format!("{} rows but {} labels", features.len(), labels.len())));
    }
    if features.len() < n_classes || n_classes < 2 {
        return Err(Error::domain(op, format!("need N ≥ K ≥ 2, got N = {}, K = {n_classes}", features.len())));
    }
    let f = features[0].len();
    if f == 0 || features.iter().any(|r| r.len() != f) {
        return Err(Error::shape(op, "feature rows must share a positive width"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain(op, "features must be finite"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::domain(op, format!("label {bad} out of range for {n_classes} classes")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::domain(op, "labels contain a single class"));
    }
    Ok(f)
}

fn check_weights(op: &'static str, weights: &[f64], n_classes: usize) -> Result<()> {
    if weights.len() != n_classes || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::domain(op, format!("need {n_classes} positive class weights, got {weights:?}")));
    }
    Ok(())
}

/// The stateless smallest-distance classifier.
pub fn argmin_model(n_classes: usize) -> Classifier {
    Classifier {
        kind: ClassifierKind::Argmin,
        n_classes,
        n_features: n_classes,
        class_weights: vec![1.0; n_classes],
        standardizer: None,
        params: Params::None,
    }
}

/// One-vs-rest linear SVM: per class, minimises
/// `‖w‖² / (2·C·N) + Σᵢ sᵢ·max(0, 1 − yᵢ(w·xᵢ + b)) / N` by full-batch
/// subgradient descent with step `lr / √t`, keeping the best iterate.
pub fn fit_linear_svm(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    c: f64,
    class_weights: &[f64],
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    const OP: &str = "fit_linear_svm";
    let f = check_training(OP, features, labels, n_classes)?;
    check_weights(OP, class_weights, n_classes)?;
    let std = Standardizer::fit(features);
    let x: Vec<Vec<f64>> = features.iter().map(|r| std.apply(r)).collect();
    let n = x.len() as f64;
    let reg = 1.0 / (c * n);
    let mut w_all = vec![0.0; n_classes * f];
    let mut b_all = vec![0.0; n_classes];
    for k in 0..n_classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let s: Vec<f64> = labels.iter().map(|&l| class_weights[l]).collect();
        let objective = |w: &[f64], b: f64| {
            let hinge: f64 = x
                .iter()
                .zip(&y)
                .zip(&s)
                .map(|((xi, &yi), &si)| si * (1.0 - yi * (dot(w, xi) + b)).max(0.0))
                .sum();
            0.5 * reg * dot(w, w) + hinge / n
        };
        let (mut w, mut b) = (vec![0.0; f], 0.0);
        let (mut best_w, mut best_b, mut best) = (w.clone(), b, objective(&w, b));
        for t in 1..=cfg.iterations {
            let mut gw: Vec<f64> = w.iter().map(|&v| reg * v).collect();
            let mut gb = 0.0;
            for ((xi, &yi), &si) in x.iter().zip(&y).zip(&s) {
                if yi * (dot(&w, xi) + b) < 1.0 {
                    for (g, &v) in gw.iter_mut().zip(xi) {
                        *g -= si * yi * v / n;
                    }
                    gb -= si * yi / n;
                }
            }
            let step = cfg.step_size() / (t as f64).sqrt();
            for (v, g) in w.iter_mut().zip(&gw) {
                *v -= step * g;
            }
            b -= step * gb;
            let obj = objective(&w, b);
            if obj < best {
                best = obj;
                best_w.clone_from(&w);
                best_b = b;
            }
        }
        w_all[k * f..(k + 1) * f].copy_from_slice(&best_w);
        b_all[k] = best_b;
    }
    round_all(&mut w_all);
    round_all(&mut b_all);
    Ok(Classifier {
        kind: ClassifierKind::LinearSvm,
        n_classes,
        n_features: f,
        class_weights: class_weights.to_vec(),
        standardizer: Some(std),
        params: Params::Linear { w: w_all, b: b_all },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample loss weights from class weights.
fn sample_weights(labels: &[usize], class_weights: &[f64]) -> Vec<f64> {
    labels.iter().map(|&l| class_weights[l]).collect()
}

/// Multinomial logistic regression (linear layer + softmax) trained by
/// full-batch gradient descent on class-weighted cross-entropy.
pub fn fit_logistic(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    class_weights: &[f64],
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    const OP: &str = "fit_logistic";
    let f = check_training(OP, features, labels, n_classes)?;
    check_weights(OP, class_weights, n_classes)?;
    let std = Standardizer::fit(features);
    let x = standardized_tensor(&std, features)?;
    let weights = sample_weights(labels, class_weights);
    let mut w = Tensor::<f64>::zeros([n_classes, f]);
    let mut b = Tensor::<f64>::zeros([n_classes]);
    for _ in 0..cfg.iterations {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone())?;
        let wv = tape.param(w.clone())?;
        let bv = tape.param(b.clone())?;
        let z = tape.linear(xv, wv, Some(bv))?;
        let loss = tape.softmax_cross_entropy(z, labels, Some(&weights))?;
        tape.backward(loss)?;
        let gw = tape.grad(wv).expect("trainable");
        let gb = tape.grad(bv).expect("trainable");
        let lr = cfg.step_size();
        for (p, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *p -= lr * g;
        }
        for (p, g) in b.data_mut().iter_mut().zip(gb.data()) {
            *p -= lr * g;
        }
    }
    let mut w = w.into_data();
    let mut b = b.into_data();
    round_all(&mut w);
    round_all(&mut b);
    Ok(Classifier {
        kind: ClassifierKind::Logistic,
        n_classes,
        n_features: f,
        class_weights: class_weights.to_vec(),
        standardizer: Some(std),
        params: Params::Linear { w, b },
    })
}

fn standardized_tensor(std: &Standardizer, features: &[Vec<f64>]) -> Result<Tensor<f64>> {
    let f = std.mean.len();
    let data: Vec<f64> = features.iter().flat_map(|r| std.apply(r)).collect();
    Tensor::new([features.len(), f], data)
}

/// One-hidden-layer ReLU network trained with Adam on class-weighted
/// cross-entropy. Initial weights are drawn from `seed`.
pub fn fit_mlp(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    hidden: usize,
    class_weights: &[f64],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    const OP: &str = "fit_mlp";
    let f = check_training(OP, features, labels, n_classes)?;
    check_weights(OP, class_weights, n_classes)?;
    if hidden == 0 {
        return Err(Error::domain(OP, "hidden size must be positive"));
    }
    let std = Standardizer::fit(features);
    let x = standardized_tensor(&std, features)?;
    let weights = sample_weights(labels, class_weights);
    let mut rng = seed::rng(seed);
    let mut init = |rows: usize, cols: usize| {
        let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
        Tensor::<f64>::from_fn([rows, cols], |_| normal.sample(&mut rng))
    };
    let mut params = [
        ("w1", init(hidden, f)),
        ("b1", Tensor::zeros([hidden])),
        ("w2", init(n_classes, hidden)),
        ("b2", Tensor::zeros([n_classes])),
    ];
    let mut adam = AdamState::<f64>::new(AdamConfig {
        lr: cfg.step_size(),
        beta1: 0.9,
        ..AdamConfig::default()
    });
    for _ in 0..cfg.iterations {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone())?;
        let vars = params
            .iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let h = tape.linear(xv, vars[0], Some(vars[1]))?;
        let h = tape.relu(h)?;
        let z = tape.linear(h, vars[2], Some(vars[3]))?;
        let loss = tape.softmax_cross_entropy(z, labels, Some(&weights))?;
        tape.backward(loss)?;
        let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v).expect("trainable")).collect();
        adam.step(params.iter_mut().zip(&grads).map(|((name, p), g)| (*name, p, g)))?;
    }
    let mut take = |i: usize| {
        let mut v = std::mem::replace(&mut params[i].1, Tensor::zeros([0])).into_data();
        round_all(&mut v);
        v
    };
    let (w1, b1, w2, b2) = (take(0), take(1), take(2), take(3));
    Ok(Classifier {
        kind: ClassifierKind::Mlp,
        n_classes,
        n_features: f,
        class_weights: class_weights.to_vec(),
        standardizer: Some(std),
        params: Params::Mlp { w1, b1, w2, b2, hidden },
    })
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(k, &bk)| bk + dot(&w[k * x.len()..(k + 1) * x.len()], x))
        .collect()
}

impl Classifier {
    /// Fits the configured kind with weights from the configured imbalance
    /// mode. `seed` only matters for the MLP.
    pub fn fit(
        cfg: &ClassifierConfig,
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        seed: u64,
    ) -> Result<Classifier> {
        cfg.validate()?;
        if cfg.kind == ClassifierKind::Argmin {
            return Ok(argmin_model(n_classes));
        }
        let weights = cfg.weights_for(labels, n_classes)?;
        match cfg.kind {
            ClassifierKind::LinearSvm => fit_linear_svm(features, labels, n_classes, cfg.c, &weights, cfg),
            ClassifierKind::Logistic => fit_logistic(features, labels, n_classes, &weights, cfg),
            ClassifierKind::Mlp => fit_mlp(features, labels, n_classes, cfg.hidden, &weights, cfg, seed),
            ClassifierKind::Argmin => unreachable!(),
        }
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::shape(
                "predict",
                format!("row has {} features, model expects {}", row.len(), self.n_features),
            ));
        }
        Ok(())
    }

    /// Per-class scores for one row; the predicted class is their argmax.
    /// Argmin: negated distances. SVM: one-vs-rest decision values.
    /// Logistic and MLP: softmax probabilities.
    pub fn scores(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        let x = match &self.standardizer {
            Some(s) => s.apply(row),
            None => row.to_vec(),
        };
        Ok(match &self.params {
            Params::None => x.iter().map(|v| -v).collect(),
            Params::Linear { w, b } => {
                let z = affine(w, b, &x);
                if self.kind == ClassifierKind::Logistic {
                    softmax(&z)
                } else {
                    z
                }
            }
            Params::Mlp { w1, b1, w2, b2, .. } => {
                let h: Vec<f64> = affine(w1, b1, &x).into_iter().map(|v| v.max(0.0)).collect();
                softmax(&affine(w2, b2, &h))
            }
        })
    }

    pub fn predict_one(&self, row: &[f64]) -> Result<usize> {
        if self.kind == ClassifierKind::Argmin {
            self.check_row(row)?;
            return argmin_classify(row);
        }
        Ok(argmax(&self.scores(row)?))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }

    /// Class probabilities; only for the softmax models.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if !matches!(self.kind, ClassifierKind::Logistic | ClassifierKind::Mlp) {
            return Err(Error::contract(
                "predict_proba",
                format!("{} does not produce probabilities", self.kind.as_str()),
            ));
        }
        rows.iter().map(|r| self.scores(r)).collect()
    }

    /// A scalar per row for ROC analysis of two-class problems, larger
    /// meaning more like class 1: the translation ratio for argmin, the
    /// decision-value difference for the SVM and `P(class 1)` otherwise.
    pub fn binary_score(&self, row: &[f64]) -> Result<f64> {
        if self.n_classes != 2 {
            return Err(Error::domain("binary_score", "needs a two-class model"));
        }
        match self.kind {
            ClassifierKind::Argmin => {
                self.check_row(row)?;
                crate::translate::translation_ratio(row[0], row[1])
            }
            ClassifierKind::LinearSvm => {
                let s = self.scores(row)?;
                Ok(s[1] - s[0])
            }
            _ => Ok(self.scores(row)?[1]),
        }
    }

    fn fingerprint(&self) -> String {
        let hidden = match self.params {
            Params::Mlp { hidden, .. } => hidden,
            _ => 0,
        };
        serde_json::json!({
            "artifact": "distance-classifier",
            "kind": self.kind,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "hidden": hidden,
        })
        .to_string()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.fingerprint());
        let vec32 = |v: &[f64]| Tensor::new([v.len()], v.iter().map(|&x| x as f32).collect());
        ck.insert("class_weights", vec32(&self.class_weights)?);
        if let Some(s) = &self.standardizer {
            ck.insert("std.mean", vec32(&s.mean)?);
            ck.insert("std.scale", vec32(&s.scale)?);
        }
        match &self.params {
            Params::None => {}
            Params::Linear { w, b } => {
                ck.insert("w", vec32(w)?);
                ck.insert("b", vec32(b)?);
            }
            Params::Mlp { w1, b1, w2, b2, .. } => {
                ck.insert("w1", vec32(w1)?);
                ck.insert("b1", vec32(b1)?);
                ck.insert("w2", vec32(w2)?);
                ck.insert("b2", vec32(b2)?);
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Classifier> {
        #[derive(Deserialize)]
        struct Header {
            kind: ClassifierKind,
            n_classes: usize,
            n_features: usize,
            hidden: usize,
        }
        let h: Header = serde_json::from_str(&ck.fingerprint)
            .map_err(|e| Error::format("classifier", "<checkpoint>", e.to_string()))?;
        let vec64 = |name: &str, len: usize| -> Result<Vec<f64>> {
            let t = ck.get(name)?;
            if t.len() != len {
                return Err(Error::format("classifier", "<checkpoint>", format!("{name} has wrong length")));
            }
            Ok(t.data().iter().map(|&v| f64::from(v)).collect())
        };
        let (k, f) = (h.n_classes, h.n_features);
        let standardizer = match h.kind {
            ClassifierKind::Argmin => None,
            _ => Some(Standardizer {
                mean: vec64("std.mean", f)?,
                scale: vec64("std.scale", f)?,
            }),
        };
        let params = match h.kind {
            ClassifierKind::Argmin => Params::None,
            ClassifierKind::LinearSvm | ClassifierKind::Logistic => Params::Linear {
                w: vec64("w", k * f)?,
                b: vec64("b", k)?,
            },
            ClassifierKind::Mlp => Params::Mlp {
                w1: vec64("w1", h.hidden * f)?,
                b1: vec64("b1", h.hidden)?,
                w2: vec64("w2", k * h.hidden)?,
                b2: vec64("b2", k)?,
                hidden: h.hidden,
            },
        };
        Ok(Classifier {
            kind: h.kind,
            n_classes: k,
            n_features: f,
            class_weights: vec64("class_weights", k)?,
            standardizer,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_examples() {
        assert_eq!(argmin_classify(&[0.10, 0.50, 0.30]).unwrap(), 0);
        assert_eq!(argmin_classify(&[0.2, 0.2, 0.9]).unwrap(), 0);
        assert_eq!(argmin_classify(&[0.5, 0.4, 0.6, 0.7, 0.1, 0.3]).unwrap(), 4);
        assert!(argmin_classify(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let w = class_weights(&[453, 1614]).unwrap();
        assert!((w[0] - 2.281456953642384).abs() < 1e-12);
        assert!((w[1] - 0.640334572490706).abs() < 1e-12);
        assert_eq!(class_weights(&[7, 7]).unwrap(), vec![1.0, 1.0]);
        let w = class_weights(&[100, 300]).unwrap();
        assert_eq!(w[0], 2.0);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(class_weights(&[3, 0]).is_err());
    }

    #[test]
    fn sampler_balances_two_classes() {
        let s = WeightedSampler::from_counts(&[100, 900]).unwrap();
        let mut rng = seed::rng(1);
        let zeros = s.iter(&mut rng).take(20_000).filter(|&i| s.label(i) == 0).count();
        assert!((zeros as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    fn two_points() -> (Vec<Vec<f64>>, Vec<usize>) {
        (vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1])
    }

    #[test]
    fn every_kind_separates_two_points() {
        let (x, y) = two_points();
        for kind in [ClassifierKind::LinearSvm, ClassifierKind::Logistic, ClassifierKind::Mlp] {
            let cfg = ClassifierConfig {
                kind,
                ..ClassifierConfig::default()
            };
            let m = Classifier::fit(&cfg, &x, &y, 2, 0).unwrap();
            assert_eq!(m.predict(&x).unwrap(), y, "{kind:?}");
        }
    }

    #[test]
    fn xor_is_not_linearly_separable() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![0, 0, 1, 1];
        let cfg = ClassifierConfig {
            kind: ClassifierKind::LinearSvm,
            ..ClassifierConfig::default()
        };
        let m = Classifier::fit(&cfg, &x, &y, 2, 0).unwrap();
        let correct = m.predict(&x).unwrap().iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct <= 3);
    }

    #[test]
    fn constant_features_predict_majority() {
        let x = vec![vec![0.3, 0.3]; 10];
        let y = vec![0, 1, 1, 1, 1, 1, 1, 0, 1, 1];
        let cfg = ClassifierConfig {
            kind: ClassifierKind::Logistic,
            imbalance: Imbalance::None,
            ..ClassifierConfig::default()
        };
        let m = Classifier::fit(&cfg, &x, &y, 2, 0).unwrap();
        assert_eq!(m.predict(&[vec![5.0, -1.0]]).unwrap(), vec![1]);
        let p = m.predict_proba(&[vec![0.3, 0.3]]).unwrap();
        assert!((p[0][1] - 0.8).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn rejects_single_class_and_width_mismatch() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(Classifier::fit(&ClassifierConfig::default(), &x, &[1, 1], 2, 0).is_err());
        let m = Classifier::fit(&ClassifierConfig::default(), &x, &[0, 1], 2, 0).unwrap();
        assert!(m.predict_one(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn saved_model_predicts_identically() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.1]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        for kind in [
            ClassifierKind::Argmin,
            ClassifierKind::LinearSvm,
            ClassifierKind::Logistic,
            ClassifierKind::Mlp,
        ] {
            let cfg = ClassifierConfig {
                kind,
                iterations: 200,
                ..ClassifierConfig::default()
            };
            let m = Classifier::fit(&cfg, &x, &y, 3, 4).unwrap();
            let bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
            let back = Classifier::from_checkpoint(&Checkpoint::read(&bytes[..]).unwrap()).unwrap();
            assert_eq!(back, m, "{kind:?}");
            for r in &x {
                assert_eq!(back.scores(r).unwrap(), m.scores(r).unwrap());
            }
        }
    }
}
