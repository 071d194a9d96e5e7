//! The experiment commands behind the CLI. Each takes a resolved
//! [`ExperimentConfig`], reads its inputs from disk or memory, and writes
//! its outputs plus a `config.toml` snapshot into one directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baseline::{stratified_split, train_baseline, TrainingLog};
use crate::checkpoint::Checkpoint;
use crate::classify::Classifier;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{write_scatter_csv, write_tr_histogram_csv, EvalReport};
use crate::gan::LossRecord;
use crate::imageio::{render_grid as grid_image, write_image_png, write_png, GridRow};
use crate::seed;
use crate::synth::{generate_dataset, Dataset, LabeledImage, ManifestRow, Split};
use crate::tensor::Tensor;
use crate::train::{GanTrainer, TrainPool};
use crate::translate::{translate_images, ClassTranslator, DistanceMatrix};
use crate::translate::with_path;

pub const SNAPSHOT: &str = "config.toml";
pub const MANIFEST: &str = "manifest.csv";
pub const PIXELS: &str = "pixels.ictd";
pub const MODEL: &str = "model.ictd";
pub const LOSS_LOG: &str = "loss.csv";
pub const DISTANCES: &str = "distances.csv";
pub const METRICS: &str = "metrics.json";

/// Creates `dir`, refusing a non-empty existing one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_snapshot(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join(SNAPSHOT))
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format("CSV", path, e.to_string())
}

// ---------------------------------------------------------------- datasets

fn dataset_fingerprint(data: &Dataset) -> String {
    serde_json::json!({
        "artifact": "dataset",
        "n_images": data.images.len(),
        "n_classes": data.n_classes,
        "image_size": data.image_size,
    })
    .to_string()
}

/// Writes `manifest.csv`, `pixels.ictd` (exact floats) and one PNG per image.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    let manifest = dir.join(MANIFEST);
    let mut w = csv_writer(create(&manifest)?);
    for im in &data.images {
        w.serialize(ManifestRow::from(im)).map_err(csv_err(&manifest))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;

    let mut ck = Checkpoint::new(dataset_fingerprint(data));
    let items: Vec<Tensor> = data
        .images
        .iter()
        .map(|im| im.pixels.clone().reshape([1, 3, data.image_size, data.image_size]))
        .collect::<Result<_>>()?;
    ck.insert("pixels", Tensor::concat_batch(&items.iter().collect::<Vec<_>>())?);
    ck.save(&dir.join(PIXELS))?;

    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for im in &data.images {
        write_image_png(&images.join(format!("{:05}.png", im.id)), &im.pixels)?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    csv::Reader::from_reader(BufReader::new(f))
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()
        .map_err(csv_err(&path))
}

/// Loads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let rows = read_manifest(dir)?;
    let path = dir.join(PIXELS);
    let ck = Checkpoint::load(&path)?;
    #[derive(serde::Deserialize)]
    struct Fp {
        n_images: usize,
        n_classes: usize,
        image_size: usize,
    }
    let fp: Fp = serde_json::from_str(&ck.fingerprint).map_err(|e| Error::format("dataset", &path, e.to_string()))?;
    let pixels = ck.get("pixels").map_err(|e| with_path(e, &path))?;
    let s = fp.image_size;
    if pixels.shape() != [fp.n_images, 3, s, s] || rows.len() != fp.n_images {
        return Err(Error::format(
            "dataset",
            &path,
            format!("{} manifest rows, pixels {:?}", rows.len(), pixels.shape()),
        ));
    }
    let images = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.label >= fp.n_classes {
                return Err(Error::format("dataset", dir.join(MANIFEST), format!("label {} out of range", r.label)));
            }
            Ok(LabeledImage {
                id: r.image_id,
                label: r.label,
                split: r.split,
                pixels: pixels.batch_item(i)?.reshape([3, s, s])?,
                artifacts: r.artifacts(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        image_size: s,
        n_classes: fp.n_classes,
        images,
    })
}

fn check_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    if data.n_classes != cfg.dataset.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the config describes {}",
            data.n_classes,
            cfg.dataset.n_classes()
        )));
    }
    Ok(())
}

/// `gen-data`: generates the dataset and writes it to `out`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let data = generate_dataset(&cfg.dataset, cfg.seeds().data)?;
    write_snapshot(cfg, out)?;
    save_dataset(&data, out)?;
    Ok(data)
}

// ---------------------------------------------------------------- training

fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.ictd")
}

fn loss_header(rec: &LossRecord) -> Vec<String> {
    std::iter::once("iteration".to_string())
        .chain(rec.names().map(str::to_string))
        .collect()
}

/// Loss-log rows from an earlier run, up to and including `upto`.
fn earlier_loss_rows(path: &Path, upto: usize) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(f));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let it: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("loss log", path, "bad iteration column"))?;
        if it <= upto {
            rows.push(rec);
        }
    }
    Ok(rows)
}

/// Loads a GAN checkpoint for this experiment's model configuration.
pub fn load_model(cfg: &ExperimentConfig, data: &Dataset, path: &Path) -> Result<GanTrainer> {
    let ck = Checkpoint::load(path)?;
    GanTrainer::from_checkpoint(cfg.model.clone(), data.n_classes, data.image_size, ck).map_err(|e| with_path(e, path))
}

/// `train`: trains the GAN on the train split, optionally resuming from a
/// checkpoint. Writes periodic checkpoints, `model.ictd` and `loss.csv`
/// (one row per logged iteration, numbered from 1).
pub fn train(cfg: &ExperimentConfig, data: &Dataset, out: &Path, resume: Option<&Path>) -> Result<GanTrainer> {
    check_dataset(cfg, data)?;
    write_snapshot(cfg, out)?;
    let seeds = cfg.seeds();
    let mut trainer = match resume {
        Some(path) => load_model(cfg, data, path)?,
        None => GanTrainer::new(cfg.model.clone(), data.n_classes, data.image_size, seeds.init)?,
    };
    let previous = match resume {
        Some(path) => earlier_loss_rows(&path.with_file_name(LOSS_LOG), trainer.iteration)?,
        None => Vec::new(),
    };
    let log_path = out.join(LOSS_LOG);
    let mut log = csv_writer(create(&log_path)?);
    let mut wrote_header = false;
    let pool = TrainPool::new(data.train(), data.n_classes)?;
    let total = cfg.model.iterations;
    while trainer.iteration < total {
        let rec = trainer.step(&pool, seeds.train)?;
        let it = trainer.iteration;
        if !wrote_header {
            log.write_record(loss_header(&rec)).map_err(csv_err(&log_path))?;
            for row in &previous {
                log.write_record(row).map_err(csv_err(&log_path))?;
            }
            wrote_header = true;
        }
        if it % cfg.model.log_every == 0 || it == total {
            let row: Vec<String> = std::iter::once(it.to_string())
                .chain(rec.iter().map(|(_, v)| format!("{v:.8e}")))
                .collect();
            log.write_record(row).map_err(csv_err(&log_path))?;
            log::info!(
                "iteration {it}/{total}: {}",
                rec.iter().map(|(n, v)| format!("{n}={v:.4}")).collect::<Vec<_>>().join(" ")
            );
        }
        if cfg.model.checkpoint_every > 0 && it % cfg.model.checkpoint_every == 0 && it != total {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            trainer.to_checkpoint()?.save(&out.join(checkpoint_name(it)))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.to_checkpoint()?.save(&out.join(MODEL))?;
    Ok(trainer)
}

// -------------------------------------------------------------- extraction

/// `extract`: translation distances of every image (train and test, id
/// order) into `distances.csv`, plus translation PNGs for the first
/// `extract.save_images` images.
pub fn extract(cfg: &ExperimentConfig, data: &Dataset, model: &dyn ClassTranslator, out: &Path) -> Result<DistanceMatrix> {
    check_dataset(cfg, data)?;
    write_snapshot(cfg, out)?;
    let images: Vec<&LabeledImage> = data.images.iter().collect();
    let n_keep = cfg.extract.save_images.min(images.len());
    let (kept, rest) = images.split_at(n_keep);
    let mut records = translate_images(kept, model, true)?;
    if n_keep > 0 {
        let dir = out.join("translations");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for r in &records {
            for (k, y) in r.translations.iter().enumerate() {
                write_image_png(&dir.join(format!("{:05}_to_{k}.png", r.image_id)), y)?;
            }
        }
    }
    records.extend(translate_images(rest, model, false)?);
    let m = DistanceMatrix::from_records(&records, model.n_classes())?;
    m.save(&out.join(DISTANCES))?;
    Ok(m)
}

// -------------------------------------------------------------- evaluation

#[derive(Serialize)]
struct Metrics<'a> {
    model: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
    #[serde(flatten)]
    extra: BTreeMap<&'static str, serde_json::Value>,
}

fn write_metrics(path: &Path, model: &str, report: &EvalReport, extra: BTreeMap<&'static str, serde_json::Value>) -> Result<()> {
    let text = serde_json::to_string_pretty(&Metrics { model, report, extra })
        .map_err(|e| Error::format("metrics JSON", path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Splits distance rows by the manifest's train/test assignment.
pub fn split_distances(m: &DistanceMatrix, manifest: &[ManifestRow]) -> Result<(DistanceMatrix, DistanceMatrix)> {
    let split: BTreeMap<usize, Split> = manifest.iter().map(|r| (r.image_id, r.split)).collect();
    if let Some(id) = m.image_ids.iter().find(|id| !split.contains_key(id)) {
        return Err(Error::Config(format!("image {id} in distances is missing from the manifest")));
    }
    Ok((
        m.filter(|id| split[&id] == Split::Train),
        m.filter(|id| split[&id] == Split::Test),
    ))
}

pub struct ClassifyOutcome {
    pub classifier: Classifier,
    pub report: EvalReport,
    pub predictions: Vec<usize>,
}

/// Fits the configured classifier on train-split rows and evaluates it on
/// the test split.
pub fn fit_and_evaluate(cfg: &ExperimentConfig, train: &DistanceMatrix, test: &DistanceMatrix) -> Result<ClassifyOutcome> {
    let k = train.n_classes;
    let classifier = Classifier::fit(&cfg.classifier, &train.distances, &train.labels, k, cfg.seeds().sampling)?;
    let predictions = classifier.predict(&test.distances)?;
    let scores = test
        .distances
        .iter()
        .map(|r| classifier.scores(r))
        .collect::<Result<Vec<_>>>()?;
    let binary = if k == 2 {
        Some(
            test.distances
                .iter()
                .map(|r| classifier.binary_score(r))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let report = EvalReport::new(&test.labels, &predictions, &scores, binary.as_deref(), k)?;
    Ok(ClassifyOutcome {
        classifier,
        report,
        predictions,
    })
}

/// `classify-eval`: fits, evaluates and exports metrics, ROC, figure data,
/// per-image predictions and the fitted classifier.
pub fn classify_eval(
    cfg: &ExperimentConfig,
    distances: &DistanceMatrix,
    manifest: &[ManifestRow],
    out: &Path,
) -> Result<ClassifyOutcome> {
    write_snapshot(cfg, out)?;
    let (train, test) = split_distances(distances, manifest)?;
    let outcome = fit_and_evaluate(cfg, &train, &test)?;
    write_metrics(&out.join(METRICS), cfg.classifier.kind.as_str(), &outcome.report, BTreeMap::new())?;
    if !outcome.report.roc_points.is_empty() {
        outcome.report.write_roc_csv(create(&out.join("roc.csv"))?)?;
    }
    let k = distances.n_classes;
    for i in 0..k {
        for j in i + 1..k {
            write_scatter_csv(distances, i, j, create(&out.join(format!("scatter_{i}_{j}.csv")))?)?;
        }
    }
    if k == 2 {
        write_tr_histogram_csv(&test, create(&out.join("tr_histogram.csv"))?)?;
    }
    let pred_path = out.join("predictions.csv");
    let mut w = csv_writer(create(&pred_path)?);
    w.write_record(["image_id", "true_label", "predicted"]).map_err(csv_err(&pred_path))?;
    for (i, &p) in outcome.predictions.iter().enumerate() {
        w.write_record([test.image_ids[i].to_string(), test.labels[i].to_string(), p.to_string()])
            .map_err(csv_err(&pred_path))?;
    }
    w.flush().map_err(|e| Error::io(&pred_path, e))?;
    outcome.classifier.to_checkpoint()?.save(&out.join("classifier.ictd"))?;
    Ok(outcome)
}

pub struct BaselineOutcome {
    pub report: EvalReport,
    pub log: TrainingLog,
}

/// `baseline`: trains the end-to-end CNN on the train split (with a
/// stratified validation hold-out) and evaluates it on the test split.
pub fn baseline(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<BaselineOutcome> {
    check_dataset(cfg, data)?;
    write_snapshot(cfg, out)?;
    let seeds = cfg.seeds();
    let base_seed = seed::derive(seeds.train, "baseline");
    let (train, val) = stratified_split(&data.train(), cfg.baseline.val_fraction, seed::derive(seeds.sampling, "val"));
    let (model, log) = train_baseline(&train, &val, data.n_classes, &cfg.baseline, base_seed)?;
    let test = data.test();
    let probs = model.predict_proba(&test)?;
    let truth: Vec<usize> = test.iter().map(|im| im.label).collect();
    let predicted: Vec<usize> = probs.iter().map(|p| crate::classify::argmax(p)).collect();
    let binary: Option<Vec<f64>> = (data.n_classes == 2).then(|| probs.iter().map(|p| p[1]).collect());
    let report = EvalReport::new(&truth, &predicted, &probs, binary.as_deref(), data.n_classes)?;
    let extra = BTreeMap::from([
        ("best_epoch", serde_json::json!(log.best_epoch)),
        ("epochs_run", serde_json::json!(log.epochs.len())),
        ("early_stopped", serde_json::json!(log.early_stopped)),
    ]);
    write_metrics(&out.join(METRICS), "baseline_cnn", &report, extra)?;
    log.write_csv(create(&out.join("epochs.csv"))?)?;
    if !report.roc_points.is_empty() {
        report.write_roc_csv(create(&out.join("roc.csv"))?)?;
    }
    model.to_checkpoint().save(&out.join(MODEL))?;
    Ok(BaselineOutcome { report, log })
}

// --------------------------------------------------------------- rendering

/// `render-grid`: the first `grid.rows_per_class` test images of each class
/// with their translations into every class. Returns the PNG path.
pub fn render_grid(cfg: &ExperimentConfig, data: &Dataset, model: &dyn ClassTranslator, out: &Path) -> Result<PathBuf> {
    check_dataset(cfg, data)?;
    write_snapshot(cfg, out)?;
    let test = data.test();
    let chosen: Vec<&LabeledImage> = (0..data.n_classes)
        .flat_map(|k| test.iter().filter(move |im| im.label == k).take(cfg.grid.rows_per_class))
        .copied()
        .collect();
    let rows: Vec<GridRow> = translate_images(&chosen, model, true)?
        .into_iter()
        .zip(&chosen)
        .map(|(r, im)| GridRow {
            source: im.pixels.clone(),
            translations: r.translations,
            own_class: im.label,
        })
        .collect();
    let (w, h, rgb) = grid_image(&rows)?;
    let path = out.join("grid.png");
    write_png(&path, w, h, &rgb)?;
    Ok(path)
}

/// Everything a full run produces, for callers that chain the stages in
/// memory.
pub struct PipelineOutcome {
    pub data: Dataset,
    pub trainer: GanTrainer,
    pub distances: DistanceMatrix,
    pub classify: ClassifyOutcome,
}

/// Runs gen-data → train → extract → classify-eval under `root`, using the
/// same sub-directory names as the CLI defaults.
pub fn run_pipeline(cfg: &ExperimentConfig, root: &Path) -> Result<PipelineOutcome> {
    let data = gen_data(cfg, &root.join("data"))?;
    let trainer = train(cfg, &data, &root.join("train"), None)?;
    let distances = extract(cfg, &data, trainer.translator(), &root.join("extract"))?;
    let manifest: Vec<ManifestRow> = data.images.iter().map(ManifestRow::from).collect();
    let classify = classify_eval(cfg, &distances, &manifest, &root.join("classify"))?;
    Ok(PipelineOutcome {
        data,
        trainer,
        distances,
        classify,
    })
}
