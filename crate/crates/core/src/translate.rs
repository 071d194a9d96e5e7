//! Translation distances: how far each image moves when translated into
//! every class.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gan::{condition, CycleGan, StarGan};
use crate::synth::{Dataset, LabeledImage};
use crate::tensor::Tensor;

/// Images per inference call. Fixed so outputs never depend on how a caller
/// chunks a dataset.
pub const INFERENCE_BATCH: usize = 16;

/// Anything that can translate a batch of images into a given class.
pub trait ClassTranslator {
    fn n_classes(&self) -> usize;

    /// Inference-mode translation of `images` (`N × 3 × S × S`) into `target`.
    fn translate(&self, images: &Tensor, target: usize) -> Result<Tensor>;
}

impl ClassTranslator for CycleGan {
    fn n_classes(&self) -> usize {
        2
    }

    /// Class 0 (A) is produced by `g_ba`, class 1 (B) by `g_ab`.
    fn translate(&self, images: &Tensor, target: usize) -> Result<Tensor> {
        match target {
            0 => self.g_ba.infer(images),
            1 => self.g_ab.infer(images),
            t => Err(Error::domain("translate", format!("CycleGAN has 2 classes, got target {t}"))),
        }
    }
}

impl ClassTranslator for StarGan {
    fn n_classes(&self) -> usize {
        StarGan::n_classes(self)
    }

    fn translate(&self, images: &Tensor, target: usize) -> Result<Tensor> {
        self.g.infer(&condition(images, target, self.n_classes())?)
    }
}

/// `y_i = G_i(x)` for every class `i`.
pub fn translate_all(x: &Tensor, model: &dyn ClassTranslator) -> Result<Vec<Tensor>> {
    (0..model.n_classes()).map(|i| model.translate(x, i)).collect()
}

/// Mean absolute difference over all elements.
pub fn l1_distance(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "l1_distance",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    if x.is_empty() {
        return Err(Error::domain("l1_distance", "empty tensors"));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
        .sum();
    Ok(sum / x.len() as f64)
}

/// `d_A / (d_A + d_B)`: near 0 for class A, near 1 for class B. Both
/// distances zero is degenerate and yields 0.5 with a warning.
pub fn translation_ratio(d_a: f64, d_b: f64) -> Result<f64> {
    if !(d_a >= 0.0 && d_b >= 0.0) || !d_a.is_finite() || !d_b.is_finite() {
        return Err(Error::domain(
            "translation_ratio",
            format!("distances must be finite and non-negative, got ({d_a}, {d_b})"),
        ));
    }
    if d_a == 0.0 && d_b == 0.0 {
        log::warn!("translation ratio undefined for two zero distances; using 0.5");
        return Ok(0.5);
    }
    Ok(d_a / (d_a + d_b))
}

/// One source image, its translations and their distances.
#[derive(Clone, Debug)]
pub struct TranslationRecord {
    pub image_id: usize,
    pub true_label: usize,
    /// Empty unless images were kept.
    pub translations: Vec<Tensor>,
    pub distances: Vec<f64>,
}

/// Translates every image into every class. Rows follow `images` order.
pub fn translate_images(
    images: &[&LabeledImage],
    model: &dyn ClassTranslator,
    keep_images: bool,
) -> Result<Vec<TranslationRecord>> {
    let k = model.n_classes();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_BATCH) {
        let batch = Dataset::batch(chunk)?;
        let per_class = translate_all(&batch, model)?;
        for (j, im) in chunk.iter().enumerate() {
            let mut translations = Vec::with_capacity(k);
            let mut distances = Vec::with_capacity(k);
            for y in &per_class {
                let y = y.batch_item(j)?.reshape(im.pixels.shape().to_vec())?;
                distances.push(l1_distance(&im.pixels, &y)?);
                if keep_images {
                    translations.push(y);
                }
            }
            out.push(TranslationRecord {
                image_id: im.id,
                true_label: im.label,
                translations,
                distances,
            });
        }
    }
    Ok(out)
}

/// N × K translation distances with labels and image ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub image_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
    pub n_classes: usize,
}

impl DistanceMatrix {
    pub fn from_records(records: &[TranslationRecord], n_classes: usize) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.distances.len() != n_classes) {
            return Err(Error::shape(
                "DistanceMatrix",
                format!("image {} has {} distances, expected {n_classes}", r.image_id, r.distances.len()),
            ));
        }
        Ok(DistanceMatrix {
            image_ids: records.iter().map(|r| r.image_id).collect(),
            labels: records.iter().map(|r| r.true_label).collect(),
            distances: records.iter().map(|r| r.distances.clone()).collect(),
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Translation ratios, one per row; only defined for two classes.
    pub fn translation_ratios(&self) -> Result<Vec<f64>> {
        if self.n_classes != 2 {
            return Err(Error::domain(
                "translation_ratios",
                format!("needs 2 classes, have {}", self.n_classes),
            ));
        }
        self.distances.iter().map(|d| translation_ratio(d[0], d[1])).collect()
    }

    /// Rows whose image id satisfies `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> DistanceMatrix {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(self.image_ids[i])).collect();
        DistanceMatrix {
            image_ids: rows.iter().map(|&i| self.image_ids[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            distances: rows.iter().map(|&i| self.distances[i].clone()).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Mean of column `j` over rows with true label `label`.
    pub fn column_mean(&self, j: usize, label: usize) -> Option<f64> {
        let vals: Vec<f64> = (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .map(|i| self.distances[i][j])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Writes `image_id,true_label,d_0,…,d_{K−1}[,tr]`; distances use 9
    /// significant digits.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["image_id".to_string(), "true_label".to_string()];
        header.extend((0..self.n_classes).map(|i| format!("d_{i}")));
        let ratios = if self.n_classes == 2 {
            header.push("tr".into());
            Some(self.translation_ratios()?)
        } else {
            None
        };
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![self.image_ids[i].to_string(), self.labels[i].to_string()];
            row.extend(self.distances[i].iter().map(|d| format!("{d:.8e}")));
            if let Some(r) = &ratios {
                row.push(format!("{:.8e}", r[i]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        let k = header.iter().filter(|h| h.starts_with("d_")).count();
        if header.get(0) != Some("image_id") || header.get(1) != Some("true_label") || k == 0 {
            return Err(Error::format("distances CSV", "<csv>", "unexpected header"));
        }
        let mut m = DistanceMatrix {
            image_ids: Vec::new(),
            labels: Vec::new(),
            distances: Vec::new(),
            n_classes: k,
        };
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::format("distances CSV", "<csv>", "short row"));
            let parse_err = |e: &dyn std::fmt::Display| Error::format("distances CSV", "<csv>", e.to_string());
            m.image_ids.push(field(0)?.parse().map_err(|e| parse_err(&e))?);
            m.labels.push(field(1)?.parse().map_err(|e| parse_err(&e))?);
            let row = (0..k)
                .map(|j| field(2 + j)?.parse::<f64>().map_err(|e| parse_err(&e)))
                .collect::<Result<Vec<_>>>()?;
            m.distances.push(row);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| with_path(e, path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| with_path(e, path))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("CSV", "<csv>", e.to_string())
}

/// Replaces the placeholder path of format/io errors raised on streams.
pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { what, detail, .. } => Error::format(what, path, detail),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Translation distances of `images` under `model`.
pub fn extract_features(images: &[&LabeledImage], model: &dyn ClassTranslator) -> Result<DistanceMatrix> {
    let records = translate_images(images, model, false)?;
    DistanceMatrix::from_records(&records, model.n_classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let x = Tensor::zeros([2, 3]);
        assert_eq!(l1_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(l1_distance(&x, &Tensor::full([2, 3], 0.5)).unwrap(), 0.5);
        assert!(l1_distance(&x, &Tensor::zeros([3, 2])).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(translation_ratio(0.3, 0.3).unwrap(), 0.5);
        assert_eq!(translation_ratio(0.0, 0.4).unwrap(), 0.0);
        assert!((translation_ratio(0.2, 0.6).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(translation_ratio(0.0, 0.0).unwrap(), 0.5);
        assert!(translation_ratio(-0.1, 0.2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = DistanceMatrix {
            image_ids: vec![3, 9],
            labels: vec![0, 1],
            distances: vec![vec![0.125, 0.3333333333], vec![1e-7, 0.5]],
            n_classes: 2,
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,true_label,d_0,d_1,tr\n3,0,1.25000000e-1,"));
        let back = DistanceMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back.labels, m.labels);
        for (a, b) in back.distances.iter().flatten().zip(m.distances.iter().flatten()) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
    }
}
