//! Quantitative evaluation: MSE, PSNR, SSIM, relative latent displacement,
//! and a small supervised classifier that grades translation success (the
//! desk-scale stand-in for CLIP-based accuracy).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::{streams, CounterRng};
use crate::train::{AdamConfig, AdamState};

const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn require_same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(a: &Array, b: &Array) -> Result<f64> {
    require_same_shape("mse", a, b)?;
    let d = a.sub(b)?;
    Ok(d.sq_norm() / d.len() as f64)
}

/// Peak signal-to-noise ratio for dynamic range 1. Returns the infinity
/// sentinel when the inputs are identical (mse = 0).
pub fn psnr(a: &Array, b: &Array) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * libm::log10(e))
}

/// Relative latent displacement `||z0 - z0_rec|| / ||z0||`.
pub fn rel_displacement(z0: &Array, z0_rec: &Array) -> Result<f64> {
    require_same_shape("rel_displacement", z0, z0_rec)?;
    let num = z0.sub(z0_rec)?.norm();
    let den = z0.norm();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// Single-scale SSIM with a uniform 7x7 window, averaged over all fully valid
/// window positions. Inputs are [h, w] images with values in [0, 1].
pub fn ssim(a: &Array, b: &Array) -> Result<f64> {
    require_same_shape("ssim", a, b)?;
    let (h, w) = match a.shape() {
        &[h, w] => (h, w),
        other => {
            return Err(Error::ShapeMismatch {
                op: "ssim",
                left: alloc::vec![0, 0],
                right: other.to_vec(),
            })
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParam {
            name: "ssim image size",
            message: format!("image {h}x{w} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    for (name, img) in [("first", a), ("second", b)] {
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParam {
                name: "ssim input range",
                message: format!("{name} image has values outside [0, 1]"),
            });
        }
    }
    let c1 = (SSIM_K1 * SSIM_RANGE) * (SSIM_K1 * SSIM_RANGE);
    let c2 = (SSIM_K2 * SSIM_RANGE) * (SSIM_K2 * SSIM_RANGE);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for top in 0..=(h - SSIM_WINDOW) {
        for left in 0..=(w - SSIM_WINDOW) {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for r in top..top + SSIM_WINDOW {
                let row_a = &a.data()[r * w + left..r * w + left + SSIM_WINDOW];
                let row_b = &b.data()[r * w + left..r * w + left + SSIM_WINDOW];
                for (&x, &y) in row_a.iter().zip(row_b) {
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let val = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += val;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Multinomial logistic regression over flattened pixels; evaluation-only
/// machinery, trained with an analytic gradient so it stays independent of
/// the autodiff tape it helps to audit.
#[derive(Clone, Debug)]
pub struct OracleClassifier {
    labels: Vec<String>,
    weights: Array, // [classes, pixels]
    bias: Array,    // [classes]
}

#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub epochs: usize,
    pub lr: f64,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            epochs: 300,
            lr: 0.05,
            holdout: 0.2,
            seed: 0,
        }
    }
}

impl OracleClassifier {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Class probabilities via a max-shifted softmax (sums to one).
    pub fn probabilities(&self, img_flat: &Array) -> Result<Vec<f64>> {
        if img_flat.len() != self.weights.shape()[1] {
            return Err(Error::Misaligned {
                what: "oracle input length",
                expected: self.weights.shape()[1],
                got: img_flat.len(),
            });
        }
        let logits = self.weights.matmul(img_flat)?.add(&self.bias)?;
        let max = logits
            .data()
            .iter()
            .fold(f64::NEG_INFINITY, |m, &x| if x > m { x } else { m });
        let exps: Vec<f64> = logits.data().iter().map(|&l| libm::exp(l - max)).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / sum).collect())
    }

    /// Argmax label and its probability.
    pub fn classify(&self, img_flat: &Array) -> Result<(String, f64)> {
        let probs = self.probabilities(img_flat)?;
        let (best, p) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least two classes");
        Ok((self.labels[best].clone(), *p))
    }

    pub fn score_for(&self, img_flat: &Array, label: &str) -> Result<f64> {
        let idx = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: String::from(label),
            })?;
        Ok(self.probabilities(img_flat)?[idx])
    }
}

/// Train the oracle on `(flat pixels, label)` pairs with a seeded split.
/// Returns the classifier and its held-out accuracy.
pub fn train_oracle(dataset: &[(Array, String)], cfg: &OracleConfig) -> Result<(OracleClassifier, f64)> {
    let mut labels: Vec<String> = Vec::new();
    for (_, l) in dataset {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    labels.sort();
    if labels.len() < 2 {
        return Err(Error::InvalidParam {
            name: "oracle dataset",
            message: format!("need at least 2 labels, got {}", labels.len()),
        });
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::InvalidParam {
            name: "oracle holdout",
            message: format!("must be in [0, 1), got {}", cfg.holdout),
        });
    }
    let pixels = dataset[0].0.len();
    for (x, _) in dataset {
        if x.len() != pixels {
            return Err(Error::Misaligned {
                what: "oracle sample length",
                expected: pixels,
                got: x.len(),
            });
        }
    }
    let classes = labels.len();
    let mut rng = CounterRng::new(cfg.seed, streams::ORACLE);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let holdout_len = ((dataset.len() as f64) * cfg.holdout) as usize;
    let (held, trained) = order.split_at(holdout_len);

    let class_of = |i: usize| -> usize {
        labels
            .iter()
            .position(|l| l == &dataset[i].1)
            .expect("collected above")
    };

    let mut w = alloc::rc::Rc::new(Array::zeros(alloc::vec![classes, pixels]));
    let mut b = alloc::rc::Rc::new(Array::zeros(alloc::vec![classes]));
    let mut adam = AdamState::new(
        AdamConfig::with_lr(cfg.lr),
        &[alloc::rc::Rc::clone(&w), alloc::rc::Rc::clone(&b)],
    );
    let inv_n = 1.0 / trained.len().max(1) as f64;
    for _ in 0..cfg.epochs {
        let mut gw = alloc::vec![0.0; classes * pixels];
        let mut gb = alloc::vec![0.0; classes];
        let clf = OracleClassifier {
            labels: labels.clone(),
            weights: (*w).clone(),
            bias: (*b).clone(),
        };
        for &i in trained {
            let (x, _) = &dataset[i];
            let truth = class_of(i);
            let probs = clf.probabilities(x)?;
            for (k, &p) in probs.iter().enumerate() {
                let err = (p - if k == truth { 1.0 } else { 0.0 }) * inv_n;
                gb[k] += err;
                let row = &mut gw[k * pixels..(k + 1) * pixels];
                for (gwi, &xi) in row.iter_mut().zip(x.data()) {
                    *gwi += err * xi;
                }
            }
        }
        let grads = alloc::vec![
            Array::from_vec(alloc::vec![classes, pixels], gw)?,
            Array::from_vec(alloc::vec![classes], gb)?,
        ];
        let updated = adam.step(&[w, b], &grads)?;
        w = updated[0].clone();
        b = updated[1].clone();
    }
    let clf = OracleClassifier {
        labels,
        weights: (*w).clone(),
        bias: (*b).clone(),
    };
    let mut correct = 0usize;
    for &i in held {
        let (label, _) = clf.classify(&dataset[i].0)?;
        if label == dataset[i].1 {
            correct += 1;
        }
    }
    let accuracy = if held.is_empty() {
        1.0
    } else {
        correct as f64 / held.len() as f64
    };
    Ok((clf, accuracy))
}

/// Per-image evaluation record.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub image_id: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub rel_displacement: f64,
    pub oracle_label: String,
    pub oracle_score: f64,
}

/// Rows plus aggregates over them.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    fn column(&self, f: impl Fn(&MetricRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn mean(&self, f: impl Fn(&MetricRow) -> f64) -> f64 {
        let v = self.column(f);
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn median(&self, f: impl Fn(&MetricRow) -> f64) -> f64 {
        let mut v = self.column(f);
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        }
    }
}
