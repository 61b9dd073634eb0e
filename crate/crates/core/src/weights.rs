//! Intrinsic-dimension-proportional class weights and a weighted linear
//! softmax classifier.
//!
//! The class weights are
//!
//! ```text
//! omega_l = L * d_hat_l / sum_l' d_hat_l'
//! ```
//!
//! so they sum to L and collapse to all-ones when every class has the same
//! estimate. The weighted cross entropy is
//!
//! ```text
//! -(1/|B|) sum_{i in B} omega_{y_i} ln softmax(W x_i + b)_{y_i}
//! ```
//!
//! whose gradient with respect to the logits of sample i is
//! omega_{y_i} (softmax - onehot) / |B| — checkable against finite
//! differences. With all weights 1 this is exactly the standard cross
//! entropy, operation for operation.

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::twostep::{blob_to_params, checksum_hex, params_to_blob, FORMAT_VERSION};

/// Per-class loss weights, summing to the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub values: Vec<f64>,
}

impl ClassWeights {
    pub fn ones(classes: usize) -> Self {
        ClassWeights { values: vec![1.0; classes] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV dump: `class, d_hat, omega` (d_hat column omitted when unknown).
    pub fn to_csv(&self, d_hats: Option<&[f64]>) -> String {
        let mut out = String::from("class,d_hat,omega\n");
        for (c, w) in self.values.iter().enumerate() {
            match d_hats {
                Some(d) => out.push_str(&format!("{c},{},{w}\n", d[c])),
                None => out.push_str(&format!("{c},,{w}\n")),
            }
        }
        out
    }
}

/// omega_l = L * d_hat_l / sum(d_hat).
pub fn id_weights(d_hats: &[f64]) -> Result<ClassWeights> {
    if d_hats.is_empty() {
        return Err(Error::Argument("need at least one class estimate".into()));
    }
    if d_hats.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Argument(
            "intrinsic-dimension estimates must be positive".into(),
        ));
    }
    let total: f64 = d_hats.iter().sum();
    let l = d_hats.len() as f64;
    Ok(ClassWeights { values: d_hats.iter().map(|&d| l * d / total).collect() })
}

/// Linear softmax classifier: logits = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    pub classes: usize,
    pub dim: usize,
    /// Row-major L x D.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl SoftmaxClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        SoftmaxClassifier { classes, dim, w: vec![0.0; classes * dim], b: vec![0.0; classes] }
    }

    pub fn logits<S: Scalar>(&self, x: &[S], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let mut acc = self.b[c];
            for (j, v) in x.iter().enumerate() {
                acc += self.w[c * self.dim + j] * v.widen();
            }
            *slot = acc;
        }
    }

    /// Argmax prediction; ties go to the lowest class index.
    pub fn predict<S: Scalar>(&self, x: &[S]) -> usize {
        let mut logits = vec![0.0; self.classes];
        self.logits(x, &mut logits);
        let mut best = 0usize;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn collect_params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.extend_from_slice(&self.b);
        p
    }
}

/// Manifest for a persisted classifier (same versioned blob scheme as the
/// generative models).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub format: u32,
    pub classes: usize,
    pub dim: usize,
    pub param_count: usize,
    pub checksum: String,
    pub loss_trace: Vec<f64>,
}

pub fn save_classifier(
    model: &SoftmaxClassifier,
    loss_trace: &[f64],
    dir: &std::path::Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let params = model.collect_params();
    let blob = params_to_blob(&params);
    let manifest = ClassifierManifest {
        format: FORMAT_VERSION,
        classes: model.classes,
        dim: model.dim,
        param_count: params.len(),
        checksum: checksum_hex(&blob),
        loss_trace: loss_trace.to_vec(),
    };
    std::fs::write(dir.join("classifier.params"), &blob)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_classifier(dir: &std::path::Path) -> Result<(SoftmaxClassifier, Vec<f64>)> {
    let manifest: ClassifierManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported classifier format {}",
            manifest.format
        )));
    }
    let blob = std::fs::read(dir.join("classifier.params"))?;
    let found = checksum_hex(&blob);
    if found != manifest.checksum {
        return Err(Error::Integrity(format!(
            "classifier checksum mismatch: manifest says {}, blob hashes to {found}",
            manifest.checksum
        )));
    }
    let params = blob_to_params(&blob)?;
    if params.len() != manifest.param_count
        || params.len() != manifest.classes * manifest.dim + manifest.classes
    {
        return Err(Error::Integrity("classifier parameter count mismatch".into()));
    }
    let mut model = SoftmaxClassifier::zeros(manifest.classes, manifest.dim);
    let split = manifest.classes * manifest.dim;
    model.w.copy_from_slice(&params[..split]);
    model.b.copy_from_slice(&params[split..]);
    Ok((model, manifest.loss_trace))
}

/// Gradient-descent configuration for the classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig { learning_rate: 0.1, epochs: 100, batch_size: 64, seed: 0 }
    }
}

/// Train by mini-batch gradient descent on the weighted cross entropy.
/// Returns the classifier and the per-epoch loss trace; deterministic
/// given the seed.
pub fn train_softmax_weighted<S: Scalar>(
    x: &DataMatrix<S>,
    labels: &[usize],
    omega: &ClassWeights,
    cfg: &SoftmaxConfig,
) -> Result<(SoftmaxClassifier, Vec<f64>)> {
    let n = x.n();
    let dim = x.dim();
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "got {} labels for {n} rows",
            labels.len()
        )));
    }
    let classes = omega.len();
    if classes < 2 {
        return Err(Error::Argument("need at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} is out of range for {classes} classes"
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }

    let mut model = SoftmaxClassifier::zeros(classes, dim);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut logits = vec![0.0f64; classes];
    let mut probs = vec![0.0f64; classes];
    for epoch in 0..cfg.epochs {
        for i in (1..n).rev() {
            let j = rng.next_index(i + 1);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut gw = vec![0.0f64; classes * dim];
            let mut gb = vec![0.0f64; classes];
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let row = x.row(i);
                model.logits(row, &mut logits);
                let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut denom = 0.0;
                for (p, &l) in probs.iter_mut().zip(logits.iter()) {
                    *p = (l - mx).exp();
                    denom += *p;
                }
                for p in probs.iter_mut() {
                    *p /= denom;
                }
                let y = labels[i];
                let w = omega.values[y];
                batch_loss += -w * probs[y].ln();
                for c in 0..classes {
                    let indicator = if c == y { 1.0 } else { 0.0 };
                    let g = w * (probs[c] - indicator) * scale;
                    gb[c] += g;
                    for (slot, v) in gw[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                        *slot += g * v.widen();
                    }
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("cross entropy became {batch_loss}"),
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            for (w, g) in model.w.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.b.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok((model, trace))
}

/// Per-class accuracy; classes absent from the labels come back as None.
pub fn per_class_accuracy<S: Scalar>(
    model: &SoftmaxClassifier,
    x: &DataMatrix<S>,
    labels: &[usize],
) -> Result<Vec<Option<f64>>> {
    if labels.len() != x.n() {
        return Err(Error::Argument(format!(
            "got {} labels for {} rows",
            labels.len(),
            x.n()
        )));
    }
    if x.dim() != model.dim {
        return Err(Error::Argument(format!(
            "classifier expects {}-dimensional input, data is {}-dimensional",
            model.dim,
            x.dim()
        )));
    }
    let mut hit = vec![0usize; model.classes];
    let mut count = vec![0usize; model.classes];
    for i in 0..x.n() {
        let y = labels[i];
        if y >= model.classes {
            return Err(Error::Argument(format!(
                "label {y} is out of range for {} classes",
                model.classes
            )));
        }
        count[y] += 1;
        if model.predict(x.row(i)) == y {
            hit[y] += 1;
        }
    }
    Ok(hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| if c == 0 { None } else { Some(h as f64 / c as f64) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_data(n_each: usize, gap: f64, seed: u64) -> (DataMatrix<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut values = Vec::with_capacity(2 * n_each * 2);
        for _ in 0..n_each {
            values.push(rng.next_normal());
            values.push(rng.next_normal());
        }
        for _ in 0..n_each {
            values.push(gap + rng.next_normal());
            values.push(gap + rng.next_normal());
        }
        let labels = (0..2 * n_each).map(|i| usize::from(i >= n_each)).collect();
        (DataMatrix::new(2 * n_each, 2, values).unwrap(), labels)
    }

    #[test]
    fn equal_estimates_recover_standard_weights() {
        let w = id_weights(&[4.2, 4.2, 4.2]).unwrap();
        for v in &w.values {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn direct_arithmetic_case() {
        let w = id_weights(&[3.0, 5.0]).unwrap();
        assert_eq!(w.values, vec![0.75, 1.25]);
    }

    #[test]
    fn weights_sum_to_class_count() {
        let w = id_weights(&[0.3, 7.7, 2.9, 11.0, 0.04]).unwrap();
        let sum: f64 = w.values.iter().sum();
        assert!((sum - 5.0).abs() <= 1e-12);
    }

    #[test]
    fn weights_are_scale_invariant() {
        let a = id_weights(&[2.0, 3.0, 5.0]).unwrap();
        let b = id_weights(&[2.0e3, 3.0e3, 5.0e3]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn non_positive_estimates_are_rejected() {
        assert!(id_weights(&[1.0, 0.0]).is_err());
        assert!(id_weights(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn unit_weights_match_plain_cross_entropy_exactly() {
        let (x, labels) = two_class_data(60, 2.0, 3);
        let cfg = SoftmaxConfig { epochs: 20, seed: 5, ..SoftmaxConfig::default() };
        let (_, weighted) =
            train_softmax_weighted(&x, &labels, &ClassWeights::ones(2), &cfg).unwrap();
        // independent unweighted run, written from the plain CE formula
        let (_, plain) = train_softmax_plain_reference(&x, &labels, 2, &cfg);
        assert_eq!(weighted.len(), plain.len());
        for (a, b) in weighted.iter().zip(&plain) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    /// Reference implementation of standard (unweighted) cross-entropy
    /// training used as the oracle for the omega = 1 identity.
    fn train_softmax_plain_reference(
        x: &DataMatrix<f64>,
        labels: &[usize],
        classes: usize,
        cfg: &SoftmaxConfig,
    ) -> (SoftmaxClassifier, Vec<f64>) {
        let n = x.n();
        let dim = x.dim();
        let mut model = SoftmaxClassifier::zeros(classes, dim);
        let mut rng = Rng::new(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::new();
        for _ in 0..cfg.epochs {
            for i in (1..n).rev() {
                let j = rng.next_index(i + 1);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let scale = 1.0 / batch.len() as f64;
                let mut gw = vec![0.0; classes * dim];
                let mut gb = vec![0.0; classes];
                let mut batch_loss = 0.0;
                for &i in batch {
                    let row = x.row(i);
                    let mut logits = vec![0.0; classes];
                    model.logits(row, &mut logits);
                    let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut probs: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                    let denom: f64 = probs.iter().sum();
                    for p in probs.iter_mut() {
                        *p /= denom;
                    }
                    let y = labels[i];
                    let w = 1.0;
                    batch_loss += -w * probs[y].ln();
                    for c in 0..classes {
                        let indicator = if c == y { 1.0 } else { 0.0 };
                        let g = w * (probs[c] - indicator) * scale;
                        gb[c] += g;
                        for (slot, v) in gw[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                            *slot += g * v;
                        }
                    }
                }
                epoch_loss += batch_loss * scale * batch.len() as f64;
                for (w, g) in model.w.iter_mut().zip(&gw) {
                    *w -= cfg.learning_rate * g;
                }
                for (b, g) in model.b.iter_mut().zip(&gb) {
                    *b -= cfg.learning_rate * g;
                }
            }
            trace.push(epoch_loss / n as f64);
        }
        (model, trace)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        // 3-class, 20-point toy problem.
        let mut rng = Rng::new(21);
        let n = 20;
        let dim = 3;
        let values: Vec<f64> = (0..n * dim).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(n, dim, values).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let omega = id_weights(&[1.0, 2.0, 3.0]).unwrap();

        let mut model = SoftmaxClassifier::zeros(3, dim);
        let mut r2 = Rng::new(33);
        for w in model.w.iter_mut() {
            *w = 0.3 * r2.next_normal();
        }
        for b in model.b.iter_mut() {
            *b = 0.1 * r2.next_normal();
        }

        let loss = |model: &SoftmaxClassifier| -> f64 {
            let mut total = 0.0;
            let mut logits = vec![0.0; 3];
            for i in 0..n {
                model.logits(x.row(i), &mut logits);
                let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let p = (logits[labels[i]] - mx).exp() / denom;
                total += -omega.values[labels[i]] * p.ln();
            }
            total / n as f64
        };

        // analytic full-batch gradient
        let mut gw = vec![0.0; 3 * dim];
        let mut gb = vec![0.0; 3];
        let scale = 1.0 / n as f64;
        let mut logits = vec![0.0; 3];
        for i in 0..n {
            model.logits(x.row(i), &mut logits);
            let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut probs: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let denom: f64 = probs.iter().sum();
            for p in probs.iter_mut() {
                *p /= denom;
            }
            let y = labels[i];
            for c in 0..3 {
                let indicator = if c == y { 1.0 } else { 0.0 };
                let g = omega.values[y] * (probs[c] - indicator) * scale;
                gb[c] += g;
                for (slot, v) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x.row(i)) {
                    *slot += g * v;
                }
            }
        }

        let h = 1e-6;
        let mut probe = model.clone();
        for wi in 0..probe.w.len() {
            let orig = probe.w[wi];
            probe.w[wi] = orig + h;
            let lp = loss(&probe);
            probe.w[wi] = orig - h;
            let lm = loss(&probe);
            probe.w[wi] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = gw[wi];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!((an - fd).abs() / denom <= 1e-4, "w[{wi}]: {an} vs {fd}");
        }
        for bi in 0..probe.b.len() {
            let orig = probe.b[bi];
            probe.b[bi] = orig + h;
            let lp = loss(&probe);
            probe.b[bi] = orig - h;
            let lm = loss(&probe);
            probe.b[bi] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = gb[bi];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!((an - fd).abs() / denom <= 1e-4, "b[{bi}]: {an} vs {fd}");
        }
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let (x, labels) = two_class_data(50, 30.0, 7);
        let cfg = SoftmaxConfig { epochs: 200, learning_rate: 0.5, ..SoftmaxConfig::default() };
        let (model, trace) =
            train_softmax_weighted(&x, &labels, &ClassWeights::ones(2), &cfg).unwrap();
        let acc = per_class_accuracy(&model, &x, &labels).unwrap();
        assert_eq!(acc, vec![Some(1.0), Some(1.0)]);
        assert!(trace.last().unwrap() < &0.05);
    }

    #[test]
    fn constant_classifier_accuracy_pattern() {
        let (x, labels) = two_class_data(10, 3.0, 9);
        // Bias strongly toward class 0: constant prediction.
        let mut model = SoftmaxClassifier::zeros(2, 2);
        model.b[0] = 100.0;
        let acc = per_class_accuracy(&model, &x, &labels).unwrap();
        assert_eq!(acc, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn random_classifier_hits_one_third_on_three_classes() {
        let mut mean_acc = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = Rng::new(900 + seed);
            let n = 300;
            let values: Vec<f64> = (0..n * 3).map(|_| rng.next_normal()).collect();
            let x = DataMatrix::new(n, 3, values).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| (rng.next_u64() % 3) as usize).collect();
            let mut model = SoftmaxClassifier::zeros(3, 3);
            for w in model.w.iter_mut() {
                *w = rng.next_normal();
            }
            let acc = per_class_accuracy(&model, &x, &labels).unwrap();
            let vals: Vec<f64> = acc.iter().flatten().copied().collect();
            mean_acc += vals.iter().sum::<f64>() / vals.len() as f64 / seeds as f64;
        }
        assert!((mean_acc - 1.0 / 3.0).abs() < 0.06, "mean accuracy {mean_acc}");
    }

    #[test]
    fn absent_class_is_flagged_undefined() {
        let (x, mut labels) = two_class_data(10, 3.0, 11);
        for l in labels.iter_mut() {
            *l = 0;
        }
        let model = SoftmaxClassifier::zeros(2, 2);
        let acc = per_class_accuracy(&model, &x, &labels).unwrap();
        assert!(acc[0].is_some());
        assert!(acc[1].is_none());
    }

    #[test]
    fn classifier_roundtrips_through_disk() {
        let (x, labels) = two_class_data(30, 5.0, 13);
        let cfg = SoftmaxConfig { epochs: 10, ..SoftmaxConfig::default() };
        let (model, trace) =
            train_softmax_weighted(&x, &labels, &ClassWeights::ones(2), &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("stratum-clf-{}", std::process::id()));
        save_classifier(&model, &trace, &dir).unwrap();
        let (loaded, trace2) = load_classifier(&dir).unwrap();
        for (a, b) in model.collect_params().iter().zip(loaded.collect_params()) {
            assert_eq!(*a as f32 as f64, b);
        }
        assert_eq!(trace, trace2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
