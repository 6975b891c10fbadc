//! Multinomial logistic regression over embeddings.
//!
//! Training minimizes mean cross-entropy plus `l2_penalty / 2 * |W|^2` (the
//! bias is not penalized) by gradient descent with step `lr / sqrt(epoch)`.
//! Full-batch mode has no randomness at all; mini-batch mode shuffles with a
//! seeded generator.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::vector::EmbeddingVector;

pub const HEAD_MAGIC: &[u8; 4] = b"ICLH";
pub const HEAD_VERSION: u16 = 1;
const FORMAT: &str = "linear head";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub l2_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl LinearHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            l2_penalty: TrainConfig::default().l2_penalty,
        }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "head needs >= 2 classes and a positive dimension, got {classes} x {dim}"
            )));
        }
        if weights.len() != classes * dim || bias.len() != classes {
            return Err(Error::InvalidArgument("weight or bias length disagrees with shape".into()));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("head entries must be finite".into()));
        }
        Ok(Self {
            classes,
            dim,
            weights,
            bias,
            l2_penalty: TrainConfig::default().l2_penalty,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Affine map `W x + b` of a slice already known to have the right length.
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .map(|(w, &v)| w * f64::from(v))
                    .sum::<f64>()
                    + b
            })
            .collect()
    }

    pub fn predict(&self, v: &EmbeddingVector) -> Result<Vec<f64>> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(softmax(&self.logits(v.as_slice())))
    }

    pub fn predict_slice(&self, x: &[f32]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Largest singular value of the weight matrix.
    pub fn operator_norm(&self) -> f64 {
        let w = DMatrix::from_row_slice(self.classes, self.dim, &self.weights);
        w.singular_values().max()
    }

    /// Mean cross-entropy plus the L2 term.
    pub fn loss(&self, features: &[&[f32]], labels: &[usize]) -> f64 {
        let ce: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let z = self.logits(x);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[y]
            })
            .sum();
        let reg: f64 = self.weights.iter().map(|w| w * w).sum();
        ce / features.len() as f64 + 0.5 * self.l2_penalty * reg
    }

    /// Gradient of [`loss`](Self::loss) as `(weights, bias)`.
    pub fn gradient(&self, features: &[&[f32]], labels: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.classes];
        for (x, &y) in features.iter().zip(labels) {
            let mut p = self.predict_slice(x);
            p[y] -= 1.0;
            for (c, &err) in p.iter().enumerate() {
                gb[c] += err;
                let row = &mut gw[c * self.dim..(c + 1) * self.dim];
                for (g, &v) in row.iter_mut().zip(x.iter()) {
                    *g += err * f64::from(v);
                }
            }
        }
        let n = features.len() as f64;
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g = *g / n + self.l2_penalty * w;
        }
        gb.iter_mut().for_each(|g| *g /= n);
        (gw, gb)
    }

    fn step(&mut self, features: &[&[f32]], labels: &[usize], lr: f64) {
        let (gw, gb) = self.gradient(features, labels);
        self.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
        self.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
    }

    /// Continues training from the current parameters.
    pub fn fit(&mut self, features: &[&[f32]], labels: &[usize], cfg: &TrainConfig) -> Result<()> {
        check_training_set(self, features, labels)?;
        self.l2_penalty = cfg.l2_penalty;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut batch_x = Vec::new();
        let mut batch_y = Vec::new();
        for epoch in 1..=cfg.epochs {
            let lr = cfg.learning_rate / (epoch as f64).sqrt();
            match cfg.batch_size {
                None => self.step(features, labels, lr),
                Some(size) => {
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(size.max(1)) {
                        batch_x.clear();
                        batch_y.clear();
                        batch_x.extend(chunk.iter().map(|&i| features[i]));
                        batch_y.extend(chunk.iter().map(|&i| labels[i]));
                        self.step(&batch_x, &batch_y, lr);
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes into the `ICLH` format (weights and bias as f32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(HEAD_MAGIC);
        w.put_u16(HEAD_VERSION);
        w.put_u32(self.classes as u32);
        w.put_u32(self.dim as u32);
        self.weights.iter().for_each(|&v| w.put_f32(v as f32));
        self.bias.iter().for_each(|&v| w.put_f32(v as f32));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, FORMAT);
        r.header(HEAD_MAGIC, HEAD_VERSION)?;
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let cells = (classes as u64)
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_add(classes as u64))
            .ok_or_else(|| Error::corrupt(FORMAT, "shape overflow"))?;
        r.check_count(cells, 4)?;
        let weights = (0..classes * dim)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..classes)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_parts(classes, dim, weights, bias).map_err(|e| Error::corrupt(FORMAT, e.to_string()))
    }
}

fn check_training_set(head: &LinearHead, features: &[&[f32]], labels: &[usize]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(x) = features.iter().find(|x| x.len() != head.dim) {
        return Err(Error::DimensionMismatch {
            expected: head.dim,
            actual: x.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= head.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            head.classes
        )));
    }
    Ok(())
}

/// Trains a fresh head from zero weights.
pub fn train(
    features: &[&[f32]],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<LinearHead> {
    let dim = features.first().map_or(0, |x| x.len());
    if features.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut head = LinearHead::from_parts(classes, dim, vec![0.0; classes * dim], vec![0.0; classes])?;
    head.fit(features, labels, cfg)?;
    Ok(head)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(head: &LinearHead, features: &[&[f32]], labels: &[usize]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| crate::fusion::argmax(&head.logits(x)) == y)
        .count();
    correct as f64 / features.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
            .into_inner()
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let head = LinearHead::zeros(4, 3);
        let v = EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(head.predict(&v).unwrap(), vec![0.25; 4]);
        assert!(matches!(
            head.predict(&EmbeddingVector::new(vec![1.0]).unwrap()),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn separable_points_are_learned() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let features: Vec<&[f32]> = vec![&a, &b];
        let labels = [0, 1];
        let head = train(&features, &labels, 2, &TrainConfig::default()).unwrap();
        assert_eq!(accuracy(&head, &features, &labels), 1.0);
    }

    #[test]
    fn duplicated_data_trains_the_same_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..30).map(|_| unit(&mut rng, 5)).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let features: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let doubled_x: Vec<&[f32]> = features.iter().chain(&features).copied().collect();
        let doubled_y: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let cfg = TrainConfig::default();
        let once = train(&features, &labels, 3, &cfg).unwrap();
        let twice = train(&doubled_x, &doubled_y, 3, &cfg).unwrap();
        for (a, b) in once.weights().iter().zip(twice.weights()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_never_increases_at_the_default_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f32>> = (0..200).map(|_| unit(&mut rng, 8)).collect();
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
        let features: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let mut head = LinearHead::zeros(4, 8);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let mut last = head.loss(&features, &labels);
        for epoch in 1..=50 {
            // One epoch at a time with the decayed rate of that epoch.
            let step = TrainConfig {
                learning_rate: cfg.learning_rate / (epoch as f64).sqrt(),
                ..cfg
            };
            head.fit(&features, &labels, &step).unwrap();
            let now = head.loss(&features, &labels);
            assert!(now <= last + 1e-12, "epoch {epoch}: {now} > {last}");
            last = now;
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f32>> = (0..40).map(|_| unit(&mut rng, 6)).collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
        let features: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let weights = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut head = LinearHead::from_parts(3, 6, weights, bias).unwrap();
        head.l2_penalty = 0.01;
        let (gw, _) = head.gradient(&features, &labels);
        let h = 1e-6;
        for coord in 0..18 {
            let mut plus = head.clone();
            plus.weights[coord] += h;
            let mut minus = head.clone();
            minus.weights[coord] -= h;
            let numeric = (plus.loss(&features, &labels) - minus.loss(&features, &labels)) / (2.0 * h);
            let rel = (numeric - gw[coord]).abs() / numeric.abs().max(gw[coord].abs()).max(1e-8);
            assert!(rel <= 1e-4, "coord {coord}: {numeric} vs {}", gw[coord]);
        }
    }

    #[test]
    fn mini_batch_training_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> = (0..64).map(|_| unit(&mut rng, 4)).collect();
        let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let features: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig { batch_size: Some(8), seed: 4, epochs: 10, ..Default::default() };
        let a = train(&features, &labels, 2, &cfg).unwrap();
        let b = train(&features, &labels, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&features, &labels, 2, &TrainConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_input_errors() {
        assert!(matches!(train(&[], &[], 2, &TrainConfig::default()), Err(Error::Empty(_))));
        let x = [1.0f32, 0.0];
        assert!(train(&[&x], &[2], 2, &TrainConfig::default()).is_err());
        let mut head = LinearHead::zeros(2, 3);
        assert!(matches!(
            head.fit(&[&x], &[0], &TrainConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn class_permutation_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f32>> = (0..60).map(|_| unit(&mut rng, 5)).collect();
        let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
        let features: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig::default();
        let a = train(&features, &labels, 3, &cfg).unwrap();
        let b = train(&features, &permuted, 3, &cfg).unwrap();
        for x in &features {
            let pa = a.predict_slice(x);
            let pb = b.predict_slice(x);
            for c in 0..3 {
                assert!((pa[c] - pb[perm[c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_norm_of_known_matrices() {
        let diag = LinearHead::from_parts(2, 2, vec![3.0, 0.0, 0.0, -4.0], vec![0.0; 2]).unwrap();
        assert!((diag.operator_norm() - 4.0).abs() < 1e-12);
        let rank_one = LinearHead::from_parts(2, 3, vec![1.0, 2.0, 2.0, 1.0, 2.0, 2.0], vec![0.0; 2]).unwrap();
        // sqrt(2) * |(1, 2, 2)|
        assert!((rank_one.operator_norm() - 2f64.sqrt() * 3.0).abs() < 1e-12);
    }

    #[test]
    fn head_bytes_round_trip() {
        let head = LinearHead::from_parts(2, 3, vec![0.5, -1.25, 2.0, 0.0, 1.0, -3.5], vec![0.25, -0.75]).unwrap();
        let bytes = head.to_bytes();
        let back = LinearHead::from_bytes(&bytes).unwrap();
        assert_eq!(back.weights(), head.weights());
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(LinearHead::from_bytes(&bytes[..bytes.len() - 2]), Err(Error::Corrupt { .. })));
        let mut bad = bytes.clone();
        bad[4] = 3;
        assert!(matches!(LinearHead::from_bytes(&bad), Err(Error::Version { found: 3, .. })));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 2..64)) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn scaling_logits_keeps_argmax(logits in prop::collection::vec(-50.0f64..50.0, 2..16), t in 0.01f64..100.0) {
            let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
            prop_assert_eq!(crate::fusion::argmax(&softmax(&logits)), crate::fusion::argmax(&softmax(&scaled)));
        }
    }
}
