//! Confidence calculus for combining a model-view prediction with a data-view
//! prediction.
//!
//! A confidence `alpha` is the probability that a predictor's top label is
//! right, rescaled so that chance level maps to 0 and certainty to 1. Two
//! predictors that agree reinforce each other; two confident predictors that
//! disagree lower the winner's confidence. How much probability mass the
//! "both wrong but matching" (or "other") event gets is the [`FusionVariant`].

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Gains below this are treated as exactly zero.
const GAIN_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Model,
    Data,
    Fused,
    Annotator,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Model => "model",
            Source::Data => "data",
            Source::Fused => "fused",
            Source::Annotator => "annotator",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Source::Model => 0,
            Source::Data => 1,
            Source::Fused => 2,
            Source::Annotator => 3,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Source::Model,
            1 => Source::Data,
            2 => Source::Fused,
            3 => Source::Annotator,
            _ => return None,
        })
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A class distribution plus a scalar confidence in its argmax.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionState {
    probs: Vec<f64>,
    alpha: f64,
    source: Source,
}

impl PredictionState {
    pub fn new(probs: Vec<f64>, alpha: f64, source: Source) -> Result<Self> {
        validate_probs(&probs)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self {
            probs,
            alpha,
            source,
        })
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>, alpha: f64, source: Source) -> Self {
        Self {
            probs,
            alpha,
            source,
        }
    }

    /// Uniform distribution with zero confidence.
    pub fn uniform(num_classes: usize, source: Source) -> Self {
        Self {
            probs: vec![1.0 / num_classes as f64; num_classes],
            alpha: 0.0,
            source,
        }
    }

    pub fn one_hot(num_classes: usize, label: usize, alpha: f64, source: Source) -> Result<Self> {
        if label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let mut probs = vec![0.0; num_classes];
        probs[label] = 1.0;
        Self::new(probs, alpha, source)
    }

    /// A model's probability vector, with confidence derived from its top mass.
    pub fn from_model(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs)?;
        let c = probs.len();
        let p_max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let alpha = model_confidence(p_max, c);
        Ok(Self {
            probs,
            alpha,
            source: Source::Model,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// The distribution this state votes with as a neighbor: its own
    /// distribution mixed with uniform in proportion to its confidence, so a
    /// label with confidence `alpha` carries exactly `alpha` of evidence.
    pub fn as_vote(&self) -> PredictionState {
        let c = self.probs.len() as f64;
        let probs = self
            .probs
            .iter()
            .map(|p| self.alpha * p + (1.0 - self.alpha) / c)
            .collect();
        Self {
            probs,
            alpha: self.alpha,
            source: self.source,
        }
    }
}

pub(crate) fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "probability vector needs at least 2 classes, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// How much mass the "both wrong yet consistent" event receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    /// All residual mass: `(1-a1)(1-a2)` on agreement, `(1-a1)a2` on divergence.
    /// Gives the smallest fused confidence of the three.
    LowerBound,
    /// Residual mass spread uniformly over the `C - 1` other classes.
    UniformOverClasses,
    /// No residual mass.
    ZeroMass,
}

impl FusionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionVariant::LowerBound => "lower_bound",
            FusionVariant::UniformOverClasses => "uniform_over_classes",
            FusionVariant::ZeroMass => "zero_mass",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lower_bound" => Some(FusionVariant::LowerBound),
            "uniform_over_classes" | "uniform" => Some(FusionVariant::UniformOverClasses),
            "zero_mass" | "zero" => Some(FusionVariant::ZeroMass),
            _ => None,
        }
    }

    fn residual(self, mass: f64, num_classes: usize) -> f64 {
        match self {
            FusionVariant::LowerBound => mass,
            FusionVariant::UniformOverClasses => mass / (num_classes as f64 - 1.0),
            FusionVariant::ZeroMass => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub num_classes: usize,
    pub variant: FusionVariant,
    /// Minimum confidence for a view to count as confident when views diverge.
    pub confidence_threshold: f64,
}

impl FusionConfig {
    pub fn new(num_classes: usize) -> Result<Self> {
        let cfg = Self {
            num_classes,
            variant: FusionVariant::LowerBound,
            confidence_threshold: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_variant(mut self, variant: FusionVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

/// `(acc - 1/C) / (1 - 1/C)`, clamped at 0 for below-chance accuracy.
pub fn accuracy_to_confidence(accuracy: f64, num_classes: usize) -> Result<f64> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::InvalidArgument(format!(
            "accuracy {accuracy} outside [0, 1]"
        )));
    }
    Ok(rescale_above_chance(accuracy, num_classes))
}

fn rescale_above_chance(p: f64, num_classes: usize) -> f64 {
    let chance = 1.0 / num_classes as f64;
    ((p - chance) / (1.0 - chance)).clamp(0.0, 1.0)
}

/// Confidence of a model whose top class has probability `p_max`.
pub fn model_confidence(p_max: f64, num_classes: usize) -> f64 {
    if num_classes < 2 || !p_max.is_finite() {
        return 0.0;
    }
    rescale_above_chance(p_max.clamp(0.0, 1.0), num_classes)
}

/// Data-view prediction from annotated neighbors: the mixture of neighbor
/// distributions weighted by `alpha * similarity`, over neighbors with
/// similarity at least `min_similarity`.
///
/// With no qualifying neighbor (or zero total weight) the result is uniform
/// with zero confidence.
pub fn knn_predict(
    neighbors: &[(PredictionState, f64)],
    min_similarity: f64,
    num_classes: usize,
) -> PredictionState {
    let mut mix = vec![0.0; num_classes];
    let mut total = 0.0;
    for (state, sim) in neighbors {
        if *sim < min_similarity || state.probs.len() != num_classes {
            continue;
        }
        let weight = state.alpha * sim;
        if weight <= 0.0 {
            continue;
        }
        total += weight;
        for (m, p) in mix.iter_mut().zip(&state.probs) {
            *m += weight * p;
        }
    }
    if total <= 0.0 {
        return PredictionState::uniform(num_classes, Source::Data);
    }
    mix.iter_mut().for_each(|m| *m /= total);
    let p_max = mix.iter().copied().fold(0.0, f64::max);
    let alpha = rescale_above_chance(p_max, num_classes);
    PredictionState::new_unchecked(mix, alpha, Source::Data)
}

/// Confidence after two independent predictors agree on the same label.
///
/// A zero denominator (no evidence either way) resolves to `max(a1, a2)`.
pub fn fuse_agree(a1: f64, a2: f64, cfg: &FusionConfig) -> f64 {
    let joint = a1 * a2;
    let residual = cfg
        .variant
        .residual((1.0 - a1) * (1.0 - a2), cfg.num_classes);
    let denom = joint + residual;
    if denom <= 0.0 {
        return a1.max(a2);
    }
    (joint / denom).clamp(0.0, 1.0)
}

/// Which input won a divergent fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    First,
    Second,
}

/// Confidence of the more confident predictor after two predictors disagree.
/// Ties go to the first input.
///
/// The result is at most the winner's confidence only when the loser is at
/// least half confident, which is why [`fuse_predictions`] calls this only
/// when both views clear the confidence threshold.
pub fn fuse_disagree(a1: f64, a2: f64, cfg: &FusionConfig) -> (Winner, f64) {
    let (winner, hi, lo) = if a1 >= a2 {
        (Winner::First, a1, a2)
    } else {
        (Winner::Second, a2, a1)
    };
    let own = hi * (1.0 - lo);
    let residual = cfg.variant.residual((1.0 - hi) * lo, cfg.num_classes);
    let denom = own + residual;
    if denom <= 0.0 {
        // Both certain and contradicting: the limit along hi == lo.
        return (winner, 0.5 * hi);
    }
    (winner, (own / denom).clamp(0.0, 1.0))
}

/// Fuses the model view with the data view.
///
/// A view with zero confidence carries no label and yields the other view.
/// Otherwise agreeing argmaxes combine through [`fuse_agree`] with an
/// alpha-weighted mixture as the distribution. Diverging argmaxes keep the
/// confident view when only one clears the threshold, go through
/// [`fuse_disagree`] when both do, and keep the more confident view untouched
/// when neither does.
pub fn fuse_predictions(
    model: &PredictionState,
    data: &PredictionState,
    cfg: &FusionConfig,
) -> Result<PredictionState> {
    for state in [model, data] {
        if state.num_classes() != cfg.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: cfg.num_classes,
                actual: state.num_classes(),
            });
        }
    }
    let (am, ad) = (model.alpha, data.alpha);
    if ad == 0.0 {
        return Ok(model.clone().with_source(Source::Fused));
    }
    if am == 0.0 {
        return Ok(data.clone().with_source(Source::Fused));
    }

    if model.argmax() == data.argmax() {
        let alpha = fuse_agree(am, ad, cfg);
        let mut probs: Vec<f64> = model
            .probs
            .iter()
            .zip(&data.probs)
            .map(|(pm, pd)| am * pm + ad * pd)
            .collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        return Ok(PredictionState::new_unchecked(probs, alpha, Source::Fused));
    }

    let thr = cfg.confidence_threshold;
    let pick = |first: bool| if first { model } else { data };
    let fused = match (am >= thr, ad >= thr) {
        (true, true) => {
            let (winner, alpha) = fuse_disagree(am, ad, cfg);
            let base = pick(winner == Winner::First);
            PredictionState::new_unchecked(base.probs.clone(), alpha, Source::Fused)
        }
        (true, false) | (false, true) => {
            let base = pick(am >= thr);
            PredictionState::new_unchecked(base.probs.clone(), am.max(ad), Source::Fused)
        }
        (false, false) => pick(am >= ad).clone().with_source(Source::Fused),
    };
    Ok(fused)
}

/// Binary entropy in nats, with `H(0) = H(1) = 0`.
pub fn binary_entropy(alpha: f64) -> f64 {
    let a = alpha.clamp(0.0, 1.0);
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.ln() };
    term(a) + term(1.0 - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    /// Confidence itself stands in for information: `max(a_ann - a_merged, 0)`.
    Proxy,
    /// Entropy reduction `max(H(a_merged) - H(a_ann), 0)`.
    Entropy,
}

impl GainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GainMode::Proxy => "proxy",
            GainMode::Entropy => "entropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proxy" => Some(GainMode::Proxy),
            "entropy" => Some(GainMode::Entropy),
            _ => None,
        }
    }
}

/// Uncertainty of a prediction held with confidence `alpha`. Confidence below
/// one half is as uncertain as a coin flip, which keeps the entropy gain
/// monotone and gives a know-nothing sample the full `ln 2`.
fn prediction_entropy(alpha: f64) -> f64 {
    binary_entropy(alpha.max(0.5))
}

/// Expected gain of having the annotator label a sample whose fused
/// confidence is `merged_alpha`.
pub fn annotation_gain(merged_alpha: f64, annotator_alpha: f64, mode: GainMode) -> f64 {
    let raw = match mode {
        GainMode::Proxy => annotator_alpha - merged_alpha,
        GainMode::Entropy => prediction_entropy(merged_alpha) - prediction_entropy(annotator_alpha),
    };
    if raw > GAIN_EPSILON {
        raw
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(c: usize, variant: FusionVariant) -> FusionConfig {
        FusionConfig::new(c).unwrap().with_variant(variant)
    }

    fn lb() -> FusionConfig {
        cfg(2, FusionVariant::LowerBound)
    }

    #[test]
    fn accuracy_mapping() {
        assert_eq!(accuracy_to_confidence(1.0, 10).unwrap(), 1.0);
        assert_eq!(accuracy_to_confidence(0.1, 10).unwrap(), 0.0);
        // (0.55 - 0.5) / (1 - 0.5)
        assert!((accuracy_to_confidence(0.55, 2).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(accuracy_to_confidence(0.02, 10).unwrap(), 0.0);
        assert!(accuracy_to_confidence(1.2, 10).is_err());
        assert!(accuracy_to_confidence(-0.1, 10).is_err());
        assert!(accuracy_to_confidence(0.5, 1).is_err());
    }

    #[test]
    fn model_confidence_values() {
        assert_eq!(model_confidence(1.0, 10), 1.0);
        assert_eq!(model_confidence(0.1, 10), 0.0);
        assert_eq!(model_confidence(0.05, 10), 0.0);
        // (0.46 - 0.1) / 0.9
        assert!((model_confidence(0.46, 10) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn knn_single_neighbor_is_identity() {
        let n = PredictionState::one_hot(3, 0, 1.0, Source::Annotator).unwrap();
        let out = knn_predict(&[(n, 0.9)], 0.5, 3);
        assert_eq!(out.probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(out.alpha(), 1.0);
        assert_eq!(out.source(), Source::Data);
    }

    #[test]
    fn knn_weighted_mixture() {
        let a = PredictionState::one_hot(2, 0, 1.0, Source::Annotator).unwrap();
        let b = PredictionState::one_hot(2, 1, 1.0, Source::Annotator).unwrap();
        let out = knn_predict(&[(a, 1.0), (b, 0.5)], 0.0, 2);
        // weights 1.0 and 0.5 over one-hot vectors
        assert!((out.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out.probs()[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.alpha() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_without_qualifying_neighbors_is_uniform() {
        let a = PredictionState::one_hot(4, 2, 1.0, Source::Annotator).unwrap();
        let out = knn_predict(&[(a, 0.3)], 0.8, 4);
        assert_eq!(out.probs(), &[0.25; 4]);
        assert_eq!(out.alpha(), 0.0);
        assert_eq!(knn_predict(&[], 0.0, 4).alpha(), 0.0);
    }

    #[test]
    fn vote_of_a_label_carries_its_confidence() {
        let s = PredictionState::one_hot(10, 4, 0.9, Source::Annotator).unwrap();
        let out = knn_predict(&[(s.as_vote(), 1.0)], 0.0, 10);
        assert_eq!(out.argmax(), 4);
        assert!((out.alpha() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn agree_examples() {
        assert!((fuse_agree(0.5, 0.5, &lb()) - 0.5).abs() < 1e-15);
        for a2 in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(fuse_agree(1.0, a2, &lb()), 1.0);
        }
        // 0.48 / (0.48 + 0.2 * 0.4)
        assert!((fuse_agree(0.8, 0.6, &lb()) - 0.48 / 0.56).abs() < 1e-12);
        // 0.48 / (0.48 + 0.08 / 9)
        let u = cfg(10, FusionVariant::UniformOverClasses);
        assert!((fuse_agree(0.8, 0.6, &u) - 0.48 / (0.48 + 0.08 / 9.0)).abs() < 1e-12);
        let z = cfg(10, FusionVariant::ZeroMass);
        assert_eq!(fuse_agree(0.0, 0.0, &z), 0.0);
        assert_eq!(fuse_agree(0.3, 0.6, &z), 1.0);
    }

    #[test]
    fn disagree_examples() {
        let (w, a) = fuse_disagree(0.8, 0.6, &lb());
        assert_eq!(w, Winner::First);
        // 0.32 / (0.32 + 0.2 * 0.6)
        assert!((a - 0.32 / 0.44).abs() < 1e-12);
        let (w, a) = fuse_disagree(0.6, 0.8, &lb());
        assert_eq!(w, Winner::Second);
        assert!((a - 0.32 / 0.44).abs() < 1e-12);
        let (w, a) = fuse_disagree(0.7, 0.0, &lb());
        assert_eq!((w, a), (Winner::First, 1.0));
        let (w, a) = fuse_disagree(0.7, 0.7, &lb());
        assert_eq!(w, Winner::First);
        assert!((a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fuse_predictions_examples() {
        let c = cfg(10, FusionVariant::LowerBound);
        let model = PredictionState::new(one_hot_probs(10, 3), 0.9, Source::Model).unwrap();
        let data = PredictionState::new(one_hot_probs(10, 3), 0.9, Source::Data).unwrap();
        let out = fuse_predictions(&model, &data, &c).unwrap();
        assert_eq!(out.argmax(), 3);
        assert_eq!(out.source(), Source::Fused);
        // 0.81 / (0.81 + 0.01)
        assert!((out.alpha() - 0.81 / 0.82).abs() < 1e-12);

        let model = PredictionState::new(one_hot_probs(10, 3), 0.9, Source::Model).unwrap();
        let data = PredictionState::new(one_hot_probs(10, 5), 0.2, Source::Data).unwrap();
        let out = fuse_predictions(&model, &data, &c).unwrap();
        assert_eq!((out.argmax(), out.alpha()), (3, 0.9));

        let model = PredictionState::new(one_hot_probs(10, 0), 0.8, Source::Model).unwrap();
        let data = PredictionState::new(one_hot_probs(10, 1), 0.6, Source::Data).unwrap();
        let out = fuse_predictions(&model, &data, &c).unwrap();
        assert_eq!(out.argmax(), 0);
        assert!((out.alpha() - 0.32 / 0.44).abs() < 1e-12);

        let model = PredictionState::new(one_hot_probs(10, 0), 0.3, Source::Model).unwrap();
        let data = PredictionState::new(one_hot_probs(10, 1), 0.4, Source::Data).unwrap();
        let out = fuse_predictions(&model, &data, &c).unwrap();
        assert_eq!((out.argmax(), out.alpha()), (1, 0.4));
    }

    #[test]
    fn abstaining_view_yields_the_other() {
        let c = cfg(4, FusionVariant::LowerBound);
        let model = PredictionState::uniform(4, Source::Model);
        let data = PredictionState::new(one_hot_probs(4, 0), 0.9, Source::Data).unwrap();
        let out = fuse_predictions(&model, &data, &c).unwrap();
        assert_eq!((out.argmax(), out.alpha()), (0, 0.9));
        let both = fuse_predictions(&model, &PredictionState::uniform(4, Source::Data), &c).unwrap();
        assert_eq!(both.alpha(), 0.0);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let c = cfg(4, FusionVariant::LowerBound);
        let model = PredictionState::uniform(3, Source::Model);
        let data = PredictionState::uniform(4, Source::Data);
        assert!(matches!(
            fuse_predictions(&model, &data, &c),
            Err(Error::ClassCountMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((binary_entropy(0.9) - h).abs() < 1e-15);
        assert!((binary_entropy(0.9) - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn gain_examples() {
        assert!((annotation_gain(0.3, 0.9, GainMode::Proxy) - 0.6).abs() < 1e-12);
        assert_eq!(annotation_gain(0.95, 0.9, GainMode::Proxy), 0.0);
        assert_eq!(annotation_gain(0.9, 0.9, GainMode::Proxy), 0.0);
        assert!(
            (annotation_gain(0.5, 1.0, GainMode::Entropy) - std::f64::consts::LN_2).abs() < 1e-15
        );
        assert!(annotation_gain(0.0, 0.9, GainMode::Entropy) > 0.0);
    }

    fn one_hot_probs(c: usize, label: usize) -> Vec<f64> {
        let mut p = vec![0.0; c];
        p[label] = 1.0;
        p
    }

    fn variant() -> impl Strategy<Value = FusionVariant> {
        prop_oneof![
            Just(FusionVariant::LowerBound),
            Just(FusionVariant::UniformOverClasses),
            Just(FusionVariant::ZeroMass),
        ]
    }

    proptest! {
        #[test]
        fn agree_is_symmetric(a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0, v in variant(), c in 2usize..50) {
            let cfg = cfg(c, v);
            prop_assert_eq!(fuse_agree(a1, a2, &cfg), fuse_agree(a2, a1, &cfg));
        }

        #[test]
        fn variants_are_ordered(a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0, c in 2usize..50) {
            let l = fuse_agree(a1, a2, &cfg(c, FusionVariant::LowerBound));
            let u = fuse_agree(a1, a2, &cfg(c, FusionVariant::UniformOverClasses));
            let z = fuse_agree(a1, a2, &cfg(c, FusionVariant::ZeroMass));
            prop_assert!(l <= u + 1e-15 && u <= z + 1e-15);
        }

        #[test]
        fn agreement_beyond_the_bound_reinforces(a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0, c in 2usize..200) {
            let max = a1.max(a2);
            if a1.min(a2) > 0.5 && max < 1.0 {
                prop_assert!(fuse_agree(a1, a2, &cfg(c, FusionVariant::LowerBound)) > max);
            }
            if a1.min(a2) > 1.0 / c as f64 && max < 1.0 {
                prop_assert!(fuse_agree(a1, a2, &cfg(c, FusionVariant::UniformOverClasses)) > max);
            }
        }

        #[test]
        fn divergence_never_raises_confidence(a1 in 0.0f64..=1.0, a2 in prop_oneof![Just(0.0), 0.0f64..=1.0]) {
            let (hi, lo) = if a1 >= a2 { (a1, a2) } else { (a2, a1) };
            let (_, out) = fuse_disagree(hi, lo, &lb());
            if lo == 0.0 {
                // Disagreeing with a know-nothing predictor leaves no doubt.
                prop_assert!(hi == 0.0 || out == 1.0);
            } else if lo >= 0.5 {
                // Both confident, the only case that reaches this branch.
                prop_assert!(out <= hi + 1e-15);
                if hi < 1.0 {
                    prop_assert!(out < hi);
                }
            }
        }

        #[test]
        fn gain_is_monotone(m1 in 0.0f64..=1.0, m2 in 0.0f64..=1.0, a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0) {
            for mode in [GainMode::Proxy, GainMode::Entropy] {
                let (lo_m, hi_m) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
                prop_assert!(annotation_gain(hi_m, a1, mode) <= annotation_gain(lo_m, a1, mode));
                let (lo_a, hi_a) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
                prop_assert!(annotation_gain(m1, lo_a, mode) <= annotation_gain(m1, hi_a, mode));
            }
        }

        #[test]
        fn knn_is_order_and_scale_invariant(
            raw in prop::collection::vec((0usize..4, 0.05f64..1.0, 0.05f64..1.0), 1..12),
            scale in 0.1f64..0.9,
        ) {
            let neighbors: Vec<(PredictionState, f64)> = raw
                .iter()
                .map(|&(label, alpha, sim)| {
                    (PredictionState::one_hot(4, label, alpha, Source::Annotator).unwrap().as_vote(), sim)
                })
                .collect();
            let base = knn_predict(&neighbors, 0.0, 4);
            let mut reversed = neighbors.clone();
            reversed.reverse();
            let rev = knn_predict(&reversed, 0.0, 4);
            let scaled: Vec<_> = neighbors.iter().map(|(s, sim)| (s.clone(), sim * scale)).collect();
            let sc = knn_predict(&scaled, 0.0, 4);
            for i in 0..4 {
                prop_assert!((base.probs()[i] - rev.probs()[i]).abs() < 1e-12);
                prop_assert!((base.probs()[i] - sc.probs()[i]).abs() < 1e-12);
            }
            let sum: f64 = base.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn fused_state_is_valid(
            lm in 0usize..5, ld in 0usize..5,
            am in 0.0f64..=1.0, ad in 0.0f64..=1.0,
            v in variant(),
        ) {
            let c = cfg(5, v);
            let model = PredictionState::new(one_hot_probs(5, lm), am, Source::Model).unwrap();
            let data = PredictionState::new(one_hot_probs(5, ld), ad, Source::Data).unwrap();
            let out = fuse_predictions(&model, &data, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.alpha()));
            let sum: f64 = out.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
