use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionVariant, GainMode};
use crate::index::{IndexConfig, SearchMode};

/// Session configuration, stored on disk as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub dim: usize,
    /// Neighbors consulted for the data view.
    pub k: usize,
    /// Cosine-distance radius; the data view's similarity floor is `1 - delta_distance`.
    pub delta_distance: f64,
    pub batch_size: usize,
    pub annotator_alpha: f64,
    /// Selection stops once the largest gain is at most this.
    pub stop_threshold: f64,
    pub sampling_temperature: f64,
    pub redundancy_drop: bool,
    pub gain_mode: GainMode,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub index: IndexConfig,
    pub class_names: Vec<String>,
}

const DEFAULT_ANNOTATOR_ALPHA: f64 = 0.9;

impl EngineConfig {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        let k = 10;
        Self {
            dim,
            k,
            delta_distance: 0.2,
            batch_size: 32,
            annotator_alpha: DEFAULT_ANNOTATOR_ALPHA,
            stop_threshold: 0.05 * DEFAULT_ANNOTATOR_ALPHA,
            sampling_temperature: 1.0,
            redundancy_drop: true,
            gain_mode: GainMode::Proxy,
            fusion: FusionConfig {
                num_classes,
                variant: FusionVariant::LowerBound,
                confidence_threshold: 0.5,
            },
            seed: 0,
            index: IndexConfig::default().with_neighbor_count(k),
            class_names: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fusion.num_classes
    }

    /// Similarity floor for data-view neighbors.
    pub fn min_similarity(&self) -> f64 {
        1.0 - self.delta_distance
    }

    /// Sets the annotator confidence and resets the stop threshold to its
    /// default of 5% of it.
    pub fn with_annotator_alpha(mut self, alpha: f64) -> Self {
        self.annotator_alpha = alpha;
        self.stop_threshold = 0.05 * alpha;
        self
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if self.fusion.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.fusion.num_classes));
        }
        if !(0.0..=1.0).contains(&self.fusion.confidence_threshold) {
            return fail("confidence_threshold must lie in [0, 1]".into());
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.delta_distance) {
            return fail(format!("delta_distance {} outside [0, 2]", self.delta_distance));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.annotator_alpha) {
            return fail(format!("annotator_alpha {} outside [0, 1]", self.annotator_alpha));
        }
        if !(self.stop_threshold >= 0.0 && self.stop_threshold.is_finite()) {
            return fail(format!("stop_threshold {} must be finite and >= 0", self.stop_threshold));
        }
        if !(self.sampling_temperature > 0.0 && self.sampling_temperature.is_finite()) {
            return fail(format!(
                "sampling_temperature {} must be finite and > 0",
                self.sampling_temperature
            ));
        }
        if self.index.m < 2 || self.index.ef_construction == 0 || self.index.ef_query == 0 {
            return fail("index_m must be >= 2 and beam widths positive".into());
        }
        if self.index.overfetch == 0 || self.index.range_cap == 0 {
            return fail("index_overfetch and index_range_cap must be positive".into());
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.fusion.num_classes {
            return fail(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.fusion.num_classes
            ));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    /// `dim` and `num_classes` are required; `stop_threshold` defaults to 5%
    /// of `annotator_alpha` and `index_overfetch` to `4 * k`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            if pairs.iter().any(|(k, _): &(&str, &str)| *k == key) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            pairs.push((key, value.trim()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);

        let dim = parse_required(get("dim"), "dim")?;
        let num_classes = parse_required(get("num_classes"), "num_classes")?;
        let mut cfg = Self::new(dim, num_classes);
        let mut stop_threshold = None;
        let mut overfetch = None;

        for &(key, value) in &pairs {
            match key {
                "dim" | "num_classes" => {}
                "k" => cfg.k = parse_value(key, value)?,
                "delta_distance" => cfg.delta_distance = parse_value(key, value)?,
                "batch_size" => cfg.batch_size = parse_value(key, value)?,
                "annotator_alpha" => cfg.annotator_alpha = parse_value(key, value)?,
                "stop_threshold" => stop_threshold = Some(parse_value(key, value)?),
                "sampling_temperature" => cfg.sampling_temperature = parse_value(key, value)?,
                "redundancy_drop" => cfg.redundancy_drop = parse_value(key, value)?,
                "gain_mode" => {
                    cfg.gain_mode = GainMode::parse(value)
                        .ok_or_else(|| Error::Config(format!("unknown gain_mode {value}")))?
                }
                "fusion_variant" => {
                    cfg.fusion.variant = FusionVariant::parse(value)
                        .ok_or_else(|| Error::Config(format!("unknown fusion_variant {value}")))?
                }
                "confidence_threshold" => {
                    cfg.fusion.confidence_threshold = parse_value(key, value)?
                }
                "seed" => cfg.seed = parse_value(key, value)?,
                "index_mode" => {
                    cfg.index.mode = SearchMode::parse(value)
                        .ok_or_else(|| Error::Config(format!("unknown index_mode {value}")))?
                }
                "index_m" => cfg.index.m = parse_value(key, value)?,
                "index_ef_construction" => cfg.index.ef_construction = parse_value(key, value)?,
                "index_ef_query" => cfg.index.ef_query = parse_value(key, value)?,
                "index_overfetch" => overfetch = Some(parse_value(key, value)?),
                "index_range_cap" => cfg.index.range_cap = parse_value(key, value)?,
                "class_names" => {
                    cfg.class_names = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                other => return Err(Error::Config(format!("unknown key {other}"))),
            }
        }
        cfg.stop_threshold = stop_threshold.unwrap_or(0.05 * cfg.annotator_alpha);
        cfg.index.seed = cfg.seed;
        cfg.index = match overfetch {
            Some(n) => IndexConfig { overfetch: n, ..cfg.index },
            None => cfg.index.with_neighbor_count(cfg.k),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("dim", &self.dim);
        put("num_classes", &self.fusion.num_classes);
        put("k", &self.k);
        put("delta_distance", &self.delta_distance);
        put("batch_size", &self.batch_size);
        put("annotator_alpha", &self.annotator_alpha);
        put("stop_threshold", &self.stop_threshold);
        put("sampling_temperature", &self.sampling_temperature);
        put("redundancy_drop", &self.redundancy_drop);
        put("gain_mode", &self.gain_mode.as_str());
        put("fusion_variant", &self.fusion.variant.as_str());
        put("confidence_threshold", &self.fusion.confidence_threshold);
        put("seed", &self.seed);
        put("index_mode", &self.index.mode.as_str());
        put("index_m", &self.index.m);
        put("index_ef_construction", &self.index.ef_construction);
        put("index_ef_query", &self.index.ef_query);
        put("index_overfetch", &self.index.overfetch);
        put("index_range_cap", &self.index.range_cap);
        if !self.class_names.is_empty() {
            put("class_names", &self.class_names.join(","));
        }
        out
    }
}

fn parse_required<T: FromStr>(value: Option<&str>, key: &str) -> Result<T> {
    let value = value.ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
    parse_value(key, value)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}
