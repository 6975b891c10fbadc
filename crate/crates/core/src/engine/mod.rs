//! The selection loop: per-sample fused beliefs and gains, gain-proportional
//! batch selection, annotation with neighborhood rechecking, and the stop rule.
//!
//! Every mutation is an [`Event`]; the engine assigns each applied event the
//! next sequence number, and replaying a journal of events against a fresh
//! engine with the same config reproduces the session bit for bit.

mod config;
mod event;
pub(crate) mod sampling;
mod snapshot;

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{
    annotation_gain, argmax, fuse_predictions, knn_predict, PredictionState, Source,
};
use crate::index::VectorIndex;
use crate::vector::{cosine_distance, EmbeddingVector};

pub use config::EngineConfig;
pub use event::{Annotation, Event, IngestRecord, LoggedEvent, ModelPrediction};
pub use snapshot::{SESSION_MAGIC, SESSION_VERSION};

/// Number of equal-width gain histogram bins over [0, 1].
pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Unlabeled,
    Selected,
    Annotated,
    Tombstoned,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Unlabeled => "unlabeled",
            Status::Selected => "selected",
            Status::Annotated => "annotated",
            Status::Tombstoned => "tombstoned",
        }
    }

    /// Still waiting for a label, whether or not it has been handed out.
    fn is_open(self) -> bool {
        matches!(self, Status::Unlabeled | Status::Selected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sample {
    pub status: Status,
    pub state: PredictionState,
    pub model: Option<PredictionState>,
    pub gain: f64,
    pub label: Option<usize>,
    pub annotated_at: Option<u64>,
    pub oracle_label: Option<usize>,
    pub payload_uri: Option<String>,
}

/// Read-only view of one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: String,
    pub status: Status,
    pub state: PredictionState,
    pub model: Option<PredictionState>,
    pub gain: f64,
    pub label: Option<usize>,
    pub annotated_at: Option<u64>,
    pub oracle_label: Option<usize>,
    pub payload_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PredictionReport {
    pub updated: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborUpdate {
    pub id: String,
    pub old_alpha: f64,
    pub new_alpha: f64,
    pub old_gain: f64,
    pub new_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecheckReport {
    pub sequence: u64,
    pub sample_id: String,
    pub updated: Vec<NeighborUpdate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopDiagnostics {
    pub stop: bool,
    pub max_gain: f64,
    pub total_gain: f64,
    pub positive_gain_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub total: usize,
    pub unlabeled: usize,
    pub selected: usize,
    pub annotated: usize,
    pub tombstoned: usize,
    /// Annotated share of the samples that are not tombstoned.
    pub annotated_fraction: f64,
    pub gain_histogram: Vec<u64>,
    pub events: u64,
}

/// Result of applying one [`Event`].
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ingested(usize),
    Predictions(PredictionReport),
    Selected(Vec<String>),
    Released(usize),
    Tombstoned(usize),
    Annotated(RecheckReport),
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    /// Every sample, keyed by its dense position.
    pool: VectorIndex,
    /// Annotated samples only; the data view is a query against this.
    labeled: VectorIndex,
    ids: Vec<String>,
    positions: HashMap<String, u32>,
    samples: Vec<Sample>,
    sequence: u64,
    round: u64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            pool: VectorIndex::new(config.dim, config.index.clone()),
            labeled: VectorIndex::new(config.dim, config.index.clone()),
            config,
            ids: Vec::new(),
            positions: HashMap::new(),
            samples: Vec::new(),
            sequence: 0,
            round: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sequence number of the last applied event (0 before any).
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn pool_index(&self) -> &VectorIndex {
        &self.pool
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<SampleRecord> {
        self.positions.get(id).map(|&i| self.record(i as usize))
    }

    pub fn record(&self, position: usize) -> SampleRecord {
        let s = &self.samples[position];
        SampleRecord {
            id: self.ids[position].clone(),
            status: s.status,
            state: s.state.clone(),
            model: s.model.clone(),
            gain: s.gain,
            label: s.label,
            annotated_at: s.annotated_at,
            oracle_label: s.oracle_label,
            payload_uri: s.payload_uri.clone(),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).map(|&i| i as usize)
    }

    /// Unit embedding of the sample at `position`.
    pub fn vector_at(&self, position: usize) -> &[f32] {
        self.pool.vector(position as u64).expect("pool holds every sample")
    }

    pub fn status_at(&self, position: usize) -> Status {
        self.samples[position].status
    }

    pub fn gain_at(&self, position: usize) -> f64 {
        self.samples[position].gain
    }

    pub fn oracle_label_at(&self, position: usize) -> Option<usize> {
        self.samples[position].oracle_label
    }

    /// `(position, label)` for every annotated sample, in position order.
    pub fn annotated(&self) -> Vec<(usize, usize)> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status == Status::Annotated)
            .filter_map(|(i, s)| s.label.map(|l| (i, l)))
            .collect()
    }

    fn lookup(&self, id: &str) -> Result<usize> {
        self.position(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn apply(&mut self, event: &Event) -> Result<Outcome> {
        Ok(match event {
            Event::Ingest { samples } => Outcome::Ingested(self.ingest(samples)?),
            Event::ModelPredictions { predictions } => {
                Outcome::Predictions(self.set_model_predictions(predictions))
            }
            Event::Select { requested, .. } => Outcome::Selected(self.select_batch(*requested)?),
            Event::SelectUnlabeled { requested, .. } => {
                Outcome::Selected(self.select_unlabeled_batch(*requested)?)
            }
            Event::Release { ids } => Outcome::Released(self.release(ids)?),
            Event::Tombstone { ids } => Outcome::Tombstoned(self.tombstone(ids)?),
            Event::Annotate(a) => Outcome::Annotated(self.apply_annotation(a)?),
        })
    }

    /// Applies a journaled event, checking its sequence number and, for
    /// selections, that the recomputed picks match the recorded ones.
    pub fn replay(&mut self, logged: &LoggedEvent) -> Result<Outcome> {
        let expected = self.sequence + 1;
        if logged.sequence != expected {
            return Err(Error::ReplayDivergence {
                sequence: logged.sequence,
                reason: format!("expected sequence {expected}"),
            });
        }
        let outcome = self.apply(&logged.event)?;
        if let (
            Event::Select { selected, .. } | Event::SelectUnlabeled { selected, .. },
            Outcome::Selected(picked),
        ) = (&logged.event, &outcome)
        {
            if selected != picked {
                return Err(Error::ReplayDivergence {
                    sequence: logged.sequence,
                    reason: format!(
                        "selection of {} ids differs from the {} recorded",
                        picked.len(),
                        selected.len()
                    ),
                });
            }
        }
        Ok(outcome)
    }

    /// Adds samples to the pool. The whole batch is validated before any
    /// sample is inserted.
    pub fn ingest(&mut self, records: &[IngestRecord]) -> Result<usize> {
        let c = self.config.num_classes();
        let mut vectors = Vec::with_capacity(records.len());
        let mut fresh = HashMap::with_capacity(records.len());
        for r in records {
            if self.positions.contains_key(&r.id) || fresh.insert(r.id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.vector.len() != self.config.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.dim,
                    actual: r.vector.len(),
                });
            }
            if let Some(label) = r.oracle_label.filter(|&l| l >= c) {
                return Err(Error::InvalidArgument(format!(
                    "oracle label {label} of {} out of range for {c} classes",
                    r.id
                )));
            }
            let v = EmbeddingVector::new(r.vector.clone())
                .map_err(|e| Error::InvalidVector(format!("{}: {e}", r.id)))?;
            vectors.push(v);
        }

        self.sequence += 1;
        let first = self.samples.len();
        for (r, v) in records.iter().zip(&vectors) {
            let position = self.samples.len() as u32;
            self.pool.insert(u64::from(position), v)?;
            self.positions.insert(r.id.clone(), position);
            self.ids.push(r.id.clone());
            self.samples.push(Sample {
                status: Status::Unlabeled,
                state: PredictionState::uniform(c, Source::Fused),
                model: None,
                gain: 0.0,
                label: None,
                annotated_at: None,
                oracle_label: r.oracle_label,
                payload_uri: r.payload_uri.clone(),
            });
        }
        for position in first..self.samples.len() {
            self.refresh(position);
        }
        Ok(records.len())
    }

    /// Stores model views and re-fuses open samples. Invalid entries are
    /// reported and skipped; the rest apply.
    pub fn set_model_predictions(&mut self, predictions: &[ModelPrediction]) -> PredictionReport {
        self.sequence += 1;
        let c = self.config.num_classes();
        let mut report = PredictionReport::default();
        for p in predictions {
            let Some(position) = self.position(&p.id) else {
                report.rejected.push(Rejection {
                    id: p.id.clone(),
                    reason: "unknown id".into(),
                });
                continue;
            };
            if p.probs.len() != c {
                report.rejected.push(Rejection {
                    id: p.id.clone(),
                    reason: format!("expected {c} probabilities, got {}", p.probs.len()),
                });
                continue;
            }
            let state = match PredictionState::from_model(p.probs.clone()) {
                Ok(s) => s,
                Err(e) => {
                    report.rejected.push(Rejection {
                        id: p.id.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            self.samples[position].model = Some(state);
            if self.samples[position].status.is_open() {
                self.refresh(position);
            }
            report.updated += 1;
        }
        report
    }

    /// Data view of the sample at `position`: confidence-weighted vote of its
    /// nearest annotated neighbors within the radius.
    fn data_view(&self, position: usize) -> PredictionState {
        let c = self.config.num_classes();
        if self.labeled.is_empty() {
            return PredictionState::uniform(c, Source::Data);
        }
        let min_sim = self.config.min_similarity();
        let hits = self.labeled.knn_raw(self.vector_at(position), self.config.k);
        let neighbors: Vec<(PredictionState, f64)> = hits
            .iter()
            .filter_map(|h| {
                let sim = f64::from(h.similarity);
                let s = &self.samples[h.id as usize];
                (sim >= min_sim && s.status == Status::Annotated).then(|| (s.state.as_vote(), sim))
            })
            .collect();
        knn_predict(&neighbors, min_sim, c)
    }

    /// Recomputes the fused state and gain of an open sample.
    fn refresh(&mut self, position: usize) {
        let c = self.config.num_classes();
        let data = self.data_view(position);
        let sample = &self.samples[position];
        let fused = match &sample.model {
            Some(model) => fuse_predictions(model, &data, &self.config.fusion),
            None => fuse_predictions(&PredictionState::uniform(c, Source::Model), &data, &self.config.fusion),
        }
        .expect("class counts are validated on entry");
        let gain = annotation_gain(fused.alpha(), self.config.annotator_alpha, self.config.gain_mode);
        let sample = &mut self.samples[position];
        sample.state = fused;
        sample.gain = gain;
    }

    /// Re-fuses every open sample within the radius of `position`.
    fn recheck(&mut self, position: usize) -> Vec<NeighborUpdate> {
        let radius = self.config.delta_distance as f32;
        let hits = self
            .pool
            .range_raw(self.vector_at(position), radius, self.config.index.range_cap);
        let mut updated = Vec::new();
        for hit in hits {
            let n = hit.id as usize;
            if n == position || !self.samples[n].status.is_open() {
                continue;
            }
            let (old_alpha, old_gain) = (self.samples[n].state.alpha(), self.samples[n].gain);
            self.refresh(n);
            updated.push(NeighborUpdate {
                id: self.ids[n].clone(),
                old_alpha,
                new_alpha: self.samples[n].state.alpha(),
                old_gain,
                new_gain: self.samples[n].gain,
            });
        }
        updated
    }

    /// Records a label and rechecks the neighborhood around it.
    pub fn apply_annotation(&mut self, annotation: &Annotation) -> Result<RecheckReport> {
        let position = self.lookup(&annotation.sample_id)?;
        let c = self.config.num_classes();
        if annotation.label >= c {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {c} classes",
                annotation.label
            )));
        }
        let alpha = annotation.annotator_alpha.unwrap_or(self.config.annotator_alpha);
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("annotator_alpha {alpha} outside [0, 1]")));
        }
        let sample = &self.samples[position];
        match sample.status {
            Status::Annotated => {
                return Err(Error::AlreadyAnnotated {
                    id: annotation.sample_id.clone(),
                    sequence: sample.annotated_at.unwrap_or(0),
                })
            }
            Status::Tombstoned => {
                return Err(Error::InvalidArgument(format!(
                    "sample {} is tombstoned",
                    annotation.sample_id
                )))
            }
            Status::Unlabeled | Status::Selected => {}
        }

        self.sequence += 1;
        let state = PredictionState::one_hot(c, annotation.label, alpha, Source::Annotator)?;
        let v = EmbeddingVector::from_normalized(self.vector_at(position).to_vec());
        self.labeled.insert(position as u64, &v)?;
        let sample = &mut self.samples[position];
        sample.status = Status::Annotated;
        sample.state = state;
        sample.gain = 0.0;
        sample.label = Some(annotation.label);
        sample.annotated_at = Some(self.sequence);
        let updated = self.recheck(position);
        Ok(RecheckReport {
            sequence: self.sequence,
            sample_id: annotation.sample_id.clone(),
            updated,
        })
    }

    /// Draws up to `size` unlabeled samples with probability proportional to
    /// `gain^(1/temperature)` and marks them selected.
    pub fn select_batch(&mut self, size: usize) -> Result<Vec<String>> {
        if size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.sequence += 1;
        let round = self.next_round();
        let inv_t = 1.0 / self.config.sampling_temperature;
        let weights = self
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status == Status::Unlabeled && s.gain > 0.0)
            .map(|(i, s)| (i as u32, s.gain.powf(inv_t)));
        let order = sampling::draw_order(self.config.seed, round, weights);
        let picks = self.take_non_redundant(order, size);
        for &p in &picks {
            self.samples[p].status = Status::Selected;
        }
        Ok(picks.into_iter().map(|p| self.ids[p].clone()).collect())
    }

    /// Like [`select_batch`](Self::select_batch) with `semi_gain` as the
    /// weight. Picks are returned but keep their status.
    pub fn select_unlabeled_batch(&mut self, size: usize) -> Result<Vec<String>> {
        if size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.sequence += 1;
        let round = self.next_round();
        let inv_t = 1.0 / self.config.sampling_temperature;
        let weights: Vec<(u32, f64)> = (0..self.samples.len())
            .filter(|&i| self.samples[i].status == Status::Unlabeled)
            .map(|i| (i as u32, self.semi_gain_at(i).powf(inv_t)))
            .collect();
        let order = sampling::draw_order(self.config.seed, round, weights.into_iter());
        let picks = self.take_non_redundant(order, size);
        Ok(picks.into_iter().map(|p| self.ids[p].clone()).collect())
    }

    fn next_round(&mut self) -> u64 {
        let round = self.round;
        self.round += 1;
        round
    }

    /// Walks the draw order, skipping a candidate when an earlier pick with
    /// the same fused argmax lies within the radius.
    fn take_non_redundant(&self, order: Vec<sampling::Keyed>, size: usize) -> Vec<usize> {
        let mut picks = Vec::with_capacity(size.min(order.len()));
        if !self.config.redundancy_drop {
            picks.extend(order.iter().take(size).map(|k| k.item as usize));
            return picks;
        }
        let dim = self.config.dim;
        let radius = self.config.delta_distance as f32;
        // Per argmax class, the picked vectors laid out contiguously.
        let mut buckets: HashMap<usize, Vec<f32>> = HashMap::new();
        for k in order {
            if picks.len() >= size {
                break;
            }
            let i = k.item as usize;
            let v = self.vector_at(i);
            let bucket = buckets.entry(self.samples[i].state.argmax()).or_default();
            if bucket.chunks_exact(dim).any(|p| cosine_distance(v, p) <= radius) {
                continue;
            }
            bucket.extend_from_slice(v);
            picks.push(i);
        }
        picks
    }

    /// Returns selected samples to the unlabeled pool; other statuses are left alone.
    pub fn release(&mut self, ids: &[String]) -> Result<usize> {
        let positions = ids.iter().map(|id| self.lookup(id)).collect::<Result<Vec<_>>>()?;
        self.sequence += 1;
        let mut released = 0;
        for p in positions {
            if self.samples[p].status == Status::Selected {
                self.samples[p].status = Status::Unlabeled;
                released += 1;
            }
        }
        Ok(released)
    }

    /// Removes samples from selection for good. Tombstoning an annotated
    /// sample withdraws its label, so its neighborhood is rechecked.
    pub fn tombstone(&mut self, ids: &[String]) -> Result<usize> {
        let positions = ids.iter().map(|id| self.lookup(id)).collect::<Result<Vec<_>>>()?;
        self.sequence += 1;
        let mut count = 0;
        for p in positions {
            let was = self.samples[p].status;
            if was == Status::Tombstoned {
                continue;
            }
            self.samples[p].status = Status::Tombstoned;
            self.samples[p].gain = 0.0;
            count += 1;
            if was == Status::Annotated {
                self.recheck(p);
            }
        }
        Ok(count)
    }

    pub fn should_stop(&self) -> StopDiagnostics {
        let mut max_gain = 0.0f64;
        let mut total_gain = 0.0;
        let mut positive_gain_count = 0;
        for s in self.samples.iter().filter(|s| s.status.is_open()) {
            max_gain = max_gain.max(s.gain);
            total_gain += s.gain;
            positive_gain_count += usize::from(s.gain > 0.0);
        }
        StopDiagnostics {
            stop: max_gain <= self.config.stop_threshold,
            max_gain,
            total_gain,
            positive_gain_count,
        }
    }

    /// Sum of cosine distances from the sample to those of its k nearest
    /// neighbors that are selected or annotated.
    pub fn semi_gain(&self, id: &str) -> Result<f64> {
        Ok(self.semi_gain_at(self.lookup(id)?))
    }

    fn semi_gain_at(&self, position: usize) -> f64 {
        let k = self.config.k;
        self.pool
            .knn_raw(self.vector_at(position), k + 1)
            .into_iter()
            .filter(|h| h.id as usize != position)
            .take(k)
            .filter(|h| {
                matches!(
                    self.samples[h.id as usize].status,
                    Status::Selected | Status::Annotated
                )
            })
            .map(|h| f64::from(h.distance))
            .sum()
    }

    pub fn stats(&self) -> Stats {
        let mut counts = [0usize; 4];
        let mut histogram = vec![0u64; HISTOGRAM_BINS];
        for s in &self.samples {
            counts[s.status as usize] += 1;
            let bin = ((s.gain * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
        let [unlabeled, selected, annotated, tombstoned] = counts;
        let live = self.samples.len() - tombstoned;
        Stats {
            total: self.samples.len(),
            unlabeled,
            selected,
            annotated,
            tombstoned,
            annotated_fraction: if live == 0 {
                0.0
            } else {
                annotated as f64 / live as f64
            },
            gain_histogram: histogram,
            events: self.sequence,
        }
    }

    /// Serializes the session into the `ICSS` snapshot format.
    pub fn snapshot(&self) -> Vec<u8> {
        snapshot::encode(self)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        snapshot::decode(bytes)
    }

    /// Argmax of the sample's current fused belief.
    pub fn predicted_class_at(&self, position: usize) -> usize {
        argmax(self.samples[position].state.probs())
    }
}
