use serde::{Deserialize, Serialize};

/// One sample as it enters the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub id: String,
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub id: String,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_id: String,
    pub label: usize,
    /// Falls back to the session's annotator confidence when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_alpha: Option<f64>,
}

/// A state-changing operation. The journal is a sequence of these; replaying
/// it against an empty engine with the same config rebuilds the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Ingest {
        samples: Vec<IngestRecord>,
    },
    ModelPredictions {
        predictions: Vec<ModelPrediction>,
    },
    /// `selected` is filled in with the outcome when journaled and checked
    /// against the recomputed outcome on replay.
    Select {
        requested: usize,
        #[serde(default)]
        selected: Vec<String>,
    },
    SelectUnlabeled {
        requested: usize,
        #[serde(default)]
        selected: Vec<String>,
    },
    /// Returns selected samples to the unlabeled pool.
    Release {
        ids: Vec<String>,
    },
    Tombstone {
        ids: Vec<String>,
    },
    Annotate(Annotation),
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Ingest { .. } => "ingest",
            Event::ModelPredictions { .. } => "model_predictions",
            Event::Select { .. } => "select",
            Event::SelectUnlabeled { .. } => "select_unlabeled",
            Event::Release { .. } => "release",
            Event::Tombstone { .. } => "tombstone",
            Event::Annotate(_) => "annotate",
        }
    }
}

/// A journal line: the event plus its position in the mutation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub sequence: u64,
    #[serde(flatten)]
    pub event: Event,
}
