use std::collections::HashSet;

use coevo_core::engine::{Annotation, IngestRecord, LoggedEvent, ModelPrediction};
use coevo_core::session::Session;
use coevo_core::{EmbeddingVector, Engine, EngineConfig, Event, IndexConfig, SearchMode, Status, VectorIndex};
use proptest::prelude::*;

const DIM: usize = 4;
const CLASSES: usize = 3;

#[derive(Debug, Clone)]
enum Op {
    Predict(usize, usize, f64),
    Select(usize),
    Annotate(usize, usize),
    Release(usize),
    Tombstone(usize),
    SelectUnlabeled(usize),
}

fn op(n: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..n, 0..CLASSES, 0.34f64..1.0).prop_map(|(i, c, p)| Op::Predict(i, c, p)),
        (1usize..6).prop_map(Op::Select),
        (0..n, 0..CLASSES).prop_map(|(i, c)| Op::Annotate(i, c)),
        (0..n).prop_map(Op::Release),
        (0..n).prop_map(Op::Tombstone),
        (1usize..4).prop_map(Op::SelectUnlabeled),
    ]
}

fn pool() -> impl Strategy<Value = Vec<Vec<f32>>> {
    // Few distinct directions, so duplicates and near neighbors are common.
    prop::collection::vec(prop::collection::vec(-2i8..=2, DIM), 2..40).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let mut v: Vec<f32> = r.into_iter().map(f32::from).collect();
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                v
            })
            .collect()
    })
}

fn to_event(op: &Op) -> Event {
    let id = |i: usize| format!("s{i}");
    match *op {
        Op::Predict(i, c, p) => {
            let mut probs = vec![(1.0 - p) / (CLASSES - 1) as f64; CLASSES];
            probs[c] = p;
            Event::ModelPredictions { predictions: vec![ModelPrediction { id: id(i), probs }] }
        }
        Op::Select(n) => Event::Select { requested: n, selected: Vec::new() },
        Op::Annotate(i, c) => Event::Annotate(Annotation { sample_id: id(i), label: c, annotator_alpha: None }),
        Op::Release(i) => Event::Release { ids: vec![id(i)] },
        Op::Tombstone(i) => Event::Tombstone { ids: vec![id(i)] },
        Op::SelectUnlabeled(n) => Event::SelectUnlabeled { requested: n, selected: Vec::new() },
    }
}

fn config(mode: SearchMode) -> EngineConfig {
    let mut cfg = EngineConfig::new(DIM, CLASSES);
    cfg.index.mode = mode;
    cfg.batch_size = 4;
    cfg
}

fn check_state(e: &Engine) -> Result<(), TestCaseError> {
    let alpha = e.config().annotator_alpha;
    let mut max_open = 0.0f64;
    for i in 0..e.len() {
        let r = e.record(i);
        prop_assert!((0.0..=alpha + 1e-12).contains(&r.gain), "{r:?}");
        match r.status {
            Status::Annotated => {
                prop_assert_eq!(r.gain, 0.0);
                prop_assert!(r.label.is_some());
            }
            Status::Tombstoned => prop_assert_eq!(r.gain, 0.0),
            Status::Unlabeled | Status::Selected => max_open = max_open.max(r.gain),
        }
        let sum: f64 = r.state.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
    }
    let stop = e.should_stop();
    prop_assert_eq!(stop.max_gain, max_open);
    prop_assert_eq!(stop.stop, max_open <= e.config().stop_threshold);
    let stats = e.stats();
    prop_assert_eq!(stats.unlabeled + stats.selected + stats.annotated + stats.tombstoned, stats.total);
    prop_assert_eq!(stats.gain_histogram.iter().sum::<u64>() as usize, stats.total);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_event_sequences_keep_invariants_and_replay(
        rows in pool(),
        ops in prop::collection::vec(op(40), 1..40),
        approximate in any::<bool>(),
    ) {
        let n = rows.len();
        let mode = if approximate { SearchMode::Approximate } else { SearchMode::Exact };
        let mut e = Engine::new(config(mode)).unwrap();
        let records: Vec<IngestRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| IngestRecord { id: format!("s{i}"), vector: v.clone(), oracle_label: None, payload_uri: None })
            .collect();
        let mut journal = vec![LoggedEvent { sequence: 1, event: Event::Ingest { samples: records.clone() } }];
        e.apply(&journal[0].event).unwrap();
        for op in ops.iter().filter(|o| !matches!(o, Op::Predict(i, ..) | Op::Annotate(i, _) | Op::Release(i) | Op::Tombstone(i) if *i >= n)) {
            let before: HashSet<String> = (0..n).filter(|&i| e.status_at(i) == Status::Unlabeled).map(|i| format!("s{i}")).collect();
            let mut event = to_event(op);
            let Ok(outcome) = e.apply(&event) else { continue };
            if let coevo_core::engine::Outcome::Selected(ids) = &outcome {
                let unique: HashSet<&String> = ids.iter().collect();
                prop_assert_eq!(unique.len(), ids.len());
                prop_assert!(ids.iter().all(|id| before.contains(id)));
                match &mut event {
                    Event::Select { requested, selected } | Event::SelectUnlabeled { requested, selected } => {
                        prop_assert!(ids.len() <= *requested);
                        *selected = ids.clone();
                    }
                    _ => unreachable!(),
                }
            }
            journal.push(LoggedEvent { sequence: e.sequence(), event });
            check_state(&e)?;
        }

        let mut replayed = Engine::new(config(mode)).unwrap();
        for logged in &journal {
            replayed.replay(logged).unwrap();
        }
        prop_assert_eq!(replayed.snapshot(), e.snapshot());
        let restored = Engine::restore(&e.snapshot()).unwrap();
        prop_assert_eq!(restored.snapshot(), e.snapshot());
    }

    #[test]
    fn range_hits_lie_inside_the_radius_and_match_exact(
        rows in pool(),
        query in prop::collection::vec(-2i8..=2, DIM),
        radius in 0.0f32..1.0,
    ) {
        prop_assume!(query.iter().any(|&x| x != 0));
        let q = EmbeddingVector::new(query.into_iter().map(f32::from).collect()).unwrap();
        let mut exact = VectorIndex::new(DIM, IndexConfig { mode: SearchMode::Exact, ..IndexConfig::default() });
        let mut approx = VectorIndex::new(DIM, IndexConfig::default());
        for (i, r) in rows.iter().enumerate() {
            let v = EmbeddingVector::new(r.clone()).unwrap();
            exact.insert(i as u64, &v).unwrap();
            approx.insert(i as u64, &v).unwrap();
        }
        let truth: Vec<u64> = (0..rows.len() as u64)
            .filter(|&i| coevo_core::vector::cosine_distance(exact.vector(i).unwrap(), q.as_slice()) <= radius)
            .collect();
        for index in [&exact, &approx] {
            let hits = index.range(&q, radius).unwrap();
            prop_assert!(hits.iter().all(|h| h.distance <= radius));
            prop_assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
            let mut ids: Vec<u64> = hits.iter().map(|h| h.id).collect();
            ids.sort_unstable();
            prop_assert_eq!(&ids, &truth);
        }
    }
}

#[test]
fn session_survives_restart_between_every_event() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let cfg = config(SearchMode::Approximate);
    Session::init(&path, cfg.clone()).unwrap();
    let samples: Vec<IngestRecord> = (0..30)
        .map(|i| IngestRecord {
            id: format!("s{i}"),
            vector: vec![(i % 5) as f32 + 1.0, (i % 3) as f32, 1.0, (i % 7) as f32],
            oracle_label: Some(i % CLASSES),
            payload_uri: None,
        })
        .collect();
    let mut reference = Engine::new(cfg).unwrap();
    let mut events = vec![Event::Ingest { samples }];
    for i in 0..10 {
        events.push(Event::Select { requested: 3, selected: Vec::new() });
        events.push(to_event(&Op::Annotate(i * 3, i % CLASSES)));
    }
    for (n, event) in events.into_iter().enumerate() {
        let mut session = Session::open(&path).unwrap();
        let ours = session.apply(event.clone()).map_err(|e| e.code());
        let theirs = reference.apply(&event).map_err(|e| e.code());
        assert_eq!(ours.is_ok(), theirs.is_ok(), "event {n}");
        if n % 4 == 3 {
            session.snapshot().unwrap();
        }
    }
    let session = Session::open(&path).unwrap();
    assert_eq!(session.engine().snapshot(), reference.snapshot());
}
