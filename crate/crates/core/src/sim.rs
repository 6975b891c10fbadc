//! Offline replay of the annotation loop against oracle labels.
//!
//! The pool is the training side of a seeded stratified split. A small random
//! seed set is annotated first and a reference model trained on it; then
//! samples are annotated batch by batch until each budget point is reached,
//! the reference model is retrained at every budget point and at any extra
//! update points, and held-out accuracy is recorded.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::engine::sampling::{splitmix64, uniform};
use crate::engine::{Annotation, Engine, EngineConfig, IngestRecord, ModelPrediction, StopDiagnostics, Status};
use crate::error::{Error, Result};
use crate::formats::{EmbeddingFile, LabelFile};
use crate::model::{accuracy, train, LinearHead, TrainConfig};
use crate::vector::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Batches drawn by the engine in proportion to gain.
    Gain,
    /// Seeded uniform order; gains are never consulted.
    Random,
}

impl Arm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gain" => Some(Arm::Gain),
            "random" => Some(Arm::Random),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Gain => "gain",
            Arm::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    /// Annotated fractions of the pool, strictly increasing in (0, 1].
    pub budgets: Vec<f64>,
    /// Annotation counts at which the reference model is retrained in
    /// addition to the budget points.
    pub update_points: Vec<usize>,
    pub seeds: Vec<u64>,
    pub arm: Arm,
    /// Share of the pool annotated at random before the loop starts.
    pub initial_fraction: f64,
    pub test_fraction: f64,
    /// Stop the gain arm when the engine's stop rule fires instead of
    /// filling the budget with random picks.
    pub honor_stop: bool,
    pub engine: EngineConfig,
    pub train: TrainConfig,
}

impl SimulationPlan {
    pub fn new(engine: EngineConfig) -> Self {
        Self {
            budgets: vec![0.01, 0.03, 0.05, 0.07, 0.1],
            update_points: Vec::new(),
            seeds: vec![0],
            arm: Arm::Gain,
            initial_fraction: 0.01,
            test_fraction: 0.2,
            honor_stop: false,
            engine,
            train: TrainConfig {
                epochs: 200,
                learning_rate: 2.0,
                ..TrainConfig::default()
            },
        }
    }

    /// `count` update points spread evenly between the seed set and the
    /// last budget point of a pool of `pool_size`.
    pub fn even_update_points(&self, pool_size: usize, count: usize) -> Vec<usize> {
        let start = initial_count(pool_size, self.initial_fraction) as f64;
        let end = budget_count(pool_size, self.budgets.last().copied().unwrap_or(0.0)) as f64;
        (1..=count)
            .map(|i| (start + (end - start) * i as f64 / (count + 1) as f64).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.budgets.is_empty() {
            return Err(Error::InvalidArgument("budget schedule is empty".into()));
        }
        if self.budgets.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::InvalidArgument("budget fractions must lie in (0, 1]".into()));
        }
        if self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("budget schedule must be strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("no seeds".into()));
        }
        if !(0.0..1.0).contains(&self.initial_fraction) {
            return Err(Error::InvalidArgument("initial_fraction must lie in [0, 1)".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument("test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn budget_count(pool: usize, fraction: f64) -> usize {
    ((fraction * pool as f64).round() as usize).min(pool)
}

fn initial_count(pool: usize, fraction: f64) -> usize {
    if fraction == 0.0 {
        0
    } else {
        budget_count(pool, fraction).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetPoint {
    pub budget: f64,
    pub annotated: usize,
    /// Annotated share of the pool.
    pub fraction: f64,
    pub accuracy: f64,
    pub stopped: bool,
    pub stop: StopDiagnostics,
    /// Ids annotated since the previous budget point, in annotation order.
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub pool_size: usize,
    pub test_size: usize,
    pub initial: Vec<String>,
    pub model_updates: usize,
    pub points: Vec<BudgetPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub arm: Arm,
    pub budgets: Vec<f64>,
    pub runs: Vec<RunReport>,
}

impl SimulationReport {
    /// Mean accuracy across runs at budget index `i`.
    pub fn mean_accuracy(&self, i: usize) -> f64 {
        let values: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.points.get(i).map(|p| p.accuracy))
            .collect();
        if values.is_empty() {
            return 0.0;
        }
        values.iter().sum::<f64>() / values.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// One CSV row per run and budget point, in plan order.
pub fn export_curve(report: &SimulationReport) -> String {
    let mut out = String::from("seed,budget,fraction,accuracy,stopped\n");
    for run in &report.runs {
        for p in &run.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                run.seed, p.budget, p.fraction, p.accuracy, p.stopped
            );
        }
    }
    out
}

/// Seeded stratified split into `(train, test)` positions, both ascending.
pub fn stratified_split(labels: &[usize], classes: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Inverse of the accuracy to confidence map: expected accuracy of an
/// annotator with confidence `alpha` over `classes` classes.
pub fn annotator_accuracy(alpha: f64, classes: usize) -> f64 {
    let chance = 1.0 / classes as f64;
    alpha * (1.0 - chance) + chance
}

/// The label a simulated annotator reports for `truth`. Wrong answers are
/// uniform over the other classes. Fixed per (seed, sample).
pub fn noisy_label(truth: usize, classes: usize, alpha: f64, seed: u64, sample: u64) -> usize {
    let wrong = 1.0 - annotator_accuracy(alpha, classes);
    if uniform(seed, 0, sample) >= wrong {
        return truth;
    }
    let shift = 1 + (uniform(seed, 1, sample) * (classes - 1) as f64) as usize;
    (truth + shift.min(classes - 1)) % classes
}

/// Class-balanced Gaussian mixture: random unit means, isotropic noise of
/// standard deviation `sigma` per coordinate.
pub fn gaussian_mixture(
    classes: usize,
    dim: usize,
    n: usize,
    sigma: f32,
    seed: u64,
) -> Result<(EmbeddingFile, LabelFile)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0f32, 1.0).expect("unit normal");
    let means: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            let raw: Vec<f32> = (0..dim).map(|_| std.sample(&mut rng)).collect();
            EmbeddingVector::new(raw).map(EmbeddingVector::into_inner)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        data.extend(means[c].iter().map(|&m| m + sigma * std.sample(&mut rng)));
        labels.push(c);
    }
    Ok((
        EmbeddingFile::from_rows(dim, data, None)?,
        LabelFile::from_classes(classes, &labels)?,
    ))
}

struct Dataset {
    classes: usize,
    vectors: Vec<EmbeddingVector>,
    labels: Vec<usize>,
    ids: Vec<String>,
}

impl Dataset {
    fn load(embeddings: &EmbeddingFile, oracle: &LabelFile) -> Result<Self> {
        if embeddings.len() != oracle.len() {
            return Err(Error::InvalidArgument(format!(
                "{} embeddings but {} labels",
                embeddings.len(),
                oracle.len()
            )));
        }
        let mut vectors = Vec::with_capacity(embeddings.len());
        let mut labels = Vec::with_capacity(embeddings.len());
        for (i, row) in embeddings.rows().enumerate() {
            let label = oracle
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("row {i} has no oracle label")))?;
            let v = EmbeddingVector::new(row.to_vec())
                .map_err(|e| Error::InvalidVector(format!("row {i}: {e}")))?;
            vectors.push(v);
            labels.push(label);
        }
        Ok(Self {
            classes: oracle.num_classes(),
            vectors,
            labels,
            ids: (0..embeddings.len()).map(|i| embeddings.id(i)).collect(),
        })
    }

    fn fit(&self, rows: &[usize], labels: &[usize], cfg: &TrainConfig) -> Result<LinearHead> {
        let features: Vec<&[f32]> = rows.iter().map(|&r| self.vectors[r].as_slice()).collect();
        train(&features, labels, self.classes, cfg)
    }

    fn accuracy(&self, head: &LinearHead, rows: &[usize]) -> f64 {
        let features: Vec<&[f32]> = rows.iter().map(|&r| self.vectors[r].as_slice()).collect();
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        accuracy(head, &features, &labels)
    }
}

/// Held-out accuracy of the reference model trained on the whole training
/// split with clean labels.
pub fn reference_accuracy(embeddings: &EmbeddingFile, oracle: &LabelFile, plan: &SimulationPlan, seed: u64) -> Result<f64> {
    let data = Dataset::load(embeddings, oracle)?;
    let (train_rows, test_rows) = stratified_split(&data.labels, data.classes, plan.test_fraction, seed);
    let labels: Vec<usize> = train_rows.iter().map(|&r| data.labels[r]).collect();
    let head = data.fit(&train_rows, &labels, &plan.train)?;
    Ok(data.accuracy(&head, &test_rows))
}

pub fn run_simulation(embeddings: &EmbeddingFile, oracle: &LabelFile, plan: &SimulationPlan) -> Result<SimulationReport> {
    plan.validate()?;
    if embeddings.dim() != plan.engine.dim {
        return Err(Error::DimensionMismatch {
            expected: plan.engine.dim,
            actual: embeddings.dim(),
        });
    }
    if oracle.num_classes() != plan.engine.num_classes() {
        return Err(Error::ClassCountMismatch {
            expected: plan.engine.num_classes(),
            actual: oracle.num_classes(),
        });
    }
    let data = Dataset::load(embeddings, oracle)?;
    let runs = plan
        .seeds
        .iter()
        .map(|&seed| Run::new(&data, plan, seed)?.execute())
        .collect::<Result<_>>()?;
    Ok(SimulationReport {
        arm: plan.arm,
        budgets: plan.budgets.clone(),
        runs,
    })
}

struct Run<'a> {
    data: &'a Dataset,
    plan: &'a SimulationPlan,
    seed: u64,
    pool: Vec<usize>,
    test: Vec<usize>,
    engine: Engine,
    /// Pool positions in seeded random order, for the seed set, the random
    /// arm and filling a budget after the gain arm runs dry.
    order: Vec<usize>,
    cursor: usize,
    annotated: Vec<usize>,
    model_updates: usize,
}

impl<'a> Run<'a> {
    fn new(data: &'a Dataset, plan: &'a SimulationPlan, seed: u64) -> Result<Self> {
        let (pool, test) = stratified_split(&data.labels, data.classes, plan.test_fraction, seed);
        let mut present = vec![false; data.classes];
        pool.iter().for_each(|&r| present[data.labels[r]] = true);
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::InvalidArgument(format!("class {c} is absent from the training split")));
        }
        let last = *plan.budgets.last().expect("validated");
        if budget_count(pool.len(), last) > pool.len() {
            return Err(Error::InvalidArgument("budget exceeds pool size".into()));
        }

        let mut config = plan.engine.clone();
        config.seed = seed;
        config.index.seed = seed;
        let mut engine = Engine::new(config)?;
        let records: Vec<IngestRecord> = pool
            .iter()
            .map(|&r| IngestRecord {
                id: data.ids[r].clone(),
                vector: data.vectors[r].as_slice().to_vec(),
                oracle_label: Some(data.labels[r]),
                payload_uri: None,
            })
            .collect();
        engine.ingest(&records)?;

        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5EED)));
        Ok(Self {
            data,
            plan,
            seed,
            pool,
            test,
            engine,
            order,
            cursor: 0,
            annotated: Vec::new(),
            model_updates: 0,
        })
    }

    fn annotate(&mut self, position: usize) -> Result<()> {
        let row = self.pool[position];
        let label = noisy_label(
            self.data.labels[row],
            self.data.classes,
            self.engine.config().annotator_alpha,
            splitmix64(self.seed ^ 0xA11CE),
            row as u64,
        );
        self.engine.apply_annotation(&Annotation {
            sample_id: self.data.ids[row].clone(),
            label,
            annotator_alpha: None,
        })?;
        self.annotated.push(position);
        Ok(())
    }

    /// Next position in the random order that is still unlabeled.
    fn next_random(&mut self) -> Option<usize> {
        while self.cursor < self.order.len() {
            let p = self.order[self.cursor];
            self.cursor += 1;
            if self.engine.status_at(p) != Status::Annotated {
                return Some(p);
            }
        }
        None
    }

    /// Trains on every annotation so far, in position order so the result
    /// does not depend on annotation order.
    fn train(&self) -> Result<Option<LinearHead>> {
        let mut labeled = self.engine.annotated();
        if labeled.is_empty() {
            return Ok(None);
        }
        labeled.sort_unstable();
        let rows: Vec<usize> = labeled.iter().map(|&(p, _)| self.pool[p]).collect();
        let labels: Vec<usize> = labeled.iter().map(|&(_, l)| l).collect();
        self.data.fit(&rows, &labels, &self.plan.train).map(Some)
    }

    fn update_model(&mut self) -> Result<Option<LinearHead>> {
        let Some(head) = self.train()? else {
            return Ok(None);
        };
        let predictions: Vec<ModelPrediction> = (0..self.pool.len())
            .filter(|&p| self.engine.status_at(p) != Status::Annotated)
            .map(|p| ModelPrediction {
                id: self.data.ids[self.pool[p]].clone(),
                probs: head.predict_slice(self.engine.vector_at(p)),
            })
            .collect();
        let report = self.engine.set_model_predictions(&predictions);
        if let Some(r) = report.rejected.first() {
            return Err(Error::InvalidArgument(format!("model prediction for {} rejected: {}", r.id, r.reason)));
        }
        self.model_updates += 1;
        Ok(Some(head))
    }

    fn execute(mut self) -> Result<RunReport> {
        let n = self.pool.len();
        for _ in 0..initial_count(n, self.plan.initial_fraction) {
            let p = self.next_random().expect("seed set fits in the pool");
            self.annotate(p)?;
        }
        let initial: Vec<String> = self.annotated.iter().map(|&p| self.engine.ids()[p].clone()).collect();
        self.update_model()?;

        let mut updates: Vec<usize> = self.plan.update_points.clone();
        updates.sort_unstable();
        updates.dedup();
        let mut next_update = updates.iter().position(|&u| u > self.annotated.len()).unwrap_or(updates.len());

        let mut points = Vec::with_capacity(self.plan.budgets.len());
        let mut stopped = false;
        for &budget in &self.plan.budgets {
            let target = budget_count(n, budget);
            let start = self.annotated.len();
            while self.annotated.len() < target && !stopped {
                let mut need = target - self.annotated.len();
                if let Some(&u) = updates.get(next_update) {
                    need = need.min(u - self.annotated.len());
                }
                let picks = self.pick(need.min(self.plan.engine.batch_size))?;
                if picks.is_empty() {
                    stopped = true;
                    break;
                }
                for p in picks {
                    self.annotate(p)?;
                }
                if updates.get(next_update) == Some(&self.annotated.len()) {
                    self.update_model()?;
                    next_update += 1;
                }
            }
            let accuracy = match self.update_model()? {
                Some(head) => self.data.accuracy(&head, &self.test),
                None => 0.0,
            };
            points.push(BudgetPoint {
                budget,
                annotated: self.annotated.len(),
                fraction: self.annotated.len() as f64 / n as f64,
                accuracy,
                stopped,
                stop: self.engine.should_stop(),
                selected: self.annotated[start..]
                    .iter()
                    .map(|&p| self.engine.ids()[p].clone())
                    .collect(),
            });
        }
        Ok(RunReport {
            seed: self.seed,
            pool_size: n,
            test_size: self.test.len(),
            initial,
            model_updates: self.model_updates,
            points,
        })
    }

    /// Up to `size` positions to annotate next; empty only when the run has
    /// to stop.
    fn pick(&mut self, size: usize) -> Result<Vec<usize>> {
        match self.plan.arm {
            Arm::Random => Ok(self.next_random().into_iter().collect()),
            Arm::Gain => {
                if self.plan.honor_stop && self.engine.should_stop().stop {
                    return Ok(Vec::new());
                }
                let ids = self.engine.select_batch(size)?;
                if !ids.is_empty() || self.plan.honor_stop {
                    return Ok(ids.iter().filter_map(|id| self.engine.position(id)).collect());
                }
                Ok(self.next_random().into_iter().collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(dim: usize, classes: usize) -> SimulationPlan {
        let mut config = EngineConfig::new(dim, classes);
        config.index.mode = crate::index::SearchMode::Exact;
        let mut plan = SimulationPlan::new(config);
        plan.budgets = vec![0.05, 0.2];
        plan.train.epochs = 50;
        plan
    }

    #[test]
    fn noisy_labels_follow_the_implied_accuracy() {
        assert!((annotator_accuracy(0.1, 2) - 0.55).abs() < 1e-12);
        assert_eq!(annotator_accuracy(1.0, 10), 1.0);
        let n = 20_000;
        let correct = (0..n).filter(|&i| noisy_label(3, 10, 0.8, 7, i) == 3).count();
        let expected = annotator_accuracy(0.8, 10);
        assert!((correct as f64 / n as f64 - expected).abs() < 0.01);
        assert!((0..1000).all(|i| noisy_label(9, 10, 0.0, 1, i) < 10));
        assert!((0..1000).all(|i| noisy_label(2, 10, 1.0, 1, i) == 2));
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (train, test) = stratified_split(&labels, 4, 0.2, 3);
        assert_eq!(test.len(), 20);
        for c in 0..4 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 4, 0.2, 3), (train, test));
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan(4, 2);
        assert!(plan.validate().is_ok());
        plan.budgets = vec![0.2, 0.1];
        assert!(plan.validate().is_err());
        plan.budgets = vec![0.0];
        assert!(plan.validate().is_err());
        plan.budgets = vec![1.5];
        assert!(plan.validate().is_err());
        plan.budgets = vec![];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn even_update_points_sit_between_seed_set_and_last_budget() {
        let mut plan = small_plan(4, 2);
        plan.budgets = vec![0.1];
        assert_eq!(plan.even_update_points(1000, 2), vec![40, 70]);
    }

    #[test]
    fn curve_export_shapes() {
        let empty = SimulationReport {
            arm: Arm::Gain,
            budgets: vec![],
            runs: vec![],
        };
        assert_eq!(export_curve(&empty), "seed,budget,fraction,accuracy,stopped\n");
        let (emb, lab) = gaussian_mixture(3, 6, 300, 0.3, 1).unwrap();
        let mut plan = small_plan(6, 3);
        plan.budgets = vec![0.1];
        let report = run_simulation(&emb, &lab, &plan).unwrap();
        let curve = export_curve(&report);
        assert_eq!(curve.lines().count(), 2);
        assert!(curve.lines().nth(1).unwrap().starts_with("0,0.1,0.1,"));
    }

    #[test]
    fn budgets_are_met_and_reports_repeat() {
        let (emb, lab) = gaussian_mixture(4, 8, 400, 0.4, 2).unwrap();
        let mut plan = small_plan(8, 4);
        plan.seeds = vec![1, 2];
        plan.update_points = vec![10];
        let a = run_simulation(&emb, &lab, &plan).unwrap();
        let b = run_simulation(&emb, &lab, &plan).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for run in &a.runs {
            assert_eq!(run.pool_size, 320);
            assert_eq!(run.points[0].annotated, 16);
            assert_eq!(run.points[1].annotated, 64);
            assert_eq!(run.initial.len(), 3);
            assert_eq!(run.model_updates, 4);
            let mut seen: Vec<&String> = run.initial.iter().chain(run.points.iter().flat_map(|p| &p.selected)).collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 64);
        }
    }

    #[test]
    fn full_budget_matches_reference_accuracy() {
        let (emb, lab) = gaussian_mixture(3, 6, 300, 0.5, 3).unwrap();
        let mut plan = small_plan(6, 3);
        plan.engine = plan.engine.clone().with_annotator_alpha(1.0);
        plan.budgets = vec![1.0];
        plan.arm = Arm::Random;
        let report = run_simulation(&emb, &lab, &plan).unwrap();
        let reference = reference_accuracy(&emb, &lab, &plan, 0).unwrap();
        assert_eq!(report.runs[0].points[0].accuracy, reference);
        assert_eq!(report.runs[0].points[0].fraction, 1.0);
    }

    #[test]
    fn random_arm_ignores_gains() {
        let (emb, lab) = gaussian_mixture(3, 6, 300, 0.5, 4).unwrap();
        let mut plan = small_plan(6, 3);
        plan.arm = Arm::Random;
        let a = run_simulation(&emb, &lab, &plan).unwrap();
        plan.engine.delta_distance = 0.6;
        plan.engine.k = 3;
        plan.train.epochs = 5;
        let b = run_simulation(&emb, &lab, &plan).unwrap();
        let picks = |r: &SimulationReport| -> Vec<Vec<String>> {
            r.runs[0].points.iter().map(|p| p.selected.clone()).collect()
        };
        assert_eq!(picks(&a), picks(&b));
    }

    #[test]
    fn stop_rule_ends_the_gain_arm_on_a_redundant_pool() {
        // Twelve tight groups of ten near-copies.
        let (base, base_labels) = gaussian_mixture(3, 6, 12, 0.6, 5).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for copy in 0..10 {
            for (i, row) in base.rows().enumerate() {
                data.extend(row.iter().map(|x| x + copy as f32 * 1e-4));
                labels.push(base_labels.get(i).unwrap());
            }
        }
        let emb = EmbeddingFile::from_rows(6, data, None).unwrap();
        let lab = LabelFile::from_classes(3, &labels).unwrap();
        let mut plan = small_plan(6, 3);
        plan.engine = plan.engine.clone().with_annotator_alpha(1.0);
        plan.engine.stop_threshold = 0.0;
        plan.engine.delta_distance = 0.01;
        plan.budgets = vec![1.0];
        plan.honor_stop = true;
        let report = run_simulation(&emb, &lab, &plan).unwrap();
        let point = &report.runs[0].points[0];
        assert!(point.stopped);
        assert!(point.stop.stop);
        assert!(point.annotated <= 12, "annotated {}", point.annotated);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (emb, lab) = gaussian_mixture(3, 6, 30, 0.5, 6).unwrap();
        assert!(run_simulation(&emb, &lab, &small_plan(5, 3)).is_err());
        assert!(run_simulation(&emb, &lab, &small_plan(6, 4)).is_err());
        let short = LabelFile::from_classes(3, &[0, 1]).unwrap();
        assert!(run_simulation(&emb, &short, &small_plan(6, 3)).is_err());
        let lopsided = LabelFile::from_classes(4, &vec![0; 30]).unwrap();
        assert!(run_simulation(&emb, &lopsided, &small_plan(6, 4)).is_err());
    }
}
