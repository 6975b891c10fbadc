use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use coevo_core::corpus::{write_manifest, CorpusConfig, CorpusIndex};
use coevo_core::engine::{Annotation, IngestRecord, ModelPrediction, Outcome};
use coevo_core::fusion::{
    accuracy_to_confidence, annotation_gain, fuse_agree, fuse_disagree, FusionConfig, Winner,
};
use coevo_core::model::{train, LinearHead, TrainConfig};
use coevo_core::session::Session;
use coevo_core::sim::{export_curve, run_simulation, Arm, SimulationPlan};
use coevo_core::{
    EmbeddingFile, EmbeddingVector, EngineConfig, Event, FusionVariant, GainMode, LabelFile,
    Status,
};
use coevo_service::{AppState, ServiceConfig};

use super::{Command, ConfigArgs};

pub fn run(session: &Path, command: Command) -> Result<()> {
    match command {
        Command::Init {
            dim,
            classes,
            config,
        } => init(session, dim, classes, &config),
        Command::Ingest {
            embeddings,
            labels,
            payloads,
            chunk,
        } => ingest(session, &embeddings, labels.as_deref(), payloads.as_deref(), chunk),
        Command::PredictImport { probs, head } => predict_import(session, probs.as_deref(), head.as_deref()),
        Command::Select { size, unlabeled } => select(session, size, unlabeled),
        Command::Annotate { file } => annotate(session, file.as_deref()),
        Command::Release { ids } => {
            let mut s = Session::open(session)?;
            let Outcome::Released(n) = s.apply(Event::Release { ids })? else {
                unreachable!()
            };
            println!("released={n}");
            Ok(())
        }
        Command::Stats => stats(session),
        Command::StopCheck => stop_check(session),
        Command::Train {
            out,
            epochs,
            learning_rate,
            l2,
        } => train_head(session, &out, epochs, learning_rate, l2),
        Command::Simulate(args) => simulate(args),
        Command::Enhance(args) => enhance(args),
        Command::Fuse { op } => fuse(op),
        Command::Serve {
            addr,
            lease_secs,
            token,
        } => serve(session, addr, lease_secs, token),
        Command::Snapshot { out } => {
            let mut s = Session::open(session)?;
            s.snapshot()?;
            if let Some(out) = out {
                fs::write(&out, s.engine().snapshot())
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            println!("sequence={}", s.engine().sequence());
            Ok(())
        }
        Command::Restore { file } => {
            let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let mut s = Session::open(session)?;
            s.restore_from(&bytes)?;
            println!("sequence={} samples={}", s.engine().sequence(), s.engine().len());
            Ok(())
        }
    }
}

/// Merges a config file, derived keys and `--set` overrides, later ones
/// winning, into one `key = value` text.
fn config_text(args: &ConfigArgs, derived: &[(&str, String)]) -> Result<String> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: &str| {
        let k = k.trim().to_string();
        let v = v.trim().to_string();
        match pairs.iter_mut().find(|(key, _)| *key == k) {
            Some(slot) => slot.1 = v,
            None => pairs.push((k, v)),
        }
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}: expected key = value, got {line:?}", path.display()))?;
            put(k, v);
        }
    }
    for (k, v) in derived {
        put(k, v);
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        put(k, v);
    }
    Ok(pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect())
}

fn engine_config(args: &ConfigArgs, derived: &[(&str, String)]) -> Result<EngineConfig> {
    Ok(EngineConfig::parse(&config_text(args, derived)?)?)
}

fn init(session: &Path, dim: Option<usize>, classes: Option<usize>, args: &ConfigArgs) -> Result<()> {
    let mut derived = Vec::new();
    if let Some(d) = dim {
        derived.push(("dim", d.to_string()));
    }
    if let Some(c) = classes {
        derived.push(("num_classes", c.to_string()));
    }
    let config = engine_config(args, &derived)?;
    Session::init(session, config)?;
    println!("session={}", session.display());
    Ok(())
}

fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    EmbeddingFile::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_labels(path: &Path) -> Result<LabelFile> {
    LabelFile::read(path).with_context(|| format!("reading {}", path.display()))
}

fn ingest(
    session: &Path,
    embeddings: &Path,
    labels: Option<&Path>,
    payloads: Option<&Path>,
    chunk: usize,
) -> Result<()> {
    let emb = read_embeddings(embeddings)?;
    let labels = labels.map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != emb.len() {
            bail!("{} labels for {} embeddings", l.len(), emb.len());
        }
    }
    let payloads: Option<Vec<String>> = payloads
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?
        .map(|text| text.lines().map(str::to_string).collect());
    if let Some(p) = &payloads {
        if p.len() != emb.len() {
            bail!("{} payload lines for {} embeddings", p.len(), emb.len());
        }
    }
    let mut s = Session::open(session)?;
    let records: Vec<IngestRecord> = (0..emb.len())
        .map(|i| IngestRecord {
            id: emb.id(i),
            vector: emb.row(i).to_vec(),
            oracle_label: labels.as_ref().and_then(|l| l.get(i)),
            payload_uri: payloads.as_ref().map(|p| p[i].clone()).filter(|u| !u.is_empty()),
        })
        .collect();
    let mut total = 0;
    for part in records.chunks(chunk.max(1)) {
        if let Outcome::Ingested(n) = s.apply(Event::Ingest { samples: part.to_vec() })? {
            total += n;
        }
    }
    println!("ingested={total} total={}", s.engine().len());
    Ok(())
}

fn predict_import(session: &Path, probs: Option<&Path>, head: Option<&Path>) -> Result<()> {
    let mut s = Session::open(session)?;
    let predictions: Vec<ModelPrediction> = match (probs, head) {
        (Some(path), _) => {
            let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(
                    serde_json::from_str(&line)
                        .with_context(|| format!("{} line {}", path.display(), i + 1))?,
                );
            }
            out
        }
        (None, Some(path)) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let head = LinearHead::from_bytes(&bytes)?;
            let engine = s.engine();
            if head.dim() != engine.config().dim || head.num_classes() != engine.config().num_classes() {
                bail!(
                    "head is {}x{} but the session is {} classes of dimension {}",
                    head.num_classes(),
                    head.dim(),
                    engine.config().num_classes(),
                    engine.config().dim
                );
            }
            (0..engine.len())
                .filter(|&p| matches!(engine.status_at(p), Status::Unlabeled | Status::Selected))
                .map(|p| ModelPrediction {
                    id: engine.ids()[p].clone(),
                    probs: head.predict_slice(engine.vector_at(p)),
                })
                .collect()
        }
        (None, None) => bail!("either --probs or --head is required"),
    };
    let Outcome::Predictions(report) = s.apply(Event::ModelPredictions { predictions })? else {
        unreachable!()
    };
    println!("updated={} rejected={}", report.updated, report.rejected.len());
    for r in &report.rejected {
        eprintln!("rejected id={} reason={}", r.id, r.reason);
    }
    Ok(())
}

fn select(session: &Path, size: Option<usize>, unlabeled: bool) -> Result<()> {
    let mut s = Session::open(session)?;
    let requested = size.unwrap_or(s.engine().config().batch_size);
    let event = if unlabeled {
        Event::SelectUnlabeled {
            requested,
            selected: Vec::new(),
        }
    } else {
        Event::Select {
            requested,
            selected: Vec::new(),
        }
    };
    let Outcome::Selected(ids) = s.apply(event)? else {
        unreachable!()
    };
    let mut out = io::stdout().lock();
    for id in ids {
        writeln!(out, "{id}")?;
    }
    Ok(())
}

fn annotate(session: &Path, file: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    match file {
        Some(path) => {
            text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    let mut s = Session::open(session)?;
    let config = s.engine().config().clone();
    let mut out = io::stdout().lock();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split([',', '\t', ' '])
            .filter(|f| !f.is_empty())
            .collect();
        let (id, label, alpha) = match fields.as_slice() {
            [id, label] => (*id, *label, None),
            [id, label, alpha] => (*id, *label, Some(*alpha)),
            _ => bail!("line {}: expected `id label [alpha]`", i + 1),
        };
        let label = match label.parse::<usize>() {
            Ok(l) => l,
            Err(_) => config
                .class_names
                .iter()
                .position(|n| n == label)
                .with_context(|| format!("line {}: unknown class {label:?}", i + 1))?,
        };
        let annotator_alpha = alpha
            .map(|a| a.parse::<f64>().with_context(|| format!("line {}: bad alpha {a:?}", i + 1)))
            .transpose()?;
        let outcome = s
            .apply(Event::Annotate(Annotation {
                sample_id: id.to_string(),
                label,
                annotator_alpha,
            }))
            .with_context(|| format!("line {}", i + 1))?;
        if let Outcome::Annotated(report) = outcome {
            writeln!(
                out,
                "{} sequence={} rechecked={}",
                report.sample_id,
                report.sequence,
                report.updated.len()
            )?;
        }
    }
    Ok(())
}

fn stats(session: &Path) -> Result<()> {
    let s = Session::open_read_only(session)?;
    let st = s.engine().stats();
    let stop = s.engine().should_stop();
    println!("total={}", st.total);
    println!("unlabeled={}", st.unlabeled);
    println!("selected={}", st.selected);
    println!("annotated={}", st.annotated);
    println!("tombstoned={}", st.tombstoned);
    println!("annotated_fraction={}", st.annotated_fraction);
    println!("events={}", st.events);
    println!("max_gain={}", stop.max_gain);
    println!("stop={}", stop.stop);
    let bins: Vec<String> = st.gain_histogram.iter().map(u64::to_string).collect();
    println!("gain_histogram={}", bins.join(","));
    Ok(())
}

fn stop_check(session: &Path) -> Result<()> {
    let s = Session::open_read_only(session)?;
    let d = s.engine().should_stop();
    println!(
        "stop={} max_gain={} total_gain={} positive_gain_count={} threshold={}",
        d.stop,
        d.max_gain,
        d.total_gain,
        d.positive_gain_count,
        s.engine().config().stop_threshold
    );
    Ok(())
}

fn train_head(session: &Path, out: &Path, epochs: usize, learning_rate: f64, l2: f64) -> Result<()> {
    let s = Session::open_read_only(session)?;
    let engine = s.engine();
    let labeled = engine.annotated();
    if labeled.is_empty() {
        bail!("the session has no annotations to train on");
    }
    let features: Vec<&[f32]> = labeled.iter().map(|&(p, _)| engine.vector_at(p)).collect();
    let labels: Vec<usize> = labeled.iter().map(|&(_, l)| l).collect();
    let cfg = TrainConfig {
        epochs,
        learning_rate,
        l2_penalty: l2,
        ..TrainConfig::default()
    };
    let head = train(&features, &labels, engine.config().num_classes(), &cfg)?;
    fs::write(out, head.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "trained_on={} train_accuracy={}",
        labeled.len(),
        coevo_core::model::accuracy(&head, &features, &labels)
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow::anyhow!("bad {what} value {s:?}")))
        .collect()
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated annotated fractions.
    #[arg(long, default_value = "0.01,0.03,0.05,0.07,0.1")]
    budgets: String,
    #[arg(long, default_value = "0")]
    seeds: String,
    /// `gain` or `random`.
    #[arg(long, default_value = "gain")]
    arm: String,
    /// Extra retrains spread evenly before the last budget point.
    #[arg(long, default_value_t = 0)]
    mid_updates: usize,
    #[arg(long)]
    honor_stop: bool,
    #[arg(long, default_value_t = 0.01)]
    initial_fraction: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 2.0)]
    learning_rate: f64,
    /// Full JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let emb = read_embeddings(&args.embeddings)?;
    let labels = read_labels(&args.labels)?;
    let derived = [
        ("dim", emb.dim().to_string()),
        ("num_classes", labels.num_classes().to_string()),
    ];
    let config = engine_config(&args.config, &derived)?;
    let mut plan = SimulationPlan::new(config);
    plan.budgets = parse_list(&args.budgets, "budget")?;
    plan.seeds = parse_list(&args.seeds, "seed")?;
    plan.arm = Arm::parse(&args.arm).with_context(|| format!("unknown arm {:?}", args.arm))?;
    plan.honor_stop = args.honor_stop;
    plan.initial_fraction = args.initial_fraction;
    plan.train.epochs = args.epochs;
    plan.train.learning_rate = args.learning_rate;
    if args.mid_updates > 0 {
        plan.validate()?;
        let pool = emb.len() - (plan.test_fraction * emb.len() as f64).round() as usize;
        plan.update_points = plan.even_update_points(pool, args.mid_updates);
    }
    let started = Instant::now();
    let report = run_simulation(&emb, &labels, &plan)?;
    eprintln!("elapsed_ms={}", started.elapsed().as_millis());
    if let Some(path) = &args.report {
        fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", export_curve(&report));
    Ok(())
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Corpus embeddings.
    #[arg(long)]
    corpus: PathBuf,
    /// Target embeddings; their ids label the manifest.
    #[arg(long)]
    targets: PathBuf,
    /// Manifest output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    max_distance: f32,
    /// Cluster count; defaults to max(1, n / 2000).
    #[arg(long)]
    clusters: Option<usize>,
    /// Share of the corpus used to fit the clustering.
    #[arg(long, default_value_t = 0.01)]
    subsample: f64,
    #[arg(long, default_value_t = 0.02)]
    dedup: f32,
    #[arg(long, default_value_t = 3)]
    route: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn enhance(args: EnhanceArgs) -> Result<()> {
    let corpus = read_embeddings(&args.corpus)?;
    let targets_file = read_embeddings(&args.targets)?;
    let config = CorpusConfig {
        subsample_fraction: args.subsample,
        clusters: args.clusters,
        dedup_threshold: args.dedup,
        route: args.route,
        seed: args.seed,
        ..CorpusConfig::default()
    };
    let started = Instant::now();
    let index = CorpusIndex::build(&corpus, &config)?;
    let built = started.elapsed();
    let mut targets = Vec::with_capacity(targets_file.len());
    let mut target_ids = Vec::with_capacity(targets_file.len());
    for i in 0..targets_file.len() {
        let v = EmbeddingVector::new(targets_file.row(i).to_vec())
            .with_context(|| format!("target row {i}"))?;
        targets.push(v);
        target_ids.push(targets_file.id(i));
    }
    let hits = index.retrieve(&targets, args.k, args.max_distance, args.route)?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
            write_manifest(BufWriter::new(file), &hits, &target_ids)?;
        }
        None => write_manifest(io::stdout().lock(), &hits, &target_ids)?,
    }
    let st = index.stats();
    eprintln!(
        "corpus={} invalid={} kept={} clusters={} retrieved={} build_ms={} total_ms={}",
        st.total,
        st.invalid,
        st.kept,
        st.clusters,
        hits.len(),
        built.as_millis(),
        started.elapsed().as_millis()
    );
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum FuseOp {
    /// Two views that predict the same class.
    Agree {
        a1: f64,
        a2: f64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value = "lower_bound")]
        variant: String,
    },
    /// Two views that predict different classes.
    Disagree {
        a1: f64,
        a2: f64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value = "lower_bound")]
        variant: String,
    },
    /// Confidence of a predictor with the given accuracy.
    Confidence {
        accuracy: f64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
    /// Expected gain of annotating a sample whose belief has confidence `alpha`.
    Gain {
        alpha: f64,
        #[arg(long, default_value_t = 0.9)]
        annotator: f64,
        #[arg(long, default_value = "proxy")]
        mode: String,
    },
}

fn fusion_config(classes: usize, variant: &str) -> Result<FusionConfig> {
    let variant = FusionVariant::parse(variant).with_context(|| format!("unknown variant {variant:?}"))?;
    Ok(FusionConfig::new(classes)?.with_variant(variant))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(coevo_core::Error::InvalidArgument(format!("{name} {v} outside [0, 1]")).into());
    }
    Ok(())
}

fn fuse(op: FuseOp) -> Result<()> {
    match op {
        FuseOp::Agree {
            a1,
            a2,
            classes,
            variant,
        } => {
            check_unit("a1", a1)?;
            check_unit("a2", a2)?;
            println!("{:.9}", fuse_agree(a1, a2, &fusion_config(classes, &variant)?));
        }
        FuseOp::Disagree {
            a1,
            a2,
            classes,
            variant,
        } => {
            check_unit("a1", a1)?;
            check_unit("a2", a2)?;
            let (winner, alpha) = fuse_disagree(a1, a2, &fusion_config(classes, &variant)?);
            let winner = match winner {
                Winner::First => "first",
                Winner::Second => "second",
            };
            println!("{alpha:.9} winner={winner}");
        }
        FuseOp::Confidence { accuracy, classes } => {
            println!("{:.9}", accuracy_to_confidence(accuracy, classes)?);
        }
        FuseOp::Gain {
            alpha,
            annotator,
            mode,
        } => {
            check_unit("alpha", alpha)?;
            check_unit("annotator", annotator)?;
            let mode = GainMode::parse(&mode).with_context(|| format!("unknown gain mode {mode:?}"))?;
            println!("{:.9}", annotation_gain(alpha, annotator, mode));
        }
    }
    Ok(())
}

fn serve(session: &Path, addr: std::net::SocketAddr, lease_secs: u64, token: Option<String>) -> Result<()> {
    let s = Session::open(session)?;
    let state = AppState::new(
        s,
        ServiceConfig {
            lease: Duration::from_secs(lease_secs),
            token,
        },
    )?;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(coevo_service::serve(addr, state))?;
    Ok(())
}
