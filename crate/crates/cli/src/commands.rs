//! Subcommand implementations.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eids::augment::{enumerate_splits, make_subflows, oversample, select_diverse};
use eids::evalkit::{
    activation_bytes, evaluate, ConfidenceModel, Decision, Ensemble, EvalReport, Member,
    PacketStream, StreamEvent,
};
use eids::flowcap::{parse_pcap_bytes, prepare_packets, Dataset, Packet, SkipCounts, TsResolution};
use eids::rng::derive_seed;
use eids::synthgen::{generate, SynthSpec};
use eids::tinyformer::{train, ModelConfig, ModelWeights, TrainConfig};
use eids::{FlowRecord, PrepConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EvalSettings, RunConfig};
use crate::manifest::{
    load_ensemble, save_member, write_json, EnsembleManifest, LabelsManifest, MemberEntry,
    ENSEMBLE_FORMAT,
};
use crate::{CliError, Result};

const SPLIT_STREAM: u64 = 0x5350;
const BENCH_STREAM: u64 = 0xBE4C;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("row serialises");
        out.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_capture(path: &Path) -> Result<Vec<Packet>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let cap = parse_pcap_bytes(&bytes).map_err(|source| CliError::Capture {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cap.packets)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).map_err(|source| CliError::Capture {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub records: usize,
    pub counts: Vec<(String, usize)>,
    pub skipped: SkipCounts,
    pub filtered_out: usize,
    pub empty_flows: usize,
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} flows", self.records)?;
        for (name, n) in &self.counts {
            writeln!(f, "  {name:<16} {n}")?;
        }
        writeln!(
            f,
            "skipped packets: {} non-IPv4, {} malformed, {} beyond max length",
            self.skipped.non_ipv4, self.skipped.malformed, self.skipped.over_length
        )?;
        write!(
            f,
            "filtered: {} packets, {} flows left empty",
            self.filtered_out, self.empty_flows
        )
    }
}

/// Prepares every capture, labels its flows and writes the dataset to `out`.
pub fn cmd_prepare(
    pcaps: &[PathBuf],
    labels: &LabelsManifest,
    prep: &PrepConfig,
    out: &Path,
) -> Result<PrepareSummary> {
    if pcaps.is_empty() {
        return Err(CliError::Usage("no capture files given".into()));
    }
    let flow_labels = labels.flow_labels()?;
    let mut ds = Dataset {
        classes: labels.classes.clone(),
        prep: prep.clone(),
        ..Dataset::default()
    };
    let (mut filtered_out, mut empty_flows) = (0, 0);
    for path in pcaps {
        let packets = read_capture(path)?;
        let prepared = prepare_packets(&packets, prep).map_err(|source| CliError::Capture {
            path: path.clone(),
            source,
        })?;
        let file_label = labels.file_label(path);
        for mut rec in prepared.records {
            let key = rec.key.expect("prepared records carry their key");
            rec.label = flow_labels.get(&key).copied().or(file_label);
            if rec.label.is_none() {
                return Err(CliError::Input(format!(
                    "{}: flow {key} has no label (list the file or the flow in the labels manifest)",
                    path.display()
                )));
            }
            ds.records.push(rec);
        }
        ds.skipped.add(&prepared.skipped);
        filtered_out += prepared.filtered_out;
        empty_flows += prepared.empty_flows;
    }
    if ds.records.is_empty() {
        return Err(CliError::EmptyDataset(format!(
            "no flows left after the `{}` filter in {} capture(s)",
            format!("{:?}", prep.filter).to_lowercase(),
            pcaps.len()
        )));
    }
    ds.save(out).map_err(|source| CliError::Capture {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(PrepareSummary {
        records: ds.records.len(),
        counts: ds.classes.iter().cloned().zip(ds.class_counts()).collect(),
        skipped: ds.skipped,
        filtered_out,
        empty_flows,
    })
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub pcaps: Vec<PathBuf>,
    pub labels: PathBuf,
    pub dataset: Option<PathBuf>,
    pub flows: usize,
}

/// Writes one capture per class plus a labels manifest into `out_dir`, and
/// optionally the prepared dataset.
pub fn cmd_synth(
    spec: &SynthSpec,
    prep: &PrepConfig,
    out_dir: &Path,
    dataset: Option<&Path>,
) -> Result<SynthOutput> {
    let data = generate(spec)?;
    create_dir(out_dir)?;
    let mut labels = LabelsManifest {
        classes: data.class_names.clone(),
        ..LabelsManifest::default()
    };
    let mut pcaps = Vec::new();
    for (c, name) in data.class_names.iter().enumerate() {
        let file = format!("{c:02}-{name}.pcap");
        let path = out_dir.join(&file);
        let mut w = create(&path)?;
        data.write_pcap(&mut w, Some(c), TsResolution::Nanos)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        labels.files.insert(file, name.clone());
        pcaps.push(path);
    }
    let labels_path = out_dir.join("labels.json");
    write_json(&labels_path, &labels)?;
    if let Some(p) = dataset {
        data.dataset(prep)?
            .save(p)
            .map_err(|source| CliError::Capture {
                path: p.to_path_buf(),
                source,
            })?;
    }
    Ok(SynthOutput {
        pcaps,
        labels: labels_path,
        dataset: dataset.map(Path::to_path_buf),
        flows: data.flows.len(),
    })
}

// ---------------------------------------------------------------- train

/// Outcome of training and testing one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split_id: usize,
    /// Per class, the index of the held-out flow within that class.
    pub held_out: Vec<usize>,
    pub train_samples: usize,
    pub accuracy: f64,
    pub mean_earliness: Option<f64>,
    pub max_earliness: Option<usize>,
    pub final_loss: Option<f64>,
    pub retained: bool,
}

#[derive(Debug, Clone, Serialize)]
struct HistoryLine {
    split_id: usize,
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub manifest_path: PathBuf,
    pub manifest: EnsembleManifest,
    /// All trained splits, in selection order.
    pub splits: Vec<SplitResult>,
}

/// The model configuration for `dataset`: the configured architecture with
/// the dataset's class count. Packet width and flow length must agree.
pub fn model_config_for(cfg: &RunConfig, dataset: &Dataset) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    if m.d != dataset.prep.d || m.max_len != dataset.prep.max_len {
        return Err(CliError::Config(format!(
            "model expects d={} max_len={} but the dataset was prepared with d={} max_len={}",
            m.d, m.max_len, dataset.prep.d, dataset.prep.max_len
        )));
    }
    m.classes = dataset.classes.len();
    m.validate()?;
    Ok(m)
}

/// Dataset indices of each class, in dataset order.
pub fn class_members(records: &[FlowRecord], classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); classes];
    for (i, r) in records.iter().enumerate() {
        match r.label {
            Some(c) if c < classes => members[c].push(i),
            Some(c) => {
                return Err(CliError::Input(format!(
                    "record {i} has label {c} outside 0..{classes}"
                )))
            }
            None => return Err(CliError::Input(format!("record {i} is unlabelled"))),
        }
    }
    Ok(members)
}

/// Training samples for one split: every subflow of every training flow,
/// repeated `factor` times.
pub fn training_set<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    factor: usize,
) -> Vec<Arc<FlowRecord>> {
    let subflows: Vec<Arc<FlowRecord>> = flows
        .into_iter()
        .flat_map(make_subflows)
        .map(Arc::new)
        .collect();
    oversample(&subflows, factor)
}

/// Higher accuracy first, then lower mean earliness, then lower split id.
fn rank(a: &SplitResult, b: &SplitResult) -> std::cmp::Ordering {
    let e = |r: &SplitResult| r.mean_earliness.unwrap_or(f64::INFINITY);
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(e(a).total_cmp(&e(b)))
        .then(a.split_id.cmp(&b.split_id))
}

/// Trains one model per selected split, tests each on its held-out flows,
/// keeps the best `retain` and writes them with an ensemble manifest into
/// `out_dir`. `progress` is called as each split finishes.
pub fn cmd_train(
    dataset: &Dataset,
    cfg: &RunConfig,
    out_dir: &Path,
    progress: &(dyn Fn(&SplitResult) + Sync),
) -> Result<TrainSummary> {
    if dataset.records.is_empty() {
        return Err(CliError::EmptyDataset(
            "training dataset has no flows".into(),
        ));
    }
    let settings = &cfg.train;
    if settings.splits == 0 || settings.retain == 0 {
        return Err(CliError::Usage("splits and retain must be >= 1".into()));
    }
    let classes = dataset.classes.len();
    if cfg.eval.benign_class >= classes {
        return Err(CliError::Usage(format!(
            "benign class {} outside 0..{classes}",
            cfg.eval.benign_class
        )));
    }
    cfg.augment.validate()?;
    let model_cfg = model_config_for(cfg, dataset)?;
    let members = class_members(&dataset.records, classes)?;
    let per_class = members.iter().map(Vec::len).min().unwrap_or(0);
    let plans = enumerate_splits(per_class, classes)?;
    let chosen = select_diverse(&plans, settings.splits, settings.core.seed);

    let trained = chosen
        .par_iter()
        .map(|plan| {
            let (train_idx, test_idx) = plan.partition(&members);
            let samples = training_set(
                train_idx.iter().map(|&i| &dataset.records[i]),
                cfg.augment.oversample_factor,
            );
            let tcfg = TrainConfig {
                seed: derive_seed(settings.core.seed, &[SPLIT_STREAM, plan.split_id as u64]),
                ..settings.core.clone()
            };
            let out = train(&samples, &model_cfg, &cfg.augment, &tcfg)?;
            let member = Member {
                weights: out.weights,
                config: model_cfg.clone(),
            };
            let single = Ensemble::new(vec![member], Default::default())?;
            let test: Vec<FlowRecord> = test_idx
                .iter()
                .map(|&i| dataset.records[i].clone())
                .collect();
            let report = evaluate(
                &single,
                &test,
                cfg.eval.tau,
                &[],
                cfg.eval.benign_class,
                &cfg.eval.erde,
            )?;
            let result = SplitResult {
                split_id: plan.split_id,
                held_out: plan.held_out.clone(),
                train_samples: samples.len(),
                accuracy: report.top1_accuracy,
                mean_earliness: report.mean_earliness,
                max_earliness: report.max_earliness,
                final_loss: out.history.last().map(|h| h.loss),
                retained: false,
            };
            progress(&result);
            let Member { weights, .. } = single.members()[0].clone();
            Ok((result, weights, out.history))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..trained.len()).collect();
    order.sort_by(|&a, &b| rank(&trained[a].0, &trained[b].0));
    order.truncate(settings.retain);

    create_dir(out_dir)?;
    let mut entries = Vec::with_capacity(order.len());
    for &i in &order {
        let (r, w, _) = &trained[i];
        let entry = MemberEntry {
            archive: String::new(),
            split_id: r.split_id,
            accuracy: r.accuracy,
            mean_earliness: r.mean_earliness,
            max_earliness: r.max_earliness,
        };
        entries.push(save_member(out_dir, w, &model_cfg, entry)?);
    }
    let manifest = EnsembleManifest {
        format: ENSEMBLE_FORMAT.into(),
        classes: dataset.classes.clone(),
        aggregation: cfg.eval.aggregation.unwrap_or_default(),
        prep: dataset.prep.clone(),
        members: entries,
    };
    let manifest_path = out_dir.join("ensemble.json");
    write_json(&manifest_path, &manifest)?;

    let mut splits: Vec<SplitResult> = trained.iter().map(|t| t.0.clone()).collect();
    for &i in &order {
        splits[i].retained = true;
    }
    write_jsonl(&out_dir.join("splits.jsonl"), &splits)?;
    write_jsonl(
        &out_dir.join("history.jsonl"),
        trained.iter().flat_map(|(r, _, h)| {
            h.iter().map(|e| HistoryLine {
                split_id: r.split_id,
                epoch: e.epoch,
                loss: e.loss,
                accuracy: e.accuracy,
            })
        }),
    )?;
    Ok(TrainSummary {
        manifest_path,
        manifest,
        splits,
    })
}

// ---------------------------------------------------------------- decision log

/// One decision-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    /// Streaming: capture time of the deciding packet (seconds since the
    /// capture epoch). Batch: its offset from the start of the flow.
    pub timestamp: f64,
    pub flow_key: String,
    pub class: usize,
    pub class_name: String,
    pub confidence: f64,
    pub k: usize,
    pub label: Option<usize>,
    pub crossed_threshold: bool,
}

impl LogLine {
    pub fn new(d: &Decision, timestamp: f64, class_names: &[String]) -> Self {
        Self {
            timestamp,
            flow_key: d.flow_id.clone(),
            class: d.predicted,
            class_name: class_names
                .get(d.predicted)
                .cloned()
                .unwrap_or_else(|| d.predicted.to_string()),
            confidence: d.confidence,
            k: d.k,
            label: d.label,
            crossed_threshold: d.crossed_threshold,
        }
    }
}

// ---------------------------------------------------------------- eval

/// Evaluates the ensemble on every flow of `dataset`. Writes the JSON report
/// to `report_path` (with the table next to it as `.txt`) and the decision
/// log to `log_path` when given.
pub fn cmd_eval(
    manifest_path: &Path,
    dataset: &Dataset,
    eval: &EvalSettings,
    report_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(EvalReport, String)> {
    let (manifest, mut ensemble) = load_ensemble(manifest_path)?;
    if let Some(a) = eval.aggregation {
        ensemble.aggregation = a;
    }
    if dataset.classes != manifest.classes {
        return Err(CliError::Input(format!(
            "dataset classes {:?} differ from ensemble classes {:?}",
            dataset.classes, manifest.classes
        )));
    }
    let mc = ensemble.config();
    if mc.d != dataset.prep.d || mc.max_len != dataset.prep.max_len {
        return Err(CliError::Input(format!(
            "ensemble expects d={} max_len={}, dataset has d={} max_len={}",
            mc.d, mc.max_len, dataset.prep.d, dataset.prep.max_len
        )));
    }
    if dataset.records.is_empty() {
        return Err(CliError::EmptyDataset("test dataset has no flows".into()));
    }
    let report = evaluate(
        &ensemble,
        &dataset.records,
        eval.tau,
        &eval.o_list,
        eval.benign_class,
        &eval.erde,
    )?;
    let table = report.table(Some(&manifest.classes));
    if let Some(p) = report_path {
        write_json(p, &report)?;
        let tp = p.with_extension("txt");
        std::fs::write(&tp, &table).map_err(|e| CliError::io(&tp, e))?;
    }
    if let Some(p) = log_path {
        write_jsonl(
            p,
            report.decisions.iter().zip(&dataset.records).map(|(d, r)| {
                let ts = r.timestamps.get(d.k - 1).copied().unwrap_or(0.0);
                LogLine::new(d, ts, &manifest.classes)
            }),
        )?;
    }
    Ok((report, table))
}

// ---------------------------------------------------------------- stream

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    /// Model evaluations timed.
    pub passes: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

impl LatencySummary {
    pub fn from_durations(times: &[Duration]) -> Self {
        let mut us: Vec<f64> = times.iter().map(|t| t.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        Self {
            passes: us.len(),
            mean_us: if us.is_empty() {
                0.0
            } else {
                us.iter().sum::<f64>() / us.len() as f64
            },
            median_us: median(&us),
            p95_us: quantile(&us, 0.95),
            max_us: us.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub events: Vec<StreamEvent>,
    pub latency: LatencySummary,
    pub skipped: SkipCounts,
}

/// Replays each capture packet by packet through `model`, writing a log
/// line as soon as a flow is decided. Flows are tracked per capture; a
/// capture's file-level label (if any) is attached to its decisions.
pub fn stream_captures<M: ConfidenceModel + ?Sized>(
    model: &M,
    prep: &PrepConfig,
    class_names: &[String],
    pcaps: &[PathBuf],
    labels: Option<&LabelsManifest>,
    tau: f64,
    log: &mut dyn Write,
) -> Result<StreamOutput> {
    let flow_labels = labels
        .map(LabelsManifest::flow_labels)
        .transpose()?
        .unwrap_or_default();
    let mut events = Vec::new();
    let mut times = Vec::new();
    let mut skipped = SkipCounts::default();
    let log_err = |e: std::io::Error| CliError::Input(format!("decision log: {e}"));
    for path in pcaps {
        let packets = read_capture(path)?;
        let mut stream = PacketStream::new(model, prep.clone(), tau)?
            .with_default_label(labels.and_then(|l| l.file_label(path)))
            .with_labels(flow_labels.clone());
        let mut emit = |ev: StreamEvent, log: &mut dyn Write| -> Result<()> {
            serde_json::to_writer(
                &mut *log,
                &LogLine::new(&ev.decision, ev.capture_ts, class_names),
            )
            .expect("log line serialises");
            log.write_all(b"\n")
                .and_then(|_| log.flush())
                .map_err(log_err)?;
            events.push(ev);
            Ok(())
        };
        for p in &packets {
            if let Some(ev) = stream.push(p).map_err(|e| match e {
                eids::evalkit::EvalError::Flowcap(source) => CliError::Capture {
                    path: path.clone(),
                    source,
                },
                e => e.into(),
            })? {
                emit(ev, log)?;
            }
        }
        let (rest, t, s) = stream.finish()?;
        for ev in rest {
            emit(ev, log)?;
        }
        times.extend(t);
        skipped.add(&s);
    }
    Ok(StreamOutput {
        events,
        latency: LatencySummary::from_durations(&times),
        skipped,
    })
}

/// [`stream_captures`] with the ensemble and preparation settings from a
/// manifest.
pub fn cmd_stream(
    manifest_path: &Path,
    pcaps: &[PathBuf],
    labels: Option<&LabelsManifest>,
    tau: f64,
    log: &mut dyn Write,
) -> Result<StreamOutput> {
    let (manifest, ensemble) = load_ensemble(manifest_path)?;
    stream_captures(
        &ensemble,
        &manifest.prep,
        &manifest.classes,
        pcaps,
        labels,
        tau,
        log,
    )
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub members: usize,
    pub runs: usize,
    pub warmup: usize,
    pub flow_len: usize,
    pub d: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub weights_bytes: usize,
    pub activation_bytes: usize,
    /// Weights plus the activations of one forward pass.
    pub analytic_bytes: usize,
    /// Peak resident set of this process, where the platform reports it.
    pub vm_hwm_bytes: Option<u64>,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} member(s), {}x{} flow, {} runs after {} warmup",
            self.members, self.flow_len, self.d, self.runs, self.warmup
        )?;
        writeln!(
            f,
            "latency   median {:.3} ms  p95 {:.3} ms  mean {:.3} ms  min {:.3} ms",
            self.median_ms, self.p95_ms, self.mean_ms, self.min_ms
        )?;
        write!(
            f,
            "memory    analytic {:.1} KiB (weights {:.1} KiB, activations {:.1} KiB)",
            self.analytic_bytes as f64 / 1024.0,
            self.weights_bytes as f64 / 1024.0,
            self.activation_bytes as f64 / 1024.0
        )?;
        if let Some(hwm) = self.vm_hwm_bytes {
            write!(
                f,
                ", process peak {:.1} MiB",
                hwm as f64 / (1024.0 * 1024.0)
            )?;
        }
        Ok(())
    }
}

/// Peak resident set size from `/proc/self/status`.
pub fn vm_hwm_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// A full-length flow of pseudo-random bytes at 10 ms spacing.
pub fn bench_flow(d: usize, n: usize, seed: u64) -> FlowRecord {
    let packets = (0..n * d)
        .map(|i| f32::from(derive_seed(seed, &[BENCH_STREAM, i as u64]) as u8) / 255.0)
        .collect();
    FlowRecord::new(
        None,
        None,
        d,
        packets,
        (0..n).map(|i| i as f64 * 0.01).collect(),
    )
}

/// Times single-flow inference of `model` on a full-length flow.
pub fn bench_ensemble(ensemble: &Ensemble, runs: usize, warmup: usize) -> Result<BenchReport> {
    if runs == 0 {
        return Err(CliError::Usage("runs must be >= 1".into()));
    }
    let cfg = ensemble.config();
    let flow = bench_flow(cfg.d, cfg.max_len, 0);
    for _ in 0..warmup {
        std::hint::black_box(ensemble.confidences(&flow)?);
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(ensemble.confidences(std::hint::black_box(&flow))?);
        times.push(t.elapsed());
    }
    let lat = LatencySummary::from_durations(&times);
    let weights_bytes: usize = ensemble
        .members()
        .iter()
        .map(|m| m.weights.byte_size_f32())
        .sum();
    let analytic_bytes = ensemble.footprint_bytes();
    Ok(BenchReport {
        members: ensemble.members().len(),
        runs,
        warmup,
        flow_len: cfg.max_len,
        d: cfg.d,
        median_ms: lat.median_us / 1e3,
        p95_ms: lat.p95_us / 1e3,
        mean_ms: lat.mean_us / 1e3,
        min_ms: times.iter().min().map_or(0.0, |t| t.as_secs_f64() * 1e3),
        weights_bytes,
        activation_bytes: analytic_bytes - weights_bytes,
        analytic_bytes,
        vm_hwm_bytes: vm_hwm_bytes(),
    })
}

/// Benchmarks the ensemble in `manifest`, or, without one, `members`
/// freshly initialised models of the configured architecture.
pub fn cmd_bench(
    manifest: Option<&Path>,
    cfg: &RunConfig,
    members: usize,
    runs: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let ensemble = match manifest {
        Some(p) => load_ensemble(p)?.1,
        None => {
            cfg.model.validate()?;
            let ms = (0..members.max(1))
                .map(|i| Member {
                    weights: ModelWeights::init(
                        &cfg.model,
                        derive_seed(cfg.train.core.seed, &[BENCH_STREAM, i as u64]),
                    ),
                    config: cfg.model.clone(),
                })
                .collect();
            Ensemble::new(ms, cfg.eval.aggregation.unwrap_or_default())?
        }
    };
    debug_assert_eq!(
        ensemble.footprint_bytes(),
        ensemble
            .members()
            .iter()
            .map(|m| m.weights.byte_size_f32())
            .sum::<usize>()
            + activation_bytes(ensemble.config())
    );
    bench_ensemble(&ensemble, runs, warmup)
}
