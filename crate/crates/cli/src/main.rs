use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eids::evalkit::Aggregation;
use eids::flowcap::{FlowVariant, PacketFilter, TimestampPolicy};
use eids::synthgen::SynthSpec;
use eids::tinyformer::PeKind;
use eids_cli::commands::{self, SplitResult};
use eids_cli::manifest::{read_json, write_json, LabelsManifest};
use eids_cli::{CliError, Result, RunConfig};

/// Early intrusion detection on raw packet flows.
#[derive(Parser)]
#[command(name = "eids", version)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence over it.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PrepFlags {
    /// Packet filter applied to every flow.
    #[arg(long, value_parser = parse_enum::<PacketFilter>)]
    filter: Option<PacketFilter>,
    /// Flow key: 3-tuple or 5-tuple.
    #[arg(long, value_parser = parse_enum::<FlowVariant>)]
    flow_variant: Option<FlowVariant>,
    /// Backwards capture timestamps: strict (error) or clamp.
    #[arg(long, value_parser = parse_enum::<TimestampPolicy>)]
    timestamps: Option<TimestampPolicy>,
    /// Maximum packets per flow.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn labelled captures into a dataset file.
    Prepare {
        /// Capture files (classic pcap, Ethernet).
        #[arg(required = true)]
        pcaps: Vec<PathBuf>,
        /// Labels manifest (JSON).
        #[arg(long)]
        labels: PathBuf,
        /// Output dataset; defaults to `paths.dataset` from the config.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        prep: PrepFlags,
    },
    /// Generate synthetic captures with a labels manifest.
    Synth {
        /// Output directory for captures and labels.json.
        #[arg(long, short)]
        out_dir: PathBuf,
        /// Generator spec (JSON); defaults to the six-class preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seed of the class motifs.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Seed of the individual flows; defaults to `--seed`.
        #[arg(long)]
        flow_seed: Option<u64>,
        #[arg(long)]
        flows_per_class: Option<usize>,
        /// Also write the prepared dataset here.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one model per split and keep the best as an ensemble.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory for archives and ensemble.json.
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        retain: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        /// Positional encoding (none, sin, fourier, rope, dyn_sin, dyn_fourier, dyn_rope).
        #[arg(long, value_parser = parse_enum::<PeKind>)]
        pe_kind: Option<PeKind>,
        /// Skip the per-epoch augmentation pipeline.
        #[arg(long)]
        no_augment: bool,
    },
    /// Stream every flow of a dataset through an ensemble and report metrics.
    Eval {
        /// Ensemble manifest written by `train`.
        #[arg(long, short)]
        manifest: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// ERDE latency offsets.
        #[arg(long, value_delimiter = ',')]
        o: Option<Vec<usize>>,
        #[arg(long)]
        benign_class: Option<usize>,
        /// mean or majority.
        #[arg(long, value_parser = parse_enum::<Aggregation>)]
        aggregation: Option<Aggregation>,
        /// Report JSON (the table goes next to it as .txt); defaults to
        /// `<paths.reports_dir>/report.json` when a reports dir is configured.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Decision log (JSON lines).
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Replay captures packet by packet and log decisions as they happen.
    Stream {
        #[arg(long, short)]
        manifest: PathBuf,
        #[arg(required = true)]
        pcaps: Vec<PathBuf>,
        /// Labels manifest, to attach ground truth to decisions.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// Decision log (JSON lines); stdout if omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Measure single-flow inference latency and memory.
    Bench {
        /// Ensemble manifest; without one, untrained models of the configured
        /// architecture are timed.
        #[arg(long, short)]
        manifest: Option<PathBuf>,
        /// Members when no manifest is given.
        #[arg(long, default_value_t = 5)]
        members: usize,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses a value through the type's serde name, so flags and the config
/// file accept the same spellings.
fn parse_enum<T: for<'de> serde::Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| CliError::Usage(format!("no {what} given (flag or [paths] in the config)")))
}

fn apply_prep(cfg: &mut RunConfig, f: PrepFlags) {
    let p = &mut cfg.prep;
    p.filter = f.filter.unwrap_or(p.filter);
    p.flow_variant = f.flow_variant.unwrap_or(p.flow_variant);
    p.timestamp_policy = f.timestamps.unwrap_or(p.timestamp_policy);
    p.max_len = f.max_len.unwrap_or(p.max_len);
}

fn print_split(r: &SplitResult) {
    let e = r
        .mean_earliness
        .map_or("-".to_string(), |v| format!("{v:.2}"));
    eprintln!(
        "split {:>6}: accuracy {:.3}, mean earliness {e}, final loss {:.4}",
        r.split_id,
        r.accuracy,
        r.final_loss.unwrap_or(f64::NAN)
    );
}

fn open_log(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::io(p, e))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Prepare {
            pcaps,
            labels,
            out,
            prep,
        } => {
            apply_prep(&mut cfg, prep);
            let out = require(out.or(cfg.paths.dataset.clone()), "output dataset")?;
            let labels = LabelsManifest::load(&labels)?;
            let summary = commands::cmd_prepare(&pcaps, &labels, &cfg.prep, &out)?;
            println!("{summary}");
            println!("wrote {}", out.display());
        }
        Command::Synth {
            out_dir,
            spec,
            seed,
            flow_seed,
            flows_per_class,
            dataset,
        } => {
            let mut spec = match spec {
                Some(p) => read_json::<SynthSpec>(&p)?,
                None => SynthSpec::preset(seed),
            };
            spec.flow_seed = flow_seed.unwrap_or(spec.flow_seed);
            spec.flows_per_class = flows_per_class.unwrap_or(spec.flows_per_class);
            let out = commands::cmd_synth(&spec, &cfg.prep, &out_dir, dataset.as_deref())?;
            println!("{} flows in {} captures", out.flows, out.pcaps.len());
            println!("wrote {}", out.labels.display());
            if let Some(d) = out.dataset {
                println!("wrote {}", d.display());
            }
        }
        Command::Train {
            dataset,
            out_dir,
            epochs,
            splits,
            retain,
            seed,
            lr,
            pe_kind,
            no_augment,
        } => {
            let t = &mut cfg.train;
            t.core.epochs = epochs.unwrap_or(t.core.epochs);
            t.splits = splits.unwrap_or(t.splits);
            t.retain = retain.unwrap_or(t.retain);
            t.core.seed = seed.unwrap_or(t.core.seed);
            t.core.adam.lr = lr.unwrap_or(t.core.adam.lr);
            t.core.augment &= !no_augment;
            cfg.model.pe_kind = pe_kind.unwrap_or(cfg.model.pe_kind);
            let dataset = require(dataset.or(cfg.paths.dataset.clone()), "dataset")?;
            let out_dir = require(
                out_dir.or(cfg.paths.weights_dir.clone()),
                "output directory",
            )?;
            let ds = commands::load_dataset(&dataset)?;
            let summary = commands::cmd_train(&ds, &cfg, &out_dir, &print_split)?;
            println!(
                "trained {} splits, kept {}: {}",
                summary.splits.len(),
                summary.manifest.members.len(),
                summary
                    .manifest
                    .members
                    .iter()
                    .map(|m| m.split_id.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!("wrote {}", summary.manifest_path.display());
        }
        Command::Eval {
            manifest,
            dataset,
            tau,
            o,
            benign_class,
            aggregation,
            report,
            decisions,
        } => {
            let e = &mut cfg.eval;
            e.tau = tau.unwrap_or(e.tau);
            e.o_list = o.unwrap_or(std::mem::take(&mut e.o_list));
            e.benign_class = benign_class.unwrap_or(e.benign_class);
            e.aggregation = aggregation.or(e.aggregation);
            let dataset = require(dataset.or(cfg.paths.dataset.clone()), "dataset")?;
            let report = report.or_else(|| {
                cfg.paths
                    .reports_dir
                    .as_ref()
                    .map(|d| d.join("report.json"))
            });
            if let Some(dir) = report
                .as_deref()
                .and_then(Path::parent)
                .filter(|d| !d.as_os_str().is_empty())
            {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            let ds = commands::load_dataset(&dataset)?;
            let (_, table) = commands::cmd_eval(
                &manifest,
                &ds,
                &cfg.eval,
                report.as_deref(),
                decisions.as_deref(),
            )?;
            print!("{table}");
            if let Some(r) = report {
                println!("wrote {}", r.display());
            }
        }
        Command::Stream {
            manifest,
            pcaps,
            labels,
            tau,
            log,
        } => {
            let tau = tau.unwrap_or(cfg.eval.tau);
            let labels = labels.map(|p| LabelsManifest::load(&p)).transpose()?;
            let mut out = open_log(log.as_deref())?;
            let res = commands::cmd_stream(&manifest, &pcaps, labels.as_ref(), tau, &mut out)?;
            out.flush()
                .map_err(|e| CliError::Input(format!("decision log: {e}")))?;
            let l = res.latency;
            eprintln!(
                "{} decisions; {} forward passes, median {:.1} us, p95 {:.1} us, max {:.1} us; {} packets skipped",
                res.events.len(),
                l.passes,
                l.median_us,
                l.p95_us,
                l.max_us,
                res.skipped.total()
            );
        }
        Command::Bench {
            manifest,
            members,
            runs,
            warmup,
            out,
        } => {
            let report = commands::cmd_bench(manifest.as_deref(), &cfg, members, runs, warmup)?;
            println!("{report}");
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
