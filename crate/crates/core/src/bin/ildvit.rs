use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use ildvit_core::dsp::{Label, RawRecording, PIPELINE_SAMPLE_RATE};
use ildvit_core::experiment::{
    classify_recording, load_dataset, noise_eval, run_crossval, run_subject_level, Dataset,
};
use ildvit_core::io::{
    benchmark_inference, export_embeddings, generate_heart_sound_bank,
    generate_synthetic_dataset, read_wav, synth_recording, write_atomic, RunConfig, SynthConfig,
    TfrCache, TrackingAllocator,
};
use ildvit_core::manifest::Manifest;
use ildvit_core::model::{count_parameters, init_params, load_checkpoint, save_checkpoint, ModelParams};
use ildvit_core::pipeline::Featurizer;
use ildvit_core::train::{
    evaluate, roc_auc, split_subject_level, MetricsReport, NoiseKind, NoiseSpec,
};
use ildvit_core::{Error, Result};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(name = "ildvit", version, about = "Respiratory-sound ILD classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Partition {
    All,
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset with a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        subjects_per_class: usize,
        #[arg(long, default_value_t = 1)]
        recordings_per_subject: usize,
        #[arg(long, default_value_t = 15.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 50.0)]
        max_duration: f64,
        /// Also write this many heart-sound recordings to `<out>/heart_bank`.
        #[arg(long, default_value_t = 0)]
        heart_bank: usize,
    },
    /// Compute and cache the images of every recording in a manifest.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Subject-level split, training and blind test evaluation.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest or one partition of it.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Partition::All)]
        partition: Partition,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Segment-level k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Per-class accuracy under additive noise at each configured SNR.
    NoiseEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Partition::All)]
        partition: Partition,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one WAV recording.
    Infer {
        #[command(flatten)]
        common: Common,
        wav: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time full-recording inference and report peak transient memory.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Recording to classify; a synthetic one is generated when absent.
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        /// Randomly initialized weights are used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write pooled embeddings of every segment to CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Print the parameter ledger of the configured model.
    Params {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    eprintln!(
        "config hash={} {}",
        cfg.hash(),
        cfg.to_text().trim_end().replace('\n', "; ")
    );
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Checkpoint weights plus the feature settings recorded at training time.
fn open_model(path: &Path, cfg: &RunConfig) -> Result<(ModelParams, Featurizer)> {
    let (params, meta) = load_checkpoint(path)?;
    let mut features = cfg.features.clone();
    if let Some(text) = meta.get("run_config") {
        features = RunConfig::parse(text)?.features;
    }
    if features.image_size != params.config.image_size {
        return Err(Error::Config(
            "checkpoint image size differs from its feature settings".into(),
        ));
    }
    Ok((params, Featurizer::new(features)?))
}

fn open_dataset(
    manifest: &Manifest,
    featurizer: &Featurizer,
    cache: Option<&Path>,
    patch_size: usize,
) -> Result<Dataset> {
    let cache = cache
        .map(|c| TfrCache::open(c, featurizer.config()))
        .transpose()?;
    let ds = load_dataset(manifest, featurizer, cache.as_ref(), patch_size)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    for (rec, k) in &ds.skipped {
        eprintln!("warning: skipped constant segment {rec}#{k}");
    }
    Ok(ds)
}

fn select_partition(manifest: Manifest, part: Partition, cfg: &RunConfig, ds: Option<&Dataset>) -> Result<Manifest> {
    let idx = match part {
        Partition::All => return Ok(manifest),
        Partition::Train => 0,
        Partition::Val => 1,
        Partition::Test => 2,
    };
    let split = split_subject_level(&manifest, &cfg.split, ds.map(|d| &d.segment_counts))?;
    Ok(split.parts()[idx].clone())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.4}"))
}

fn print_metrics(prefix: &str, m: &MetricsReport) {
    println!(
        "{prefix} acc={} sns={} spf={} pre={} is={} fs={} auc_ild={}",
        fmt_opt(m.acc),
        fmt_opt(m.sns),
        fmt_opt(m.spf),
        fmt_opt(m.pre),
        fmt_opt(m.is),
        fmt_opt(m.fs),
        fmt_opt(m.auc_ild)
    );
}

fn load_noise(cfg: &RunConfig) -> Result<NoiseSpec> {
    match cfg.noise_kind {
        NoiseKind::Gaussian => Ok(NoiseSpec::gaussian()),
        NoiseKind::HeartSound => {
            let dir = cfg
                .noise_bank
                .as_ref()
                .ok_or_else(|| Error::Config("noise_kind heart_sound needs noise_bank".into()))?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|source| Error::Io {
                    path: dir.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            let bank = paths
                .iter()
                .map(|p| read_wav(p, "noise", "noise", None).map(|r| r.samples))
                .collect::<Result<Vec<_>>>()?;
            NoiseSpec::heart_sound(bank)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            out,
            subjects_per_class,
            recordings_per_subject,
            min_duration,
            max_duration,
            heart_bank,
        } => {
            let cfg = resolve_config(&common)?;
            let manifest = generate_synthetic_dataset(
                &out,
                &SynthConfig {
                    subjects_per_class,
                    recordings_per_subject,
                    min_duration_sec: min_duration,
                    max_duration_sec: max_duration,
                    seed: cfg.seed,
                },
            )?;
            println!("manifest={} recordings={}", out.join("manifest.csv").display(), manifest.len());
            if heart_bank > 0 {
                let dir = out.join("heart_bank");
                generate_heart_sound_bank(&dir, heart_bank, 30.0, cfg.seed ^ 0x4845_4152_54)?;
                println!("heart_bank={} files={heart_bank}", dir.display());
            }
        }
        Command::Featurize {
            common,
            manifest,
            cache,
        } => {
            let cfg = resolve_config(&common)?;
            let manifest = Manifest::load(&manifest, true)?;
            let featurizer = Featurizer::new(cfg.features.clone())?;
            let store = TfrCache::open(&cache, featurizer.config())?;
            let mut hasher = Sha256::new();
            let (mut reused, mut computed, mut images) = (0, 0, 0);
            for entry in manifest.entries() {
                let rec = read_wav(&entry.path, &entry.recording_id, &entry.subject_id, Some(entry.label))?;
                let (f, hit) = store.featurize(&featurizer, &rec)?;
                if hit {
                    reused += 1;
                } else {
                    computed += 1;
                }
                for img in &f.images {
                    hasher.update(entry.recording_id.as_bytes());
                    hasher.update((img.frame_index as u64).to_le_bytes());
                    hasher.update(img.to_f32_bytes());
                }
                images += f.images.len();
            }
            println!(
                "recordings={} images={images} reused={reused} computed={computed} content_hash={}",
                manifest.len(),
                hex::encode(hasher.finalize())
            );
        }
        Command::Train {
            common,
            manifest,
            out,
            cache,
        } => {
            let cfg = resolve_config(&common)?;
            let manifest = Manifest::load(&manifest, true)?;
            let featurizer = Featurizer::new(cfg.features.clone())?;
            let ds = open_dataset(&manifest, &featurizer, cache.as_deref(), cfg.model.patch_size)?;
            let outcome = run_subject_level(&manifest, &ds, &cfg, |r| {
                eprintln!(
                    "epoch {} train_loss={:.5} train_acc={:.4} val_loss={} val_acc={}",
                    r.epoch,
                    r.train_loss,
                    r.train_acc,
                    fmt_opt(r.val_loss),
                    fmt_opt(r.val_acc)
                );
            })?;
            create_dir(&out)?;
            write_text(&out.join("config.resolved.txt"), &cfg.to_text())?;
            write_text(&out.join("history.csv"), &outcome.trained.history.to_csv())?;
            write_text(&out.join("scores.csv"), &outcome.test.scores_csv())?;
            write_text(
                &out.join("metrics.csv"),
                &format!("{}\n{}\n", MetricsReport::CSV_HEADER, outcome.metrics.csv_row()),
            )?;
            let mut split_csv = String::from("subject_id,label,partition\n");
            for (name, part) in ["train", "val", "test"].iter().zip(outcome.split.parts()) {
                for (s, l) in part.subjects() {
                    split_csv.push_str(&format!("{s},{l},{name}\n"));
                }
            }
            write_text(&out.join("split.csv"), &split_csv)?;
            let meta = BTreeMap::from([
                ("run_config".to_string(), cfg.to_text()),
                ("config_hash".to_string(), cfg.hash()),
                ("best_epoch".to_string(), outcome.trained.best_epoch.to_string()),
            ]);
            let ckpt = out.join("checkpoint.ildvit");
            save_checkpoint(&ckpt, &outcome.trained.best, &meta)?;
            let rc = &outcome.recording_confusion;
            println!(
                "checkpoint={} sha256={} best_epoch={} epochs_run={}",
                ckpt.display(),
                sha256_file(&ckpt)?,
                outcome.trained.best_epoch,
                outcome.trained.history.epochs.len()
            );
            let best_val = outcome.trained.history.epochs[outcome.trained.best_epoch - 1].val_acc;
            println!("best_val_acc={}", fmt_opt(best_val));
            print_metrics("test", &outcome.metrics);
            println!(
                "test_recordings tp={} tn={} fp={} fn={}",
                rc.tp, rc.tn, rc.fp, rc.fn_
            );
        }
        Command::Evaluate {
            common,
            manifest,
            checkpoint,
            partition,
            out,
            cache,
        } => {
            let cfg = resolve_config(&common)?;
            let (params, featurizer) = open_model(&checkpoint, &cfg)?;
            let full = Manifest::load(&manifest, true)?;
            let all = open_dataset(&full, &featurizer, cache.as_deref(), params.config.patch_size)?;
            let part = select_partition(full, partition, &cfg, Some(&all))?;
            let ev = evaluate(&params, &all.select(&part))?;
            let m = ev.metrics()?;
            let rc = ev.recording_level();
            print_metrics("segments", &m);
            let cm = &ev.confusion;
            println!("confusion tp={} tn={} fp={} fn={}", cm.tp, cm.tn, cm.fp, cm.fn_);
            println!("recordings tp={} tn={} fp={} fn={}", rc.tp, rc.tn, rc.fp, rc.fn_);
            if let Some(out) = out {
                create_dir(&out)?;
                write_text(&out.join("scores.csv"), &ev.scores_csv())?;
                write_text(
                    &out.join("metrics.csv"),
                    &format!("{}\n{}\n", MetricsReport::CSV_HEADER, m.csv_row()),
                )?;
                let ild: Vec<f64> = ev.scores.iter().map(|s| s.probs[1]).collect();
                let pos: Vec<bool> = ev.scores.iter().map(|s| s.truth == Label::Ild).collect();
                if let Ok(roc) = roc_auc(&ild, &pos) {
                    write_text(&out.join("roc_ild.csv"), &roc.to_csv())?;
                }
            }
        }
        Command::Crossval {
            common,
            manifest,
            out,
            cache,
        } => {
            let cfg = resolve_config(&common)?;
            let manifest = Manifest::load(&manifest, true)?;
            let featurizer = Featurizer::new(cfg.features.clone())?;
            let ds = open_dataset(&manifest, &featurizer, cache.as_deref(), cfg.model.patch_size)?;
            let cv = run_crossval(&ds, &cfg, |f, r| {
                eprintln!("fold {f} epoch {} train_loss={:.5} val_acc={}", r.epoch, r.train_loss, fmt_opt(r.val_acc));
            })?;
            create_dir(&out)?;
            write_text(&out.join("config.resolved.txt"), &cfg.to_text())?;
            write_text(&out.join("crossval.csv"), &cv.to_csv())?;
            for f in &cv.folds {
                print_metrics(&format!("fold{}", f.fold), &f.metrics);
            }
            print_metrics("pooled", &cv.pooled_metrics);
        }
        Command::NoiseEval {
            common,
            manifest,
            checkpoint,
            partition,
            out,
        } => {
            let cfg = resolve_config(&common)?;
            let (params, featurizer) = open_model(&checkpoint, &cfg)?;
            let full = Manifest::load(&manifest, true)?;
            let part = select_partition(full, partition, &cfg, None)?;
            let noise = load_noise(&cfg)?;
            let table = noise_eval(&params, &featurizer, &part, &noise, &cfg.snr_grid_db, cfg.seed)?;
            print!("{}", table.to_csv());
            if let Some(out) = out {
                write_text(&out, &table.to_csv())?;
            }
        }
        Command::Infer {
            common,
            wav,
            checkpoint,
        } => {
            let cfg = resolve_config(&common)?;
            let (params, featurizer) = open_model(&checkpoint, &cfg)?;
            let id = wav.file_stem().map_or("recording".into(), |s| s.to_string_lossy().into_owned());
            let rec = read_wav(&wav, &id, &id, None)?;
            let pred = classify_recording(&params, &featurizer, &rec)?;
            for (k, p) in &pred.segments {
                println!("segment k={k} p_healthy={:.6} p_ild={:.6}", p[0], p[1]);
            }
            println!(
                "label={} p_healthy={:.6} p_ild={:.6} segments={}",
                pred.label,
                pred.mean_probs[0],
                pred.mean_probs[1],
                pred.segments.len()
            );
        }
        Command::Benchmark {
            common,
            wav,
            duration,
            checkpoint,
            out,
        } => {
            let cfg = resolve_config(&common)?;
            let (params, featurizer) = match &checkpoint {
                Some(c) => open_model(c, &cfg)?,
                None => (init_params(&cfg.model, cfg.seed)?, Featurizer::new(cfg.features.clone())?),
            };
            let rec = match &wav {
                Some(p) => read_wav(p, "benchmark", "benchmark", None)?,
                None => RawRecording::new(
                    synth_recording(Label::Ild, duration, cfg.seed),
                    PIPELINE_SAMPLE_RATE,
                    "benchmark",
                    "benchmark",
                    None,
                )?,
            };
            let mut report = benchmark_inference(&params, &featurizer, &rec, cfg.benchmark_runs)?;
            if let Some(c) = &checkpoint {
                report.model_size_bytes = std::fs::metadata(c)
                    .map_err(|source| Error::Io {
                        path: c.clone(),
                        source,
                    })?
                    .len() as usize;
            }
            println!(
                "segments={} latency_mean_sec={:.6} latency_std_sec={:.6} peak_transient_bytes={} model_size_bytes={}",
                report.segments,
                report.latency_mean_sec,
                report.latency_std_sec,
                report
                    .peak_transient_bytes_max
                    .map_or("NA".into(), |b| b.to_string()),
                report.model_size_bytes
            );
            if let Some(out) = out {
                write_text(&out, &report.to_json())?;
            }
        }
        Command::ExportEmbeddings {
            common,
            manifest,
            checkpoint,
            out,
            cache,
        } => {
            let cfg = resolve_config(&common)?;
            let (params, featurizer) = open_model(&checkpoint, &cfg)?;
            let manifest = Manifest::load(&manifest, true)?;
            let ds = open_dataset(&manifest, &featurizer, cache.as_deref(), params.config.patch_size)?;
            export_embeddings(&params, &ds.examples, &out)?;
            println!("rows={} out={}", ds.examples.len(), out.display());
        }
        Command::Params { common } => {
            let cfg = resolve_config(&common)?;
            let ledger = count_parameters(&cfg.model)?;
            for (stage, n) in &ledger.stages {
                println!("{stage}\t{n}");
            }
            println!("total\t{}", ledger.total);
            if cfg.model.n_blocks == 3 {
                println!(
                    "note: 3 transformer blocks give {}; the reference 4-block model has {} (one block holds {})",
                    ledger.total,
                    ledger.total + cfg.model.block_params(),
                    cfg.model.block_params()
                );
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
