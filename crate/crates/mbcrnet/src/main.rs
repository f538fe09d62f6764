//! Command-line front door: synthetic data generation, preprocessing,
//! training, cross-validation, evaluation, gradient checking, and the
//! single-lead-vs-fused ablation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mbcrnet::checkpoint::{self, CacheEntry};
use mbcrnet::config::RunConfig;
use mbcrnet::data;
use mbcrnet::error::{Error, Result};
use mbcrnet::metrics::{format_pct, Metrics};
use mbcrnet::model::{Model, Variant};
use mbcrnet::synth;
use mbcrnet::train::{self, Dataset};

#[derive(Parser)]
#[command(name = "mbcrnet", version, about = "Multi-lead ECG classification with MBCRNet")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fusion variant: T, L, F or single.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Lead name for single-lead runs (II, III, V1..V6).
    #[arg(long, global = true)]
    lead: Option<String>,
    /// Size profile: paper or mini.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Output directory for reports, caches and checkpoints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainFlags {
    /// Tensor cache produced by `preprocess`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset plus manifest.
    Synth {
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of normal (class 0) records.
        #[arg(long)]
        balance: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
        /// irregular_rhythm, lead_localized_inversion or both.
        #[arg(long)]
        abnormality: Option<String>,
        /// Sampling rate in Hz.
        #[arg(long)]
        rate: Option<u32>,
        /// Record duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Lead count (8 canonical or 12 clinical).
        #[arg(long)]
        leads: Option<usize>,
    },
    /// Filter, downsample, select leads, window and label records.
    Preprocess {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        target_hz: Option<u32>,
    },
    /// Train one model on a cache and write a checkpoint plus loss trace.
    Train(TrainFlags),
    /// Stratified k-fold cross-validation.
    Crossval(TrainFlags),
    /// Evaluate a checkpoint on a cache.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Finite-difference gradient checks for all layer types and the mini
    /// full model; exits nonzero if any error reaches 1e-4.
    Gradcheck,
    /// Train 8 single-lead models and one fused model under equal budgets.
    Ablation(TrainFlags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(variant) = &cli.variant {
        cfg.variant = variant.clone();
    }
    if let Some(lead) = &cli.lead {
        cfg.lead = Some(lead.clone());
    }
    if let Some(profile) = &cli.profile {
        cfg.profile = profile.clone();
    }
    if let Some(folds) = cli.folds {
        cfg.folds = folds;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }

    match &cli.command {
        Command::Synth { n, balance, noise_std, abnormality, rate, duration, leads } => {
            if let Some(n) = n {
                cfg.n_records = *n;
            }
            if let Some(b) = balance {
                cfg.class_balance = *b;
            }
            if let Some(s) = noise_std {
                cfg.noise_std = *s;
            }
            if let Some(a) = abnormality {
                cfg.abnormality = a.clone();
            }
            if let Some(r) = rate {
                cfg.sample_rate_hz = *r;
            }
            if let Some(d) = duration {
                cfg.duration_s = *d;
            }
            if let Some(l) = leads {
                cfg.n_leads = *l;
            }
            cmd_synth(&cfg)
        }
        Command::Preprocess { manifest, cache, target_hz } => {
            if let Some(m) = manifest {
                cfg.manifest = Some(m.display().to_string());
            }
            if let Some(c) = cache {
                cfg.cache = Some(c.display().to_string());
            }
            if let Some(t) = target_hz {
                cfg.target_hz = *t;
            }
            cmd_preprocess(&cfg)
        }
        Command::Train(flags) => {
            apply_train_flags(&mut cfg, flags);
            cmd_train(&cfg)
        }
        Command::Crossval(flags) => {
            apply_train_flags(&mut cfg, flags);
            cmd_crossval(&cfg)
        }
        Command::Eval { checkpoint, cache } => {
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c.display().to_string());
            }
            if let Some(c) = cache {
                cfg.cache = Some(c.display().to_string());
            }
            cmd_eval(&cfg)
        }
        Command::Gradcheck => cmd_gradcheck(),
        Command::Ablation(flags) => {
            apply_train_flags(&mut cfg, flags);
            cmd_ablation(&cfg)
        }
    }
}

fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) {
    if let Some(c) = &flags.cache {
        cfg.cache = Some(c.display().to_string());
    }
    if let Some(c) = &flags.checkpoint {
        cfg.checkpoint = Some(c.display().to_string());
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = flags.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = flags.lr {
        cfg.learning_rate = lr;
    }
    if let Some(o) = &flags.optimizer {
        cfg.optimizer = o.clone();
    }
    if let Some(d) = flags.dropout {
        cfg.dropout_rate = d;
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    Ok(dir)
}

fn write_kv_file(path: &Path, kv: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in kv {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<ExitCode> {
    let synth_cfg = cfg.synth_config()?;
    let dir = out_dir(cfg)?;
    let records = synth::generate(&synth_cfg)?;
    let manifest = synth::write_dataset(&dir, &records)?;
    let n0 = records.iter().filter(|r| r.label == Some(0)).count();
    println!(
        "wrote {} records ({} normal, {} abnormal) and {}",
        records.len(),
        n0,
        records.len() - n0,
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<ExitCode> {
    let manifest_path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("preprocess needs --manifest".into()))?;
    let paths = data::read_manifest(Path::new(manifest_path))?;
    let spec = cfg.model_spec()?;
    let dir = out_dir(cfg)?;

    let parsed = train::parallel_map(paths, |p| -> Result<data::EcgRecord> {
        data::read_record_file(&p)
            .map_err(|e| Error::Parse { line: 0, msg: format!("{}: {e}", p.display()) })
    });
    let mut records = Vec::new();
    for r in parsed {
        records.push(r?);
    }
    let total = records.len();

    let (kept, mut rejected) = data::filter_valid(records);
    let mut entries = Vec::new();
    for rec in kept {
        let label = match data::map_label(&rec.label_text) {
            Ok(l) => l,
            Err(_) => {
                rejected.push((rec.id.clone(), "missing label".to_string()));
                continue;
            }
        };
        let down = data::downsample(&rec, cfg.target_hz)?;
        let sel = data::select_leads(&down)?;
        let tensor = match data::window_samples(&sel, spec.time_len) {
            Ok(t) => t,
            Err(_) => {
                rejected.push((rec.id.clone(), "too short for window".to_string()));
                continue;
            }
        };
        entries.push(CacheEntry { id: rec.id.clone(), label, tensor });
    }

    let cache_path = cfg
        .cache
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("cache.mbcr"));
    let mut extra = vec![
        ("window".to_string(), spec.time_len.to_string()),
        ("target_hz".to_string(), cfg.target_hz.to_string()),
    ];
    extra.extend(cfg.kv());
    checkpoint::write_cache(&cache_path, &entries, &extra)?;

    let mut log = String::new();
    for (id, reason) in &rejected {
        log.push_str(&format!("{id},{reason}\n"));
    }
    std::fs::write(dir.join("rejections.txt"), log)?;

    println!(
        "cached {} of {} records to {} ({} rejected)",
        entries.len(),
        total,
        cache_path.display(),
        rejected.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let cache_path = cfg
        .cache
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --cache".into()))?;
    let (entries, _) = checkpoint::read_cache(Path::new(cache_path))?;
    Ok(Dataset::from_entries(entries))
}

/// Slice the cache down to one lead when the variant is single-lead.
fn dataset_for_spec(cfg: &RunConfig, data: Dataset) -> Result<(Dataset, Option<String>)> {
    if cfg.parsed_variant()? != Variant::SingleLead {
        return Ok((data, None));
    }
    let idx = cfg
        .lead_index()?
        .ok_or_else(|| Error::Config("single-lead runs need --lead".into()))?;
    let name = data::CANONICAL_LEADS[idx].to_string();
    Ok((data.select_lead(idx)?, Some(name)))
}

fn print_metrics(metrics: &Metrics) {
    println!(
        "acc {} se {} (tp {} tn {} fp {} fn {})",
        format_pct(Some(metrics.acc())),
        format_pct(metrics.se()),
        metrics.true_pos,
        metrics.true_neg,
        metrics.false_pos,
        metrics.false_neg
    );
}

fn metrics_kv(prefix: &str, m: &Metrics) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}.acc"), m.acc().to_string()),
        (format!("{prefix}.se"), m.se().map_or("nan".to_string(), |v| v.to_string())),
        (format!("{prefix}.tp"), m.true_pos.to_string()),
        (format!("{prefix}.tn"), m.true_neg.to_string()),
        (format!("{prefix}.fp"), m.false_pos.to_string()),
        (format!("{prefix}.fn"), m.false_neg.to_string()),
    ]
}

fn cmd_train(cfg: &RunConfig) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let spec = cfg.model_spec()?;
    let train_cfg = cfg.train_config()?;
    let (dataset, lead) = dataset_for_spec(cfg, load_dataset(cfg)?)?;

    let mut model = Model::build(&spec, cfg.seed)?;
    let report = train::train(&mut model, &dataset, &train_cfg)?;
    let metrics = train::evaluate(&mut model, &dataset)?;

    let ckpt_path = cfg
        .checkpoint
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("checkpoint.mbcr"));
    let mut extra = Vec::new();
    if let Some(lead) = &lead {
        extra.push(("lead".to_string(), lead.clone()));
    }
    checkpoint::save_model(&ckpt_path, &model, &extra)?;

    let trace: String = report.epoch_losses.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.join("loss_trace.txt"), trace)?;

    let mut kv = metrics_kv("final", &metrics);
    kv.extend(cfg.kv());
    write_kv_file(&dir.join("train_report.kv"), &kv)?;

    println!("trained {} epochs, checkpoint {}", train_cfg.epochs, ckpt_path.display());
    print_metrics(&metrics);
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cfg: &RunConfig) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let ckpt_path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
    let (mut model, container) = checkpoint::load_model(Path::new(ckpt_path))?;

    let dataset = load_dataset(cfg)?;
    let dataset = if model.spec.n_leads == 1 && model.spec.variant == Variant::SingleLead {
        let lead = container
            .get("lead")
            .ok_or_else(|| Error::Format(format!("{ckpt_path}: missing lead entry")))?;
        let idx = data::CANONICAL_LEADS
            .iter()
            .position(|l| l.eq_ignore_ascii_case(lead))
            .ok_or_else(|| Error::Format(format!("{ckpt_path}: unknown lead {lead:?}")))?;
        dataset.select_lead(idx)?
    } else {
        dataset
    };

    let metrics = train::evaluate(&mut model, &dataset)?;
    let mut kv = metrics_kv("final", &metrics);
    kv.extend(cfg.kv());
    write_kv_file(&dir.join("eval_report.kv"), &kv)?;
    print_metrics(&metrics);
    Ok(ExitCode::SUCCESS)
}

fn cmd_crossval(cfg: &RunConfig) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let spec = cfg.model_spec()?;
    let train_cfg = cfg.train_config()?;
    let (dataset, _) = dataset_for_spec(cfg, load_dataset(cfg)?)?;

    let report = train::crossval(&dataset, &spec, &train_cfg, cfg.folds, cfg.seed)?;
    let table = report.table();
    std::fs::write(dir.join("crossval_report.txt"), &table)?;
    let mut kv = report.kv();
    kv.extend(cfg.kv());
    write_kv_file(&dir.join("crossval_report.kv"), &kv)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablation(cfg: &RunConfig) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let spec = cfg.model_spec()?;
    if spec.variant == Variant::SingleLead {
        return Err(Error::Config("ablation needs a fused variant (T, L or F)".into()));
    }
    let train_cfg = cfg.train_config()?;
    let dataset = load_dataset(cfg)?;
    let seeds = [cfg.seed, cfg.seed + 1, cfg.seed + 2];

    let report = train::lead_ablation(&dataset, &spec, &train_cfg, cfg.folds, &seeds)?;
    let table = report.table();
    std::fs::write(dir.join("ablation_report.txt"), &table)?;
    let mut kv = report.kv();
    kv.extend(cfg.kv());
    write_kv_file(&dir.join("ablation_report.kv"), &kv)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck() -> Result<ExitCode> {
    let results = mbcrnet::gradcheck::standard_suite()?;
    let mut worst = 0.0_f64;
    for (name, err) in &results {
        println!("{err:<12.3e} {name}");
        worst = worst.max(*err);
    }
    println!("max relative error {worst:.3e}");
    if worst < 1e-4 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed: {worst:.3e} >= 1e-4");
        Ok(ExitCode::FAILURE)
    }
}
