use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use safememe::config::{RunConfig, HOME_ENV};
use safememe::data::{make_synthetic_corpus, read_manifest, Dataset, Signal, SourceDataset, Split};
use safememe::eval::{check_external_target, emit_report, run_benchmark, ReportFormat};
use safememe::label::RuleSet;
use safememe::meme::{ImageSource, Meme};
use safememe::pipeline::{load_system, read_meta, save_system, train_system, MemeClassifier};
use safememe::variants::{registry, variant, VariantSpec};
use safememe::{Error, Result};

#[derive(Parser)]
#[command(
    name = "safememe",
    version,
    about = "Train, evaluate and run hateful-meme classification variants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// List the fourteen variants and their stage graphs.
    Variants {
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Train a variant on the train split and save its checkpoints.
    Train {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint directory; defaults to <root>/<variant>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate trained variants on a dataset split.
    Eval {
        /// A variant id, a comma-separated list, or `all`.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Checkpoint directory of a single variant.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: String,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Classify one meme.
    Predict {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a seeded synthetic corpus.
    Fixture {
        #[arg(long, default_value_t = 12)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "lexical")]
        signal: String,
        /// Directory for manifest.jsonl and images; without it the manifest
        /// is printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    match &args.config {
        Some(path) => RunConfig::load(path, &overrides),
        None => RunConfig::layered(None, &overrides),
    }
}

fn checkpoint_root(cfg: &RunConfig) -> PathBuf {
    cfg.resolve_checkpoint_root(std::env::var(HOME_ENV).ok().as_deref())
}

fn dataset_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.clone().or_else(|| cfg.dataset.clone()).ok_or_else(|| {
        Error::Config("no dataset given (use --dataset or the `dataset` key)".into())
    })
}

fn rules(cfg: &RunConfig) -> Result<RuleSet> {
    match &cfg.rules {
        Some(p) => RuleSet::load(p),
        None => Ok(RuleSet::default()),
    }
}

fn provenance(variant: &str, seed: u64, hash: &str) -> String {
    format!("# variant={variant} seed={seed} config={hash}")
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Variants { format } => {
            let format: ReportFormat = format.parse()?;
            print!("{}", list_variants(&registry(), format));
            Ok(0)
        }
        Command::Train {
            variant: id,
            dataset,
            out,
            cfg,
        } => {
            let cfg = load_config(&cfg)?;
            let spec = variant(&id)?;
            let data = read_manifest(&dataset_path(&dataset, &cfg)?)?;
            let dir = out.unwrap_or_else(|| checkpoint_root(&cfg).join(&spec.id));
            let system = train_system(&spec, &data, &cfg.train_options())?;
            save_system(&system, &dir, &cfg.hash())?;
            let conf = dir.join("run.conf");
            std::fs::write(&conf, cfg.to_text()).map_err(|e| Error::io(&conf, e))?;
            let mut out = provenance(&spec.id, cfg.seed, &cfg.hash()) + "\n";
            for (module, losses) in &system.summary.losses {
                if let Some(last) = losses.last() {
                    writeln!(
                        out,
                        "{module}\tepochs={}\tfinal_loss={last:.4}",
                        losses.len()
                    )
                    .unwrap();
                }
            }
            writeln!(out, "saved\t{}", dir.display()).unwrap();
            print!("{out}");
            Ok(0)
        }
        Command::Eval {
            variant: ids,
            dataset,
            split,
            checkpoint,
            format,
            out,
            cfg,
        } => {
            let cfg = load_config(&cfg)?;
            let format: ReportFormat = format.parse()?;
            let split: Split = split.parse()?;
            let specs = parse_variant_list(&ids)?;
            if checkpoint.is_some() && specs.len() != 1 {
                return Err(Error::Config(
                    "--checkpoint needs exactly one variant".into(),
                ));
            }
            let data = read_manifest(&dataset_path(&dataset, &cfg)?)?;
            let root = checkpoint_root(&cfg);
            let rules = rules(&cfg)?;
            let mut headers = BTreeMap::new();
            let outcome = run_benchmark(&specs, &data, split, |spec| {
                let dir = checkpoint.clone().unwrap_or_else(|| root.join(&spec.id));
                let system = load_system(&dir, spec)?;
                let meta = read_meta(&dir)?;
                headers.insert(
                    spec.id.clone(),
                    provenance(&spec.id, meta.seed, &meta.config_hash),
                );
                system.classifier(rules.clone(), cfg.no_match)
            });
            let mut text = String::new();
            for spec in &specs {
                if let Some(h) = headers.get(&spec.id) {
                    writeln!(text, "{h}").unwrap();
                }
            }
            if !outcome.reports.is_empty() {
                text += &emit_report(&outcome.reports, format);
            }
            let targets_ok = target_lines(&data, &outcome.reports, &mut text);
            for (id, e) in &outcome.failures {
                writeln!(text, "# failed {id}: {e}").unwrap();
            }
            print!("{text}");
            if let Some(path) = out.or_else(|| cfg.report.clone()) {
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            let usage = outcome.failures.iter().any(|(_, e)| e.is_usage());
            Ok(if usage {
                2
            } else if !outcome.failures.is_empty() || !targets_ok {
                1
            } else {
                0
            })
        }
        Command::Predict {
            variant: id,
            image,
            text,
            checkpoint,
            format,
            cfg,
        } => {
            let cfg = load_config(&cfg)?;
            let format: ReportFormat = format.parse()?;
            let spec = variant(&id)?;
            if !image.exists() {
                return Err(Error::InvalidInput(format!(
                    "image {} does not exist",
                    image.display()
                )));
            }
            let dir = checkpoint.unwrap_or_else(|| checkpoint_root(&cfg).join(&spec.id));
            let system = load_system(&dir, &spec)?;
            let meta = read_meta(&dir)?;
            let classifier = system.classifier(rules(&cfg)?, cfg.no_match)?;
            let meme = Meme::new("input", ImageSource::Path(image), text);
            let p = classifier.classify(&meme)?;
            print!(
                "{}",
                render_prediction(
                    classifier.as_ref(),
                    &p,
                    meta.seed,
                    &meta.config_hash,
                    format
                )
            );
            Ok(0)
        }
        Command::Fixture {
            size,
            seed,
            signal,
            out,
        } => {
            let signal: Signal = signal.parse()?;
            let data = make_synthetic_corpus(size, seed, signal)?;
            match out {
                Some(dir) => {
                    let path = dir.join("manifest.jsonl");
                    data.write_manifest(&path)?;
                    println!(
                        "# fixture size={size} seed={seed} signal={}",
                        signal_name(signal)
                    );
                    println!("wrote\t{}", path.display());
                }
                None => print!("{}", data.to_manifest_string()),
            }
            Ok(0)
        }
    }
}

fn signal_name(s: Signal) -> &'static str {
    match s {
        Signal::Lexical => "lexical",
        Signal::None => "none",
    }
}

fn parse_variant_list(ids: &str) -> Result<Vec<VariantSpec>> {
    if ids.eq_ignore_ascii_case("all") {
        return Ok(registry());
    }
    ids.split(',').map(|s| variant(s.trim())).collect()
}

fn list_variants(specs: &[VariantSpec], format: ReportFormat) -> String {
    let mut out = String::new();
    for v in specs {
        match format {
            ReportFormat::Table => writeln!(
                out,
                "{:<4} {:<3} {:<44} projector={:<7} backbone={:<17} classifier={}",
                v.id,
                v.family.to_string(),
                v.stage_graph(),
                v.projector_label(),
                backbone_name(v),
                classifier_name(v),
            )
            .unwrap(),
            ReportFormat::Machine => {
                let stages: Vec<String> = v.stages.iter().map(|s| s.to_string()).collect();
                let line = serde_json::json!({
                    "id": v.id,
                    "family": v.family.to_string(),
                    "stages": stages,
                    "projector": v.projector_label(),
                    "backbone_mode": backbone_name(v),
                    "classifier": classifier_name(v),
                });
                writeln!(out, "{line}").unwrap();
            }
        }
    }
    out
}

fn backbone_name(v: &VariantSpec) -> &'static str {
    use safememe::variants::BackboneMode;
    match v.backbone_mode {
        BackboneMode::FullFinetune => "full_finetune",
        BackboneMode::FrozenPretrained => "frozen_pretrained",
    }
}

fn classifier_name(v: &VariantSpec) -> &'static str {
    use safememe::variants::ClassifierKind;
    match v.classifier {
        ClassifierKind::Regex => "regex",
        ClassifierKind::Finetuned => "finetuned",
        ClassifierKind::Hierarchical => "hierarchical",
    }
}

/// Appends external-target checks; false if any recorded target is missed.
fn target_lines(
    data: &Dataset,
    reports: &[safememe::eval::MetricsReport],
    out: &mut String,
) -> bool {
    if data.source == SourceDataset::Synthetic {
        return true;
    }
    let mut ok = true;
    for r in reports {
        if let Some(c) = check_external_target(&r.variant_id, data.source, r.macro_avg.f1) {
            ok &= c.within_tolerance;
            writeln!(
                out,
                "# target {} {}: expected {:.3} got {:.3} {}",
                r.variant_id,
                data.source,
                c.target,
                c.actual,
                if c.within_tolerance { "ok" } else { "MISSED" }
            )
            .unwrap();
        }
    }
    ok
}

fn render_prediction(
    classifier: &dyn MemeClassifier,
    p: &safememe::pipeline::Prediction,
    seed: u64,
    hash: &str,
    format: ReportFormat,
) -> String {
    let id = &classifier.variant().id;
    match format {
        ReportFormat::Table => {
            let mut out = provenance(id, seed, hash) + "\n";
            writeln!(out, "label: {}", p.label).unwrap();
            out += &p.transcript;
            out
        }
        ReportFormat::Machine => {
            let line = serde_json::json!({
                "variant": id,
                "seed": seed,
                "config": hash,
                "label": p.label.as_str(),
                "transcript": p.transcript,
            });
            format!("{line}\n")
        }
    }
}
