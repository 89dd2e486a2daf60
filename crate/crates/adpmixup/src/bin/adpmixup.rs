//! Experiment driver. Every subcommand is a pure function of the config file
//! (or built-in defaults) plus the `--seed` override, so reruns reproduce
//! outputs byte-for-byte.
//!
//! Exit codes: 0 success, 2 configuration problem, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adpmixup::attack::{generate_adversarial_dataset, AttackKind, AttackSpec, SynonymTable};
use adpmixup::checkpoint::save_backbone;
use adpmixup::data::{read_jsonl, write_jsonl};
use adpmixup::harness::{
    beta_sweep, build_seed_artifacts, profile_heatmap, run_pipeline, threshold_tradeoff,
    ExperimentConfig,
};
use adpmixup::model::AdapterPredictor;
use adpmixup::synth::{toy_corpus, toy_synonym_table};
use adpmixup::train::pretrain_backbone;
use adpmixup::Error;

#[derive(Parser)]
#[command(
    name = "adpmixup",
    version,
    about = "Entropy-calibrated adapter mixing for adversarially robust text classification"
)]
struct Cli {
    /// TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for checkpoints and CSVs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct AttackArgs {
    /// One of: char_swap, char_noise, word_synonym, word_greedy.
    #[arg(long)]
    attack_kind: String,

    /// Maximum fraction of words perturbed, in (0, 1].
    #[arg(long)]
    budget: Option<f64>,

    /// TSV synonym table (word<TAB>candidate...); defaults to the embedded
    /// toy lexicon.
    #[arg(long)]
    synonyms: Option<PathBuf>,

    /// JSON Lines dataset to perturb; defaults to the config's test split.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the backbone and save it to <out>/backbone.adpmix.
    Pretrain,
    /// Train the clean and per-attack adversarial adapters (checkpoints and
    /// adversarial training sets land under <out>/seed_<N>/).
    TrainAdapter,
    /// Generate an adversarial dataset against the clean-adapter victim.
    Attack(AttackArgs),
    /// Run the full pipeline: all six methods, every configured seed.
    Eval,
    /// Attack-profile heatmap: mean β per (pre-known adapter, target split).
    Profile,
    /// Fixed-β sweep across clean/adversarial pool compositions (m=1).
    Sweep,
    /// Detection-threshold tradeoff curve at the configured adversarial ratio.
    Tradeoff,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Pretrain => {
            std::fs::create_dir_all(out)?;
            let seed = cfg.experiment.seeds[0];
            let train = toy_corpus(cfg.task.train_size, seed, "train", true);
            let mut train_cfg = cfg.train;
            train_cfg.seed = seed;
            let backbone = pretrain_backbone(&cfg.model, &train, &train_cfg)
                .map_err(|e| e.in_stage("pretrain"))?;
            let path = out.join("backbone.adpmix");
            save_backbone(&path, &backbone)?;
            println!("wrote {}", path.display());
        }
        Command::TrainAdapter => {
            for &seed in &cfg.experiment.seeds {
                let art = build_seed_artifacts(&cfg, seed)?;
                let dir = out.join(format!("seed_{seed}"));
                adpmixup::harness::persist_artifacts(&cfg, &art, &dir)
                    .map_err(|e| e.in_stage("persist"))?;
                println!(
                    "seed {seed}: backbone + clean adapter + {} adversarial adapter(s) under {}",
                    art.adv_adapters.len(),
                    dir.display()
                );
            }
        }
        Command::Attack(args) => {
            let kind = AttackKind::parse(&args.attack_kind)?;
            let seed = cfg.experiment.seeds[0];
            std::fs::create_dir_all(out)?;

            // Victim: backbone + clean adapter trained from the config.
            let art = build_seed_artifacts(&cfg, seed)?;
            let victim = AdapterPredictor::new(&art.backbone, Some(&art.clean_adapter));

            let source = match &args.input {
                Some(path) => read_jsonl(path, cfg.model.classes)?,
                None => art.test_clean.clone(),
            };
            let mut spec = AttackSpec::new(kind, seed);
            spec.budget = args.budget.unwrap_or(cfg.attack.budget);
            spec.max_queries = cfg.attack.max_queries;
            if kind.is_word_level() {
                spec.synonyms = Some(match &args.synonyms {
                    Some(path) => SynonymTable::from_file(path)?,
                    None => toy_synonym_table(),
                });
            }
            let adv = generate_adversarial_dataset(&victim, &source, &spec)
                .map_err(|e| e.in_stage("attack"))?;
            let path = out.join(format!("adv_{kind}.jsonl"));
            write_jsonl(&path, &adv)?;
            eprintln!(
                "{}: {} adversarial lines from {} inputs ({} failed or skipped)",
                path.display(),
                adv.len(),
                source.len(),
                source.len() - adv.len()
            );
        }
        Command::Eval => {
            let summary = run_pipeline(&cfg, out)?;
            println!("method,dataset,clean_acc,adv_acc,avg_acc");
            for row in &summary.median {
                println!(
                    "{},{},{:.6},{:.6},{:.6}",
                    row.method,
                    cfg.task.name,
                    row.clean_acc,
                    row.adv_acc,
                    row.avg_acc()
                );
            }
            // Per-seed detail is on disk; stdout shows the cross-seed median.
            if cfg.experiment.seeds.len() > 1 {
                eprintln!(
                    "(medians over {} seeds; per-seed tables under {})",
                    cfg.experiment.seeds.len(),
                    out.display()
                );
            }
        }
        Command::Profile => {
            let result = profile_heatmap(&cfg, out)?;
            print!("pre_known");
            for col in &result.columns {
                print!(",{col}");
            }
            println!();
            for (kind, row) in result.pre_known.iter().zip(&result.values) {
                print!("{kind}");
                for v in row {
                    print!(",{v:.6}");
                }
                println!();
            }
        }
        Command::Sweep => {
            let result = beta_sweep(&cfg, out)?;
            println!("seed,clean_ratio,best_beta,dynamic_acc,soup_acc");
            for (seed, rows) in &result.per_seed {
                for r in rows {
                    println!(
                        "{seed},{:.2},{:.1},{:.6},{:.6}",
                        r.clean_ratio, r.best_beta, r.dynamic_acc, r.soup_acc
                    );
                }
            }
        }
        Command::Tradeoff => {
            let result = threshold_tradeoff(&cfg, out)?;
            println!("seed,threshold,accuracy,fnr,fpr,full_mix_fraction");
            for (seed, rows) in &result.per_seed {
                for r in rows {
                    println!(
                        "{seed},{:.2},{:.6},{:.6},{:.6},{:.6}",
                        r.threshold, r.accuracy, r.fnr, r.fpr, r.full_mix_fraction
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
